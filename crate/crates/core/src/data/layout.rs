use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(child, parent)` pairs of the 25-joint NTU skeleton, 1-based, following the
/// spatial-graph convention of skeleton GCN encoders. Joint 21 (spine chest) is
/// the root and maps to itself.
const NTU25_PAIRS: [(usize, usize); 25] = [
    (1, 2),
    (2, 21),
    (3, 21),
    (4, 3),
    (5, 21),
    (6, 5),
    (7, 6),
    (8, 7),
    (9, 21),
    (10, 9),
    (11, 10),
    (12, 11),
    (13, 1),
    (14, 13),
    (15, 14),
    (16, 15),
    (17, 1),
    (18, 17),
    (19, 18),
    (20, 19),
    (21, 21),
    (22, 23),
    (23, 8),
    (24, 25),
    (25, 12),
];

/// Joint count plus the bone table used for bone streams and graph adjacency.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonLayout {
    pub name: String,
    pub joints: usize,
    /// Zero-based `(child, parent)` pairs. A joint paired with itself is a root.
    pub bones: Vec<(usize, usize)>,
}

impl SkeletonLayout {
    pub fn new(name: impl Into<String>, joints: usize, bones: Vec<(usize, usize)>) -> Result<Self> {
        let layout = SkeletonLayout {
            name: name.into(),
            joints,
            bones,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn ntu25() -> Self {
        SkeletonLayout {
            name: "ntu25".into(),
            joints: 25,
            bones: NTU25_PAIRS.iter().map(|&(c, p)| (c - 1, p - 1)).collect(),
        }
    }

    /// A simple kinematic chain `0 <- 1 <- 2 ...`, handy for toy data.
    pub fn chain(joints: usize) -> Self {
        let bones = (0..joints).map(|j| (j, j.saturating_sub(1))).collect();
        SkeletonLayout {
            name: format!("chain{joints}"),
            joints,
            bones,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let layout: SkeletonLayout = serde_json::from_str(&text)?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints == 0 {
            return Err(Error::config("layout.joints", "must be positive"));
        }
        let mut seen = vec![false; self.joints];
        for (k, &(c, p)) in self.bones.iter().enumerate() {
            if c >= self.joints || p >= self.joints {
                return Err(Error::config(
                    format!("layout.bones[{k}]"),
                    format!("joint index ({c}, {p}) outside 0..{}", self.joints),
                ));
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(Error::config(
                    format!("layout.bones[{k}]"),
                    format!("joint {c} listed as child twice"),
                ));
            }
        }
        Ok(())
    }

    /// Parent of every joint; joints without an entry are their own parent.
    pub fn parents(&self) -> Vec<usize> {
        let mut parents: Vec<usize> = (0..self.joints).collect();
        for &(c, p) in &self.bones {
            parents[c] = p;
        }
        parents
    }

    /// Symmetric adjacency with self-loops, normalized as `D^-1/2 (A + I) D^-1/2`.
    pub fn normalized_adjacency(&self) -> Array2<f64> {
        let n = self.joints;
        let mut a = Array2::<f64>::eye(n);
        for &(c, p) in &self.bones {
            if c != p {
                a[[c, p]] = 1.0;
                a[[p, c]] = 1.0;
            }
        }
        let deg: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
        for i in 0..n {
            for j in 0..n {
                a[[i, j]] /= (deg[i] * deg[j]).sqrt();
            }
        }
        a
    }
}
