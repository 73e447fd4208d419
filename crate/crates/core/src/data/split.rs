use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sequence::SampleMeta;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Xsub,
    Xview,
    Xset,
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Benchmark::Xsub => "xsub",
            Benchmark::Xview => "xview",
            Benchmark::Xset => "xset",
        })
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xsub" => Ok(Benchmark::Xsub),
            "xview" => Ok(Benchmark::Xview),
            "xset" => Ok(Benchmark::Xset),
            other => Err(Error::config("benchmark", format!("unknown benchmark `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XsubRule {
    pub train_subjects: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XviewRule {
    pub train_cameras: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XsetRule {
    pub train_setups: Vec<u32>,
}

/// Benchmark split definition file (`splits.json`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitDefinition {
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xsub: Option<XsubRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xview: Option<XviewRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xset: Option<XsetRule>,
}

/// Disjoint train/test sample ids for one benchmark.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub benchmark: Benchmark,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitDefinition {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            offset: 0,
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Official NTU RGB+D 60 splits (cross-subject and cross-view).
    pub fn ntu60() -> Self {
        SplitDefinition {
            dataset: "ntu60".into(),
            xsub: Some(XsubRule {
                train_subjects: NTU60_TRAIN_SUBJECTS.to_vec(),
            }),
            xview: Some(XviewRule {
                train_cameras: vec![2, 3],
            }),
            xset: None,
        }
    }

    /// Official NTU RGB+D 120 splits (cross-subject and cross-setup).
    pub fn ntu120() -> Self {
        SplitDefinition {
            dataset: "ntu120".into(),
            xsub: Some(XsubRule {
                train_subjects: NTU120_TRAIN_SUBJECTS.to_vec(),
            }),
            xview: None,
            xset: Some(XsetRule {
                train_setups: (1..=32).filter(|s| s % 2 == 0).collect(),
            }),
        }
    }

    fn is_train(&self, benchmark: Benchmark, meta: &SampleMeta) -> Result<bool> {
        let missing = || Error::config("benchmark", format!("`{benchmark}` is not defined for dataset `{}`", self.dataset));
        Ok(match benchmark {
            Benchmark::Xsub => self.xsub.as_ref().ok_or_else(missing)?.train_subjects.contains(&meta.subject_id),
            Benchmark::Xview => self.xview.as_ref().ok_or_else(missing)?.train_cameras.contains(&meta.camera_id),
            Benchmark::Xset => self.xset.as_ref().ok_or_else(missing)?.train_setups.contains(&meta.setup_id),
        })
    }

    pub fn split(&self, benchmark: Benchmark, samples: &[SampleMeta]) -> Result<DatasetSplit> {
        let mut train_ids = Vec::new();
        let mut test_ids = Vec::new();
        let mut seen = HashSet::new();
        for meta in samples {
            if !seen.insert(meta.sample_id.as_str()) {
                return Err(Error::Data(format!("duplicate sample id `{}`", meta.sample_id)));
            }
            if self.is_train(benchmark, meta)? {
                train_ids.push(meta.sample_id.clone());
            } else {
                test_ids.push(meta.sample_id.clone());
            }
        }
        Ok(DatasetSplit {
            benchmark,
            train_ids,
            test_ids,
        })
    }
}

const NTU60_TRAIN_SUBJECTS: [u32; 20] = [1, 2, 4, 5, 8, 9, 13, 14, 15, 16, 17, 18, 19, 25, 27, 28, 31, 34, 35, 38];

const NTU120_TRAIN_SUBJECTS: [u32; 53] = [
    1, 2, 4, 5, 8, 9, 13, 14, 15, 16, 17, 18, 19, 25, 27, 28, 31, 34, 35, 38, 45, 46, 47, 49, 50, 52, 53, 54, 55,
    56, 57, 58, 59, 70, 74, 78, 80, 81, 82, 83, 84, 85, 86, 89, 91, 92, 93, 94, 95, 97, 98, 100, 103,
];
