use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame count every sequence is resampled to before encoding.
pub const TARGET_FRAMES: usize = 64;

/// One action sample: a `frames × joints × 3 × bodies` coordinate block.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub sample_id: String,
    pub data: Array4<f32>,
    pub subject_id: u32,
    pub camera_id: u32,
    pub setup_id: u32,
    pub label: Option<usize>,
}

/// Identifying metadata without the coordinate block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub sample_id: String,
    pub subject_id: u32,
    pub camera_id: u32,
    pub setup_id: u32,
    pub label: Option<usize>,
}

impl SkeletonSequence {
    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn joints(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn bodies(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn meta(&self) -> SampleMeta {
        SampleMeta {
            sample_id: self.sample_id.clone(),
            subject_id: self.subject_id,
            camera_id: self.camera_id,
            setup_id: self.setup_id,
            label: self.label,
        }
    }

    /// Checks the post-preprocessing invariants: finite data, one or two bodies,
    /// three coordinates.
    pub fn validate(&self) -> Result<()> {
        let shape = self.data.shape();
        if shape[2] != 3 {
            return Err(Error::Shape(format!(
                "{}: expected 3 coordinates, got {}",
                self.sample_id, shape[2]
            )));
        }
        if !(1..=2).contains(&shape[3]) {
            return Err(Error::Shape(format!(
                "{}: bodies must be 1 or 2, got {}",
                self.sample_id, shape[3]
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{}: non-finite coordinate", self.sample_id)));
        }
        Ok(())
    }
}

/// Frame indices used to resample `raw` frames to `target`: `floor(k * raw / target)`.
///
/// Long sequences are subsampled uniformly, short ones repeat frames uniformly.
pub fn resample_indices(raw: usize, target: usize) -> Vec<usize> {
    (0..target).map(|k| k * raw / target).collect()
}

/// Uniformly resamples a sequence along time to exactly `target` frames.
pub fn downsample_frames(seq: &SkeletonSequence, target: usize) -> Result<SkeletonSequence> {
    let raw = seq.frames();
    if raw == 0 {
        return Err(Error::EmptySequence(seq.sample_id.clone()));
    }
    if target == 0 {
        return Err(Error::config("frames", "target frame count must be positive"));
    }
    if raw == target {
        return Ok(seq.clone());
    }
    let idx = resample_indices(raw, target);
    let data = seq.data.select(Axis(0), &idx);
    Ok(SkeletonSequence {
        data,
        ..seq.clone()
    })
}
