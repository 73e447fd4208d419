use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array4};
use serde::{Deserialize, Serialize};

use super::layout::SkeletonLayout;
use super::sequence::SkeletonSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Joint,
    Motion,
    Bone,
}

impl StreamKind {
    pub const ALL: [StreamKind; 3] = [StreamKind::Joint, StreamKind::Motion, StreamKind::Bone];
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StreamKind::Joint => "joint",
            StreamKind::Motion => "motion",
            StreamKind::Bone => "bone",
        })
    }
}

impl FromStr for StreamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "joint" | "j" => Ok(StreamKind::Joint),
            "motion" | "m" => Ok(StreamKind::Motion),
            "bone" | "b" => Ok(StreamKind::Bone),
            other => Err(Error::config("stream", format!("unknown stream kind `{other}`"))),
        }
    }
}

/// A derived input stream with the same shape as its source sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityStream {
    pub kind: StreamKind,
    pub data: Array4<f32>,
}

/// Derives the joint, motion or bone stream of a sequence.
///
/// Motion is the forward frame difference with a zero last frame. Bone is the
/// offset of each joint from its parent in `layout`; roots are zero.
pub fn derive_stream(
    seq: &SkeletonSequence,
    kind: StreamKind,
    layout: &SkeletonLayout,
) -> Result<ModalityStream> {
    let data = match kind {
        StreamKind::Joint => seq.data.clone(),
        StreamKind::Motion => {
            let mut out = Array4::<f32>::zeros(seq.data.raw_dim());
            let t = seq.frames();
            if t > 1 {
                let diff = &seq.data.slice(s![1.., .., .., ..]) - &seq.data.slice(s![..t - 1, .., .., ..]);
                out.slice_mut(s![..t - 1, .., .., ..]).assign(&diff);
            }
            out
        }
        StreamKind::Bone => {
            if layout.joints != seq.joints() {
                return Err(Error::config(
                    "layout.joints",
                    format!(
                        "bone table covers {} joints but `{}` has {}",
                        layout.joints,
                        seq.sample_id,
                        seq.joints()
                    ),
                ));
            }
            layout.validate()?;
            let parents = layout.parents();
            let mut out = Array4::<f32>::zeros(seq.data.raw_dim());
            for (j, &p) in parents.iter().enumerate() {
                if p != j {
                    let bone = &seq.data.slice(s![.., j, .., ..]) - &seq.data.slice(s![.., p, .., ..]);
                    out.slice_mut(s![.., j, .., ..]).assign(&bone);
                }
            }
            out
        }
    };
    Ok(ModalityStream { kind, data })
}
