use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Text prompt sent to the open-set detector.
pub const DETECTOR_TEXT_PROMPT: &str = "person";

/// Composite question sent to the VQA engine for every crop.
pub const VQA_QUESTION: &str = "Is he/she or are they holding anything in the hand? \
Is he/she or are they standing or sitting? \
What is he/she or are they trying to do? \
Answer the questions concisely";

/// Box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl NormBox {
    pub fn full() -> Self {
        NormBox {
            x0: 0.0,
            y0: 0.0,
            x1: 1.0,
            y1: 1.0,
        }
    }

    pub fn clipped(self) -> Self {
        NormBox {
            x0: self.x0.clamp(0.0, 1.0),
            y0: self.y0.clamp(0.0, 1.0),
            x1: self.x1.clamp(0.0, 1.0),
            y1: self.y1.clamp(0.0, 1.0),
        }
    }

    pub fn union(self, other: NormBox) -> Self {
        NormBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionPrompt {
    pub sample_id: String,
    /// PNG-encoded crop.
    pub crop: Vec<u8>,
    pub bbox: NormBox,
    pub frame_index: usize,
    pub detector_score: f64,
}

impl VisionPrompt {
    pub fn validate(&self) -> Result<()> {
        if !self.bbox.is_valid() {
            return Err(Error::Validation(format!("{}: degenerate crop box", self.sample_id)));
        }
        let img = self.decode()?;
        if img.width() == 0 || img.height() == 0 {
            return Err(Error::Validation(format!("{}: empty crop", self.sample_id)));
        }
        Ok(())
    }

    pub fn decode(&self) -> Result<image::RgbImage> {
        Ok(image::load_from_memory_with_format(&self.crop, image::ImageFormat::Png)?.to_rgb8())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguagePrompt {
    pub sample_id: String,
    pub text: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineMeta {
    pub detector_name: String,
    pub vqa_name: String,
    /// Unix seconds when the record was produced.
    pub timestamp: u64,
}

/// Sample-level vision crop and caption, one per skeleton sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub sample_id: String,
    pub vision: VisionPrompt,
    pub language: LanguagePrompt,
    pub engine_meta: EngineMeta,
}
