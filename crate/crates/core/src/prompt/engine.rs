use std::sync::atomic::{AtomicUsize, Ordering};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::types::{NormBox, DETECTOR_TEXT_PROMPT};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: NormBox,
    pub score: f64,
}

/// Detector + VQA backend used to build knowledge prompts.
pub trait EngineClient: Send + Sync {
    fn detector_name(&self) -> &str;
    fn vqa_name(&self) -> &str;
    fn detect(&self, frame: &RgbImage, text_prompt: &str) -> Result<Vec<Detection>>;
    fn answer(&self, image: &RgbImage, question: &str) -> Result<String>;
}

/// Deterministic stand-in for the detector and VQA models.
///
/// Detection returns the bounding box of every pixel that differs from the
/// top-left background pixel, grown by a small margin. Captions are chosen from a
/// fixed vocabulary keyed by the dominant foreground hue, with a seeded variant.
#[derive(Debug)]
pub struct StubEngine {
    pub seed: u64,
    pub margin: f64,
    detect_calls: AtomicUsize,
    answer_calls: AtomicUsize,
}

impl StubEngine {
    pub fn new(seed: u64) -> Self {
        StubEngine {
            seed,
            margin: 0.05,
            detect_calls: AtomicUsize::new(0),
            answer_calls: AtomicUsize::new(0),
        }
    }

    /// Total detector plus VQA invocations so far.
    pub fn calls(&self) -> usize {
        self.detect_calls.load(Ordering::SeqCst) + self.answer_calls.load(Ordering::SeqCst)
    }
}

fn foreground(img: &RgbImage) -> impl Iterator<Item = (u32, u32, &Rgb<u8>)> {
    let bg = *img.get_pixel(0, 0);
    img.enumerate_pixels().filter(move |(_, _, p)| **p != bg)
}

fn hue(p: &Rgb<u8>) -> Option<f64> {
    let [r, g, b] = p.0.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta < 1e-6 {
        return None;
    }
    let h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    Some(h * 60.0)
}

const HOLDING: [&str; 12] = [
    "a cup", "a phone", "a book", "a bag", "a towel", "a bottle", "a pen", "a hat", "a ball", "a remote", "a comb",
    "nothing",
];
const POSTURE: [&str; 12] = [
    "standing upright",
    "sitting on a chair",
    "bending forward",
    "kneeling down",
    "leaning sideways",
    "crouching low",
    "standing on one leg",
    "sitting on the floor",
    "walking slowly",
    "jumping up",
    "lying back",
    "turning around",
];
const ACTIVITY: [&str; 12] = [
    "drinking water",
    "making a call",
    "reading pages",
    "packing belongings",
    "wiping the face",
    "pouring liquid",
    "writing notes",
    "wearing headgear",
    "throwing overhand",
    "switching channels",
    "brushing hair",
    "waving both hands",
];
const CLOSERS: [&str; 3] = ["with steady motion", "quite calmly", "at a brisk pace"];

impl EngineClient for StubEngine {
    fn detector_name(&self) -> &str {
        "stub-detector"
    }

    fn vqa_name(&self) -> &str {
        "stub-vqa"
    }

    fn detect(&self, frame: &RgbImage, text_prompt: &str) -> Result<Vec<Detection>> {
        self.detect_calls.fetch_add(1, Ordering::SeqCst);
        if text_prompt != DETECTOR_TEXT_PROMPT {
            return Ok(Vec::new());
        }
        let (w, h) = frame.dimensions();
        let mut bounds: Option<(u32, u32, u32, u32)> = None;
        let mut count = 0usize;
        for (x, y, _) in foreground(frame) {
            count += 1;
            bounds = Some(match bounds {
                None => (x, y, x, y),
                Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
            });
        }
        let Some((x0, y0, x1, y1)) = bounds else {
            return Ok(Vec::new());
        };
        let bbox = NormBox {
            x0: x0 as f64 / w as f64 - self.margin,
            y0: y0 as f64 / h as f64 - self.margin,
            x1: (x1 + 1) as f64 / w as f64 + self.margin,
            y1: (y1 + 1) as f64 / h as f64 + self.margin,
        };
        let fill = count as f64 / ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
        Ok(vec![Detection {
            bbox,
            score: (0.5 + 0.5 * fill).min(0.99),
        }])
    }

    fn answer(&self, image: &RgbImage, _question: &str) -> Result<String> {
        self.answer_calls.fetch_add(1, Ordering::SeqCst);
        let (sum, n) = foreground(image)
            .filter_map(|(_, _, p)| hue(p))
            .fold(((0.0, 0.0), 0usize), |((sx, sy), n), h| {
                let r = h.to_radians();
                ((sx + r.cos(), sy + r.sin()), n + 1)
            });
        if n == 0 {
            return Ok("a person standing still".into());
        }
        let mean = sum.1.atan2(sum.0).to_degrees().rem_euclid(360.0);
        let bin = ((mean / 30.0).round() as usize) % 12;
        let mut hasher = Sha256::new();
        hasher.update(image.as_raw());
        hasher.update(self.seed.to_le_bytes());
        let variant = hasher.finalize()[0] as usize % CLOSERS.len();
        Ok(format!(
            "Holding {}. The person is {}. They are {} {}.",
            HOLDING[bin], POSTURE[bin], ACTIVITY[bin], CLOSERS[variant]
        ))
    }
}
