use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cache::PromptCache;
use super::engine::{Detection, EngineClient};
use super::remote::encode_png;
use super::render::VideoSource;
use super::types::{
    EngineMeta, LanguagePrompt, NormBox, PromptRecord, VisionPrompt, DETECTOR_TEXT_PROMPT, VQA_QUESTION,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePolicy {
    /// Number of uniformly spaced frames to try; 1 selects the middle frame.
    pub frames: usize,
    pub score_threshold: f64,
    /// Use the whole frame when nothing is detected instead of failing.
    pub fallback_fullframe: bool,
}

impl Default for FramePolicy {
    fn default() -> Self {
        FramePolicy {
            frames: 1,
            score_threshold: 0.35,
            fallback_fullframe: false,
        }
    }
}

impl FramePolicy {
    /// Candidate frame indices: centres of `frames` equal-width bins.
    pub fn candidates(&self, frame_count: usize) -> Vec<usize> {
        let n = self.frames.clamp(1, frame_count.max(1));
        let mut idx: Vec<usize> = (0..n).map(|k| ((2 * k + 1) * frame_count) / (2 * n)).collect();
        idx.dedup();
        idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

/// Runs `op` up to `policy.attempts` times, backing off exponentially on retryable errors.
pub fn with_retry<T>(policy: RetryPolicy, mut op: impl FnMut() -> Result<T>) -> Result<T> {
    let mut delay = policy.base_delay;
    let mut attempt = 1;
    loop {
        match op() {
            Err(e) if e.is_retryable() && attempt < policy.attempts => {
                log::warn!("attempt {attempt}/{} failed: {e}; retrying", policy.attempts);
                std::thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
            other => return other,
        }
    }
}

fn crop(frame: &RgbImage, bbox: NormBox) -> RgbImage {
    let (w, h) = frame.dimensions();
    let x0 = ((bbox.x0 * w as f64).floor() as u32).min(w - 1);
    let y0 = ((bbox.y0 * h as f64).floor() as u32).min(h - 1);
    let x1 = ((bbox.x1 * w as f64).ceil() as u32).clamp(x0 + 1, w);
    let y1 = ((bbox.y1 * h as f64).ceil() as u32).clamp(y0 + 1, h);
    image::imageops::crop_imm(frame, x0, y0, x1 - x0, y1 - y0).to_image()
}

struct FrameHit {
    index: usize,
    score: f64,
    bbox: NormBox,
}

/// Detects people on the candidate frames and crops the best frame.
///
/// All detections above threshold on a frame are merged into their union box so
/// that multi-person actions stay in one crop. Frames rank by best score, then
/// by union area.
pub fn generate_vision_prompt(
    sample_id: &str,
    video: &dyn VideoSource,
    client: &dyn EngineClient,
    policy: &FramePolicy,
    retry: RetryPolicy,
) -> Result<VisionPrompt> {
    let count = video.frame_count();
    if count == 0 {
        return Err(Error::EmptySequence(sample_id.to_string()));
    }
    let candidates = policy.candidates(count);
    let mut best: Option<(FrameHit, RgbImage)> = None;
    for &index in &candidates {
        let frame = video.frame(index)?;
        let dets: Vec<Detection> = with_retry(retry, || client.detect(&frame, DETECTOR_TEXT_PROMPT))?
            .into_iter()
            .filter(|d| d.score >= policy.score_threshold && d.bbox.clipped().is_valid())
            .collect();
        let Some(score) = dets.iter().map(|d| d.score).reduce(f64::max) else {
            continue;
        };
        let bbox = dets
            .iter()
            .map(|d| d.bbox)
            .reduce(NormBox::union)
            .expect("non-empty")
            .clipped();
        let better = match &best {
            None => true,
            Some((b, _)) => score > b.score || (score == b.score && bbox.area() > b.bbox.area()),
        };
        if better {
            best = Some((FrameHit { index, score, bbox }, frame));
        }
    }
    let (hit, frame) = match best {
        Some(b) => b,
        None if policy.fallback_fullframe => {
            let index = candidates[0];
            let frame = video.frame(index)?;
            (
                FrameHit {
                    index,
                    score: 0.0,
                    bbox: NormBox::full(),
                },
                frame,
            )
        }
        None => {
            return Err(Error::NoPersonFound {
                frame_index: candidates[0],
            })
        }
    };
    Ok(VisionPrompt {
        sample_id: sample_id.to_string(),
        crop: encode_png(&crop(&frame, hit.bbox))?,
        bbox: hit.bbox,
        frame_index: hit.index,
        detector_score: hit.score,
    })
}

pub fn generate_language_prompt(
    vision: &VisionPrompt,
    client: &dyn EngineClient,
    retry: RetryPolicy,
) -> Result<LanguagePrompt> {
    vision.validate()?;
    let image = vision.decode()?;
    let text = with_retry(retry, || client.answer(&image, VQA_QUESTION))?;
    if text.trim().is_empty() {
        return Err(Error::EmptyCaption(vision.sample_id.clone()));
    }
    Ok(LanguagePrompt {
        sample_id: vision.sample_id.clone(),
        text,
        question: VQA_QUESTION.to_string(),
    })
}

pub fn generate_record(
    sample_id: &str,
    video: &dyn VideoSource,
    client: &dyn EngineClient,
    policy: &FramePolicy,
    retry: RetryPolicy,
    timestamp: u64,
) -> Result<PromptRecord> {
    let vision = generate_vision_prompt(sample_id, video, client, policy, retry)?;
    let language = generate_language_prompt(&vision, client, retry)?;
    Ok(PromptRecord {
        sample_id: sample_id.to_string(),
        vision,
        language,
        engine_meta: EngineMeta {
            detector_name: client.detector_name().to_string(),
            vqa_name: client.vqa_name().to_string(),
            timestamp,
        },
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PipelineStats {
    pub generated: usize,
    pub cached: usize,
    pub failed: Vec<(String, String)>,
}

pub struct PipelineOptions {
    pub policy: FramePolicy,
    pub retry: RetryPolicy,
    /// Upper bound on concurrent client calls.
    pub concurrency: usize,
    /// Fixed record timestamp; `None` uses the wall clock.
    pub timestamp: Option<u64>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            policy: FramePolicy::default(),
            retry: RetryPolicy::default(),
            concurrency: 4,
            timestamp: None,
        }
    }
}

/// Generates one record per sample not already in `cache`.
///
/// `sources` yields a frame source per sample id. Failures are collected rather
/// than aborting the batch.
pub fn generate_prompts<'a, F>(
    ids: &[String],
    sources: F,
    client: &dyn EngineClient,
    cache: &PromptCache,
    opts: &PipelineOptions,
) -> Result<PipelineStats>
where
    F: Fn(&str) -> Result<Box<dyn VideoSource + 'a>> + Sync,
{
    let todo: Vec<&String> = ids.iter().filter(|id| !cache.contains(id)).collect();
    let cached = ids.len() - todo.len();
    let ts = opts.timestamp.unwrap_or_else(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.concurrency.max(1))
        .build()
        .map_err(|e| Error::config("concurrency", e.to_string()))?;
    let generated = AtomicUsize::new(0);
    let failed: Vec<(String, String)> = pool.install(|| {
        todo.par_iter()
            .filter_map(|id| {
                let result = sources(id)
                    .and_then(|video| generate_record(id, video.as_ref(), client, &opts.policy, opts.retry, ts))
                    .and_then(|record| cache.put(&record));
                match result {
                    Ok(()) => {
                        generated.fetch_add(1, Ordering::Relaxed);
                        None
                    }
                    Err(e) => Some((id.to_string(), e.to_string())),
                }
            })
            .collect()
    });
    Ok(PipelineStats {
        generated: generated.into_inner(),
        cached,
        failed,
    })
}
