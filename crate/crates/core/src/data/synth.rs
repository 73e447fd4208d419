//! Desk-scale synthetic corpus: class motion templates over an NTU-style
//! skeleton, paired one-to-one with stub-generated knowledge prompts.

use std::f64::consts::TAU;

use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layout::SkeletonLayout;
use super::sequence::{SkeletonSequence, TARGET_FRAMES};
use super::split::{SplitDefinition, XsetRule, XsubRule, XviewRule};
use crate::error::{Error, Result};
use crate::prompt::{generate_record, FramePolicy, PromptRecord, RetryPolicy, SkeletonRenderer, StubEngine};

/// Approximate rest pose (x, y) of the 25 NTU joints in metres.
const REST_POSE: [(f32, f32); 25] = [
    (0.0, 0.0),
    (0.0, 0.3),
    (0.0, 0.55),
    (0.0, 0.7),
    (-0.2, 0.5),
    (-0.25, 0.25),
    (-0.28, 0.05),
    (-0.29, 0.0),
    (0.2, 0.5),
    (0.25, 0.25),
    (0.28, 0.05),
    (0.29, 0.0),
    (-0.1, -0.05),
    (-0.12, -0.45),
    (-0.13, -0.85),
    (-0.13, -0.9),
    (0.1, -0.05),
    (0.12, -0.45),
    (0.13, -0.85),
    (0.13, -0.9),
    (0.0, 0.5),
    (-0.3, -0.05),
    (-0.27, -0.02),
    (0.3, -0.05),
    (0.27, -0.02),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub seed: u64,
    pub bodies: usize,
    /// Per-coordinate Gaussian noise in metres.
    pub noise: f64,
    /// Strength of a per-sample random motion added on top of the class
    /// template, relative to template amplitude.
    pub distractor: f64,
    /// Maximum random rotation about the vertical axis, in degrees.
    pub max_yaw: f64,
}

impl SynthConfig {
    pub fn new(n_classes: usize, n_per_class: usize, seed: u64) -> Self {
        SynthConfig {
            n_classes,
            n_per_class,
            seed,
            bodies: 2,
            noise: 0.01,
            distractor: 1.0,
            max_yaw: 30.0,
        }
    }
}

/// A class motion template: per-joint sinusoid amplitude and phase at one frequency.
#[derive(Debug, Clone)]
pub struct MotionTemplate {
    pub frequency: f64,
    pub amplitude: Vec<[f64; 3]>,
    pub phase: Vec<f64>,
}

impl MotionTemplate {
    fn random(rng: &mut ChaCha8Rng, layout: &SkeletonLayout) -> Self {
        let depth = joint_depths(layout);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let frequency = rng.random_range(1..=3) as f64;
        let amplitude = depth
            .iter()
            .map(|&d| {
                // extremities swing more than the torso
                let scale = 0.03 + 0.05 * d as f64;
                [0, 1, 2].map(|_| scale * normal.sample(rng))
            })
            .collect();
        let phase = (0..layout.joints).map(|_| rng.random_range(0.0..TAU)).collect();
        MotionTemplate {
            frequency,
            amplitude,
            phase,
        }
    }

    /// Noise-free joint positions for `frames` frames, given a phase shift.
    pub fn render(&self, frames: usize, shift: f64, scale: f64) -> Array4<f32> {
        let mut out = self.displacement(frames, shift, scale);
        for ((_, j, c, _), v) in out.indexed_iter_mut() {
            let (rx, ry) = REST_POSE[j];
            *v += [rx, ry, 0.0][c];
        }
        out
    }

    /// Displacement from the rest pose only.
    pub fn displacement(&self, frames: usize, shift: f64, scale: f64) -> Array4<f32> {
        let joints = self.amplitude.len();
        let mut out = Array4::<f32>::zeros((frames, joints, 3, 1));
        for t in 0..frames {
            let arg = TAU * self.frequency * t as f64 / frames as f64 + shift;
            for j in 0..joints {
                let s = (arg + self.phase[j]).sin();
                for c in 0..3 {
                    out[[t, j, c, 0]] = (scale * self.amplitude[j][c] * s) as f32;
                }
            }
        }
        out
    }
}

fn joint_depths(layout: &SkeletonLayout) -> Vec<usize> {
    let parents = layout.parents();
    (0..layout.joints)
        .map(|mut j| {
            let mut d = 0;
            while parents[j] != j && d < layout.joints {
                j = parents[j];
                d += 1;
            }
            d
        })
        .collect()
}

/// Generated corpus: sequences, their prompts and labels, aligned by position.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub sequences: Vec<SkeletonSequence>,
    pub prompts: Vec<PromptRecord>,
    pub labels: Vec<usize>,
    pub templates: Vec<MotionTemplate>,
    pub layout: SkeletonLayout,
}

impl SynthCorpus {
    /// Split definition for the synthetic ids: subjects 1-7 train (70%),
    /// cameras 2-3 train, even setups train.
    pub fn splits() -> SplitDefinition {
        SplitDefinition {
            dataset: "synthetic".into(),
            xsub: Some(XsubRule {
                train_subjects: (1..=7).collect(),
            }),
            xview: Some(XviewRule {
                train_cameras: vec![2, 3],
            }),
            xset: Some(XsetRule {
                train_setups: vec![2],
            }),
        }
    }
}

/// Hue assigned to class `c` when rendering its figure.
pub fn class_hue(c: usize, n_classes: usize) -> f64 {
    360.0 * c as f64 / n_classes.max(1) as f64
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.n_classes < 2 {
        return Err(Error::config("synth.n_classes", "need at least 2 classes"));
    }
    if cfg.n_per_class == 0 {
        return Err(Error::config("synth.n_per_class", "must be positive"));
    }
    if !(1..=2).contains(&cfg.bodies) {
        return Err(Error::config("synth.bodies", "must be 1 or 2"));
    }
    let layout = SkeletonLayout::ntu25();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let templates: Vec<MotionTemplate> = (0..cfg.n_classes)
        .map(|_| MotionTemplate::random(&mut rng, &layout))
        .collect();
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| Error::config("synth.noise", e.to_string()))?;
    let engine = StubEngine::new(cfg.seed);
    let policy = FramePolicy::default();
    let retry = RetryPolicy {
        attempts: 1,
        ..RetryPolicy::default()
    };
    let mut sequences = Vec::new();
    let mut prompts = Vec::new();
    let mut labels = Vec::new();
    for k in 0..cfg.n_per_class {
        for (c, template) in templates.iter().enumerate() {
            let i = labels.len();
            let shift = rng.random_range(0.0..TAU);
            let scale = rng.random_range(0.8..1.2);
            let offset = [rng.random_range(-0.1..0.1), rng.random_range(-0.05..0.05), 3.0];
            let mut single = template.render(TARGET_FRAMES, shift, scale);
            if cfg.distractor > 0.0 {
                let extra = MotionTemplate::random(&mut rng, &layout);
                single += &extra.displacement(TARGET_FRAMES, 0.0, cfg.distractor);
            }
            let yaw = rng.random_range(-1.0..=1.0) * cfg.max_yaw.to_radians();
            let (sin, cos) = (yaw.sin() as f32, yaw.cos() as f32);
            let mut data = Array4::<f32>::zeros((TARGET_FRAMES, layout.joints, 3, cfg.bodies));
            for t in 0..TARGET_FRAMES {
                for j in 0..layout.joints {
                    let (x, y, z) = (single[[t, j, 0, 0]], single[[t, j, 1, 0]], single[[t, j, 2, 0]]);
                    let p = [cos * x + sin * z, y, -sin * x + cos * z];
                    for ch in 0..3 {
                        data[[t, j, ch, 0]] = p[ch] + offset[ch] as f32 + noise.sample(&mut rng) as f32;
                    }
                }
            }
            let seq = SkeletonSequence {
                sample_id: format!("synth{:02}_{k:04}", c),
                data,
                subject_id: (k % 10) as u32 + 1,
                camera_id: (i % 3) as u32 + 1,
                setup_id: (k % 2) as u32 + 1,
                label: Some(c),
            };
            let renderer = SkeletonRenderer::new(&seq, &layout, class_hue(c, cfg.n_classes));
            let record = generate_record(&seq.sample_id, &renderer, &engine, &policy, retry, 0)?;
            sequences.push(seq);
            prompts.push(record);
            labels.push(c);
        }
    }
    Ok(SynthCorpus {
        sequences,
        prompts,
        labels,
        templates,
        layout,
    })
}

/// Reassigns the prompts of a `fraction` of samples to samples of other classes,
/// simulating noisy correspondence. Returns the indices whose prompts moved.
pub fn shuffle_prompts_across_classes(
    prompts: &mut [PromptRecord],
    labels: &[usize],
    fraction: f64,
    seed: u64,
) -> Vec<usize> {
    let n = prompts.len();
    let take = ((fraction * n as f64).round() as usize).min(n);
    if take < 2 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = (0..n).collect();
    chosen.shuffle(&mut rng);
    chosen.truncate(take);
    chosen.sort_by_key(|&i| (labels[i], i));
    // rotating a label-sorted list by the largest group size moves every
    // element into a different class whenever no class holds more than half
    let mut largest = 0;
    let mut run = 0;
    for w in 0..chosen.len() {
        run = if w > 0 && labels[chosen[w]] == labels[chosen[w - 1]] { run + 1 } else { 1 };
        largest = largest.max(run);
    }
    let originals: Vec<PromptRecord> = chosen.iter().map(|&i| prompts[i].clone()).collect();
    for (p, &dst) in chosen.iter().enumerate() {
        let src = &originals[(p + largest) % take];
        let mut moved = src.clone();
        moved.sample_id = prompts[dst].sample_id.clone();
        moved.vision.sample_id = moved.sample_id.clone();
        moved.language.sample_id = moved.sample_id.clone();
        prompts[dst] = moved;
    }
    chosen
}
