//! Run configuration: TOML file, dotted command-line overrides, validation and
//! a digest of the resolved result.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Benchmark, StreamKind};
use crate::encoder::{hex, FrozenEncoderKind, TemperatureMode, TAU_INIT, TAU_MAX, TAU_MIN};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::schedule::OptimizerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub benchmark: Benchmark,
    pub stream: StreamKind,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            benchmark: Benchmark::Xsub,
            stream: StreamKind::Joint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderScale {
    /// Three reduced blocks for single-machine runs.
    Desk,
    /// Ten blocks, 64 to 256 channels.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderScale,
    pub frozen_encoder: FrozenEncoderKind,
    /// Shared embedding width `d`; must equal the frozen encoder width.
    pub embed_dim: usize,
    pub projector_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderScale::Desk,
            frozen_encoder: FrozenEncoderKind::Stub,
            embed_dim: 8,
            projector_hidden: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub alpha_start: f64,
    pub alpha_end: f64,
    /// Split each batch into intra and inter rows; otherwise both target
    /// families supervise every row, weighted by α and 1-α.
    pub dynamic_partition: bool,
    /// Anneal α over training; otherwise α stays at the midpoint of the endpoints.
    pub progressive: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            alpha_start: 0.9,
            alpha_end: 0.1,
            dynamic_partition: true,
            progressive: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemperatureConfig {
    pub init: f64,
    pub mode: TemperatureMode,
    /// Separate τ for the skeleton-vision and skeleton-language branches.
    pub per_branch: bool,
    /// Step size of `ln τ` relative to the weight learning rate.
    pub lr_scale: f64,
}

impl Default for TemperatureConfig {
    fn default() -> Self {
        TemperatureConfig {
            init: TAU_INIT,
            mode: TemperatureMode::Learnable,
            per_branch: false,
            lr_scale: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModalityConfig {
    pub vision: bool,
    pub language: bool,
}

impl Default for ModalityConfig {
    fn default() -> Self {
        ModalityConfig {
            vision: true,
            language: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineMode {
    Stub,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub mode: EngineMode,
    pub frames: usize,
    pub score_threshold: f64,
    pub fallback_fullframe: bool,
    pub concurrency: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            mode: EngineMode::Stub,
            frames: 1,
            score_threshold: 0.35,
            fallback_fullframe: false,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// Single-threaded data order and reductions.
    pub deterministic: bool,
    /// Write a numbered checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            deterministic: false,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_milestones: Vec<usize>,
    pub probe_batch: usize,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub semi_fractions: Vec<f64>,
    pub full_finetune: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 1,
            probe_epochs: 100,
            probe_lr: 0.1,
            probe_milestones: vec![60, 80],
            probe_batch: 64,
            finetune_epochs: 30,
            finetune_lr: 0.01,
            semi_fractions: vec![0.01, 0.05, 0.1],
            full_finetune: false,
            seed: 0,
        }
    }
}

/// Fully resolved configuration of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub schedule: ScheduleConfig,
    pub optimizer: OptimizerConfig,
    pub temperature: TemperatureConfig,
    pub modalities: ModalityConfig,
    pub engine: EngineConfig,
    pub run: RunSection,
    pub eval: EvalConfig,
}

fn check(ok: bool, path: &str, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(path, message()))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optimizer.validate()?;
        let s = &self.schedule;
        check((0.0..=1.0).contains(&s.alpha_start), "schedule.alpha_start", || {
            format!("must lie in [0, 1], got {}", s.alpha_start)
        })?;
        check((0.0..=1.0).contains(&s.alpha_end), "schedule.alpha_end", || {
            format!("must lie in [0, 1], got {}", s.alpha_end)
        })?;
        let t = &self.temperature;
        check((TAU_MIN..=TAU_MAX).contains(&t.init), "temperature.init", || {
            format!("must lie in [{TAU_MIN}, {TAU_MAX}], got {}", t.init)
        })?;
        check(t.lr_scale >= 0.0, "temperature.lr_scale", || {
            format!("must be non-negative, got {}", t.lr_scale)
        })?;
        check(self.model.embed_dim > 0, "model.embed_dim", || "must be positive".into())?;
        check(self.model.projector_hidden > 0, "model.projector_hidden", || {
            "must be positive".into()
        })?;
        check(
            self.modalities.vision || self.modalities.language,
            "modalities",
            || "enable at least one of vision, language".into(),
        )?;
        check(self.eval.k > 0, "eval.k", || "must be positive".into())?;
        check(self.eval.probe_batch > 0, "eval.probe_batch", || "must be positive".into())?;
        for (i, f) in self.eval.semi_fractions.iter().enumerate() {
            check(*f > 0.0 && *f <= 1.0, &format!("eval.semi_fractions[{i}]"), || {
                format!("must lie in (0, 1], got {f}")
            })?;
        }
        check(self.engine.frames > 0, "engine.frames", || "must be positive".into())?;
        check(self.engine.concurrency > 0, "engine.concurrency", || "must be positive".into())?;
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses a command-line override value as a TOML literal, falling back to a
/// bare string (`--data.stream bone`).
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn apply_override(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "malformed override key"));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Resolves a configuration from optional TOML text and `(dotted.key, value)`
/// overrides. Defaults fill every absent field; overrides apply last.
pub fn resolve_config_str(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut root: toml::Table = toml::from_str(text).map_err(|e| Error::config("<file>", e.message().to_string()))?;
    for (k, v) in overrides {
        apply_override(&mut root, k, parse_value(v))?;
    }
    let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(root)).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_config(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = match file {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    resolve_config_str(&text, overrides)
}

/// Writes `config.toml` and `config.sha256` into `dir`.
pub fn write_resolved(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    std::fs::write(dir.join("config.sha256"), format!("{}\n", cfg.digest()))?;
    Ok(())
}
