//! The pretraining loop.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use super::metrics::{write_metrics_csv, EpochMetrics};
use super::model::C2vlModel;
use super::optim::Sgd;
use super::store::EmbeddingStore;
use crate::config::RunConfig;
use crate::data::{SkeletonLayout, SkeletonSequence};
use crate::encoder::{prepare_input, Parameters, Projector};
use crate::error::{Error, Result};
use crate::loss::{branch_loss_raw, LossConfig, LossMode, RawBranch, RowSplit};
use crate::schedule::{alpha_at, lr_at, partition_batch, AlphaSchedule};

/// Training samples and their precomputed prompt embeddings.
#[derive(Debug, Clone, Copy)]
pub struct PretrainData<'a> {
    pub sequences: &'a [SkeletonSequence],
    pub layout: &'a SkeletonLayout,
    pub store: &'a EmbeddingStore,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
}

/// Losses of one optimization step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub sv_intra: f64,
    pub sv_inter: f64,
    pub sl_intra: f64,
    pub sl_inter: f64,
}

impl StepLoss {
    fn is_finite(&self) -> bool {
        [self.total, self.sv_intra, self.sv_inter, self.sl_intra, self.sl_inter]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// α used at `epoch` under the configured schedule switches.
pub fn effective_alpha(cfg: &RunConfig, epoch: usize) -> Result<f64> {
    if cfg.loss.mode == LossMode::Infonce {
        return Ok(1.0);
    }
    let s = &cfg.schedule;
    if !s.progressive {
        return Ok(0.5 * (s.alpha_start + s.alpha_end));
    }
    Ok(alpha_at(epoch, &AlphaSchedule::new(s.alpha_start, s.alpha_end, cfg.optimizer.epochs)?))
}

fn effective_loss(cfg: &RunConfig) -> LossConfig {
    match cfg.loss.mode {
        LossMode::Soft => cfg.loss.clone(),
        LossMode::Infonce => LossConfig {
            beta: 0.0,
            intra: true,
            ..cfg.loss.clone()
        },
    }
}

fn row_split(cfg: &RunConfig, batch: usize, alpha: f64) -> RowSplit {
    if cfg.loss.mode == LossMode::Infonce || !cfg.schedule.dynamic_partition {
        RowSplit::full(batch)
    } else {
        RowSplit::from_partition(&partition_batch(batch, alpha))
    }
}

fn gather(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    m.select(Axis(0), rows)
}

struct BranchGrad {
    intra: f64,
    inter: f64,
    grad_features: Array2<f64>,
    grad_log_tau: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_branch(
    proj: &Projector,
    proj_grad: &mut Projector,
    features: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    rows: &RowSplit,
    alpha: f64,
    loss: &LossConfig,
    tau: f64,
) -> Result<BranchGrad> {
    let (raw, cache) = proj.forward_raw(features)?;
    let out = branch_loss_raw(
        RawBranch {
            skeleton: raw.view(),
            other: targets,
            tau,
        },
        rows,
        alpha,
        loss,
        None,
    );
    let grad_features = proj.backward(&cache, out.grad_skeleton.view(), proj_grad);
    Ok(BranchGrad {
        intra: out.intra,
        inter: out.inter,
        grad_features,
        grad_log_tau: out.grad_log_tau,
    })
}

/// Result of [`train_step`].
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: StepLoss,
    pub grads: C2vlModel,
    /// `ln τ` gradients of the vision and language branches.
    pub tau_grads: [f64; 2],
    /// Batch mean and variance of the pooled features.
    pub feature_mean: Array1<f64>,
    pub feature_var: Array1<f64>,
}

/// Forward, loss and backward for one batch.
pub fn train_step(
    model: &C2vlModel,
    batch: &[&SkeletonSequence],
    layout: &SkeletonLayout,
    vision: ArrayView2<f64>,
    language: ArrayView2<f64>,
    alpha: f64,
    cfg: &RunConfig,
) -> Result<StepOutput> {
    let b = batch.len();
    let forwards = batch
        .par_iter()
        .map(|seq| {
            let x = prepare_input(seq, model.stream, layout)?;
            model.encoder.forward_cached(x.view()).map_err(|e| match e {
                Error::Batch { .. } => Error::Batch {
                    ids: vec![seq.sample_id.clone()],
                },
                other => other,
            })
        })
        .collect::<Vec<_>>();
    let bad: Vec<String> = forwards
        .iter()
        .zip(batch)
        .filter(|(f, _)| matches!(f, Err(Error::Batch { .. })))
        .map(|(_, s)| s.sample_id.clone())
        .collect();
    if !bad.is_empty() {
        return Err(Error::Batch { ids: bad });
    }
    let forwards = forwards.into_iter().collect::<Result<Vec<_>>>()?;
    let mut features = Array2::zeros((b, model.encoder.feature_dim()));
    for (i, (f, _)) in forwards.iter().enumerate() {
        features.row_mut(i).assign(f);
    }
    let (normed, norm_cache) = model.feature_norm.forward_batch(features.view());
    let loss_cfg = effective_loss(cfg);
    let rows = row_split(cfg, b, alpha);
    let mut grads = model.zeros_like();
    let mut grad_normed = Array2::<f64>::zeros(normed.raw_dim());
    let mut step = StepLoss::default();
    let mut tau_grads = [0.0; 2];
    if cfg.modalities.vision {
        let g = run_branch(
            &model.proj_vision,
            &mut grads.proj_vision,
            normed.view(),
            vision,
            &rows,
            alpha,
            &loss_cfg,
            model.tau_vision.tau(),
        )?;
        step.sv_intra = g.intra;
        step.sv_inter = g.inter;
        grad_normed += &g.grad_features;
        tau_grads[0] = g.grad_log_tau;
    }
    if cfg.modalities.language {
        let g = run_branch(
            &model.proj_language,
            &mut grads.proj_language,
            normed.view(),
            language,
            &rows,
            alpha,
            &loss_cfg,
            model.tau_language.tau(),
        )?;
        step.sl_intra = g.intra;
        step.sl_inter = g.inter;
        grad_normed += &g.grad_features;
        tau_grads[1] = g.grad_log_tau;
    }
    step.total = alpha * (step.sv_intra + step.sl_intra) + (1.0 - alpha) * (step.sv_inter + step.sl_inter);
    let grad_features = model.feature_norm.backward(&norm_cache, grad_normed.view());
    let per_sample: Vec<_> = forwards
        .par_iter()
        .enumerate()
        .map(|(i, (_, cache))| {
            let mut g = model.encoder.zeros_like();
            let gf: Array1<f64> = grad_features.row(i).to_owned();
            model.encoder.backward(cache, &gf, &mut g);
            g
        })
        .collect();
    for g in &per_sample {
        grads.encoder.add_assign_params(g);
    }
    Ok(StepOutput {
        loss: step,
        grads,
        tau_grads,
        feature_mean: norm_cache.mean,
        feature_var: norm_cache.var,
    })
}

fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

/// Consecutive chunks of `size`; a trailing singleton joins the previous chunk.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = (start + size).min(order.len());
        if order.len() - end == 1 {
            end = order.len();
        }
        out.push(&order[start..end]);
        start = end;
    }
    out
}

fn init_state(data: &PretrainData<'_>, cfg: &RunConfig) -> Result<Checkpoint> {
    let bodies = data.sequences[0].bodies();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let model = C2vlModel::new(cfg, data.layout, bodies, &mut rng)?;
    Ok(Checkpoint {
        version: CHECKPOINT_VERSION.into(),
        epochs_completed: 0,
        global_step: 0,
        seed: cfg.run.seed,
        config_digest: cfg.digest(),
        digest: model.digest(),
        model,
        optimizer: Sgd::new(cfg.optimizer.momentum, cfg.optimizer.weight_decay),
        metrics: Vec::new(),
    })
}

/// Pretrains on `data`, optionally continuing from `resume`. With an output
/// directory, writes `metrics.csv`, `last.ckpt.json`, `encoder.json` and
/// numbered checkpoints every `run.checkpoint_every` epochs.
pub fn pretrain_run(
    data: PretrainData<'_>,
    cfg: &RunConfig,
    out_dir: Option<&Path>,
    resume: Option<Checkpoint>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if data.sequences.len() < 2 {
        return Err(Error::Data("pretraining needs at least two samples".into()));
    }
    if data.store.dim != cfg.model.embed_dim {
        return Err(Error::config(
            "model.embed_dim",
            format!("{} does not match embedding store width {}", cfg.model.embed_dim, data.store.dim),
        ));
    }
    let index = data.store.row_index();
    let missing: Vec<String> = data
        .sequences
        .iter()
        .filter(|s| !index.contains_key(s.sample_id.as_str()))
        .map(|s| s.sample_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPrompts(missing));
    }
    let store_rows: Vec<usize> = data.sequences.iter().map(|s| index[s.sample_id.as_str()]).collect();
    let first = &data.sequences[0];
    let shape_mismatch: Vec<String> = data
        .sequences
        .iter()
        .filter(|s| s.joints() != first.joints() || s.bodies() != first.bodies() || s.frames() != first.frames())
        .map(|s| s.sample_id.clone())
        .collect();
    if !shape_mismatch.is_empty() {
        return Err(Error::Batch { ids: shape_mismatch });
    }

    let mut state = match resume {
        Some(ck) => {
            if ck.seed != cfg.run.seed {
                log::warn!("resuming with seed {} from a run seeded {}", cfg.run.seed, ck.seed);
            }
            ck
        }
        None => init_state(&data, cfg)?,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(if cfg.run.deterministic { 1 } else { 0 })
        .build()
        .map_err(|e| Error::Data(format!("thread pool: {e}")))?;

    for epoch in state.epochs_completed..cfg.optimizer.epochs {
        let alpha = effective_alpha(cfg, epoch)?;
        let lr = lr_at(epoch, &cfg.optimizer);
        let order = shuffled(data.sequences.len(), cfg.run.seed, epoch);
        let mut sums = StepLoss::default();
        let chunks = batches(&order, cfg.optimizer.batch_size);
        for chunk in &chunks {
            let seqs: Vec<&SkeletonSequence> = chunk.iter().map(|&i| &data.sequences[i]).collect();
            let rows: Vec<usize> = chunk.iter().map(|&i| store_rows[i]).collect();
            let v = gather(&data.store.vision, &rows);
            let l = gather(&data.store.language, &rows);
            let out = pool.install(|| train_step(&state.model, &seqs, data.layout, v.view(), l.view(), alpha, cfg))?;
            let (step, tau_grads) = (out.loss, out.tau_grads);
            if !step.is_finite() {
                let ids: Vec<String> = seqs.iter().map(|s| s.sample_id.clone()).collect();
                if let Some(dir) = out_dir {
                    let dump = serde_json::json!({ "epoch": epoch, "step": state.global_step, "ids": ids });
                    std::fs::write(dir.join("nonfinite_batch.json"), dump.to_string())?;
                }
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: state.global_step,
                    ids,
                });
            }
            state.optimizer.step(&mut state.model, &out.grads, lr);
            state.model.feature_norm.update(&out.feature_mean, &out.feature_var);
            let tau_lr = lr * cfg.temperature.lr_scale;
            if cfg.temperature.per_branch {
                state.model.tau_vision.step(tau_grads[0], tau_lr);
                state.model.tau_language.step(tau_grads[1], tau_lr);
            } else {
                state.model.tau_vision.step(tau_grads[0] + tau_grads[1], tau_lr);
                state.model.tau_language = state.model.tau_vision;
            }
            sums.total += step.total;
            sums.sv_intra += step.sv_intra;
            sums.sv_inter += step.sv_inter;
            sums.sl_intra += step.sl_intra;
            sums.sl_inter += step.sl_inter;
            state.global_step += 1;
        }
        let n = chunks.len() as f64;
        let row = EpochMetrics {
            epoch,
            alpha,
            lr,
            loss_total: sums.total / n,
            loss_sv_intra: sums.sv_intra / n,
            loss_sv_inter: sums.sv_inter / n,
            loss_sl_intra: sums.sl_intra / n,
            loss_sl_inter: sums.sl_inter / n,
            tau: state.model.tau_vision.tau(),
        };
        log::info!(
            "epoch {epoch}: alpha {alpha:.4} lr {lr} loss {:.5} tau {:.4}",
            row.loss_total,
            row.tau
        );
        state.metrics.push(row);
        state.epochs_completed = epoch + 1;
        state.config_digest = cfg.digest();
        state.digest = state.model.digest();
        if let Some(dir) = out_dir {
            let every = cfg.run.checkpoint_every;
            if every > 0 && state.epochs_completed % every == 0 {
                state.save(&dir.join(format!("epoch_{:04}.ckpt.json", state.epochs_completed)))?;
            }
        }
    }
    state.digest = state.model.digest();
    if let Some(dir) = out_dir {
        state.save(&dir.join("last.ckpt.json"))?;
        state.export_encoder().save(&dir.join("encoder.json"))?;
        write_metrics_csv(&dir.join("metrics.csv"), &state.metrics)?;
    }
    Ok(PretrainOutcome {
        metrics: state.metrics.clone(),
        checkpoint: state,
    })
}
