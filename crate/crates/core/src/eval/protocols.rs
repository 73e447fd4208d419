//! Linear, finetune, KNN, semi-supervised and transfer protocols over a
//! pretrained skeleton encoder, plus score-level stream fusion.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use super::head::{argmax_rows, epoch_order, train_head, HeadTraining, LinearHead, Standardizer};
use super::knn::knn_predict;
use super::report::EvalReport;
use crate::config::EvalConfig;
use crate::data::{semi_subset, stratified_count, SkeletonLayout, SkeletonSequence, StreamKind};
use crate::encoder::{normalize_rows, prepare_input, FeatureNorm, Parameters, SkeletonEncoder};
use crate::error::{Error, Result};
use crate::pretrain::Sgd;

/// What every protocol needs besides the data.
#[derive(Debug, Clone)]
pub struct EvalContext<'a> {
    pub encoder: &'a SkeletonEncoder,
    pub stream: StreamKind,
    pub layout: &'a SkeletonLayout,
    pub classes: usize,
    pub benchmark: String,
    pub config_digest: String,
}

/// Encoder features of every sequence, row-aligned with the input.
pub fn extract_features(
    encoder: &SkeletonEncoder,
    seqs: &[SkeletonSequence],
    stream: StreamKind,
    layout: &SkeletonLayout,
) -> Result<Array2<f64>> {
    let rows: Vec<Result<Array1<f64>>> = seqs
        .par_iter()
        .map(|s| encoder.forward(prepare_input(s, stream, layout)?.view()))
        .collect();
    let bad: Vec<String> = rows
        .iter()
        .zip(seqs)
        .filter(|(r, _)| matches!(r, Err(Error::Batch { .. })))
        .map(|(_, s)| s.sample_id.clone())
        .collect();
    if !bad.is_empty() {
        return Err(Error::Batch { ids: bad });
    }
    let mut out = Array2::zeros((seqs.len(), encoder.feature_dim()));
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&r?);
    }
    Ok(out)
}

pub fn labels_of(seqs: &[SkeletonSequence]) -> Result<Vec<usize>> {
    let missing: Vec<String> = seqs.iter().filter(|s| s.label.is_none()).map(|s| s.sample_id.clone()).collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!("samples without labels: {missing:?}")));
    }
    Ok(seqs.iter().map(|s| s.label.unwrap_or(0)).collect())
}

fn probe_training(cfg: &EvalConfig) -> HeadTraining {
    HeadTraining {
        epochs: cfg.probe_epochs,
        lr: cfg.probe_lr,
        milestones: cfg.probe_milestones.clone(),
        gamma: 0.1,
        momentum: 0.9,
        weight_decay: 0.0,
        batch: cfg.probe_batch,
        seed: cfg.seed,
    }
}

fn check_counts(features: &Array2<f64>, labels: &[usize], what: &str) -> Result<()> {
    if features.nrows() != labels.len() {
        return Err(Error::Data(format!(
            "{what}: {} labels for {} samples",
            labels.len(),
            features.nrows()
        )));
    }
    Ok(())
}

/// Linear probe on precomputed features.
pub fn linear_probe_features(
    train: &Array2<f64>,
    train_labels: &[usize],
    test: &Array2<f64>,
    test_labels: &[usize],
    ctx: &EvalContext<'_>,
    cfg: &EvalConfig,
    protocol: &str,
) -> Result<EvalReport> {
    check_counts(train, train_labels, "train")?;
    check_counts(test, test_labels, "test")?;
    let std = Standardizer::fit(train.view());
    let head = train_head(std.apply(train.view()).view(), train_labels, ctx.classes, &probe_training(cfg));
    let preds = head.predict(std.apply(test.view()).view());
    EvalReport::from_predictions(protocol, &ctx.benchmark, &preds, test_labels, ctx.classes, &ctx.config_digest)
}

/// Trains a linear classifier on frozen encoder features.
pub fn linear_probe(
    ctx: &EvalContext<'_>,
    train: &[SkeletonSequence],
    test: &[SkeletonSequence],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let before = ctx.encoder.digest();
    let ftr = extract_features(ctx.encoder, train, ctx.stream, ctx.layout)?;
    let fte = extract_features(ctx.encoder, test, ctx.stream, ctx.layout)?;
    let report = linear_probe_features(&ftr, &labels_of(train)?, &fte, &labels_of(test)?, ctx, cfg, "linear")?;
    debug_assert_eq!(before, ctx.encoder.digest());
    Ok(report)
}

/// KNN retrieval of test queries against the training gallery.
pub fn knn_eval(
    ctx: &EvalContext<'_>,
    gallery: &[SkeletonSequence],
    queries: &[SkeletonSequence],
    k: usize,
) -> Result<EvalReport> {
    if gallery.is_empty() {
        return Err(Error::config("eval.k", "gallery is empty"));
    }
    let fg = extract_features(ctx.encoder, gallery, ctx.stream, ctx.layout)?;
    let fq = extract_features(ctx.encoder, queries, ctx.stream, ctx.layout)?;
    let ql = labels_of(queries)?;
    let preds = knn_predict(fg.view(), &labels_of(gallery)?, fq.view(), k, false)?;
    EvalReport::from_predictions("knn", &ctx.benchmark, &preds, &ql, ctx.classes, &ctx.config_digest)
}

struct Finetune {
    encoder: SkeletonEncoder,
    head: LinearHead,
}

impl Parameters for Finetune {
    fn params(&self) -> Vec<&[f64]> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.encoder.params_mut();
        p.extend(self.head.params_mut());
        p
    }
}

/// Trains encoder and a zero-initialized head end to end. Encoder features are
/// batch-normalized before the head; the returned standardizer holds the running
/// statistics, seeded from the initial encoder's training features.
pub fn finetune_encoder(
    ctx: &EvalContext<'_>,
    train: &[SkeletonSequence],
    cfg: &EvalConfig,
) -> Result<(SkeletonEncoder, LinearHead, Standardizer)> {
    let labels = labels_of(train)?;
    let inputs = train
        .par_iter()
        .map(|s| prepare_input(s, ctx.stream, ctx.layout))
        .collect::<Result<Vec<_>>>()?;
    let init = extract_features(ctx.encoder, train, ctx.stream, ctx.layout)?;
    let mut norm = FeatureNorm::new(ctx.encoder.feature_dim());
    norm.running_mean = init.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(init.ncols()));
    norm.running_var = init.var_axis(Axis(0), 0.0);
    let mut model = Finetune {
        encoder: ctx.encoder.clone(),
        head: LinearHead::zeros(ctx.encoder.feature_dim(), ctx.classes),
    };
    let mut opt = Sgd::new(0.9, 5e-4);
    let sched = HeadTraining {
        lr: cfg.finetune_lr,
        epochs: cfg.finetune_epochs,
        milestones: vec![cfg.finetune_epochs * 6 / 10, cfg.finetune_epochs * 8 / 10],
        ..probe_training(cfg)
    };
    for epoch in 0..sched.epochs {
        let lr = sched.lr_at(epoch);
        for chunk in epoch_order(train.len(), cfg.seed, epoch).chunks(cfg.probe_batch) {
            let fw = chunk
                .par_iter()
                .map(|&i| model.encoder.forward_cached(inputs[i].view()))
                .collect::<Result<Vec<_>>>()?;
            let mut feats = Array2::zeros((chunk.len(), model.encoder.feature_dim()));
            for (r, (f, _)) in fw.iter().enumerate() {
                feats.row_mut(r).assign(f);
            }
            let (x, cache) = norm.forward_batch(feats.view());
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let dl = model.head.logit_grad(model.head.logits(x.view()).view(), &yb);
            let mut grads = Finetune {
                encoder: model.encoder.zeros_like(),
                head: LinearHead::zeros(model.encoder.feature_dim(), ctx.classes),
            };
            let dx = norm.backward(&cache, model.head.backward(x.view(), dl.view(), &mut grads.head).view());
            let enc_grads: Vec<SkeletonEncoder> = fw
                .par_iter()
                .enumerate()
                .map(|(r, (_, cache))| {
                    let mut g = model.encoder.zeros_like();
                    model.encoder.backward(cache, &dx.row(r).to_owned(), &mut g);
                    g
                })
                .collect();
            for g in &enc_grads {
                grads.encoder.add_assign_params(g);
            }
            opt.step(&mut model, &grads, lr);
            if chunk.len() > 1 {
                norm.update(&cache.mean, &cache.var);
            }
        }
    }
    let std = Standardizer {
        scale: norm.scale(),
        mean: norm.running_mean,
    };
    Ok((model.encoder, model.head, std))
}

fn finetune_report(
    ctx: &EvalContext<'_>,
    train: &[SkeletonSequence],
    test: &[SkeletonSequence],
    cfg: &EvalConfig,
    protocol: &str,
) -> Result<EvalReport> {
    let (encoder, head, std) = finetune_encoder(ctx, train, cfg)?;
    let f = extract_features(&encoder, test, ctx.stream, ctx.layout)?;
    let preds = head.predict(std.apply(f.view()).view());
    EvalReport::from_predictions(protocol, &ctx.benchmark, &preds, &labels_of(test)?, ctx.classes, &ctx.config_digest)
}

/// Finetunes the entire network with a zero-initialized head.
pub fn finetune_eval(
    ctx: &EvalContext<'_>,
    train: &[SkeletonSequence],
    test: &[SkeletonSequence],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    finetune_report(ctx, train, test, cfg, "finetune")
}

/// Size of the labelled subset drawn for one fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiRun {
    pub fraction: f64,
    pub subset_size: usize,
    pub seed: u64,
    pub report: EvalReport,
}

/// Label-fraction protocol: trains the head (or, with `full_finetune`, the
/// whole network) on a stratified subset of the training labels.
pub fn semi_eval(
    ctx: &EvalContext<'_>,
    train: &[SkeletonSequence],
    test: &[SkeletonSequence],
    cfg: &EvalConfig,
) -> Result<Vec<SemiRun>> {
    let labels = labels_of(train)?;
    let ftr = if cfg.full_finetune {
        None
    } else {
        Some((
            extract_features(ctx.encoder, train, ctx.stream, ctx.layout)?,
            extract_features(ctx.encoder, test, ctx.stream, ctx.layout)?,
        ))
    };
    let test_labels = labels_of(test)?;
    let mut runs = Vec::new();
    for &fraction in &cfg.semi_fractions {
        let subset = semi_subset(&labels, fraction, cfg.seed)?;
        let protocol = format!("semi_{fraction}");
        log::info!(
            "semi fraction {fraction}: {} labelled samples (seed {})",
            subset.len(),
            cfg.seed
        );
        let report = match &ftr {
            Some((ftr, fte)) => {
                let x = ftr.select(Axis(0), &subset);
                let y: Vec<usize> = subset.iter().map(|&i| labels[i]).collect();
                linear_probe_features(&x, &y, fte, &test_labels, ctx, cfg, &protocol)?
            }
            None => {
                let sub: Vec<SkeletonSequence> = subset.iter().map(|&i| train[i].clone()).collect();
                finetune_report(ctx, &sub, test, cfg, &protocol)?
            }
        };
        runs.push(SemiRun {
            fraction,
            subset_size: subset.len(),
            seed: cfg.seed,
            report,
        });
    }
    Ok(runs)
}

/// Expected subset size for `fraction`: the per-class stratified counts summed.
pub fn expected_subset_size(labels: &[usize], fraction: f64) -> usize {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    (0..classes)
        .map(|c| labels.iter().filter(|&&l| l == c).count())
        .filter(|&n| n > 0)
        .map(|n| stratified_count(n, fraction))
        .sum()
}

/// Re-indexes joints so target sequences match the source layout:
/// source joint `j` takes target joint `remap[j]`.
pub fn remap_joints(seqs: &[SkeletonSequence], remap: &[usize]) -> Result<Vec<SkeletonSequence>> {
    seqs.iter()
        .map(|s| {
            if let Some(&bad) = remap.iter().find(|&&j| j >= s.joints()) {
                return Err(Error::config(
                    "transfer.remap",
                    format!("joint {bad} outside {} joints of `{}`", s.joints(), s.sample_id),
                ));
            }
            let data = s.data.select(Axis(1), remap);
            Ok(SkeletonSequence { data, ..s.clone() })
        })
        .collect()
}

/// Finetunes a source-pretrained encoder on a target dataset.
pub fn transfer_eval(
    ctx: &EvalContext<'_>,
    target_train: &[SkeletonSequence],
    target_test: &[SkeletonSequence],
    target_layout: &SkeletonLayout,
    remap: Option<&[usize]>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let source_joints = ctx.layout.joints;
    let (train, test) = match remap {
        Some(r) => {
            if r.len() != source_joints {
                return Err(Error::config(
                    "transfer.remap",
                    format!("{} entries for {source_joints} source joints", r.len()),
                ));
            }
            (remap_joints(target_train, r)?, remap_joints(target_test, r)?)
        }
        None if target_layout.joints == source_joints => (target_train.to_vec(), target_test.to_vec()),
        None => {
            return Err(Error::config(
                "transfer.remap",
                format!(
                    "target layout `{}` has {} joints, source has {source_joints}; provide a remap table",
                    target_layout.name, target_layout.joints
                ),
            ))
        }
    };
    finetune_report(ctx, &train, &test, cfg, "transfer")
}

/// Per-stream class-score matrices over the same samples.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamScores {
    pub kinds: Vec<StreamKind>,
    pub scores: Vec<Array2<f64>>,
}

/// Softmax class scores of a trained head, for fusion.
pub fn class_scores(head: &LinearHead, x: ArrayView2<f64>) -> Array2<f64> {
    crate::loss::softmax_rows(head.logits(x).view())
}

/// Score-level fusion: argmax of the weighted mean of per-stream scores.
pub fn fuse_streams(
    scores: &StreamScores,
    weights: Option<&[f64]>,
    labels: &[usize],
    benchmark: &str,
    config_digest: &str,
) -> Result<EvalReport> {
    if scores.scores.len() < 2 || scores.kinds.len() != scores.scores.len() {
        return Err(Error::Data("fusion needs at least two labelled streams".into()));
    }
    let shape = scores.scores[0].dim();
    if scores.scores.iter().any(|s| s.dim() != shape) {
        return Err(Error::Data("stream score matrices differ in shape".into()));
    }
    let n = scores.scores.len();
    let equal = vec![1.0; n];
    let w = weights.unwrap_or(&equal);
    if w.len() != n {
        return Err(Error::Data(format!("{} weights for {n} streams", w.len())));
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::Data("fusion weights must sum to a positive value".into()));
    }
    let mut fused = Array2::<f64>::zeros(shape);
    for (s, &wi) in scores.scores.iter().zip(w) {
        fused.scaled_add(wi / total, s);
    }
    let preds = argmax_rows(fused.view());
    EvalReport::from_predictions("fusion", benchmark, &preds, labels, shape.1, config_digest)
}

/// Positive-pair (same sample) and negative-pair cosine histograms between two
/// row-aligned embedding sets, as CSV `bin_lo,bin_hi,positive,negative`.
pub fn similarity_histogram_csv(a: ArrayView2<f64>, b: ArrayView2<f64>, bins: usize) -> Result<String> {
    if a.dim() != b.dim() || bins == 0 {
        return Err(Error::Shape(format!("{:?} vs {:?}, {bins} bins", a.dim(), b.dim())));
    }
    let (ua, _) = normalize_rows(a);
    let (ub, _) = normalize_rows(b);
    let sims = ua.dot(&ub.t());
    let mut pos = vec![0usize; bins];
    let mut neg = vec![0usize; bins];
    let bin = |s: f64| (((s.clamp(-1.0, 1.0) + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
    for ((i, j), &s) in sims.indexed_iter() {
        if i == j {
            pos[bin(s)] += 1;
        } else {
            neg[bin(s)] += 1;
        }
    }
    let mut out = String::from("bin_lo,bin_hi,positive,negative\n");
    for k in 0..bins {
        let lo = -1.0 + 2.0 * k as f64 / bins as f64;
        let hi = -1.0 + 2.0 * (k + 1) as f64 / bins as f64;
        out.push_str(&format!("{lo},{hi},{},{}\n", pos[k], neg[k]));
    }
    Ok(out)
}

/// Writes `sample_id,label,f0..` rows for external visualization.
pub fn dump_embeddings(path: &Path, seqs: &[SkeletonSequence], features: &Array2<f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let cols: Vec<String> = (0..features.ncols()).map(|c| format!("f{c}")).collect();
    writeln!(f, "sample_id,label,{}", cols.join(","))?;
    for (s, row) in seqs.iter().zip(features.rows()) {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let label = s.label.map(|l| l.to_string()).unwrap_or_default();
        writeln!(f, "{},{},{}", s.sample_id, label, vals.join(","))?;
    }
    f.flush()?;
    Ok(())
}
