//! Acceptance gates. Each criterion prints one PASS/FAIL line; the binary exits
//! non-zero if any gate fails. Oracles here are written independently of the
//! library code paths they check.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use c2vl_core::config::resolve_config;
use c2vl_core::data::{synth_generate, SynthConfig};
use c2vl_core::encoder::{load_frozen, EmbeddingBatch, FrozenEncoderKind, Modality};
use c2vl_core::eval::knn_predict;
use c2vl_core::loss::{
    branch_loss_raw, combined_soft_loss, inter_targets_with, intra_targets, BranchTargets, LossConfig, RawBranch,
    RowSplit,
};
use c2vl_core::pretrain::{precompute_prompt_embeddings, pretrain_run, Checkpoint, PretrainData};
use c2vl_core::schedule::{alpha_at, lr_at, partition_batch, AlphaSchedule, OptimizerConfig};
use c2vl_core::smoke::{run_synth_smoke, smoke_config, SmokeOptions};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn gaussian(rng: &mut ChaCha8Rng, b: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((b, d), |_| StandardNormal.sample(rng))
}

fn unit_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut r in out.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    out
}

fn unit(rng: &mut ChaCha8Rng, b: usize, d: usize, m: Modality) -> EmbeddingBatch {
    EmbeddingBatch::new(unit_rows(&gaussian(rng, b, d)), m).expect("unit rows")
}

/// `-(1/B) Σ_i log softmax_j(<a_i, b_j>/τ)[i]` with an explicit max-shifted sum.
fn oracle_infonce_one_way(a: &Array2<f64>, b: &Array2<f64>, tau: f64) -> f64 {
    let n = a.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let logits: Vec<f64> = (0..n).map(|j| a.row(i).dot(&b.row(j)) / tau).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - logits[i];
    }
    total / n as f64
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = LossConfig {
        beta: 0.0,
        ..LossConfig::default()
    };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let b = rng.random_range(2..=32);
        let d = rng.random_range(4..=64);
        let tau = rng.random_range(0.05..1.0);
        let s = unit(&mut rng, b, d, Modality::Skeleton);
        let v = unit(&mut rng, b, d, Modality::Vision);
        let l = unit(&mut rng, b, d, Modality::Language);
        let got = combined_soft_loss(&s, &v, &l, &partition_batch(b, 1.0), &cfg, tau)
            .map_err(|e| e.to_string())?
            .total;
        let (sm, vm, lm) = (s.matrix(), v.matrix(), l.matrix());
        let want = oracle_infonce_one_way(sm, vm, tau)
            + oracle_infonce_one_way(vm, sm, tau)
            + oracle_infonce_one_way(sm, lm, tau)
            + oracle_infonce_one_way(lm, sm, tau);
        worst = worst.max((got - want).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    if worst <= 1e-9 && secs < 10.0 {
        Ok(format!("max |soft - infonce| = {worst:.2e} over 100 batches in {secs:.2}s"))
    } else {
        Err(format!("max deviation {worst:.2e} (tol 1e-9), runtime {secs:.2}s (limit 10s)"))
    }
}

struct Objective {
    sv: Array2<f64>,
    v: Array2<f64>,
    sl: Array2<f64>,
    l: Array2<f64>,
    log_tau: f64,
}

impl Objective {
    fn field(&mut self, which: usize) -> &mut Array2<f64> {
        match which {
            0 => &mut self.sv,
            1 => &mut self.v,
            2 => &mut self.sl,
            _ => &mut self.l,
        }
    }
}

fn objective(
    o: &Objective,
    rows: &RowSplit,
    alpha: f64,
    cfg: &LossConfig,
    targets: &[BranchTargets; 2],
) -> (f64, Vec<Array2<f64>>, f64) {
    let tau = o.log_tau.exp();
    let a = branch_loss_raw(
        RawBranch {
            skeleton: o.sv.view(),
            other: o.v.view(),
            tau,
        },
        rows,
        alpha,
        cfg,
        Some(&targets[0]),
    );
    let b = branch_loss_raw(
        RawBranch {
            skeleton: o.sl.view(),
            other: o.l.view(),
            tau,
        },
        rows,
        alpha,
        cfg,
        Some(&targets[1]),
    );
    let total = alpha * (a.intra + b.intra) + (1.0 - alpha) * (a.inter + b.inter);
    (
        total,
        vec![a.grad_skeleton, a.grad_other, b.grad_skeleton, b.grad_other],
        a.grad_log_tau + b.grad_log_tau,
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for &alpha in &[0.0, 0.5, 1.0] {
        for &beta in &[0.0, 0.2] {
            for _ in 0..3 {
                let b = rng.random_range(2..=8);
                let d = rng.random_range(2..=16);
                let cfg = LossConfig {
                    beta,
                    ..LossConfig::default()
                };
                let mut o = Objective {
                    sv: gaussian(&mut rng, b, d),
                    v: gaussian(&mut rng, b, d),
                    sl: gaussian(&mut rng, b, d),
                    l: gaussian(&mut rng, b, d),
                    log_tau: rng.random_range(0.1f64..0.5).ln(),
                };
                let tau = o.log_tau.exp();
                // the teacher targets are held fixed, as in the detached self-distillation step
                let targets = [
                    BranchTargets::compute(unit_rows(&o.sv).view(), unit_rows(&o.v).view(), &cfg, tau),
                    BranchTargets::compute(unit_rows(&o.sl).view(), unit_rows(&o.l).view(), &cfg, tau),
                ];
                let rows = RowSplit::from_partition(&partition_batch(b, alpha));
                let (_, grads, gtau) = objective(&o, &rows, alpha, &cfg, &targets);
                let mut analytic = Vec::new();
                let mut numeric = Vec::new();
                for which in 0..4 {
                    for idx in 0..b * d {
                        let (i, j) = (idx / d, idx % d);
                        let orig = o.field(which)[[i, j]];
                        o.field(which)[[i, j]] = orig + h;
                        let up = objective(&o, &rows, alpha, &cfg, &targets).0;
                        o.field(which)[[i, j]] = orig - h;
                        let down = objective(&o, &rows, alpha, &cfg, &targets).0;
                        o.field(which)[[i, j]] = orig;
                        numeric.push((up - down) / (2.0 * h));
                        analytic.push(grads[which][[i, j]]);
                    }
                }
                let orig = o.log_tau;
                o.log_tau = orig + h;
                let up = objective(&o, &rows, alpha, &cfg, &targets).0;
                o.log_tau = orig - h;
                let down = objective(&o, &rows, alpha, &cfg, &targets).0;
                o.log_tau = orig;
                numeric.push((up - down) / (2.0 * h));
                analytic.push(gtau);
                let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
                let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
                let rel = diff / na.max(nn).max(1e-12);
                worst = worst.max(rel);
                cases += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if worst < 1e-4 && secs < 60.0 {
        Ok(format!("max relative error {worst:.2e} over {cases} cases in {secs:.2}s"))
    } else {
        Err(format!("max relative error {worst:.2e} (tol 1e-4), runtime {secs:.2}s (limit 60s)"))
    }
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for n in 0..1000 {
        let b = rng.random_range(2..=32);
        let d = rng.random_range(2..=64);
        let tau = rng.random_range(0.02..1.0);
        let s = unit(&mut rng, b, d, Modality::Skeleton);
        let x = unit(&mut rng, b, d, Modality::Vision);
        let p = intra_targets(&x, 0.2, tau).map_err(|e| e.to_string())?;
        let (q1, q2) = inter_targets_with(&s, &x, tau, true).map_err(|e| e.to_string())?;
        for m in [&p.matrix, &q1.matrix, &q2.matrix] {
            for r in m.rows() {
                worst = worst.max((r.sum() - 1.0).abs());
                if r.iter().any(|&v| v < 0.0) {
                    return Err(format!("negative target entry in batch {n}"));
                }
            }
        }
        for (i, r) in p.matrix.rows().into_iter().enumerate() {
            let off = r.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::MIN, f64::max);
            if r[i] <= off {
                return Err(format!("P diagonal not the row argmax in batch {n}, row {i}"));
            }
        }
    }
    if worst <= 1e-6 {
        Ok(format!("max |row sum - 1| = {worst:.2e}; P diagonal argmax on all 1000 batches"))
    } else {
        Err(format!("max |row sum - 1| = {worst:.2e} (tol 1e-6)"))
    }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let b = rng.random_range(2..=32);
        let d = rng.random_range(2..=64);
        let tau = rng.random_range(0.02..1.0);
        let s = unit(&mut rng, b, d, Modality::Skeleton);
        let v = unit(&mut rng, b, d, Modality::Vision);
        let (a1, a2) = inter_targets_with(&s, &v, tau, true).map_err(|e| e.to_string())?;
        let (b1, b2) = inter_targets_with(&s, &v, tau, false).map_err(|e| e.to_string())?;
        for (x, y) in a1.matrix.iter().zip(&b1.matrix).chain(a2.matrix.iter().zip(&b2.matrix)) {
            worst = worst.max((x - y).abs());
        }
    }
    if worst <= 1e-12 {
        Ok(format!("max Q change without the row-constant term = {worst:.2e}"))
    } else {
        Err(format!("max Q change {worst:.2e} (tol 1e-12)"))
    }
}

fn criterion_5() -> Outcome {
    let s = AlphaSchedule::new(0.9, 0.1, 150).map_err(|e| e.to_string())?;
    let checks = [(alpha_at(0, &s), 0.9), (alpha_at(150, &s), 0.1), (alpha_at(75, &s), 0.5)];
    if checks.iter().any(|(got, want)| (got - want).abs() > 1e-9) {
        return Err(format!("alpha endpoints/midpoint {checks:?}"));
    }
    let p = partition_batch(400, 0.9);
    if (p.intra, p.inter) != (360, 40) {
        return Err(format!("partition(400, 0.9) = ({}, {})", p.intra, p.inter));
    }
    let opt = OptimizerConfig::default();
    let lrs = [lr_at(0, &opt), lr_at(130, &opt), lr_at(140, &opt)];
    let want = [0.1, 0.01, 0.001];
    if lrs.iter().zip(&want).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(format!("lr at 0/130/140 = {lrs:?}"));
    }
    if lr_at(129, &opt) != 0.1 || lr_at(139, &opt) != lrs[1] {
        return Err("lr changes away from the milestones".into());
    }
    Ok("alpha 0.9/0.5/0.1, partition (360, 40), lr 0.1/0.01/0.001".into())
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let cfg = smoke_config(7, &[]).map_err(|e| e.to_string())?;
    let opts = SmokeOptions::default();
    let out = run_synth_smoke(&cfg, &opts, None).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let line = format!(
        "{}x{} corpus, {} epochs, train {} / test {}: linear {:.1}%, knn(k=1) {:.1}%, {secs:.1}s",
        opts.classes,
        opts.per_class,
        cfg.optimizer.epochs,
        out.train_size,
        out.test_size,
        out.linear.accuracy,
        out.knn.accuracy
    );
    if out.linear.accuracy >= 95.0 && out.knn.accuracy >= 95.0 && secs < 300.0 && cfg.eval.k == 1 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_7() -> Outcome {
    let mut means = Vec::new();
    let mut detail = Vec::new();
    for mode in ["soft", "infonce"] {
        let mut accs = Vec::new();
        for seed in 1..=5u64 {
            let cfg = smoke_config(seed, &[("loss.mode".into(), format!("\"{mode}\""))]).map_err(|e| e.to_string())?;
            let opts = SmokeOptions {
                noisy_fraction: 0.2,
                ..SmokeOptions::default()
            };
            accs.push(run_synth_smoke(&cfg, &opts, None).map_err(|e| e.to_string())?.linear.accuracy);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        detail.push(format!("{mode} {accs:.1?} mean {mean:.2}"));
        means.push(mean);
    }
    let line = format!("20% shuffled prompts, seeds 1-5: {}", detail.join("; "));
    if means[0] >= means[1] {
        Ok(line)
    } else {
        Err(line)
    }
}

/// Exhaustive cosine k-NN: full similarity list, stable descending sort, majority
/// vote, ties by summed similarity then by lower class.
fn oracle_knn(gallery: &Array2<f64>, labels: &[usize], queries: &Array2<f64>, k: usize) -> Vec<usize> {
    let cos = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| {
        let na = a.dot(&a).sqrt();
        let nb = b.dot(&b).sqrt();
        a.dot(&b) / (na * nb)
    };
    let classes = labels.iter().max().unwrap() + 1;
    queries
        .rows()
        .into_iter()
        .map(|q| {
            let mut sims: Vec<(f64, usize)> =
                gallery.rows().into_iter().enumerate().map(|(j, g)| (cos(q, g), j)).collect();
            sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut votes = vec![(0usize, 0.0f64); classes];
            for &(sim, j) in &sims[..k] {
                votes[labels[j]].0 += 1;
                votes[labels[j]].1 += sim;
            }
            let mut best = 0;
            for c in 1..classes {
                let (bv, bs) = votes[best];
                let (cv, cs) = votes[c];
                if cv > bv || (cv == bv && cs > bs) {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut compared = 0;
    for &(n, k) in &[(10, 1), (50, 3), (300, 5), (1000, 1), (2000, 20), (2000, 7)] {
        let d = rng.random_range(4..=32);
        let classes = rng.random_range(2..=10);
        let gallery = gaussian(&mut rng, n, d);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let queries = gaussian(&mut rng, 40, d);
        let got = knn_predict(gallery.view(), &labels, queries.view(), k, false).map_err(|e| e.to_string())?;
        let want = oracle_knn(&gallery, &labels, &queries, k);
        if got != want {
            return Err(format!("gallery {n}, k {k}: predictions differ from brute force"));
        }
        compared += got.len();
    }
    Ok(format!("{compared} predictions identical to brute force, galleries up to 2000"))
}

fn criterion_9() -> Outcome {
    let run = || -> c2vl_core::Result<(Vec<f64>, Vec<f64>)> {
        let corpus = synth_generate(&SynthConfig::new(3, 8, 9))?;
        let frozen = load_frozen(FrozenEncoderKind::Stub, 8, 9)?;
        let store = precompute_prompt_embeddings(&corpus.prompts, frozen.as_ref(), 8)?;
        let data = PretrainData {
            sequences: &corpus.sequences,
            layout: &corpus.layout,
            store: &store,
        };
        let overrides: Vec<(String, String)> = [
            ("optimizer.epochs", "4"),
            ("optimizer.batch_size", "8"),
            ("optimizer.milestones", "[3]"),
            ("run.deterministic", "true"),
            ("run.checkpoint_every", "2"),
            ("run.seed", "9"),
        ]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        let cfg = c2vl_core::config::resolve_config_str("", &overrides)?;
        let dir = tempfile::tempdir()?;
        let full = pretrain_run(data, &cfg, Some(dir.path()), None)?;
        let resume = Checkpoint::load(&dir.path().join("epoch_0002.ckpt.json"))?;
        let resumed = pretrain_run(data, &cfg, None, Some(resume))?;
        let losses = |m: &[c2vl_core::pretrain::EpochMetrics]| m.iter().map(|e| e.loss_total).collect::<Vec<_>>();
        Ok((losses(&full.metrics), losses(&resumed.metrics)))
    };
    let (a, b) = run().map_err(|e| e.to_string())?;
    if a.len() != 4 || b.len() != 4 {
        return Err(format!("expected 4 epochs of metrics, got {} and {}", a.len(), b.len()));
    }
    let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    if worst <= 1e-6 {
        Ok(format!("resumed epoch losses match within {worst:.2e}"))
    } else {
        Err(format!("resumed losses differ by {worst:.2e} (tol 1e-6): {a:?} vs {b:?}"))
    }
}

fn criterion_10() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/ntu60_xsub.paper.toml");
    let cfg = resolve_config(Some(&path), &[]).map_err(|e| e.to_string())?;
    let o = &cfg.optimizer;
    let ok = cfg.loss.beta == 0.2
        && cfg.temperature.init == 0.07
        && (cfg.schedule.alpha_start, cfg.schedule.alpha_end) == (0.9, 0.1)
        && (o.epochs, o.batch_size, o.lr, o.weight_decay) == (150, 400, 0.1, 5e-4)
        && o.milestones == vec![130, 140];
    if !ok {
        return Err(format!("{} does not carry the full-scale settings", path.display()));
    }
    Ok("published full-scale accuracies (e.g. NTU60 xsub linear 84.4) are NOT reproducible at desk scale: \
        they need the NTU/PKU corpora, CLIP weights and LMM prompts; configs/ntu60_xsub.paper.toml ships the \
        exact settings, and acceptance rests on criteria 1-9"
        .into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("loss equals bidirectional InfoNCE at alpha=1, beta=0", criterion_1),
        ("analytic gradient matches finite differences", criterion_2),
        ("targets are row-stochastic, P diagonal dominant", criterion_3),
        ("row-constant term does not change Q", criterion_4),
        ("schedule exactness", criterion_5),
        ("synthetic end-to-end smoke", criterion_6),
        ("soft targets >= InfoNCE under noisy prompts", criterion_7),
        ("KNN equals brute force", criterion_8),
        ("checkpoint resume reproduces losses", criterion_9),
        ("non-reproducibility statement", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
