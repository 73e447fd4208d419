use c2vl_core::config::{EvalConfig, RunConfig};
use c2vl_core::data::{synth_generate, Benchmark, SkeletonLayout, SkeletonSequence, SynthConfig, SynthCorpus};
use c2vl_core::encoder::{Parameters, SkeletonEncoder};
use c2vl_core::eval::{
    expected_subset_size, extract_features, finetune_eval, knn_eval, labels_of, linear_probe, linear_probe_features,
    remap_joints, semi_eval, transfer_eval, EvalContext, EvalReport,
};
use c2vl_core::pretrain::C2vlModel;
use c2vl_core::smoke::smoke_config;
use c2vl_core::Error;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Fixture {
    cfg: RunConfig,
    corpus: SynthCorpus,
    encoder: SkeletonEncoder,
    train: Vec<SkeletonSequence>,
    test: Vec<SkeletonSequence>,
}

impl Fixture {
    fn new(per_class: usize, seed: u64) -> Self {
        let cfg = smoke_config(seed, &[]).unwrap();
        let corpus = synth_generate(&SynthConfig::new(3, per_class, seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = C2vlModel::new(&cfg, &corpus.layout, corpus.sequences[0].bodies(), &mut rng).unwrap().encoder;
        let metas: Vec<_> = corpus.sequences.iter().map(|s| s.meta()).collect();
        let split = SynthCorpus::splits().split(Benchmark::Xsub, &metas).unwrap();
        let (train, test) = corpus
            .sequences
            .iter()
            .cloned()
            .partition(|s| split.train_ids.contains(&s.sample_id));
        Fixture {
            cfg,
            corpus,
            encoder,
            train,
            test,
        }
    }

    fn ctx(&self) -> EvalContext<'_> {
        EvalContext {
            encoder: &self.encoder,
            stream: self.cfg.data.stream,
            layout: &self.corpus.layout,
            classes: 3,
            benchmark: "synthetic-xsub".into(),
            config_digest: self.cfg.digest(),
        }
    }
}

fn check_confusion(report: &EvalReport, test: &[SkeletonSequence]) {
    let labels = labels_of(test).unwrap();
    let total: usize = report.confusion.iter().flatten().sum();
    assert_eq!(total, test.len());
    for (c, row) in report.confusion.iter().enumerate() {
        assert_eq!(row.iter().sum::<usize>(), labels.iter().filter(|&&l| l == c).count());
    }
    let trace: usize = (0..report.confusion.len()).map(|c| report.confusion[c][c]).sum();
    assert!((report.accuracy - 100.0 * trace as f64 / total as f64).abs() < 1e-9);
}

/// Brute-force cosine KNN with majority vote; ties go to the label of the nearest voter.
fn oracle_knn_accuracy(gallery: &Array2<f64>, gl: &[usize], queries: &Array2<f64>, ql: &[usize], k: usize) -> f64 {
    let unit = |v: ndarray::ArrayView1<f64>| &v / v.dot(&v).sqrt().max(1e-12);
    let g: Vec<_> = gallery.rows().into_iter().map(unit).collect();
    let mut correct = 0;
    for (q, &truth) in queries.rows().into_iter().zip(ql) {
        let q = unit(q);
        let mut sims: Vec<(f64, usize)> = g.iter().zip(gl).map(|(r, &l)| (r.dot(&q), l)).collect();
        sims.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut votes = std::collections::HashMap::new();
        for &(_, l) in &sims[..k] {
            *votes.entry(l).or_insert(0) += 1;
        }
        let best = *votes.values().max().unwrap();
        let pred = sims[..k].iter().find(|(_, l)| votes[l] == best).unwrap().1;
        correct += usize::from(pred == truth);
    }
    100.0 * correct as f64 / ql.len() as f64
}

#[test]
fn linear_probe_keeps_encoder_frozen() {
    let fx = Fixture::new(20, 11);
    let before = fx.encoder.digest();
    let report = linear_probe(&fx.ctx(), &fx.train, &fx.test, &fx.cfg.eval).unwrap();
    assert_eq!(fx.encoder.digest(), before);
    assert_eq!(report.protocol, "linear");
    check_confusion(&report, &fx.test);
}

#[test]
fn shuffled_labels_probe_near_chance() {
    let fx = Fixture::new(150, 12);
    let ctx = fx.ctx();
    let ftr = extract_features(&fx.encoder, &fx.train, ctx.stream, ctx.layout).unwrap();
    let fte = extract_features(&fx.encoder, &fx.test, ctx.stream, ctx.layout).unwrap();
    let test_labels = labels_of(&fx.test).unwrap();
    let true_acc = linear_probe_features(&ftr, &labels_of(&fx.train).unwrap(), &fte, &test_labels, &ctx, &fx.cfg.eval, "linear")
        .unwrap()
        .accuracy;
    let mut accs = Vec::new();
    for seed in 0..5 {
        let mut labels = labels_of(&fx.train).unwrap();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let r = linear_probe_features(&ftr, &labels, &fte, &test_labels, &ctx, &fx.cfg.eval, "linear").unwrap();
        accs.push(r.accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 100.0 / 3.0).abs() <= 5.0, "shuffled mean {mean} from {accs:?}");
    assert!(true_acc > mean + 20.0, "true {true_acc} vs shuffled {mean}");
}

#[test]
fn finetune_matches_or_beats_linear() {
    let fx = Fixture::new(40, 13);
    let linear = linear_probe(&fx.ctx(), &fx.train, &fx.test, &fx.cfg.eval).unwrap();
    let finetune = finetune_eval(&fx.ctx(), &fx.train, &fx.test, &fx.cfg.eval).unwrap();
    check_confusion(&finetune, &fx.test);
    assert!(
        finetune.accuracy >= linear.accuracy - 1.0,
        "finetune {} linear {}",
        finetune.accuracy,
        linear.accuracy
    );
}

#[test]
fn zero_epoch_finetune_predicts_class_zero() {
    let fx = Fixture::new(10, 14);
    let cfg = EvalConfig {
        finetune_epochs: 0,
        ..fx.cfg.eval.clone()
    };
    let report = finetune_eval(&fx.ctx(), &fx.train, &fx.test, &cfg).unwrap();
    for row in &report.confusion {
        assert_eq!(row[1..].iter().sum::<usize>(), 0);
    }
    check_confusion(&report, &fx.test);
}

#[test]
fn knn_k5_agrees_with_brute_force() {
    let fx = Fixture::new(30, 15);
    let ctx = fx.ctx();
    let report = knn_eval(&ctx, &fx.train, &fx.test, 5).unwrap();
    check_confusion(&report, &fx.test);
    let fg = extract_features(&fx.encoder, &fx.train, ctx.stream, ctx.layout).unwrap();
    let fq = extract_features(&fx.encoder, &fx.test, ctx.stream, ctx.layout).unwrap();
    let oracle = oracle_knn_accuracy(&fg, &labels_of(&fx.train).unwrap(), &fq, &labels_of(&fx.test).unwrap(), 5);
    assert!((report.accuracy - oracle).abs() <= 2.0, "knn {} oracle {oracle}", report.accuracy);
    match knn_eval(&ctx, &fx.train, &fx.test, fx.train.len() + 1) {
        Err(Error::Config { path, .. }) => assert_eq!(path, "eval.k"),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn semi_subsets_have_expected_sizes() {
    let fx = Fixture::new(20, 16);
    let cfg = EvalConfig {
        semi_fractions: vec![0.01, 0.1, 0.5, 1.0],
        ..fx.cfg.eval.clone()
    };
    let runs = semi_eval(&fx.ctx(), &fx.train, &fx.test, &cfg).unwrap();
    let labels = labels_of(&fx.train).unwrap();
    assert_eq!(runs.len(), 4);
    for (run, &f) in runs.iter().zip(&cfg.semi_fractions) {
        assert_eq!(run.fraction, f);
        assert_eq!(run.subset_size, expected_subset_size(&labels, f));
        assert_eq!(run.report.protocol, format!("semi_{f}"));
        check_confusion(&run.report, &fx.test);
    }
    assert_eq!(runs[0].subset_size, 3);
    assert_eq!(runs[3].subset_size, fx.train.len());
    assert!(runs.windows(2).all(|w| w[0].subset_size <= w[1].subset_size));
    let full = linear_probe(&fx.ctx(), &fx.train, &fx.test, &cfg).unwrap();
    assert_eq!(runs[3].report.confusion, full.confusion);
}

#[test]
fn transfer_requires_remap_for_other_layouts() {
    let fx = Fixture::new(10, 17);
    let cfg = EvalConfig {
        finetune_epochs: 1,
        ..fx.cfg.eval.clone()
    };
    let other = SkeletonLayout::chain(20);
    match transfer_eval(&fx.ctx(), &fx.train, &fx.test, &other, None, &cfg) {
        Err(Error::Config { path, .. }) => assert_eq!(path, "transfer.remap"),
        other => panic!("expected config error, got {other:?}"),
    }
    let short: Vec<usize> = (0..10).collect();
    assert!(matches!(
        transfer_eval(&fx.ctx(), &fx.train, &fx.test, &other, Some(&short), &cfg),
        Err(Error::Config { .. })
    ));
    let joints = fx.corpus.layout.joints;
    let out_of_range: Vec<usize> = (0..joints).map(|j| j + 1).collect();
    assert!(matches!(remap_joints(&fx.train, &out_of_range), Err(Error::Config { .. })));

    let identity: Vec<usize> = (0..joints).collect();
    let remapped = transfer_eval(&fx.ctx(), &fx.train, &fx.test, &fx.corpus.layout, Some(&identity), &cfg).unwrap();
    let plain = finetune_eval(&fx.ctx(), &fx.train, &fx.test, &cfg).unwrap();
    assert_eq!(remapped.protocol, "transfer");
    assert_eq!(remapped.confusion, plain.confusion);
}
