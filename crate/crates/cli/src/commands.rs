use std::path::{Path, PathBuf};

use c2vl_core::config::{resolve_config, write_resolved, RunConfig};
use c2vl_core::data::{ingest as ingest_raw, load_dataset, open_dataset, SkeletonLayout, SkeletonSequence};
use c2vl_core::encoder::{load_frozen, Modality};
use c2vl_core::eval::{
    dump_embeddings, extract_features, finetune_eval, knn_eval, labels_of, linear_probe, semi_eval,
    similarity_histogram_csv, transfer_eval, EvalContext,
};
use c2vl_core::pretrain::{load_encoder, precompute_prompt_embeddings, pretrain_run, records_for, Checkpoint, PretrainData};
use c2vl_core::prompt::{
    generate_prompts as run_pipeline, EngineClient, FrameDir, FramePolicy, PipelineOptions, PromptCache, RemoteConfig,
    RemoteEngine, RetryPolicy, SkeletonRenderer, StubEngine, VideoSource,
};
use c2vl_core::smoke::{run_synth_smoke, smoke_config, SmokeOptions};
use c2vl_core::{Error, Result};
use serde_json::{json, Value};

use crate::{EngineArg, EvaluateArgs, PretrainArgs, PromptArgs, Protocol, SmokeArgs};

const HISTOGRAM_BINS: usize = 20;

pub fn ingest(raw: &Path, out: &Path, dataset: &str) -> Result<Value> {
    let n = ingest_raw(raw, out, dataset.parse()?)?;
    Ok(json!({ "command": "ingest", "samples": n, "out": out }))
}

fn open_cache(path: &Path) -> Result<PromptCache> {
    let (cache, corrupt) = PromptCache::open(path)?;
    for c in &corrupt {
        log::warn!("{}: skipped corrupt line {}: {}", path.display(), c.line, c.message);
    }
    Ok(cache)
}

pub fn generate_prompts(a: &PromptArgs) -> Result<Value> {
    let dataset = open_dataset(&a.dataset)?;
    let ids: Vec<String> = dataset.sequences.iter().map(|s| s.sample_id.clone()).collect();
    let client: Box<dyn EngineClient> = match a.engine {
        EngineArg::Stub => Box::new(StubEngine::new(a.seed)),
        EngineArg::Remote => Box::new(RemoteEngine::new(RemoteConfig::from_env()?)),
    };
    if a.frames_dir.is_none() {
        log::info!("no --frames-dir given; rendering skeletons as frames");
    }
    let sources = |id: &str| -> Result<Box<dyn VideoSource + '_>> {
        match &a.frames_dir {
            Some(dir) => Ok(Box::new(FrameDir::open(&dir.join(id))?)),
            None => {
                let seq = dataset
                    .sequences
                    .iter()
                    .find(|s| s.sample_id == id)
                    .ok_or_else(|| Error::NotFound(format!("sample `{id}`")))?;
                Ok(Box::new(SkeletonRenderer::new(seq, &dataset.layout, 0.0)))
            }
        }
    };
    let cache = open_cache(&a.cache)?;
    let opts = PipelineOptions {
        policy: FramePolicy {
            frames: a.frames,
            score_threshold: a.threshold,
            fallback_fullframe: a.fallback_fullframe,
        },
        retry: RetryPolicy::default(),
        concurrency: a.concurrency,
        timestamp: None,
    };
    let stats = run_pipeline(&ids, sources, client.as_ref(), &cache, &opts)?;
    if !stats.failed.is_empty() {
        let report = a.cache.with_extension("failures.json");
        std::fs::write(&report, serde_json::to_vec_pretty(&stats.failed)?)?;
        return Err(Error::Data(format!(
            "{} of {} samples failed; see {}",
            stats.failed.len(),
            ids.len(),
            report.display()
        )));
    }
    Ok(json!({ "command": "generate-prompts", "generated": stats.generated, "cached": stats.cached }))
}

fn resolve(file: Option<&Path>, overrides: &[(String, String)], extra: &[(&str, String)]) -> Result<RunConfig> {
    let mut all = overrides.to_vec();
    all.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    resolve_config(file, &all)
}

pub fn pretrain(a: &PretrainArgs, overrides: &[(String, String)]) -> Result<Value> {
    let extra: Vec<(&str, String)> = if a.deterministic {
        vec![("run.deterministic", "true".into())]
    } else {
        Vec::new()
    };
    let cfg = resolve(a.config.as_deref(), overrides, &extra)?;
    let (dataset, split) = load_dataset(&a.data, cfg.data.benchmark)?;
    let train = dataset.select(&split.train_ids)?;
    let records = records_for(&open_cache(&a.prompts)?, &split.train_ids)?;
    let frozen = load_frozen(cfg.model.frozen_encoder, cfg.model.embed_dim, cfg.run.seed)?;
    let store = precompute_prompt_embeddings(&records, frozen.as_ref(), cfg.model.embed_dim)?;
    write_resolved(&cfg, &a.out)?;
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let outcome = pretrain_run(
        PretrainData {
            sequences: &train,
            layout: &dataset.layout,
            store: &store,
        },
        &cfg,
        Some(&a.out),
        resume,
    )?;
    let last = outcome.metrics.last();
    Ok(json!({
        "command": "pretrain",
        "samples": train.len(),
        "epochs": outcome.checkpoint.epochs_completed,
        "final_loss": last.map(|m| m.loss_total),
        "config_digest": cfg.digest(),
        "out": a.out,
    }))
}

fn class_count(seqs: &[SkeletonSequence]) -> Result<usize> {
    Ok(labels_of(seqs)?.into_iter().max().map_or(0, |m| m + 1))
}

fn read_remap(path: &Path) -> Result<Vec<usize>> {
    serde_json::from_slice(&std::fs::read(path)?).map_err(|e| Error::config("transfer.remap", e.to_string()))
}

fn histograms(a: &EvaluateArgs, test: &[SkeletonSequence], layout: &SkeletonLayout, cfg: &RunConfig, out: &Path) -> Result<()> {
    let prompts = a
        .prompts
        .as_deref()
        .ok_or_else(|| Error::config("prompts", "--emit-histograms needs --prompts"))?;
    let ck = Checkpoint::load(&a.ckpt)
        .map_err(|e| Error::config("ckpt", format!("--emit-histograms needs a full checkpoint: {e}")))?;
    let ids: Vec<String> = test.iter().map(|s| s.sample_id.clone()).collect();
    let records = records_for(&open_cache(prompts)?, &ids)?;
    let frozen = load_frozen(cfg.model.frozen_encoder, cfg.model.embed_dim, ck.seed)?;
    let store = precompute_prompt_embeddings(&records, frozen.as_ref(), cfg.model.embed_dim)?;
    let features = extract_features(&ck.model.encoder, test, ck.model.stream, layout)?;
    let normed = ck.model.feature_norm.apply(features.view());
    let sv = ck.model.proj_vision.embed(normed.view(), Modality::Skeleton)?;
    let sl = ck.model.proj_language.embed(normed.view(), Modality::Skeleton)?;
    std::fs::write(
        out.join("histogram_vision.csv"),
        similarity_histogram_csv(sv.view(), store.vision.view(), HISTOGRAM_BINS)?,
    )?;
    std::fs::write(
        out.join("histogram_language.csv"),
        similarity_histogram_csv(sl.view(), store.language.view(), HISTOGRAM_BINS)?,
    )?;
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs, overrides: &[(String, String)]) -> Result<Value> {
    let ckpt_dir = a.ckpt.parent().map(Path::to_path_buf).unwrap_or_default();
    let stored = ckpt_dir.join("config.toml");
    let config = a.config.clone().or_else(|| stored.exists().then_some(stored));
    let mut extra: Vec<(&str, String)> = Vec::new();
    if let Some(k) = a.k {
        extra.push(("eval.k", k.to_string()));
    }
    if a.full_finetune {
        extra.push(("eval.full_finetune", "true".into()));
    }
    let mut cfg = resolve(config.as_deref(), overrides, &extra)?;
    let out: PathBuf = a.out.clone().unwrap_or_else(|| ckpt_dir.join("eval"));
    let export = load_encoder(&a.ckpt)?;
    if export.stream != cfg.data.stream {
        log::warn!("checkpoint stream {} overrides configured {}", export.stream, cfg.data.stream);
        cfg.data.stream = export.stream;
    }
    write_resolved(&cfg, &out)?;
    let (dataset, split) = load_dataset(&a.data, cfg.data.benchmark)?;
    let train = dataset.select(&split.train_ids)?;
    let test = dataset.select(&split.test_ids)?;
    let source_layout = match &a.source_layout {
        Some(p) => SkeletonLayout::from_json_file(p)?,
        None if a.protocol == Protocol::Transfer => SkeletonLayout::ntu25(),
        None => dataset.layout.clone(),
    };
    let ctx = EvalContext {
        encoder: &export.encoder,
        stream: export.stream,
        layout: &source_layout,
        classes: class_count(&dataset.sequences)?,
        benchmark: format!("{}-{}", dataset.name, cfg.data.benchmark),
        config_digest: cfg.digest(),
    };
    let mut accuracies = serde_json::Map::new();
    let mut save = |stem: &str, report: c2vl_core::eval::EvalReport| -> Result<()> {
        report.save(&out, stem)?;
        accuracies.insert(stem.to_string(), report.accuracy.into());
        Ok(())
    };
    match a.protocol {
        Protocol::Linear => save("linear", linear_probe(&ctx, &train, &test, &cfg.eval)?)?,
        Protocol::Finetune => save("finetune", finetune_eval(&ctx, &train, &test, &cfg.eval)?)?,
        Protocol::Knn => save("knn", knn_eval(&ctx, &train, &test, cfg.eval.k)?)?,
        Protocol::Semi => {
            for run in semi_eval(&ctx, &train, &test, &cfg.eval)? {
                save(&format!("semi_{}", run.fraction), run.report)?;
            }
        }
        Protocol::Transfer => {
            let remap = a.remap.as_deref().map(read_remap).transpose()?;
            let report = transfer_eval(&ctx, &train, &test, &dataset.layout, remap.as_deref(), &cfg.eval)?;
            save("transfer", report)?;
        }
    }
    if a.dump_embeddings {
        let f = extract_features(&export.encoder, &test, export.stream, &dataset.layout)?;
        dump_embeddings(&out.join("embeddings_test.csv"), &test, &f)?;
    }
    if a.emit_histograms {
        histograms(a, &test, &dataset.layout, &cfg, &out)?;
    }
    Ok(json!({ "command": "evaluate", "accuracy": accuracies, "out": out }))
}

pub fn synth_smoke(a: &SmokeArgs, overrides: &[(String, String)]) -> Result<Value> {
    let cfg = smoke_config(a.seed, overrides)?;
    let opts = SmokeOptions {
        classes: a.classes,
        per_class: a.per_class,
        ..SmokeOptions::default()
    };
    let outcome = run_synth_smoke(&cfg, &opts, a.out.as_deref())?;
    Ok(json!({
        "command": "synth-smoke",
        "seed": a.seed,
        "train": outcome.train_size,
        "test": outcome.test_size,
        "linear": outcome.linear.accuracy,
        "knn": outcome.knn.accuracy,
        "final_loss": outcome.pretrain.metrics.last().map(|m| m.loss_total),
        "seconds": outcome.elapsed.as_secs_f64(),
        "config_digest": cfg.digest(),
    }))
}
