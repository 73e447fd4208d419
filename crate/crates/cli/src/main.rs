//! `c2vl` command-line entry point.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use c2vl_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "c2vl", version, about = "Cross-modal soft-target skeleton pretraining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Converts raw skeleton files into the container format.
    Ingest(IngestArgs),
    /// Builds the vision and language prompt of every sample into a cache.
    GeneratePrompts(PromptArgs),
    /// Pretrains a skeleton encoder against cached prompts.
    Pretrain(PretrainArgs),
    /// Runs a downstream protocol on a pretrained encoder.
    Evaluate(EvaluateArgs),
    /// Runs the synthetic end-to-end pipeline.
    SynthSmoke(SmokeArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    raw: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = ["ntu60", "ntu120", "pkummd2"])]
    dataset: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EngineArg {
    Stub,
    Remote,
}

#[derive(Debug, Args)]
struct PromptArgs {
    /// Container directory.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    #[arg(long, value_enum, default_value = "stub")]
    engine: EngineArg,
    #[arg(long, default_value_t = 1)]
    frames: usize,
    /// Per-sample RGB frame directories `<dir>/<sample_id>/*.png`; skeleton renders otherwise.
    #[arg(long)]
    frames_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0.35)]
    threshold: f64,
    #[arg(long)]
    fallback_fullframe: bool,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Seed of the stub engine.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    deterministic: bool,
    /// Checkpoint to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Protocol {
    Linear,
    Finetune,
    Knn,
    Semi,
    Transfer,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long, value_enum)]
    protocol: Protocol,
    /// Full checkpoint or encoder export.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Defaults to `config.toml` next to the checkpoint when present.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults to `eval/` next to the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    full_finetune: bool,
    /// Writes skeleton-to-prompt cosine histograms; needs a full checkpoint and `--prompts`.
    #[arg(long)]
    emit_histograms: bool,
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Writes test-set encoder features as CSV.
    #[arg(long)]
    dump_embeddings: bool,
    /// JSON array: source joint `j` takes target joint `remap[j]`.
    #[arg(long)]
    remap: Option<PathBuf>,
    /// Layout JSON of the pretraining data; NTU 25-joint otherwise.
    #[arg(long)]
    source_layout: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SmokeArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 60)]
    per_class: usize,
}

/// Splits `--section.key value` and `--section.key=value` overrides from the
/// arguments clap understands.
fn split_overrides(argv: &[String]) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = argv.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg.clone());
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        if !name.contains('.') {
            rest.push(arg.clone());
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().cloned().ok_or_else(|| format!("override --{name} needs a value"))?,
        };
        overrides.push((name.to_string(), value));
    }
    Ok((rest, overrides))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        _ => 1,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Config { .. } => "config",
        Error::Parse { .. } => "parse",
        Error::EmptySequence(_) => "empty_sequence",
        Error::Shape(_) => "shape",
        Error::Batch { .. } => "batch",
        Error::EmptyBatch => "empty_batch",
        Error::Partition { .. } => "partition",
        Error::Validation(_) => "validation",
        Error::Data(_) => "data",
        Error::NoPersonFound { .. } => "no_person_found",
        Error::EmptyCaption(_) => "empty_caption",
        Error::Transport(_) => "transport",
        Error::NotFound(_) => "not_found",
        Error::MissingPrompts(_) => "missing_prompts",
        Error::NonFiniteLoss { .. } => "non_finite_loss",
        Error::Image(_) => "image",
        Error::Json(_) => "json",
        Error::Io(_) => "io",
    }
}

/// Parses and dispatches `argv` (program name first); returns the exit status.
fn run_command(argv: Vec<String>) -> u8 {
    let (args, overrides) = match split_overrides(&argv) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    let result = match cli.command {
        Command::Ingest(a) if overrides.is_empty() => commands::ingest(&a.raw, &a.out, &a.dataset),
        Command::GeneratePrompts(a) if overrides.is_empty() => commands::generate_prompts(&a),
        Command::Pretrain(a) => commands::pretrain(&a, &overrides),
        Command::Evaluate(a) => commands::evaluate(&a, &overrides),
        Command::SynthSmoke(a) => commands::synth_smoke(&a, &overrides),
        _ => {
            eprintln!("error: config overrides are not accepted by this command");
            return 2;
        }
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            let mut msg = serde_json::json!({ "status": "error", "kind": kind(&e), "message": e.to_string() });
            if let Error::Config { path, .. } = &e {
                msg["path"] = path.clone().into();
            }
            eprintln!("{msg}");
            exit_code(&e)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    ExitCode::from(run_command(std::env::args().collect()))
}
