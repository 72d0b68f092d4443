//! Command-line entry point: corpus construction, data preparation,
//! pretraining, fine-tuning, prediction, scoring and k-shot episodes.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 on a data fault.
//! Diagnostics go to standard error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug, Serialize)]
#[command(name = "conceptner", version, about = "Concept-described few-shot entity recognition", args_override_self = true)]
struct Cli {
    /// Root seed; components draw from named sub-streams of it.
    #[arg(long, global = true, env = "SDNET_SEED", default_value_t = 0)]
    seed: u64,

    /// Worker cap for every parallel stage.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// JSON object of flag defaults; explicit flags win.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Manifest path (default `<out>.manifest.json`).
    #[arg(long, global = true, value_name = "PATH")]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
enum Command {
    /// Build the annotated corpus from a knowledge-base dump and a page dump
    BuildCorpus(BuildCorpusArgs),
    /// Build type descriptions by co-occurrence or by mention describing
    BuildDescriptions(BuildDescriptionsArgs),
    /// Write mention-describing and entity-generation pretraining instances
    MakePretrainData(MakePretrainArgs),
    /// Write entity-generation fine-tuning instances over a schema
    MakeFinetuneData(MakeFinetuneArgs),
    /// Select a k-shot support set
    SampleKshot(SampleKshotArgs),
    /// Pretrain a model on both tasks
    Pretrain(TrainArgs),
    /// Fine-tune a model on entity generation
    Finetune(TrainArgs),
    /// Generate, parse and locate entities
    Predict(PredictArgs),
    /// Score predictions against gold annotations
    Evaluate(EvaluateArgs),
    /// Run repeated k-shot fine-tune and test episodes
    RunEpisodes(EpisodeArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::BuildCorpus(_) => "build-corpus",
            Command::BuildDescriptions(_) => "build-descriptions",
            Command::MakePretrainData(_) => "make-pretrain-data",
            Command::MakeFinetuneData(_) => "make-finetune-data",
            Command::SampleKshot(_) => "sample-kshot",
            Command::Pretrain(_) => "pretrain",
            Command::Finetune(_) => "finetune",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::RunEpisodes(_) => "run-episodes",
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct BuildCorpusArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    pages: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the type dictionary as JSON.
    #[arg(long)]
    dictionary_out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    min_type_instances: usize,
    #[arg(long, default_value_t = 3)]
    max_type_tokens: usize,
    #[arg(long, default_value_t = 3)]
    top_np: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum DescriptionMode {
    Cooccurrence,
    MentionDescribing,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Counting {
    PerDescription,
    PerConcept,
}

#[derive(Args, Debug, Serialize)]
struct BuildDescriptionsArgs {
    /// Annotated corpus; the illustrative instances in mention-describing mode.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = DescriptionMode::Cooccurrence)]
    mode: DescriptionMode,
    /// Checkpoint used in mention-describing mode.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Types to describe, one per line (default: every corpus type).
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    other_threshold: f64,
    #[arg(long, value_enum, default_value_t = Counting::PerDescription)]
    other_counting: Counting,
    /// Write the per-type filtering decisions as JSON.
    #[arg(long)]
    filter_report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct MakePretrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Co-occurrence descriptions (JSONL).
    #[arg(long)]
    descriptions: PathBuf,
    /// Type dictionary JSON from build-corpus (default: counted from the corpus).
    #[arg(long)]
    dictionary: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    min_type_instances: usize,
    #[arg(long, default_value_t = 1.0)]
    md_fraction: f64,
    #[arg(long, default_value_t = 5)]
    max_positive_types: usize,
    #[arg(long, default_value_t = 3)]
    max_negative_types: usize,
    #[arg(long, default_value_t = 10)]
    max_concepts: usize,
}

#[derive(Args, Debug, Serialize)]
struct MakeFinetuneArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Type descriptions (default: bare type names).
    #[arg(long)]
    descriptions: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SampleKshotArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Precision {
    F32,
    F64,
}

#[derive(Args, Debug, Serialize, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 256)]
    d_ff: usize,
    #[arg(long, default_value_t = 256)]
    max_src_len: usize,
    #[arg(long, default_value_t = 256)]
    max_tgt_len: usize,
    #[arg(long, default_value_t = 0.02)]
    init_std: f64,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    /// Training instances (JSONL).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Starting checkpoint; a fresh model over the data's vocabulary if absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    arch: ModelArgs,
    /// Optimizer steps (pretraining default 2000).
    #[arg(long)]
    steps: Option<usize>,
    /// Passes over the data (fine-tuning default 50).
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Warmup share of a linear schedule; fine-tuning default 0.06.
    #[arg(long)]
    warmup: Option<f64>,
    /// Gradient shards per batch; results depend on this, never on --jobs.
    #[arg(long, default_value_t = 1)]
    shards: usize,
    /// Per-step loss log (JSONL).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Sentences (JSONL with `id` and `text`).
    #[arg(long)]
    input: PathBuf,
    /// File holding the entity-generation prompt.
    #[arg(long, conflicts_with = "schema")]
    prompt_file: Option<PathBuf>,
    /// Schema for a prompt listing every type.
    #[arg(long, required_unless_present = "prompt_file")]
    schema: Option<PathBuf>,
    #[arg(long, requires = "schema")]
    descriptions: Option<PathBuf>,
    /// Predictions (JSONL); standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    /// Annotated gold corpus.
    #[arg(long)]
    gold: PathBuf,
    /// Predictions (JSONL with `id` and `spans`).
    #[arg(long)]
    pred: PathBuf,
    /// Types scored (default: every gold type).
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Report JSON; standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EpisodeArgs {
    /// Pool the support sets are drawn from.
    #[arg(long)]
    corpus: PathBuf,
    /// Test split (default: the pool itself).
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long)]
    out: PathBuf,
    /// Base checkpoint.
    #[arg(long, required_unless_present_any = ["constant_output", "gold_echo"])]
    model: Option<PathBuf>,
    /// Stand-in model that always generates this text.
    #[arg(long, conflicts_with_all = ["model", "gold_echo"])]
    constant_output: Option<String>,
    /// Stand-in model that generates the serialized gold target.
    #[arg(long, conflicts_with = "model")]
    gold_echo: bool,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.06)]
    warmup: f64,
    #[arg(long, default_value_t = 0.5)]
    other_threshold: f64,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Fault {
    Usage(String),
    Data(String),
}

impl Fault {
    pub fn data(e: impl std::fmt::Display) -> Self {
        Fault::Data(e.to_string())
    }
}

const SUBCOMMANDS: [&str; 10] = [
    "build-corpus",
    "build-descriptions",
    "make-pretrain-data",
    "make-finetune-data",
    "sample-kshot",
    "pretrain",
    "finetune",
    "predict",
    "evaluate",
    "run-episodes",
];

/// Splices `--config` defaults in right after the subcommand so that flags
/// given on the command line override them.
fn with_config_defaults(argv: Vec<String>) -> Result<Vec<String>, Fault> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            path = argv.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = std::fs::read_to_string(&path).map_err(|e| Fault::Usage(format!("config {path}: {e}")))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Fault::Usage(format!("config {path}: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Fault::Usage(format!("config {path}: expected a JSON object")))?;
    let mut extra = Vec::new();
    for (key, v) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            serde_json::Value::Bool(true) => extra.push(flag),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::String(s) => extra.extend([flag, s.clone()]),
            serde_json::Value::Number(n) => extra.extend([flag, n.to_string()]),
            _ => return Err(Fault::Usage(format!("config {path}: unsupported value for {key:?}"))),
        }
    }
    let Some(at) = argv.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(argv);
    };
    let mut out = argv[..=at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at + 1..]);
    Ok(out)
}

fn main() -> ExitCode {
    let argv = match with_config_defaults(std::env::args().collect()) {
        Ok(a) => a,
        Err(Fault::Usage(m) | Fault::Data(m)) => {
            eprintln!("error: {m}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(1);
    }
    // a second initialization only happens in tests; ignore it
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fault::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Fault::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
