use std::collections::HashSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use conceptner::corpus::{build_corpus_from_files, BuildConfig};
use conceptner::data::{validate_annotated_sentence, AnnotatedSentence, Sentence, TypeDictionary, TypeId, Validation};
use conceptner::describe::{build_cooccurrence_descriptions, build_md_descriptions, DescribeError, DescriptionConfig, DescriptionMap, OtherCounting};
use conceptner::episodes::{bare_descriptions, predict, run_episodes, EpisodeConfig, Frozen, GoldEcho, Learner, ModelLearner};
use conceptner::eval::{gold_spans, score};
use conceptner::generator::{ConstantGenerator, Generator};
use conceptner::jsonl;
use conceptner::locate::SentenceSpans;
use conceptner::model::{checkpoint_precision, ModelConfig, Seq2Seq, TrainConfig, Vocab};
use conceptner::sampler::{finetune_prompt, make_finetune_instance, make_pretrain_instances, sample_kshot, SamplerConfig, TrainingInstance};
use conceptner::{rng, Scalar};

use crate::manifest::{self, RunManifest};
use crate::{
    BuildCorpusArgs, BuildDescriptionsArgs, Cli, Command, Counting, DescriptionMode, EpisodeArgs, EvaluateArgs, Fault,
    MakeFinetuneArgs, MakePretrainArgs, ModelArgs, Precision, PredictArgs, SampleKshotArgs, TrainArgs,
};

pub fn run(cli: &Cli) -> Result<(), Fault> {
    match &cli.command {
        Command::BuildCorpus(a) => build_corpus(cli, a),
        Command::BuildDescriptions(a) => build_descriptions(cli, a),
        Command::MakePretrainData(a) => make_pretrain_data(cli, a),
        Command::MakeFinetuneData(a) => make_finetune_data(cli, a),
        Command::SampleKshot(a) => sample_kshot_cmd(cli, a),
        Command::Pretrain(a) | Command::Finetune(a) => train_cmd(cli, a),
        Command::Predict(a) => predict_cmd(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::RunEpisodes(a) => episodes(cli, a),
    }
}

fn at(path: &Path) -> impl Fn(&dyn std::fmt::Display) -> Fault + '_ {
    move |e| Fault::Data(format!("{}: {e}", path.display()))
}

/// Writes the run manifest; called before any output exists.
fn write_manifest(cli: &Cli, inputs: &[&Path], outputs: &[&Path]) -> Result<(), Fault> {
    let path = match (&cli.manifest, outputs.first()) {
        (Some(p), _) => p.clone(),
        (None, Some(out)) => manifest::default_path(out),
        (None, None) => return Ok(()),
    };
    let config = serde_json::to_value(cli).expect("arguments serialize");
    let m = RunManifest::new(cli.command.name(), cli.seed, config, inputs, outputs).map_err(Fault::data)?;
    m.write(&path).map_err(|e| at(&path)(&e))
}

fn read_corpus(path: &Path) -> Result<Vec<AnnotatedSentence>, Fault> {
    let corpus: Vec<AnnotatedSentence> = jsonl::read(path).map_err(Fault::data)?;
    let mut ids = HashSet::new();
    for s in &corpus {
        if let Validation::Violation(v) = validate_annotated_sentence(s) {
            return Err(Fault::Data(format!("{}: sentence {:?}: {}", path.display(), s.id(), v.detail)));
        }
        if !ids.insert(s.id()) {
            return Err(Fault::Data(format!("{}: sentence id {:?} repeats", path.display(), s.id())));
        }
    }
    Ok(corpus)
}

/// One type per line; blank lines and `#` comments are skipped.
fn read_schema(path: &Path) -> Result<Vec<TypeId>, Fault> {
    let text = std::fs::read_to_string(path).map_err(|e| at(path)(&e))?;
    let mut schema: Vec<TypeId> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let t = TypeId::new(line).map_err(|e| at(path)(&e))?;
        if schema.contains(&t) {
            return Err(Fault::Data(format!("{}: type {line:?} listed twice", path.display())));
        }
        schema.push(t);
    }
    if schema.is_empty() {
        return Err(Fault::Data(format!("{}: schema is empty", path.display())));
    }
    Ok(schema)
}

fn corpus_types(corpus: &[AnnotatedSentence]) -> Vec<TypeId> {
    let mut seen = Vec::new();
    for t in corpus.iter().flat_map(|s| s.type_union()) {
        if !t.is_other() && !seen.contains(&t) {
            seen.push(t);
        }
    }
    seen
}

fn read_descriptions(path: &Path) -> Result<DescriptionMap, Fault> {
    DescriptionMap::read(path).map_err(|e| match e {
        DescribeError::Jsonl(_) => Fault::data(e),
        _ => at(path)(&e),
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Fault> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    std::fs::write(path, text).map_err(|e| at(path)(&e))
}

fn write_jsonl<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<(), Fault> {
    jsonl::write(path, records).map_err(Fault::data)
}

fn build_corpus(cli: &Cli, a: &BuildCorpusArgs) -> Result<(), Fault> {
    let cfg = BuildConfig {
        min_type_instances: a.min_type_instances,
        max_type_tokens: a.max_type_tokens,
        top_np_count: a.top_np,
        ..BuildConfig::default()
    };
    cfg.validate().map_err(|e| Fault::Usage(e.to_string()))?;
    let mut outputs = vec![a.out.as_path()];
    outputs.extend(a.dictionary_out.as_deref());
    write_manifest(cli, &[&a.kb, &a.pages], &outputs)?;
    let build = build_corpus_from_files(&a.kb, &a.pages, &cfg, cli.jobs).map_err(Fault::data)?;
    let d = &build.dictionary_diagnostics;
    eprintln!(
        "{} sentences, {} types; {} malformed items, {} malformed pages; diagnostics {}",
        build.sentences.len(),
        build.dictionary.len(),
        d.malformed,
        build.malformed_pages,
        serde_json::to_string(&build.harvest_diagnostics).expect("diagnostics serialize"),
    );
    write_jsonl(&a.out, &build.sentences)?;
    if let Some(p) = &a.dictionary_out {
        write_json(p, &build.dictionary)?;
    }
    Ok(())
}

fn description_config(cli: &Cli, threshold: f64, counting: Counting) -> Result<DescriptionConfig, Fault> {
    let cfg = DescriptionConfig {
        other_threshold: threshold,
        rng_seed: rng::sub_seed(cli.seed, "descriptions"),
        other_counting: match counting {
            Counting::PerDescription => OtherCounting::PerDescription,
            Counting::PerConcept => OtherCounting::PerConcept,
        },
        ..DescriptionConfig::default()
    };
    cfg.validate().map_err(|e| Fault::Usage(e.to_string()))?;
    Ok(cfg)
}

fn build_descriptions(cli: &Cli, a: &BuildDescriptionsArgs) -> Result<(), Fault> {
    let cfg = description_config(cli, a.other_threshold, a.other_counting)?;
    let model_path = match (a.mode, &a.model) {
        (DescriptionMode::MentionDescribing, None) => {
            return Err(Fault::Usage("--mode mention-describing needs --model".into()));
        }
        (DescriptionMode::MentionDescribing, Some(p)) => Some(p.as_path()),
        (DescriptionMode::Cooccurrence, _) => None,
    };
    if a.filter_report.is_some() && model_path.is_none() {
        return Err(Fault::Usage("--filter-report applies to --mode mention-describing".into()));
    }
    let mut inputs = vec![a.corpus.as_path()];
    inputs.extend(a.schema.as_deref());
    inputs.extend(model_path);
    let mut outputs = vec![a.out.as_path()];
    outputs.extend(a.filter_report.as_deref());
    write_manifest(cli, &inputs, &outputs)?;

    let corpus = read_corpus(&a.corpus)?;
    let schema = match &a.schema {
        Some(p) => read_schema(p)?,
        None => corpus_types(&corpus),
    };
    match model_path {
        None => {
            let all = build_cooccurrence_descriptions(&corpus);
            let mut map = DescriptionMap::default();
            for t in &schema {
                map.insert(t.clone(), all.concepts(t).iter().cloned(), false);
            }
            map.write(&a.out).map_err(|e| at(&a.out)(&e))
        }
        Some(p) => {
            let (map, report) = with_model(p, |m| build_md_descriptions(m, &corpus, &schema, &cfg))?
                .map_err(Fault::data)?;
            for e in &report.entries {
                eprintln!("{}: other {:.3} over {} descriptions{}", e.type_id, e.other_frequency, e.descriptions, if e.filtered { ", filtered" } else { "" });
            }
            map.write(&a.out).map_err(|e| at(&a.out)(&e))?;
            match &a.filter_report {
                Some(fr) => write_json(fr, &report),
                None => Ok(()),
            }
        }
    }
}

/// Loads a checkpoint at its stored precision and hands it to `f`.
fn with_model<R>(path: &Path, f: impl FnOnce(&dyn Generator) -> R) -> Result<R, Fault> {
    match precision_of(path)? {
        Precision::F32 => Ok(f(&load::<f32>(path)?)),
        Precision::F64 => Ok(f(&load::<f64>(path)?)),
    }
}

fn precision_of(path: &Path) -> Result<Precision, Fault> {
    match checkpoint_precision(path).map_err(|e| at(path)(&e))?.as_str() {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(Fault::Data(format!("{}: unknown precision {other:?}", path.display()))),
    }
}

fn load<S: Scalar>(path: &Path) -> Result<Seq2Seq<S>, Fault> {
    Seq2Seq::load(path).map_err(|e| at(path)(&e))
}

fn sampler_config(cli: &Cli, a: &MakePretrainArgs) -> SamplerConfig {
    SamplerConfig {
        rng_seed: rng::sub_seed(cli.seed, "sampler"),
        md_target_fraction: a.md_fraction,
        max_negative_types: a.max_negative_types,
        max_positive_types: a.max_positive_types,
        max_concepts: a.max_concepts,
    }
}

fn make_pretrain_data(cli: &Cli, a: &MakePretrainArgs) -> Result<(), Fault> {
    let cfg = sampler_config(cli, a);
    cfg.validate().map_err(|e| Fault::Usage(e.to_string()))?;
    let mut inputs = vec![a.corpus.as_path(), a.descriptions.as_path()];
    inputs.extend(a.dictionary.as_deref());
    write_manifest(cli, &inputs, &[&a.out])?;
    let corpus = read_corpus(&a.corpus)?;
    let desc = read_descriptions(&a.descriptions)?;
    let dict: TypeDictionary = match &a.dictionary {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| at(p)(&e))?;
            serde_json::from_str(&text).map_err(|e| at(p)(&e))?
        }
        None => TypeDictionary::from_corpus(&corpus, a.min_type_instances),
    };
    let pairs = make_pretrain_instances(&corpus, &dict, &desc, &cfg).map_err(Fault::data)?;
    let instances: Vec<TrainingInstance> = pairs.into_iter().flat_map(|(md, eg)| std::iter::once(md).chain(eg)).collect();
    eprintln!("{} instances from {} sentences", instances.len(), corpus.len());
    write_jsonl(&a.out, &instances)
}

fn make_finetune_data(cli: &Cli, a: &MakeFinetuneArgs) -> Result<(), Fault> {
    let mut inputs = vec![a.corpus.as_path(), a.schema.as_path()];
    inputs.extend(a.descriptions.as_deref());
    write_manifest(cli, &inputs, &[&a.out])?;
    let corpus = read_corpus(&a.corpus)?;
    let schema = read_schema(&a.schema)?;
    let desc = match &a.descriptions {
        Some(p) => read_descriptions(p)?,
        None => bare_descriptions(&schema),
    };
    let instances = corpus
        .iter()
        .map(|s| make_finetune_instance(s, &schema, &desc))
        .collect::<Result<Vec<_>, _>>()
        .map_err(Fault::data)?;
    write_jsonl(&a.out, &instances)
}

fn sample_kshot_cmd(cli: &Cli, a: &SampleKshotArgs) -> Result<(), Fault> {
    if a.k == 0 {
        return Err(Fault::Usage("--k must be at least 1".into()));
    }
    write_manifest(cli, &[&a.corpus, &a.schema], &[&a.out])?;
    let corpus = read_corpus(&a.corpus)?;
    let schema = read_schema(&a.schema)?;
    // the same seed selects the same support set as run-episodes' first episode
    let support = sample_kshot(&corpus, a.k, &schema, cli.seed).map_err(Fault::data)?;
    for (t, n) in &support.counts {
        eprintln!("{t}: {n}");
    }
    for t in &support.unsatisfiable {
        eprintln!("warning: type {t} does not occur in the corpus");
    }
    write_jsonl(&a.out, &support.sentences)
}

fn model_config(a: &ModelArgs) -> ModelConfig {
    ModelConfig {
        d_model: a.d_model,
        layers: a.layers,
        heads: a.heads,
        d_ff: a.d_ff,
        max_src_len: a.max_src_len,
        max_tgt_len: a.max_tgt_len,
        init_std: a.init_std,
    }
}

fn train_config(cli: &Cli, a: &TrainArgs) -> Result<TrainConfig, Fault> {
    let seed = rng::sub_seed(cli.seed, "train");
    let mut cfg = match cli.command {
        Command::Pretrain(_) => {
            let mut c = TrainConfig::pretrain(a.steps.unwrap_or(2000), seed);
            if a.steps.is_none() && a.epochs.is_some() {
                c.steps = None;
            }
            c.epochs = a.epochs;
            c
        }
        _ => {
            let mut c = TrainConfig::finetune(a.epochs.unwrap_or(50), seed);
            c.steps = a.steps;
            c
        }
    };
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if a.warmup.is_some() {
        cfg.warmup_fraction = a.warmup;
    }
    cfg.shards = a.shards;
    cfg.threads = cli.jobs;
    cfg.validate().map_err(|e| Fault::Usage(e.to_string()))?;
    Ok(cfg)
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<(), Fault> {
    let cfg = train_config(cli, a)?;
    let mut inputs = vec![a.data.as_path()];
    inputs.extend(a.model.as_deref());
    let mut outputs = vec![a.out.as_path()];
    outputs.extend(a.log.as_deref());
    write_manifest(cli, &inputs, &outputs)?;
    let instances: Vec<TrainingInstance> = jsonl::read(&a.data).map_err(Fault::data)?;
    if instances.is_empty() {
        return Err(Fault::Data(format!("{}: no training instances", a.data.display())));
    }
    let precision = match &a.model {
        Some(p) => precision_of(p)?,
        None => a.arch.precision,
    };
    match precision {
        Precision::F32 => train_at::<f32>(cli, a, &cfg, &instances),
        Precision::F64 => train_at::<f64>(cli, a, &cfg, &instances),
    }
}

fn train_at<S: Scalar>(cli: &Cli, a: &TrainArgs, cfg: &TrainConfig, instances: &[TrainingInstance]) -> Result<(), Fault> {
    let mut model: Seq2Seq<S> = match &a.model {
        Some(p) => load(p)?,
        None => {
            let texts = instances.iter().flat_map(|i| [i.prompt.as_str(), i.input.as_str(), i.target.as_str()]);
            Seq2Seq::new(model_config(&a.arch), Vocab::build(texts), rng::sub_seed(cli.seed, "model"))
                .map_err(|e| Fault::Usage(e.to_string()))?
        }
    };
    let units = model.units(instances).map_err(|e| at(&a.data)(&e))?;
    let mut log = match &a.log {
        Some(p) => Some((std::fs::File::create(p).map_err(|e| at(p)(&e))?, p)),
        None => None,
    };
    let total = cfg.total_steps(units.len());
    let mut io_error = None;
    let steps = model
        .train(&units, cfg, |s, _| {
            if let Some((f, p)) = log.as_mut() {
                let line = serde_json::to_string(s).expect("step log serializes");
                if let Err(e) = writeln!(f, "{line}") {
                    io_error.get_or_insert_with(|| at(p)(&e));
                }
            }
            if s.step % 100 == 0 || s.step + 1 == total {
                eprintln!("step {}/{} lr {:.3e} loss {:.5}", s.step + 1, total, s.lr, s.loss.total);
            }
        })
        .map_err(Fault::data)?;
    if let Some(e) = io_error {
        return Err(e);
    }
    if let Some(last) = steps.last() {
        eprintln!("final loss {:.5} after {} steps", last.loss.total, steps.len());
    }
    model.save(&a.out).map_err(|e| at(&a.out)(&e))
}

/// A model whose generation length is capped by the caller.
struct Capped<S> {
    model: Seq2Seq<S>,
    max_len: usize,
}

impl<S: Scalar> Generator for Capped<S> {
    fn generate(&self, prompt: &str, input: &str) -> String {
        self.model.generate(prompt, input, self.max_len).unwrap_or_default()
    }
}

fn predict_cmd(cli: &Cli, a: &PredictArgs) -> Result<(), Fault> {
    let mut inputs = vec![a.model.as_path(), a.input.as_path()];
    inputs.extend(a.prompt_file.as_deref());
    inputs.extend(a.schema.as_deref());
    inputs.extend(a.descriptions.as_deref());
    let outputs: Vec<&Path> = a.out.iter().map(PathBuf::as_path).collect();
    write_manifest(cli, &inputs, &outputs)?;
    let prompt = match (&a.prompt_file, &a.schema) {
        (Some(p), _) => std::fs::read_to_string(p).map_err(|e| at(p)(&e))?.trim_end_matches(['\n', '\r']).to_string(),
        (None, Some(s)) => {
            let schema = read_schema(s)?;
            let desc = match &a.descriptions {
                Some(d) => read_descriptions(d)?,
                None => bare_descriptions(&schema),
            };
            finetune_prompt(&schema, &desc).map_err(Fault::data)?
        }
        (None, None) => return Err(Fault::Usage("one of --prompt-file and --schema is required".into())),
    };
    let sentences: Vec<Sentence> = jsonl::read(&a.input).map_err(Fault::data)?;
    let predictions = match precision_of(&a.model)? {
        Precision::F32 => predict_at::<f32>(a, &prompt, &sentences)?,
        Precision::F64 => predict_at::<f64>(a, &prompt, &sentences)?,
    };
    match &a.out {
        Some(p) => write_jsonl(p, &predictions),
        None => {
            print!("{}", jsonl::to_string(&predictions));
            Ok(())
        }
    }
}

fn predict_at<S: Scalar>(a: &PredictArgs, prompt: &str, sentences: &[Sentence]) -> Result<Vec<conceptner::episodes::Prediction>, Fault> {
    let model: Seq2Seq<S> = load(&a.model)?;
    let max_len = a.max_len.unwrap_or(model.config.max_tgt_len);
    Ok(predict(&Capped { model, max_len }, prompt, sentences))
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<(), Fault> {
    let mut inputs = vec![a.gold.as_path(), a.pred.as_path()];
    inputs.extend(a.schema.as_deref());
    let outputs: Vec<&Path> = a.out.iter().map(PathBuf::as_path).collect();
    write_manifest(cli, &inputs, &outputs)?;
    let gold = read_corpus(&a.gold)?;
    let schema = match &a.schema {
        Some(p) => read_schema(p)?,
        None => corpus_types(&gold),
    };
    let pred: Vec<SentenceSpans> = jsonl::read(&a.pred).map_err(Fault::data)?;
    let gold: Vec<SentenceSpans> = gold.iter().map(|s| gold_spans(s, &schema)).collect();
    let report = score(&gold, &pred).map_err(Fault::data)?;
    eprintln!("precision {:.4} recall {:.4} f1 {:.4}", report.precision, report.recall, report.f1);
    match &a.out {
        Some(p) => write_json(p, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
    }
}

fn episodes(cli: &Cli, a: &EpisodeArgs) -> Result<(), Fault> {
    if a.k == 0 || a.runs == 0 {
        return Err(Fault::Usage("--k and --runs must be at least 1".into()));
    }
    let desc_cfg = description_config(cli, a.other_threshold, Counting::PerDescription)?;
    let mut ft = TrainConfig::finetune(a.epochs, 0);
    ft.batch_size = a.batch_size;
    ft.lr = a.lr;
    ft.warmup_fraction = Some(a.warmup);
    ft.threads = cli.jobs;
    ft.validate().map_err(|e| Fault::Usage(e.to_string()))?;

    let mut inputs = vec![a.corpus.as_path(), a.schema.as_path()];
    inputs.extend(a.test.as_deref());
    inputs.extend(a.model.as_deref());
    write_manifest(cli, &inputs, &[&a.out])?;

    let pool = read_corpus(&a.corpus)?;
    let test = match &a.test {
        Some(p) => read_corpus(p)?,
        None => pool.clone(),
    };
    let schema = read_schema(&a.schema)?;
    let cfg = EpisodeConfig { k: a.k, runs: a.runs, base_seed: cli.seed, descriptions: desc_cfg };
    let report = if let Some(text) = &a.constant_output {
        episodes_with(&Frozen(ConstantGenerator(text.clone())), &pool, &test, &schema, &cfg)
    } else if a.gold_echo {
        episodes_with(&Frozen(GoldEcho::new(&test, &schema)), &pool, &test, &schema, &cfg)
    } else {
        let path = a.model.as_deref().ok_or_else(|| Fault::Usage("--model is required".into()))?;
        match precision_of(path)? {
            Precision::F32 => {
                let learner = ModelLearner { base: load::<f32>(path)?, cfg: ft };
                episodes_with(&learner, &pool, &test, &schema, &cfg)
            }
            Precision::F64 => {
                let learner = ModelLearner { base: load::<f64>(path)?, cfg: ft };
                episodes_with(&learner, &pool, &test, &schema, &cfg)
            }
        }
    };
    eprintln!("F1 {:.4} ± {:.4} over {} episodes", report.mean_f1, report.sd_f1, report.episodes.len());
    write_json(&a.out, &report)?;
    if report.episodes.is_empty() {
        return Err(Fault::Data("every episode failed".into()));
    }
    Ok(())
}

fn episodes_with<L: Learner>(
    learner: &L,
    pool: &[AnnotatedSentence],
    test: &[AnnotatedSentence],
    schema: &[TypeId],
    cfg: &EpisodeConfig,
) -> conceptner::episodes::EpisodesReport {
    run_episodes(learner, pool, test, schema, cfg, |seed, outcome| match outcome {
        Ok(e) => eprintln!("episode seed {seed}: f1 {:.4}", e.report.f1),
        Err(err) => eprintln!("episode seed {seed} failed: {err}"),
    })
}
