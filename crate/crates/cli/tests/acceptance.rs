//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. The memorized model is trained once and reused by the
//! controllability and episode checks.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::oracles::{
    cooccurrence_oracle, gradcheck_batch, gradcheck_model, gradient_errors, locate_oracle, loss_decomposition_gap,
    random_locate_case, random_typed_corpus, typed_corpus,
};
use conceptner::codec::{parse_generated, parse_prompt, serialize_prompt_eg, serialize_target, Prompt};
use conceptner::corpus::{build_corpus_from_files, BuildConfig};
use conceptner::data::{tid, AnnotatedSentence, ConceptDescription, PromptEg, TargetPair, TargetSequence, Task, TypeDictionary};
use conceptner::describe::{build_cooccurrence_descriptions, build_md_descriptions, DescriptionConfig};
use conceptner::episodes::{mean_sd, score_generator, EpisodesReport, GoldEcho};
use conceptner::eval::gold_spans;
use conceptner::generator::{ConstantGenerator, TableGenerator};
use conceptner::jsonl;
use conceptner::locate::locate;
use conceptner::model::{ModelConfig, TrainConfig, Vocab};
use conceptner::sampler::{eg_instance_with, finetune_prompt, make_finetune_instance, make_pretrain_instances, SamplerConfig, TrainingInstance};
use conceptner::{rng, synthetic, Seq2Seq32, Seq2Seq64};

type Check = (bool, String);

fn codec_round_trip() -> Check {
    let start = Instant::now();
    let mut rng = rng::keyed(0, "acceptance-codec", 0);
    let mut good = 0;
    for _ in 0..10_000 {
        let target = common::random_target(&mut rng);
        let parsed = parse_generated(target.task, &serialize_target(&target));
        good += (parsed.diagnostics.is_empty() && parsed.target == target) as usize;
    }
    let secs = start.elapsed().as_secs_f64();
    (good == 10_000 && secs < 5.0, format!("{good}/10000 identical in {secs:.2} s (limit 5 s)"))
}

fn grammar_fixtures() -> Check {
    let mut failures = Vec::new();
    let prompt = PromptEg::new(vec![ConceptDescription::new(tid("person"), vec![tid("actor"), tid("writer")]).unwrap()]).unwrap();
    let text = "[EG] person: {actor, writer}";
    if serialize_prompt_eg(&prompt) != text || parse_prompt(text).ok() != Some(Prompt::Eg(prompt)) {
        failures.push(text);
    }
    let eg = TargetSequence::new(Task::EntityGeneration, vec![TargetPair::new("J.K. Rowling", vec![tid("person")])]).unwrap();
    let text = "J.K. Rowling is person.";
    let parsed = parse_generated(Task::EntityGeneration, text);
    if serialize_target(&eg) != text || parsed.target != eg || !parsed.diagnostics.is_empty() {
        failures.push(text);
    }
    let dotted = TargetSequence::new(
        Task::EntityGeneration,
        vec![TargetPair::new("China", vec![tid("GPE")]), TargetPair::new("a few days ago", vec![tid("date")])],
    )
    .unwrap();
    let text = "China is GPE. a few days ago is date.";
    let parsed = parse_generated(Task::EntityGeneration, text);
    if parsed.target != dotted || !parsed.diagnostics.is_empty() {
        failures.push(text);
    }
    let md = TargetSequence::new(Task::MentionDescribing, vec![TargetPair::new("J.K. Rowling", vec![tid("person"), tid("writer")])]).unwrap();
    let text = "J.K. Rowling is person, writer.";
    let parsed = parse_generated(Task::MentionDescribing, text);
    if serialize_target(&md) != text || parsed.target != md || !parsed.diagnostics.is_empty() {
        failures.push(text);
    }
    (failures.is_empty(), format!("4 fixtures, failing: {failures:?}"))
}

fn locator_oracle() -> Check {
    let mut rng = rng::keyed(1, "acceptance-locate", 0);
    let (mut agree, mut repeated) = (0, 0);
    for _ in 0..1000 {
        let (text, pairs) = random_locate_case(&mut rng);
        let target = TargetSequence::new(Task::EntityGeneration, pairs.clone()).unwrap();
        agree += (locate(&text, &target).spans == locate_oracle(&text, &pairs)) as usize;
        let mut surfaces: Vec<&str> = pairs.iter().map(|p| p.surface.as_str()).collect();
        surfaces.sort_unstable();
        repeated += surfaces.windows(2).any(|w| w[0] == w[1]) as usize;
    }
    (agree == 1000, format!("{agree}/1000 sentences agree ({repeated} with repeated surfaces)"))
}

fn corpus_builder() -> Check {
    let (kb, pages) = (common::fixture("kb.jsonl"), common::fixture("pages.jsonl"));
    let items = std::fs::read_to_string(&kb).unwrap().lines().filter(|l| !l.trim().is_empty()).count();
    let page_count = std::fs::read_to_string(&pages).unwrap().lines().filter(|l| !l.trim().is_empty()).count();
    let golden = std::fs::read_to_string(common::fixture("corpus.golden.jsonl")).unwrap();
    let golden_dict = std::fs::read_to_string(common::fixture("dictionary.golden.json")).unwrap();
    let mut identical = true;
    let mut last = None;
    for jobs in [1, 1, 2, 4, 8] {
        let b = build_corpus_from_files(&kb, &pages, &BuildConfig::default(), jobs).unwrap();
        identical &= jsonl::to_string(&b.sentences) == golden;
        identical &= serde_json::to_string_pretty(&b.dictionary).unwrap() + "\n" == golden_dict;
        last = Some(b);
    }
    let b = last.unwrap();
    let mention_types: Vec<_> = b.sentences.iter().flat_map(|s| s.type_union()).collect();
    let truncated = b.dictionary.count(&tid("state award")) == Some(6)
        && !b.dictionary.contains(&tid("state award of the Republic of Moldova"))
        && mention_types.contains(&tid("state award"));
    let excluded = ["lighthouse", "composition"]
        .iter()
        .all(|t| !b.dictionary.contains(&tid(t)) && !mention_types.contains(&tid(t)));
    let sized = items >= 50 && page_count >= 20;
    (
        sized && identical && truncated && excluded,
        format!(
            "{items} items, {page_count} pages; golden identical over runs and jobs 1/2/4/8: {identical}; \
             state award truncation: {truncated}; rare types excluded: {excluded}"
        ),
    )
}

fn description_builder() -> Check {
    let mut rng = rng::keyed(2, "acceptance-cooccurrence", 0);
    let mut agree = 0;
    for _ in 0..1000 {
        let corpus = random_typed_corpus(&mut rng, 20);
        let got: Vec<_> = build_cooccurrence_descriptions(&corpus).iter().map(|(t, e)| (t.clone(), e.concepts.clone())).collect();
        agree += (got == cooccurrence_oracle(&corpus)) as usize;
    }
    // ten GPE mentions, `other_only` of them described only as other
    let corpus = typed_corpus((0..10).map(|_| vec![vec![tid("GPE")]]).collect());
    let mut filtering = Vec::new();
    for (other_only, expect_filtered) in [(4, false), (5, false), (6, true)] {
        let mut model = TableGenerator::default();
        for (i, s) in corpus.iter().enumerate() {
            let label = if i < other_only { "other" } else { "city" };
            model.insert(format!("[MD] {}", s.text()), s.text(), format!("{} is {label}.", s.text()));
        }
        let (map, report) = build_md_descriptions(&model, &corpus, &[tid("GPE")], &DescriptionConfig::default()).unwrap();
        let e = &report.entries[0];
        let ok = e.filtered == expect_filtered
            && (e.other_frequency - other_only as f64 / 10.0).abs() < 1e-15
            && map.concepts(&tid("GPE")).is_empty() == expect_filtered;
        filtering.push(format!("{:.1}->{}{}", e.other_frequency, if e.filtered { "bare" } else { "kept" }, if ok { "" } else { "(wrong)" }));
    }
    let filter_ok = filtering.iter().all(|f| !f.ends_with("(wrong)"));
    (agree == 1000 && filter_ok, format!("{agree}/1000 corpora match the pairwise oracle; filtering {}", filtering.join(" ")))
}

fn gradient_check() -> Check {
    let start = Instant::now();
    let model = gradcheck_model();
    let mut worst: f64 = 0.0;
    let mut tensors = 0;
    for batch in 0..3 {
        for (_, rel) in gradient_errors(&model, &gradcheck_batch(&model, batch)) {
            worst = worst.max(rel);
            tensors += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (worst <= 1e-4 && secs < 60.0, format!("worst relative error {worst:.2e} over {tensors} tensor checks on 3 batches in {secs:.1} s"))
}

fn pretrain_instances(corpus: &[AnnotatedSentence]) -> Vec<TrainingInstance> {
    let dict = TypeDictionary::from_corpus(corpus, 5);
    let desc = build_cooccurrence_descriptions(corpus);
    make_pretrain_instances(corpus, &dict, &desc, &SamplerConfig::default())
        .unwrap()
        .into_iter()
        .flat_map(|(md, eg)| std::iter::once(md).chain(eg))
        .collect()
}

fn vocab_for(instances: &[TrainingInstance]) -> Vocab {
    Vocab::build(instances.iter().flat_map(|i| [i.prompt.as_str(), i.input.as_str(), i.target.as_str()]))
}

fn loss_decomposition() -> Check {
    let instances = pretrain_instances(&synthetic::corpus(48, 3));
    let config = ModelConfig { d_model: 16, layers: 1, heads: 2, d_ff: 32, ..ModelConfig::default() };
    let mut model = Seq2Seq64::new(config, vocab_for(&instances), 1).unwrap();
    let units = model.units(&instances).unwrap();
    let heads = model.config.heads;
    let (mut worst, mut checked): (f64, usize) = (0.0, 0);
    let log = model
        .train(&units, &TrainConfig::pretrain(30, 4), |entry, params| {
            let terms = entry.loss.md_term.unwrap_or(0.0) + entry.loss.eg_term.unwrap_or(0.0);
            let own = (entry.loss.total - terms).abs() / terms.abs();
            worst = worst.max(own).max(loss_decomposition_gap(entry, params, heads, &units));
            checked += 1;
        })
        .unwrap();
    (worst <= 1e-9 && checked == log.len(), format!("{checked}/{} logged steps, worst relative gap {worst:.1e}", log.len()))
}

/// The memorized model and what the later checks need from it.
struct Memorized {
    corpus: Vec<AnnotatedSentence>,
    pretrained: Seq2Seq32,
    tuned: Seq2Seq32,
}

/// Fine-tuning units: the full-schema instance of each sentence followed by
/// one single-type instance per type present in it.
fn memorization_finetune_data(corpus: &[AnnotatedSentence]) -> Vec<TrainingInstance> {
    let schema = synthetic::schema();
    let desc = build_cooccurrence_descriptions(corpus);
    let mut out = Vec::new();
    for s in corpus {
        out.push(make_finetune_instance(s, &schema, &desc).unwrap());
        for t in s.type_union() {
            out.push(eg_instance_with(s, std::slice::from_ref(&t), vec![desc.description(&t)]).unwrap());
        }
    }
    out
}

fn memorization(slot: &mut Option<Memorized>) -> Check {
    let start = Instant::now();
    let corpus = synthetic::corpus(200, 0);
    let schema = synthetic::schema();
    let types = corpus.iter().flat_map(|s| s.type_union()).collect::<std::collections::BTreeSet<_>>().len();
    let pre = pretrain_instances(&corpus);
    let ft = memorization_finetune_data(&corpus);
    let vocab = vocab_for(&pre.iter().chain(&ft).cloned().collect::<Vec<_>>());
    let vocab_size = vocab.len();
    let mut model = Seq2Seq32::new(ModelConfig::default(), vocab, 1).unwrap();
    let units = model.units(&pre).unwrap();
    let pre_log = model.train(&units, &TrainConfig::pretrain(2000, 0), |_, _| {}).unwrap();
    let pretrained = model.clone();
    let pre_secs = start.elapsed().as_secs_f64();
    let units = model.units(&ft).unwrap();
    let ft_log = model.train(&units, &TrainConfig::finetune(50, 0), |_, _| {}).unwrap();
    let prompt = finetune_prompt(&schema, &build_cooccurrence_descriptions(&corpus)).unwrap();
    let report = score_generator(&model, &prompt, &corpus, &schema).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "{} sentences, {types} types, vocabulary {vocab_size}; pretrain {} steps to loss {:.3} ({pre_secs:.0} s); \
         fine-tune {} steps to loss {:.4}; micro-F1 {:.4} (P {:.4}, R {:.4}); {secs:.0} s total (limit 300 s)",
        corpus.len(),
        pre_log.len(),
        pre_log.last().unwrap().loss.total,
        ft_log.len(),
        ft_log.last().unwrap().loss.total,
        report.f1,
        report.precision,
        report.recall,
    );
    let pass = corpus.len() == 200 && types == 8 && vocab_size <= 500 && report.f1 >= 0.95 && secs <= 300.0;
    *slot = Some(Memorized { corpus, pretrained, tuned: model });
    (pass, detail)
}

fn controllability(m: &Memorized) -> Check {
    let desc = build_cooccurrence_descriptions(&m.corpus);
    let mut lines = Vec::new();
    let mut good = 0;
    let sentences: Vec<_> = m.corpus.iter().filter(|s| s.type_union().len() >= 2).take(6).collect();
    for s in &sentences {
        let types = s.type_union();
        let mut outputs = Vec::new();
        let mut appropriate = true;
        for t in &types[..2] {
            let prompt = serialize_prompt_eg(&PromptEg::new(vec![desc.description(t)]).unwrap());
            let out = m.tuned.generate(&prompt, s.text(), m.tuned.config.max_tgt_len).unwrap();
            let spans = locate(s.text(), &parse_generated(Task::EntityGeneration, &out).target).spans;
            appropriate &= spans == gold_spans(s, std::slice::from_ref(t)).spans;
            outputs.push(format!("[{t}] {out}"));
        }
        let ok = appropriate && outputs[0] != outputs[1];
        good += ok as usize;
        lines.push(format!("{}: {}", s.id(), outputs.join(" / ")));
    }
    eprintln!("  controllability outputs:\n    {}", lines.join("\n    "));
    (good >= 5 && good == sentences.len(), format!("{good}/{} sentences give distinct, type-appropriate outputs under two prompts", sentences.len()))
}

fn gold_pipeline() -> Check {
    let corpus = common::corpus20();
    let schema = common::schema5();
    let echo = GoldEcho::new(&corpus, &schema);
    let report = score_generator(&echo, &finetune_prompt(&schema, &conceptner::episodes::bare_descriptions(&schema)).unwrap(), &corpus, &schema).unwrap();
    (
        report.f1 == 1.0,
        format!("F1 {} with {} of {} gold spans matched over {} sentences", report.f1, report.counts.matched, report.counts.gold, corpus.len()),
    )
}

fn run_cli(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_conceptner"))
        .args(args.iter().map(|a| a.as_ref()))
        .env_remove("SDNET_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn read_report(path: &Path) -> EpisodesReport {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn episodes(m: &Memorized, dir: &Path) -> Check {
    let start = Instant::now();
    let corpus = dir.join("synthetic.jsonl");
    jsonl::write(&corpus, &m.corpus).unwrap();
    let schema = dir.join("schema.txt");
    std::fs::write(&schema, synthetic::TYPES.join("\n") + "\n").unwrap();
    let base = dir.join("pretrained.json");
    m.pretrained.save(&base).unwrap();
    let episodes = |out: &PathBuf, runs: &str, seed: &str| {
        run_cli(&[
            &"run-episodes", &"--corpus", &corpus, &"--schema", &schema, &"--k", &"5", &"--runs", &runs, &"--model", &base,
            &"--seed", &seed, &"--out", out,
        ])
    };
    let full = dir.join("episodes.json");
    if let Err(e) = episodes(&full, "10", "0") {
        return (false, format!("run-episodes failed: {e}"));
    }
    let report = read_report(&full);
    let (mean, sd) = mean_sd(&report.f1);
    let summary_ok = report.f1.len() == 10 && report.failures.is_empty() && mean == report.mean_f1 && sd == report.sd_f1;
    // episode r depends on seed + r alone: a shorter run and a shifted base repeat it
    let again = dir.join("again.json");
    let shifted = dir.join("shifted.json");
    let reruns = episodes(&again, "2", "0").and_then(|_| episodes(&shifted, "1", "7"));
    let deterministic = reruns.is_ok() && {
        let (a, s) = (read_report(&again), read_report(&shifted));
        a.episodes[..] == report.episodes[..2] && s.episodes[0] == report.episodes[7]
    };
    let model_secs = start.elapsed().as_secs_f64();

    let constant = "Lyon is city.";
    let const_out = dir.join("constant.json");
    if let Err(e) = run_cli(&[
        &"run-episodes", &"--corpus", &corpus, &"--schema", &schema, &"--k", &"5", &"--runs", &"10", &"--constant-output",
        &constant, &"--out", &const_out,
    ]) {
        return (false, format!("constant run-episodes failed: {e}"));
    }
    let const_report = read_report(&const_out);
    let single = score_generator(&ConstantGenerator(constant.into()), "[EG] city", &m.corpus, &synthetic::schema()).unwrap().f1;
    let gap = (const_report.mean_f1 - single).abs();
    (
        summary_ok && deterministic && gap <= 1e-12,
        format!(
            "model: F1 {:.4} ± {:.4} over {} episodes, per-seed determinism {deterministic} ({model_secs:.0} s); \
             constant output: mean {:.6} vs single run {:.6} (gap {gap:.1e})",
            report.mean_f1,
            report.sd_f1,
            report.f1.len(),
            const_report.mean_f1,
            single,
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut results: Vec<(&str, Check)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Check| {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        println!("{} {name}: {} [{:.1} s]", if outcome.0 { "PASS" } else { "FAIL" }, outcome.1, started.elapsed().as_secs_f64());
        results.push((name, outcome));
    };
    run("codec round-trip", &mut codec_round_trip);
    run("grammar fixtures", &mut grammar_fixtures);
    run("locator oracle", &mut locator_oracle);
    run("corpus builder", &mut corpus_builder);
    run("description builder", &mut description_builder);
    run("gradient check", &mut gradient_check);
    run("loss decomposition", &mut loss_decomposition);
    let mut memorized = None;
    run("end-to-end memorization", &mut || memorization(&mut memorized));
    match &memorized {
        Some(m) => {
            run("prompt controllability", &mut || controllability(m));
            run("gold-pipeline oracle", &mut gold_pipeline);
            run("episode protocol", &mut || episodes(m, dir.path()));
        }
        None => {
            run("prompt controllability", &mut || (false, "no memorized model".into()));
            run("gold-pipeline oracle", &mut gold_pipeline);
            run("episode protocol", &mut || (false, "no memorized model".into()));
        }
    }
    let failed = results.iter().filter(|(_, (ok, _))| !ok).count();
    println!("{} of {} acceptance criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
