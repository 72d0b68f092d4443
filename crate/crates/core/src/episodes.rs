//! Prediction over a sentence stream and the k-shot episode loop.
//!
//! An episode samples a support set, builds mention-describing descriptions
//! for the schema with the base model, fine-tunes a copy of the base model on
//! the support set and scores its entity-generation output on a test split.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::codec::parse_generated;
use crate::data::{AnnotatedSentence, Sentence, Task, TypeId};
use crate::describe::{build_md_descriptions, DescriptionConfig, DescriptionMap, FilterReport};
use crate::eval::{gold_generation, gold_spans, score, EvalReport, RunMeta};
use crate::generator::{ConstantGenerator, Generator};
use crate::locate::{locate, SentenceSpans, SpanPrediction};
use crate::model::{Scalar, Seq2Seq, TrainConfig};
use crate::sampler::{finetune_prompt, make_finetune_instance, sample_kshot, TrainingInstance};

/// Prediction JSONL record: generated text with its located spans. It reads
/// back as a [`SentenceSpans`] record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub generated: String,
    pub spans: Vec<SpanPrediction>,
}

impl Prediction {
    pub fn sentence_spans(self) -> SentenceSpans {
        SentenceSpans { id: self.id, spans: self.spans }
    }
}

/// Runs `model` with `prompt` over each sentence and locates the parsed
/// entity-generation output.
pub fn predict(model: &dyn Generator, prompt: &str, sentences: &[Sentence]) -> Vec<Prediction> {
    sentences
        .iter()
        .map(|s| {
            let generated = model.generate(prompt, &s.text);
            let parsed = parse_generated(Task::EntityGeneration, &generated).target;
            Prediction { id: s.id.clone(), spans: locate(&s.text, &parsed).spans, generated }
        })
        .collect()
}

/// Answers every input sentence with its serialized gold target over
/// `schema`, ignoring the prompt. Unknown sentences get `""`.
#[derive(Debug, Clone, Default)]
pub struct GoldEcho {
    by_text: HashMap<String, String>,
}

impl GoldEcho {
    pub fn new<'a>(corpus: impl IntoIterator<Item = &'a AnnotatedSentence>, schema: &[TypeId]) -> Self {
        let by_text = corpus
            .into_iter()
            .map(|s| (s.text().to_string(), gold_generation(s, schema)))
            .collect();
        Self { by_text }
    }
}

impl Generator for GoldEcho {
    fn generate(&self, _prompt: &str, input: &str) -> String {
        self.by_text.get(input).cloned().unwrap_or_default()
    }
}

/// What an episode needs from a model: a describer for the support
/// mentions and a way to fine-tune a fresh copy.
pub trait Learner: Sync {
    type Tuned: Generator;
    fn describer(&self) -> &dyn Generator;
    fn fine_tune(&self, instances: &[TrainingInstance], seed: u64) -> Result<Self::Tuned, String>;
}

/// The toy model under a fine-tuning config; the episode seed replaces
/// `cfg.seed`.
#[derive(Debug, Clone)]
pub struct ModelLearner<S> {
    pub base: Seq2Seq<S>,
    pub cfg: TrainConfig,
}

impl<S: Scalar> Learner for ModelLearner<S> {
    type Tuned = Seq2Seq<S>;

    fn describer(&self) -> &dyn Generator {
        &self.base
    }

    fn fine_tune(&self, instances: &[TrainingInstance], seed: u64) -> Result<Seq2Seq<S>, String> {
        let mut model = self.base.clone();
        let units = model.units(instances).map_err(|e| e.to_string())?;
        let cfg = TrainConfig { seed, ..self.cfg.clone() };
        model.train(&units, &cfg, |_, _| {}).map_err(|e| e.to_string())?;
        Ok(model)
    }
}

/// A learner that never changes: fine-tuning returns the same generator.
#[derive(Debug, Clone)]
pub struct Frozen<G>(pub G);

impl<G: Generator + Clone> Learner for Frozen<G> {
    type Tuned = G;

    fn describer(&self) -> &dyn Generator {
        &self.0
    }

    fn fine_tune(&self, _instances: &[TrainingInstance], _seed: u64) -> Result<G, String> {
        Ok(self.0.clone())
    }
}

pub type ConstantLearner = Frozen<ConstantGenerator>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub k: usize,
    pub runs: usize,
    /// Episode `r` uses seed `base_seed + r`.
    pub base_seed: u64,
    pub descriptions: DescriptionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub seed: u64,
    pub support_ids: Vec<String>,
    pub descriptions: Vec<crate::describe::DescriptionRecord>,
    pub filter: FilterReport,
    pub prompt: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodesReport {
    pub k: usize,
    pub runs: usize,
    /// Mean F1 over completed episodes.
    pub mean_f1: f64,
    /// Sample standard deviation (n - 1); 0 for a single episode.
    pub sd_f1: f64,
    /// Per-run F1 in seed order.
    pub f1: Vec<f64>,
    pub episodes: Vec<Episode>,
    pub failures: Vec<EpisodeFailure>,
}

/// Mean and sample standard deviation, summed over the sorted values so the
/// result does not depend on run order.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    if sorted.len() < 2 {
        return (mean, 0.0);
    }
    let mut sq: Vec<f64> = sorted.iter().map(|x| (x - mean) * (x - mean)).collect();
    sq.sort_by(f64::total_cmp);
    (mean, (sq.iter().sum::<f64>() / (n - 1.0)).sqrt())
}

/// One episode with seed `seed`.
pub fn run_episode<L: Learner>(
    learner: &L,
    train: &[AnnotatedSentence],
    test: &[AnnotatedSentence],
    schema: &[TypeId],
    k: usize,
    seed: u64,
    desc_cfg: &DescriptionConfig,
) -> Result<Episode, String> {
    let support = sample_kshot(train, k, schema, seed).map_err(|e| e.to_string())?;
    let (descriptions, filter) =
        build_md_descriptions(learner.describer(), &support.sentences, schema, desc_cfg).map_err(|e| e.to_string())?;
    let instances = support
        .sentences
        .iter()
        .map(|s| make_finetune_instance(s, schema, &descriptions))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let tuned = learner.fine_tune(&instances, seed)?;
    let prompt = finetune_prompt(schema, &descriptions).map_err(|e| e.to_string())?;
    let report = score_generator(&tuned, &prompt, test, schema).map_err(|e| e.to_string())?;
    Ok(Episode {
        seed,
        support_ids: support.sentences.iter().map(|s| s.id().to_string()).collect(),
        descriptions: descriptions.to_records(),
        filter,
        prompt,
        report: EvalReport { run: Some(RunMeta { seed, k }), ..report },
    })
}

/// Generate, parse, locate and score `model` on `sentences`.
pub fn score_generator(
    model: &dyn Generator,
    prompt: &str,
    sentences: &[AnnotatedSentence],
    schema: &[TypeId],
) -> Result<EvalReport, crate::eval::ScoreError> {
    let plain: Vec<Sentence> = sentences.iter().map(|s| s.sentence.clone()).collect();
    let pred: Vec<SentenceSpans> = predict(model, prompt, &plain).into_iter().map(Prediction::sentence_spans).collect();
    let gold: Vec<SentenceSpans> = sentences.iter().map(|s| gold_spans(s, schema)).collect();
    score(&gold, &pred)
}

/// Runs `cfg.runs` episodes. A failing episode is recorded and skipped.
pub fn run_episodes<L: Learner>(
    learner: &L,
    train: &[AnnotatedSentence],
    test: &[AnnotatedSentence],
    schema: &[TypeId],
    cfg: &EpisodeConfig,
    mut on_episode: impl FnMut(u64, &Result<Episode, String>),
) -> EpisodesReport {
    let mut episodes = Vec::new();
    let mut failures = Vec::new();
    for r in 0..cfg.runs {
        let seed = cfg.base_seed + r as u64;
        let outcome = run_episode(learner, train, test, schema, cfg.k, seed, &cfg.descriptions);
        on_episode(seed, &outcome);
        match outcome {
            Ok(e) => episodes.push(e),
            Err(error) => failures.push(EpisodeFailure { seed, error }),
        }
    }
    let f1: Vec<f64> = episodes.iter().map(|e| e.report.f1).collect();
    let (mean_f1, sd_f1) = mean_sd(&f1);
    EpisodesReport { k: cfg.k, runs: cfg.runs, mean_f1, sd_f1, f1, episodes, failures }
}

/// Descriptions that are only the bare schema types.
pub fn bare_descriptions(schema: &[TypeId]) -> DescriptionMap {
    let mut map = DescriptionMap::default();
    for t in schema {
        map.insert(t.clone(), Vec::new(), false);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{tid, TypedMention};

    fn corpus() -> Vec<AnnotatedSentence> {
        let rows: &[(&str, &[(&str, &str)])] = &[
            ("Ann met Bob in Rome.", &[("Ann", "person"), ("Bob", "person"), ("Rome", "city")]),
            ("Rome is old.", &[("Rome", "city")]),
            ("Bob left Paris.", &[("Bob", "person"), ("Paris", "city")]),
            ("Cy stayed.", &[("Cy", "person")]),
        ];
        rows.iter()
            .enumerate()
            .map(|(i, (text, ms))| {
                AnnotatedSentence::ordered(
                    Sentence::new(format!("s{i}"), *text).unwrap(),
                    ms.iter().map(|(s, t)| TypedMention::new(*s, vec![tid(t)]).unwrap()).collect(),
                )
                .unwrap()
            })
            .collect()
    }

    fn schema() -> Vec<TypeId> {
        vec![tid("person"), tid("city")]
    }

    #[test]
    fn gold_echo_scores_perfectly() {
        let c = corpus();
        let cfg = EpisodeConfig { k: 1, runs: 3, base_seed: 0, descriptions: DescriptionConfig::default() };
        let r = run_episodes(&Frozen(GoldEcho::new(&c, &schema())), &c, &c, &schema(), &cfg, |_, _| {});
        assert_eq!(r.f1, vec![1.0; 3]);
        assert_eq!((r.mean_f1, r.sd_f1), (1.0, 0.0));
        assert!(r.failures.is_empty());
        assert_eq!(r.episodes[1].report.run, Some(RunMeta { seed: 1, k: 1 }));
    }

    #[test]
    fn constant_model_mean_is_its_single_run() {
        let c = corpus();
        let learner = Frozen(ConstantGenerator("Rome is city.".into()));
        let single = score_generator(&learner.0, "", &c, &schema()).unwrap().f1;
        let cfg = EpisodeConfig { k: 2, runs: 5, base_seed: 9, descriptions: DescriptionConfig::default() };
        let r = run_episodes(&learner, &c, &c, &schema(), &cfg, |_, _| {});
        assert!((r.mean_f1 - single).abs() <= 1e-12);
        assert!(r.sd_f1.abs() <= 1e-12);
    }

    #[test]
    fn failed_episodes_are_isolated() {
        let c = corpus();
        let cfg = EpisodeConfig { k: 0, runs: 2, base_seed: 0, descriptions: DescriptionConfig::default() };
        let r = run_episodes(&Frozen(ConstantGenerator(String::new())), &c, &c, &schema(), &cfg, |_, _| {});
        assert_eq!(r.failures.len(), 2);
        assert!(r.f1.is_empty());
    }

    #[test]
    fn mean_sd_matches_textbook() {
        let (m, sd) = mean_sd(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((sd - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }
}
