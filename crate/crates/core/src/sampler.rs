//! Training-instance construction: pretraining mention-describing and
//! entity-generation instances, fine-tuning instances, and k-shot support
//! sets.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{parse_generated, serialize_prompt_eg, serialize_prompt_md, serialize_target};
use crate::data::{
    AnnotatedSentence, ConceptDescription, DataError, PromptEg, PromptMd, TargetPair, TargetSequence, Task, TypeDictionary,
    TypeId,
};
use crate::describe::{DescriptionConfig, DescriptionMap};
use crate::eval::gold_target;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub rng_seed: u64,
    /// Share of a sentence's mentions put into a mention-describing prompt.
    pub md_target_fraction: f64,
    pub max_negative_types: usize,
    pub max_positive_types: usize,
    /// Cap on concepts per type in entity-generation prompts.
    pub max_concepts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { rng_seed: 0, md_target_fraction: 1.0, max_negative_types: 3, max_positive_types: 5, max_concepts: 10 }
    }
}

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("invalid sampler config: {0}")]
    Config(&'static str),
    #[error("sentence {0:?} has no mentions")]
    NoMentions(String),
    #[error("sentence {0:?} has no typed mention to prompt for")]
    NoEligibleTypes(String),
    #[error("schema is empty")]
    EmptySchema,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("target of sentence {id:?} does not survive the wire format: {target:?}")]
    NotRoundTrippable { id: String, target: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SampleError> {
        if !(self.md_target_fraction > 0.0 && self.md_target_fraction <= 1.0) {
            return Err(SampleError::Config("md_target_fraction must lie in (0, 1]"));
        }
        if self.max_positive_types < 1 {
            return Err(SampleError::Config("max_positive_types must be at least 1"));
        }
        if self.max_concepts < 1 {
            return Err(SampleError::Config("max_concepts must be at least 1"));
        }
        Ok(())
    }
}

/// TrainingInstance JSONL record: `{"id", "task", "prompt", "input", "target"}`.
/// `id` names the source sentence; instances sharing it form one training
/// unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    #[serde(default)]
    pub id: String,
    pub task: Task,
    pub prompt: String,
    pub input: String,
    pub target: String,
}

fn checked(id: &str, task: Task, prompt: String, input: &str, target: &TargetSequence) -> Result<TrainingInstance, SampleError> {
    let text = serialize_target(target);
    let parsed = parse_generated(task, &text);
    if !parsed.diagnostics.is_empty() || parsed.target != *target {
        return Err(SampleError::NotRoundTrippable { id: id.to_string(), target: text });
    }
    Ok(TrainingInstance { id: id.to_string(), task, prompt, input: input.to_string(), target: text })
}

/// Mention-describing instance over a seeded share of the sentence's
/// distinct mention surfaces, kept in sentence order. Each target clause
/// lists the mention's full type set.
pub fn make_md_instance(s: &AnnotatedSentence, cfg: &SamplerConfig, draw_key: u64) -> Result<TrainingInstance, SampleError> {
    cfg.validate()?;
    let mut distinct: Vec<&crate::data::TypedMention> = Vec::new();
    for m in &s.mentions {
        if !distinct.iter().any(|d| d.surface == m.surface) {
            distinct.push(m);
        }
    }
    if distinct.is_empty() {
        return Err(SampleError::NoMentions(s.id().to_string()));
    }
    let n = ((cfg.md_target_fraction * distinct.len() as f64).ceil() as usize).clamp(1, distinct.len());
    let mut rng = rng::keyed(cfg.rng_seed, "md", draw_key);
    let mut picked = sample(&mut rng, distinct.len(), n).into_vec();
    picked.sort_unstable();
    let chosen: Vec<_> = picked.into_iter().map(|i| distinct[i]).collect();
    let prompt = PromptMd::new(chosen.iter().map(|m| m.surface.clone()).collect())?;
    let target = TargetSequence::new(
        Task::MentionDescribing,
        chosen.iter().map(|m| TargetPair::new(m.surface.clone(), m.types.clone())).collect(),
    )?;
    checked(s.id(), Task::MentionDescribing, serialize_prompt_md(&prompt), s.text(), &target)
}

/// Entity-generation target for `positives`: every mention carrying one of
/// them, one clause per matched type in `positives` order, mentions in
/// sentence order.
pub fn eg_target(s: &AnnotatedSentence, positives: &[TypeId]) -> TargetSequence {
    let mut pairs = Vec::new();
    for m in &s.mentions {
        for t in positives {
            if m.has_type(t) {
                pairs.push(TargetPair::new(m.surface.clone(), vec![t.clone()]));
            }
        }
    }
    TargetSequence { task: Task::EntityGeneration, pairs }
}

/// Entity-generation instance with explicit positive and negative types. The
/// prompt lists `prompt_order` (which must hold exactly `positives` and
/// `negatives`) with the given descriptions.
pub fn eg_instance_with(
    s: &AnnotatedSentence,
    positives: &[TypeId],
    entries: Vec<ConceptDescription>,
) -> Result<TrainingInstance, SampleError> {
    let prompt = PromptEg::new(entries)?;
    let target = eg_target(s, positives);
    checked(s.id(), Task::EntityGeneration, serialize_prompt_eg(&prompt), s.text(), &target)
}

/// The sampled positive and negative types of a pretraining EG instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeDraw {
    pub positives: Vec<TypeId>,
    pub negatives: Vec<TypeId>,
    /// `positives` and `negatives` interleaved in prompt order.
    pub prompt_order: Vec<TypeId>,
}

/// Draws 1..=max_positive_types positives from the sentence's types and
/// 0..=max_negative_types negatives from the rest of the dictionary.
pub fn draw_types(s: &AnnotatedSentence, dict: &TypeDictionary, cfg: &SamplerConfig, draw_key: u64) -> Result<TypeDraw, SampleError> {
    let union: Vec<TypeId> = s.type_union().into_iter().filter(|t| !t.is_other()).collect();
    if union.is_empty() {
        return Err(SampleError::NoEligibleTypes(s.id().to_string()));
    }
    let pool: Vec<TypeId> = dict.types().filter(|t| !union.contains(t)).cloned().collect();
    let mut rng = rng::keyed(cfg.rng_seed, "eg", draw_key);
    let n_pos = rng.random_range(1..=cfg.max_positive_types.min(union.len()));
    let n_neg = rng.random_range(0..=cfg.max_negative_types.min(pool.len()));
    let mut pos_idx = sample(&mut rng, union.len(), n_pos).into_vec();
    pos_idx.sort_unstable();
    let mut neg_idx = sample(&mut rng, pool.len(), n_neg).into_vec();
    neg_idx.sort_unstable();
    let positives: Vec<TypeId> = pos_idx.into_iter().map(|i| union[i].clone()).collect();
    let negatives: Vec<TypeId> = neg_idx.into_iter().map(|i| pool[i].clone()).collect();
    let mut prompt_order: Vec<TypeId> = positives.iter().chain(&negatives).cloned().collect();
    prompt_order.shuffle(&mut rng);
    Ok(TypeDraw { positives, negatives, prompt_order })
}

/// Pretraining entity-generation instance with sampled positive and
/// negative types and sampled concept descriptions.
pub fn make_eg_instance(
    s: &AnnotatedSentence,
    dict: &TypeDictionary,
    desc: &DescriptionMap,
    cfg: &SamplerConfig,
    draw_key: u64,
) -> Result<TrainingInstance, SampleError> {
    cfg.validate()?;
    let draw = draw_types(s, dict, cfg, draw_key)?;
    let dcfg = DescriptionConfig { max_concepts: cfg.max_concepts, rng_seed: cfg.rng_seed, ..DescriptionConfig::default() };
    let entries = draw
        .prompt_order
        .iter()
        .enumerate()
        .map(|(i, t)| desc.sampled(t, &dcfg, draw_key.wrapping_mul(64).wrapping_add(i as u64)))
        .collect();
    eg_instance_with(s, &draw.positives, entries)
}

/// Fine-tuning instance: every schema type in the prompt, every gold
/// mention of a schema type in the target.
pub fn make_finetune_instance(s: &AnnotatedSentence, schema: &[TypeId], desc: &DescriptionMap) -> Result<TrainingInstance, SampleError> {
    let prompt = finetune_prompt(schema, desc)?;
    checked(s.id(), Task::EntityGeneration, prompt, s.text(), &gold_target(s, schema))
}

/// The entity-generation prompt over a whole schema.
pub fn finetune_prompt(schema: &[TypeId], desc: &DescriptionMap) -> Result<String, SampleError> {
    if schema.is_empty() {
        return Err(SampleError::EmptySchema);
    }
    let prompt = PromptEg::new(schema.iter().map(|t| desc.description(t)).collect())?;
    Ok(serialize_prompt_eg(&prompt))
}

/// Both pretraining instances of every sentence, MD first, in corpus order.
/// Sentences without a typed mention yield only the MD instance.
pub fn make_pretrain_instances(
    corpus: &[AnnotatedSentence],
    dict: &TypeDictionary,
    desc: &DescriptionMap,
    cfg: &SamplerConfig,
) -> Result<Vec<(TrainingInstance, Option<TrainingInstance>)>, SampleError> {
    corpus
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.mentions.is_empty())
        .map(|(i, s)| {
            let md = make_md_instance(s, cfg, i as u64)?;
            let eg = match make_eg_instance(s, dict, desc, cfg, i as u64) {
                Ok(eg) => Some(eg),
                Err(SampleError::NoEligibleTypes(_)) => None,
                Err(e) => return Err(e),
            };
            Ok((md, eg))
        })
        .collect()
}

/// Selected support sentences with their per-type sentence counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportSet {
    pub sentences: Vec<AnnotatedSentence>,
    pub counts: BTreeMap<TypeId, usize>,
    /// Schema types absent from the whole corpus.
    pub unsatisfiable: Vec<TypeId>,
}

/// Greedy k-shot selection over a seed-shuffled pass of the corpus: a
/// sentence is taken when it contains some schema type still seen in fewer
/// than `k` selected sentences. Selected sentences keep corpus order.
pub fn sample_kshot(corpus: &[AnnotatedSentence], k: usize, schema: &[TypeId], rng_seed: u64) -> Result<SupportSet, SampleError> {
    if k == 0 {
        return Err(SampleError::ZeroK);
    }
    if schema.is_empty() {
        return Err(SampleError::EmptySchema);
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng::keyed(rng_seed, "kshot", 0));
    let mut counts: BTreeMap<TypeId, usize> = schema.iter().map(|t| (t.clone(), 0)).collect();
    let mut picked = Vec::new();
    for i in order {
        if counts.values().all(|&c| c >= k) {
            break;
        }
        let types: Vec<TypeId> = corpus[i].type_union().into_iter().filter(|t| counts.contains_key(t)).collect();
        if types.iter().any(|t| counts[t] < k) {
            for t in types {
                *counts.get_mut(&t).expect("schema type") += 1;
            }
            picked.push(i);
        }
    }
    picked.sort_unstable();
    let present: std::collections::HashSet<TypeId> = corpus.iter().flat_map(|s| s.type_union()).collect();
    Ok(SupportSet {
        sentences: picked.into_iter().map(|i| corpus[i].clone()).collect(),
        counts,
        unsatisfiable: schema.iter().filter(|t| !present.contains(*t)).cloned().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{tid, Sentence, TypedMention};

    fn ids(xs: &[&str]) -> Vec<TypeId> {
        xs.iter().map(|x| tid(x)).collect()
    }

    fn sentence(id: &str, text: &str, mentions: &[(&str, &[&str])]) -> AnnotatedSentence {
        AnnotatedSentence::ordered(
            Sentence::new(id, text).unwrap(),
            mentions.iter().map(|(s, t)| TypedMention::new(*s, ids(t)).unwrap()).collect(),
        )
        .unwrap()
    }

    fn rowling() -> AnnotatedSentence {
        sentence("r", "J.K. Rowling writes books.", &[("J.K. Rowling", &["person", "writer"])])
    }

    fn potter() -> AnnotatedSentence {
        sentence(
            "p",
            "Harry Potter was written by J.K. Rowling.",
            &[("J.K. Rowling", &["person"]), ("Harry Potter", &["creative_work"])],
        )
    }

    #[test]
    fn md_instance_for_rowling() {
        let inst = make_md_instance(&rowling(), &SamplerConfig::default(), 0).unwrap();
        assert_eq!(inst.prompt, "[MD] J.K. Rowling");
        assert_eq!(inst.target, "J.K. Rowling is person, writer.");
        assert_eq!(inst.input, "J.K. Rowling writes books.");
        let cfg = SamplerConfig { md_target_fraction: 0.5, ..SamplerConfig::default() };
        assert_eq!(make_md_instance(&rowling(), &cfg, 3).unwrap().target, "J.K. Rowling is person, writer.");
    }

    #[test]
    fn eg_with_explicit_types() {
        let s = potter();
        let inst = eg_instance_with(&s, &ids(&["person"]), vec![ConceptDescription::bare(tid("person")), ConceptDescription::bare(tid("location"))]).unwrap();
        assert_eq!(inst.prompt, "[EG] person; location");
        assert_eq!(inst.target, "J.K. Rowling is person.");
        let both = eg_instance_with(&s, &ids(&["person", "creative_work"]), vec![ConceptDescription::bare(tid("person")), ConceptDescription::bare(tid("creative_work"))]).unwrap();
        assert_eq!(both.target, "Harry Potter is creative_work; J.K. Rowling is person.");
    }

    #[test]
    fn sampled_negatives_avoid_sentence_types() {
        let s = potter();
        let dict = TypeDictionary::from_counts(
            ["person", "creative_work", "location", "city", "date", "org"].iter().map(|t| (tid(t), 9)),
            5,
        );
        for key in 0..500 {
            let d = draw_types(&s, &dict, &SamplerConfig::default(), key).unwrap();
            assert!(!d.positives.is_empty() && d.positives.len() <= 5);
            assert!(d.negatives.len() <= 3);
            assert!(d.negatives.iter().all(|t| !s.type_union().contains(t)));
        }
    }

    #[test]
    fn finetune_instance_lists_whole_schema() {
        let schema = ids(&["person", "location", "corporation", "product", "creative-work", "group"]);
        let inst = make_finetune_instance(&rowling(), &schema, &DescriptionMap::default()).unwrap();
        assert_eq!(inst.prompt, "[EG] person; location; corporation; product; creative-work; group");
        assert_eq!(inst.target, "J.K. Rowling is person.");
        let none = make_finetune_instance(&rowling(), &ids(&["location"]), &DescriptionMap::default()).unwrap();
        assert_eq!(none.target, "");
    }

    #[test]
    fn kshot_single_type_sentences() {
        let corpus: Vec<AnnotatedSentence> = (0..12)
            .map(|i| {
                let t = ["a", "b", "c"][i % 3];
                sentence(&i.to_string(), "x y", &[("x", &[t])])
            })
            .collect();
        let support = sample_kshot(&corpus, 1, &ids(&["a", "b", "c", "d"]), 5).unwrap();
        assert_eq!(support.sentences.len(), 3);
        assert_eq!(support.unsatisfiable, ids(&["d"]));
        assert!(support.counts.values().take(3).all(|&c| c == 1));
    }
}
