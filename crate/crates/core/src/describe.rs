//! Type descriptions: which universal concepts characterize each entity type.
//!
//! Descriptions come from two places. During pretraining they are the types
//! that co-occur with a type on the same mention. At fine-tuning time the
//! model describes the illustrative mentions of each novel type, and those
//! mention descriptions are fused per type, unless too many of them came back
//! as `other`, in which case the type is used bare.

use std::collections::HashSet;
use std::path::Path;

use indexmap::{IndexMap, IndexSet};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{parse_generated, serialize_prompt_md};
use crate::data::{AnnotatedSentence, ConceptDescription, PromptMd, Task, TypeId};
use crate::generator::Generator;
use crate::jsonl::{self, JsonlError};
use crate::rng;

/// How the share of `other` among a type's mention descriptions is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OtherCounting {
    /// Fraction of descriptions that are exactly `["other"]`.
    #[default]
    PerDescription,
    /// Fraction of all concept labels, over all descriptions, equal to `other`.
    PerConcept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionConfig {
    pub max_concepts: usize,
    pub other_threshold: f64,
    pub rng_seed: u64,
    pub other_counting: OtherCounting,
}

impl Default for DescriptionConfig {
    fn default() -> Self {
        Self {
            max_concepts: 10,
            other_threshold: 0.5,
            rng_seed: 0,
            other_counting: OtherCounting::PerDescription,
        }
    }
}

#[derive(Debug, Error)]
pub enum DescribeError {
    #[error("invalid description config: {0}")]
    Config(&'static str),
    #[error("type {0:?} has no mention descriptions")]
    NoDescriptions(String),
    #[error("description map lists type {0:?} twice")]
    DuplicateType(String),
    #[error("description of {type_id:?} is invalid: {detail}")]
    InvalidEntry { type_id: String, detail: String },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

impl DescriptionConfig {
    pub fn validate(&self) -> Result<(), DescribeError> {
        if self.max_concepts < 1 {
            return Err(DescribeError::Config("max_concepts must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.other_threshold) {
            return Err(DescribeError::Config("other_threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Concepts a mention was described with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionDescription {
    pub surface: String,
    pub concepts: Vec<TypeId>,
}

impl MentionDescription {
    pub fn is_other_only(&self) -> bool {
        self.concepts.len() == 1 && self.concepts[0].is_other()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionEntry {
    pub concepts: Vec<TypeId>,
    /// Set when the filtering rule replaced the description by the bare type.
    pub filtered: bool,
}

/// DescriptionMap JSONL record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionRecord {
    #[serde(rename = "type")]
    pub type_id: TypeId,
    pub concepts: Vec<TypeId>,
    #[serde(default)]
    pub filtered: bool,
}

/// Type to full concept collection, in deterministic insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DescriptionMap {
    entries: IndexMap<TypeId, DescriptionEntry>,
}

impl DescriptionMap {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, t: &TypeId) -> Option<&DescriptionEntry> {
        self.entries.get(t)
    }

    pub fn concepts(&self, t: &TypeId) -> &[TypeId] {
        self.entries.get(t).map(|e| e.concepts.as_slice()).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TypeId, &DescriptionEntry)> {
        self.entries.iter()
    }

    /// Inserts an entry, dropping `other`, the type itself and repeats from
    /// its concepts.
    pub fn insert(&mut self, t: TypeId, concepts: impl IntoIterator<Item = TypeId>, filtered: bool) {
        let mut kept: IndexSet<TypeId> = IndexSet::new();
        for c in concepts {
            if !c.is_other() && c != t {
                kept.insert(c);
            }
        }
        self.entries.insert(t, DescriptionEntry { concepts: kept.into_iter().collect(), filtered });
    }

    /// Full description of `t`, bare if unknown.
    pub fn description(&self, t: &TypeId) -> ConceptDescription {
        ConceptDescription::new(t.clone(), self.concepts(t).to_vec()).expect("entries hold no duplicates")
    }

    /// Description of `t` capped at `max_concepts` by [`sample_concepts`].
    pub fn sampled(&self, t: &TypeId, cfg: &DescriptionConfig, draw_key: u64) -> ConceptDescription {
        sample_concepts(t, self.concepts(t), cfg, draw_key)
    }

    pub fn to_records(&self) -> Vec<DescriptionRecord> {
        self.entries
            .iter()
            .map(|(t, e)| DescriptionRecord { type_id: t.clone(), concepts: e.concepts.clone(), filtered: e.filtered })
            .collect()
    }

    /// Inverse of [`DescriptionMap::to_records`]. Files must not list a type
    /// twice or use `other` as a concept. A type may name itself, as
    /// hand-written descriptions sometimes do.
    pub fn from_records(records: Vec<DescriptionRecord>) -> Result<Self, DescribeError> {
        let mut map = Self::default();
        for r in records {
            let invalid = |detail: &str| DescribeError::InvalidEntry { type_id: r.type_id.to_string(), detail: detail.into() };
            if map.entries.contains_key(&r.type_id) {
                return Err(DescribeError::DuplicateType(r.type_id.to_string()));
            }
            if r.concepts.iter().any(TypeId::is_other) {
                return Err(invalid("concepts may not include `other`"));
            }
            if r.concepts.iter().collect::<HashSet<_>>().len() != r.concepts.len() {
                return Err(invalid("repeated concept"));
            }
            map.entries.insert(r.type_id, DescriptionEntry { concepts: r.concepts, filtered: r.filtered });
        }
        Ok(map)
    }

    pub fn read(path: &Path) -> Result<Self, DescribeError> {
        Self::from_records(jsonl::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), DescribeError> {
        Ok(jsonl::write(path, &self.to_records())?)
    }
}

/// For every type, the other types sharing a mention with it anywhere in the
/// corpus, in order of first co-occurrence. `other` is neither a key nor a
/// concept.
pub fn build_cooccurrence_descriptions<'a>(corpus: impl IntoIterator<Item = &'a AnnotatedSentence>) -> DescriptionMap {
    let mut acc: IndexMap<TypeId, IndexSet<TypeId>> = IndexMap::new();
    for s in corpus {
        for m in &s.mentions {
            for t in m.types.iter().filter(|t| !t.is_other()) {
                let set = acc.entry(t.clone()).or_default();
                for u in m.types.iter().filter(|u| !u.is_other() && *u != t) {
                    set.insert(u.clone());
                }
            }
        }
    }
    let mut map = DescriptionMap::default();
    for (t, concepts) in acc {
        map.insert(t, concepts, false);
    }
    map
}

/// Caps a concept collection at `max_concepts`. Larger collections yield a
/// seeded subset keyed on `(rng_seed, draw_key)`, kept in canonical order.
pub fn sample_concepts(type_id: &TypeId, full: &[TypeId], cfg: &DescriptionConfig, draw_key: u64) -> ConceptDescription {
    let concepts = if full.len() <= cfg.max_concepts {
        full.to_vec()
    } else {
        let mut rng = rng::keyed(cfg.rng_seed, "concepts", draw_key);
        let mut picked = sample(&mut rng, full.len(), cfg.max_concepts).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| full[i].clone()).collect()
    };
    ConceptDescription::new(type_id.clone(), concepts).expect("source collection holds no duplicates")
}

/// Per type, the union of its mention descriptions in first-seen order,
/// without `other`.
pub fn fuse_mention_descriptions(per_type: &IndexMap<TypeId, Vec<MentionDescription>>) -> DescriptionMap {
    let mut map = DescriptionMap::default();
    for (t, descs) in per_type {
        map.insert(t.clone(), descs.iter().flat_map(|d| d.concepts.iter().cloned()), false);
    }
    map
}

/// Share of `other` among a type's mention descriptions.
pub fn other_frequency(descs: &[MentionDescription], counting: OtherCounting) -> f64 {
    match counting {
        OtherCounting::PerDescription => {
            descs.iter().filter(|d| d.is_other_only()).count() as f64 / descs.len() as f64
        }
        OtherCounting::PerConcept => {
            let total: usize = descs.iter().map(|d| d.concepts.len()).sum();
            let other: usize = descs.iter().map(|d| d.concepts.iter().filter(|c| c.is_other()).count()).sum();
            if total == 0 {
                0.0
            } else {
                other as f64 / total as f64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterEntry {
    #[serde(rename = "type")]
    pub type_id: TypeId,
    pub other_frequency: f64,
    pub descriptions: usize,
    pub filtered: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub entries: Vec<FilterEntry>,
}

impl FilterReport {
    pub fn filtered_types(&self) -> impl Iterator<Item = &TypeId> {
        self.entries.iter().filter(|e| e.filtered).map(|e| &e.type_id)
    }
}

/// Fuses each type's mention descriptions, or falls back to the bare type
/// when its `other` frequency is strictly above the threshold.
pub fn apply_filtering(
    per_type: &IndexMap<TypeId, Vec<MentionDescription>>,
    cfg: &DescriptionConfig,
) -> Result<(DescriptionMap, FilterReport), DescribeError> {
    cfg.validate()?;
    let mut map = DescriptionMap::default();
    let mut report = FilterReport::default();
    for (t, descs) in per_type {
        if descs.is_empty() {
            return Err(DescribeError::NoDescriptions(t.to_string()));
        }
        let freq = other_frequency(descs, cfg.other_counting);
        let filtered = freq > cfg.other_threshold;
        if filtered {
            map.insert(t.clone(), Vec::new(), true);
        } else {
            let kept: Vec<&MentionDescription> = descs.iter().filter(|d| !d.is_other_only()).collect();
            map.insert(t.clone(), kept.into_iter().flat_map(|d| d.concepts.iter().cloned()), false);
        }
        report.entries.push(FilterEntry { type_id: t.clone(), other_frequency: freq, descriptions: descs.len(), filtered });
    }
    Ok((map, report))
}

/// Asks `model` to describe every schema-typed mention of the illustrative
/// sentences, one mention-describing prompt per sentence. A mention the model
/// leaves out counts as described by `other`.
pub fn collect_mention_descriptions(
    model: &dyn Generator,
    support: &[AnnotatedSentence],
    schema: &[TypeId],
) -> IndexMap<TypeId, Vec<MentionDescription>> {
    let mut per_type: IndexMap<TypeId, Vec<MentionDescription>> = schema.iter().map(|t| (t.clone(), Vec::new())).collect();
    for s in support {
        let relevant: Vec<_> = s.mentions.iter().filter(|m| m.types.iter().any(|t| schema.contains(t))).collect();
        let mut surfaces: Vec<String> = Vec::new();
        for m in &relevant {
            if !surfaces.contains(&m.surface) {
                surfaces.push(m.surface.clone());
            }
        }
        let Ok(prompt) = PromptMd::new(surfaces) else {
            continue;
        };
        let generated = model.generate(&serialize_prompt_md(&prompt), s.text());
        let parsed = parse_generated(Task::MentionDescribing, &generated).target;
        for m in relevant {
            let concepts = parsed
                .pairs
                .iter()
                .find(|p| p.surface == m.surface)
                .map(|p| p.labels.clone())
                .unwrap_or_else(|| vec![TypeId::other()]);
            for t in m.types.iter().filter(|t| schema.contains(t)) {
                per_type[t].push(MentionDescription { surface: m.surface.clone(), concepts: concepts.clone() });
            }
        }
    }
    per_type
}

/// Mention-describing construction over illustrative instances, with
/// filtering. Schema types without any illustrative mention stay bare.
pub fn build_md_descriptions(
    model: &dyn Generator,
    support: &[AnnotatedSentence],
    schema: &[TypeId],
    cfg: &DescriptionConfig,
) -> Result<(DescriptionMap, FilterReport), DescribeError> {
    let per_type = collect_mention_descriptions(model, support, schema);
    let (described, unseen): (IndexMap<_, _>, IndexMap<_, _>) = per_type.into_iter().partition(|(_, d)| !d.is_empty());
    let (mut map, report) = apply_filtering(&described, cfg)?;
    for t in unseen.into_keys() {
        map.insert(t, Vec::new(), false);
    }
    let mut ordered = DescriptionMap::default();
    for t in schema {
        if let Some(e) = map.get(t) {
            ordered.entries.insert(t.clone(), e.clone());
        }
    }
    Ok((ordered, report))
}
