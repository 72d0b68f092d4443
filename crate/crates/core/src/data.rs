//! Shared domain vocabulary: sentences, typed mentions, type dictionaries,
//! prompts and target sequences.
//!
//! All values are immutable once constructed. Character offsets everywhere in
//! this crate count Unicode scalar values, never bytes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Reserved type/concept for unknown or undescribable entities.
pub const OTHER: &str = "other";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DataError {
    #[error("sentence text is empty")]
    EmptyText,
    #[error("mention surface is empty")]
    EmptySurface,
    #[error("mention surface {0:?} has leading or trailing whitespace")]
    UntrimmedSurface(String),
    #[error("mention {0:?} has no types")]
    NoTypes(String),
    #[error("mention {surface:?} lists type {type_id:?} twice")]
    DuplicateType { surface: String, type_id: String },
    #[error("type identifier is empty")]
    EmptyTypeId,
    #[error("surface {0:?} does not occur in the sentence")]
    SurfaceAbsent(String),
    #[error("prompt has no entries")]
    EmptyPrompt,
    #[error("prompt lists {0:?} twice")]
    DuplicatePromptEntry(String),
    #[error("description of {type_id:?} lists concept {concept:?} twice")]
    DuplicateConcept { type_id: String, concept: String },
    #[error("target pair for {0:?} has no labels")]
    EmptyLabels(String),
    #[error("entity-generation pair for {0:?} must carry exactly one type")]
    MultiLabelEg(String),
}

/// An entity type or concept identifier.
///
/// Construction trims and collapses internal whitespace to single spaces. Case
/// is preserved; case folding is applied where knowledge-base labels are
/// ingested (see [`crate::corpus::truncate_type_name`]).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TypeId(String);

impl TypeId {
    pub fn new(raw: &str) -> Result<Self, DataError> {
        let normalized = raw.split_whitespace().collect::<Vec<_>>().join(" ");
        if normalized.is_empty() {
            return Err(DataError::EmptyTypeId);
        }
        Ok(Self(normalized))
    }

    /// Lower-cased variant used for knowledge-base labels.
    pub fn folded(raw: &str) -> Result<Self, DataError> {
        Self::new(&raw.to_lowercase())
    }

    pub fn other() -> Self {
        Self(OTHER.to_string())
    }

    pub fn is_other(&self) -> bool {
        self.0 == OTHER
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for TypeId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl Serialize for TypeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for TypeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        TypeId::new(&raw).map_err(serde::de::Error::custom)
    }
}

/// Convenience for tests and fixtures; panics on an empty identifier.
pub fn tid(raw: &str) -> TypeId {
    TypeId::new(raw).expect("non-empty type identifier")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub text: String,
}

impl Sentence {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, DataError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DataError::EmptyText);
        }
        Ok(Self { id: id.into(), text })
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypedMention {
    pub surface: String,
    pub types: Vec<TypeId>,
}

impl TypedMention {
    pub fn new(surface: impl Into<String>, types: Vec<TypeId>) -> Result<Self, DataError> {
        let mention = Self {
            surface: surface.into(),
            types,
        };
        mention.check()?;
        Ok(mention)
    }

    fn check(&self) -> Result<(), DataError> {
        if self.surface.is_empty() {
            return Err(DataError::EmptySurface);
        }
        if self.surface.trim() != self.surface {
            return Err(DataError::UntrimmedSurface(self.surface.clone()));
        }
        if self.types.is_empty() {
            return Err(DataError::NoTypes(self.surface.clone()));
        }
        let mut seen = HashSet::new();
        for t in &self.types {
            if !seen.insert(t) {
                return Err(DataError::DuplicateType {
                    surface: self.surface.clone(),
                    type_id: t.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn has_type(&self, t: &TypeId) -> bool {
        self.types.contains(t)
    }
}

/// One sentence with its typed mentions, in order of first appearance.
///
/// Serializes to the corpus JSONL record
/// `{"id": .., "text": .., "mentions": [{"surface": .., "types": [..]}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    #[serde(flatten)]
    pub sentence: Sentence,
    #[serde(default)]
    pub mentions: Vec<TypedMention>,
}

impl AnnotatedSentence {
    /// Builds a sentence and sorts its mentions by [`mention_order_key`].
    pub fn ordered(sentence: Sentence, mut mentions: Vec<TypedMention>) -> Result<Self, DataError> {
        let mut keyed = Vec::with_capacity(mentions.len());
        for m in mentions.drain(..) {
            let key = mention_order_key(&sentence.text, &m.surface)?;
            keyed.push((key, m));
        }
        keyed.sort_by_key(|(key, _)| *key);
        Ok(Self {
            sentence,
            mentions: keyed.into_iter().map(|(_, m)| m).collect(),
        })
    }

    pub fn id(&self) -> &str {
        &self.sentence.id
    }

    pub fn text(&self) -> &str {
        &self.sentence.text
    }

    /// Distinct types over all mentions, in first-seen order.
    pub fn type_union(&self) -> Vec<TypeId> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for m in &self.mentions {
            for t in &m.types {
                if seen.insert(t.clone()) {
                    out.push(t.clone());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    EmptyText,
    InvalidMention,
    SurfaceNotFound,
    Order,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Index of the offending mention, when one is to blame.
    pub mention: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    Ok,
    Violation(Violation),
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        matches!(self, Validation::Ok)
    }
}

/// Checks every [`AnnotatedSentence`] invariant and reports the first one
/// that fails.
pub fn validate_annotated_sentence(candidate: &AnnotatedSentence) -> Validation {
    let violation = |kind, mention, detail: String| {
        Validation::Violation(Violation {
            kind,
            mention,
            detail,
        })
    };
    if candidate.text().trim().is_empty() {
        return violation(ViolationKind::EmptyText, None, "sentence text is empty".into());
    }
    let mut previous: Option<(usize, isize)> = None;
    for (i, m) in candidate.mentions.iter().enumerate() {
        if let Err(e) = m.check() {
            return violation(ViolationKind::InvalidMention, Some(i), e.to_string());
        }
        let key = match mention_order_key(candidate.text(), &m.surface) {
            Ok(key) => key,
            Err(e) => return violation(ViolationKind::SurfaceNotFound, Some(i), e.to_string()),
        };
        if let Some(prev) = previous {
            if key < prev {
                return violation(
                    ViolationKind::Order,
                    Some(i),
                    format!("mention {:?} appears before its predecessor", m.surface),
                );
            }
        }
        previous = Some(key);
    }
    Validation::Ok
}

/// Character index of the first occurrence of `surface` in `text`, paired
/// with the negated surface length so that longer surfaces sort first on
/// ties.
pub fn mention_order_key(text: &str, surface: &str) -> Result<(usize, isize), DataError> {
    if surface.is_empty() {
        return Err(DataError::EmptySurface);
    }
    let byte = text
        .find(surface)
        .ok_or_else(|| DataError::SurfaceAbsent(surface.to_string()))?;
    let start = text[..byte].chars().count();
    Ok((start, -(surface.chars().count() as isize)))
}

/// Entity type collection with instance counts. `other` is always present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeDictionary {
    entries: BTreeMap<TypeId, usize>,
}

impl Default for TypeDictionary {
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(TypeId::other(), 0);
        Self { entries }
    }
}

impl TypeDictionary {
    /// Keeps entries whose count reaches `min_instances`; `other` is always kept.
    pub fn from_counts(counts: impl IntoIterator<Item = (TypeId, usize)>, min_instances: usize) -> Self {
        let mut dict = Self::default();
        for (t, n) in counts {
            if t.is_other() {
                *dict.entries.entry(t).or_default() += n;
            } else if n >= min_instances {
                dict.entries.insert(t, n);
            }
        }
        dict
    }

    /// Dictionary over the types used in a corpus, counting one instance per
    /// mention.
    pub fn from_corpus<'a>(corpus: impl IntoIterator<Item = &'a AnnotatedSentence>, min_instances: usize) -> Self {
        let mut counts: BTreeMap<TypeId, usize> = BTreeMap::new();
        for s in corpus {
            for m in &s.mentions {
                for t in &m.types {
                    *counts.entry(t.clone()).or_default() += 1;
                }
            }
        }
        Self::from_counts(counts, min_instances)
    }

    pub fn contains(&self, t: &TypeId) -> bool {
        self.entries.contains_key(t)
    }

    pub fn count(&self, t: &TypeId) -> Option<usize> {
        self.entries.get(t).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All entries in identifier order, including `other`.
    pub fn iter(&self) -> impl Iterator<Item = (&TypeId, usize)> {
        self.entries.iter().map(|(t, n)| (t, *n))
    }

    /// Non-reserved types in identifier order.
    pub fn types(&self) -> impl Iterator<Item = &TypeId> {
        self.entries.keys().filter(|t| !t.is_other())
    }
}

/// An entity type with its describing concepts. An empty concept list means
/// the bare type name is used in prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptDescription {
    pub type_id: TypeId,
    pub concepts: Vec<TypeId>,
}

impl ConceptDescription {
    pub fn new(type_id: TypeId, concepts: Vec<TypeId>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for c in &concepts {
            if !seen.insert(c) {
                return Err(DataError::DuplicateConcept {
                    type_id: type_id.to_string(),
                    concept: c.to_string(),
                });
            }
        }
        Ok(Self { type_id, concepts })
    }

    pub fn bare(type_id: TypeId) -> Self {
        Self {
            type_id,
            concepts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "MD")]
    MentionDescribing,
    #[serde(rename = "EG")]
    EntityGeneration,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::MentionDescribing => "MD",
            Task::EntityGeneration => "EG",
        })
    }
}

/// Mention-describing prompt: the mentions whose concepts are requested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptMd {
    targets: Vec<String>,
}

impl PromptMd {
    pub fn new(targets: Vec<String>) -> Result<Self, DataError> {
        if targets.is_empty() {
            return Err(DataError::EmptyPrompt);
        }
        let mut seen = HashSet::new();
        for t in &targets {
            if !seen.insert(t.as_str()) {
                return Err(DataError::DuplicatePromptEntry(t.clone()));
            }
        }
        Ok(Self { targets })
    }

    pub fn targets(&self) -> &[String] {
        &self.targets
    }
}

/// Entity-generation prompt: the requested types with their descriptions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptEg {
    entries: Vec<ConceptDescription>,
}

impl PromptEg {
    pub fn new(entries: Vec<ConceptDescription>) -> Result<Self, DataError> {
        if entries.is_empty() {
            return Err(DataError::EmptyPrompt);
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(&e.type_id) {
                return Err(DataError::DuplicatePromptEntry(e.type_id.to_string()));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ConceptDescription] {
        &self.entries
    }

    pub fn types(&self) -> impl Iterator<Item = &TypeId> {
        self.entries.iter().map(|e| &e.type_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetPair {
    pub surface: String,
    pub labels: Vec<TypeId>,
}

impl TargetPair {
    pub fn new(surface: impl Into<String>, labels: Vec<TypeId>) -> Self {
        Self {
            surface: surface.into(),
            labels,
        }
    }
}

/// Structured form of a generated or gold output sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSequence {
    pub task: Task,
    pub pairs: Vec<TargetPair>,
}

impl TargetSequence {
    pub fn new(task: Task, pairs: Vec<TargetPair>) -> Result<Self, DataError> {
        for p in &pairs {
            if p.labels.is_empty() {
                return Err(DataError::EmptyLabels(p.surface.clone()));
            }
            if task == Task::EntityGeneration && p.labels.len() != 1 {
                return Err(DataError::MultiLabelEg(p.surface.clone()));
            }
        }
        Ok(Self { task, pairs })
    }

    pub fn empty(task: Task) -> Self {
        Self {
            task,
            pairs: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn annotated(text: &str, mentions: &[(&str, &[&str])]) -> AnnotatedSentence {
        AnnotatedSentence {
            sentence: Sentence::new("s", text).unwrap(),
            mentions: mentions
                .iter()
                .map(|(s, ts)| TypedMention::new(*s, ts.iter().map(|t| tid(t)).collect()).unwrap())
                .collect(),
        }
    }

    #[test]
    fn rowling_sentence_is_valid() {
        let s = annotated("J.K. Rowling writes books.", &[("J.K. Rowling", &["person", "writer"])]);
        assert_eq!(validate_annotated_sentence(&s), Validation::Ok);
    }

    #[test]
    fn absent_surface_is_reported() {
        let s = annotated("abc", &[("xyz", &["person"])]);
        match validate_annotated_sentence(&s) {
            Validation::Violation(v) => {
                assert_eq!(v.kind, ViolationKind::SurfaceNotFound);
                assert_eq!(v.mention, Some(0));
            }
            Validation::Ok => panic!("expected violation"),
        }
    }

    #[test]
    fn out_of_order_mentions_are_reported() {
        let s = annotated("a b a", &[("b", &["t2"]), ("a", &["t1"])]);
        match validate_annotated_sentence(&s) {
            Validation::Violation(v) => {
                assert_eq!(v.kind, ViolationKind::Order);
                assert_eq!(v.mention, Some(1));
            }
            Validation::Ok => panic!("expected violation"),
        }
    }

    #[test]
    fn order_key_counts_characters() {
        assert_eq!(mention_order_key("Chris Hill was in China", "China").unwrap(), (18, -5));
        assert_eq!(mention_order_key("aa", "aa").unwrap(), (0, -2));
        assert!(matches!(
            mention_order_key("x y x", "nope"),
            Err(DataError::SurfaceAbsent(_))
        ));
        // multi-byte characters count once
        assert_eq!(mention_order_key("Zürich und Köln", "Köln").unwrap(), (11, -4));
    }

    #[test]
    fn nested_surfaces_put_longer_first() {
        let s = AnnotatedSentence::ordered(
            Sentence::new("s", "New York City is big").unwrap(),
            vec![
                TypedMention::new("New York", vec![tid("state")]).unwrap(),
                TypedMention::new("New York City", vec![tid("city")]).unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(s.mentions[0].surface, "New York City");
        assert!(validate_annotated_sentence(&s).is_ok());
    }

    #[test]
    fn mention_invariants() {
        assert!(TypedMention::new(" x", vec![tid("a")]).is_err());
        assert!(TypedMention::new("x", vec![]).is_err());
        assert!(TypedMention::new("x", vec![tid("a"), tid("a")]).is_err());
        assert!(Sentence::new("s", "   ").is_err());
    }

    #[test]
    fn type_ids_normalize_whitespace_and_keep_case() {
        assert_eq!(tid("  state   award ").as_str(), "state award");
        assert_eq!(tid("GPE").as_str(), "GPE");
        assert_eq!(TypeId::folded("State Award").unwrap().as_str(), "state award");
        assert!(TypeId::new(" ").is_err());
    }

    #[test]
    fn dictionary_always_has_other() {
        let d = TypeDictionary::from_counts(vec![(tid("human"), 6), (tid("asteroid family"), 4)], 5);
        assert!(d.contains(&tid("human")));
        assert!(!d.contains(&tid("asteroid family")));
        assert!(d.contains(&TypeId::other()));
        assert_eq!(d.types().count(), 1);
    }

    #[test]
    fn prompts_reject_duplicates() {
        assert!(PromptMd::new(vec![]).is_err());
        assert!(PromptMd::new(vec!["a".into(), "a".into()]).is_err());
        assert!(PromptEg::new(vec![ConceptDescription::bare(tid("a")), ConceptDescription::bare(tid("a"))]).is_err());
        assert!(TargetSequence::new(
            Task::EntityGeneration,
            vec![TargetPair::new("x", vec![tid("a"), tid("b")])]
        )
        .is_err());
    }

    #[test]
    fn jsonl_schema() {
        let s = annotated("J.K. Rowling writes books.", &[("J.K. Rowling", &["person", "writer"])]);
        let line = serde_json::to_string(&s).unwrap();
        assert_eq!(
            line,
            r#"{"id":"s","text":"J.K. Rowling writes books.","mentions":[{"surface":"J.K. Rowling","types":["person","writer"]}]}"#
        );
        let back: AnnotatedSentence = serde_json::from_str(&line).unwrap();
        assert_eq!(back, s);
    }
}
