//! Strict span scoring: a prediction counts only when its sentence, type,
//! start and end all equal a gold span. Micro-averaged over all sentences.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::serialize_target;
use crate::data::{AnnotatedSentence, TargetPair, TargetSequence, Task, TypeId};
use crate::locate::{locate, SentenceSpans, SpanPrediction};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("sentence {0:?} appears more than once in the {1} stream")]
    DuplicateId(String, &'static str),
    #[error("sentence {0:?} is in the {1} stream but not the other")]
    Unpaired(String, &'static str),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
}

impl Counts {
    fn add(&mut self, other: Counts) {
        self.gold += other.gold;
        self.predicted += other.predicted;
        self.matched += other.matched;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(c: Counts) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(c.matched, c.predicted);
        let recall = ratio(c.matched, c.gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    #[serde(flatten)]
    pub scores: Prf,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    pub per_type: BTreeMap<TypeId, TypeScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<RunMeta>,
}

impl EvalReport {
    fn from_counts(total: Counts, per_type: BTreeMap<TypeId, Counts>) -> Self {
        let overall = Prf::from_counts(total);
        Self {
            precision: overall.precision,
            recall: overall.recall,
            f1: overall.f1,
            counts: total,
            per_type: per_type
                .into_iter()
                .map(|(t, counts)| {
                    (
                        t,
                        TypeScore {
                            scores: Prf::from_counts(counts),
                            counts,
                        },
                    )
                })
                .collect(),
            run: None,
        }
    }
}

fn index_by_id<'a>(
    stream: &'a [SentenceSpans],
    name: &'static str,
) -> Result<HashMap<&'a str, &'a [SpanPrediction]>, ScoreError> {
    let mut map = HashMap::with_capacity(stream.len());
    for s in stream {
        if map.insert(s.id.as_str(), s.spans.as_slice()).is_some() {
            return Err(ScoreError::DuplicateId(s.id.clone(), name));
        }
    }
    Ok(map)
}

type SpanKey<'a> = (&'a TypeId, usize, usize);

fn multiset<'a>(spans: &'a [SpanPrediction]) -> HashMap<SpanKey<'a>, usize> {
    let mut m = HashMap::new();
    for s in spans {
        *m.entry((&s.type_id, s.start, s.end)).or_insert(0) += 1;
    }
    m
}

/// Scores predictions against gold. Both streams must cover the same
/// sentence ids; order is irrelevant.
pub fn score(gold: &[SentenceSpans], pred: &[SentenceSpans]) -> Result<EvalReport, ScoreError> {
    let gold_by_id = index_by_id(gold, "gold")?;
    let pred_by_id = index_by_id(pred, "prediction")?;
    for id in pred_by_id.keys() {
        if !gold_by_id.contains_key(id) {
            return Err(ScoreError::Unpaired(id.to_string(), "prediction"));
        }
    }
    let mut total = Counts::default();
    let mut per_type: BTreeMap<TypeId, Counts> = BTreeMap::new();
    for (id, gold_spans) in &gold_by_id {
        let pred_spans = pred_by_id
            .get(id)
            .ok_or_else(|| ScoreError::Unpaired(id.to_string(), "gold"))?;
        let g = multiset(gold_spans);
        let p = multiset(pred_spans);
        for ((t, _, _), n) in &g {
            per_type.entry((*t).clone()).or_default().gold += n;
        }
        for (key, n) in &p {
            let entry = per_type.entry(key.0.clone()).or_default();
            entry.predicted += n;
            // each gold span absorbs at most one identical prediction
            let matched = (*n).min(g.get(key).copied().unwrap_or(0));
            entry.matched += matched;
        }
    }
    for c in per_type.values() {
        total.add(*c);
    }
    Ok(EvalReport::from_counts(total, per_type))
}

/// Entity-generation gold target for a sentence restricted to `schema`: one
/// clause per (mention, schema type), mentions in sentence order.
pub fn gold_target(sentence: &AnnotatedSentence, schema: &[TypeId]) -> TargetSequence {
    let mut pairs = Vec::new();
    for m in &sentence.mentions {
        for t in &m.types {
            if schema.contains(t) {
                pairs.push(TargetPair::new(m.surface.clone(), vec![t.clone()]));
            }
        }
    }
    TargetSequence {
        task: Task::EntityGeneration,
        pairs,
    }
}

/// Gold spans obtained by locating the gold target, so that gold and
/// predictions share the same offset convention.
pub fn gold_spans(sentence: &AnnotatedSentence, schema: &[TypeId]) -> SentenceSpans {
    let located = locate(sentence.text(), &gold_target(sentence, schema));
    SentenceSpans {
        id: sentence.id().to_string(),
        spans: located.spans,
    }
}

/// Serialized gold target, as a model would ideally generate it.
pub fn gold_generation(sentence: &AnnotatedSentence, schema: &[TypeId]) -> String {
    serialize_target(&gold_target(sentence, schema))
}
