//! Maps parsed `(surface, type)` pairs back to character offsets.
//!
//! The k-th appearance of a surface in the generated pairs takes the k-th
//! non-overlapping occurrence of that surface in the sentence. Surfaces are
//! tracked independently, so spans of different surfaces may overlap.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{TargetPair, TargetSequence, TypeId};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub surface: String,
    #[serde(rename = "type")]
    pub type_id: TypeId,
    /// Inclusive character index.
    pub start: usize,
    /// Exclusive character index.
    pub end: usize,
}

/// Prediction JSONL record: `{"id": .., "spans": [..]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpans {
    pub id: String,
    pub spans: Vec<SpanPrediction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Located {
    pub spans: Vec<SpanPrediction>,
    /// Pairs whose surface ran out of occurrences.
    pub unlocated: Vec<TargetPair>,
}

/// Locates entity-generation pairs in `text`. Pairs are read in order; only
/// the first label of each pair is used.
pub fn locate(text: &str, parsed: &TargetSequence) -> Located {
    // byte offset -> char index, with a sentinel for the end of the text
    let char_at: Vec<usize> = {
        let mut table = vec![0; text.len() + 1];
        let mut n = 0;
        for (b, _) in text.char_indices() {
            table[b] = n;
            n += 1;
        }
        table[text.len()] = n;
        table
    };
    let mut resume: HashMap<&str, usize> = HashMap::new();
    let mut out = Located::default();
    for pair in &parsed.pairs {
        let Some(type_id) = pair.labels.first() else {
            out.unlocated.push(pair.clone());
            continue;
        };
        let surface = pair.surface.as_str();
        if surface.is_empty() {
            out.unlocated.push(pair.clone());
            continue;
        }
        let from = resume.get(surface).copied().unwrap_or(0);
        match text[from..].find(surface) {
            Some(rel) => {
                let b_start = from + rel;
                let b_end = b_start + surface.len();
                resume.insert(surface, b_end);
                out.spans.push(SpanPrediction {
                    surface: surface.to_string(),
                    type_id: type_id.clone(),
                    start: char_at[b_start],
                    end: char_at[b_end],
                });
            }
            None => {
                resume.insert(surface, text.len());
                out.unlocated.push(pair.clone());
            }
        }
    }
    out
}

/// Slices `text` by character indices.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b_start = indices.nth(start)?;
    let b_end = if end == start {
        b_start
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&text[b_start..b_end])
}
