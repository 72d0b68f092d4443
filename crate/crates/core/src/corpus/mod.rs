//! Distantly supervised corpus construction from a knowledge-base dump and an
//! encyclopedia page dump.
//!
//! Two passes. The first builds the [`TypeDictionary`] from the knowledge
//! base: every item's `instance_of`, `subclass_of` and `occupation` values,
//! head-word truncated, counted once per item, rare types dropped. The second
//! harvests mentions from each page (anchors plus frequent self-mentions of
//! the page's own item), types them through the dictionary, splits sentences
//! and keeps the sentences that carry at least one mention.
//!
//! Pages are independent and may be processed on several workers; output is
//! always merged back in input order.

mod split;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::surface_round_trips;
use crate::data::{validate_annotated_sentence, AnnotatedSentence, Sentence, TypeDictionary, TypeId, TypedMention};
use crate::jsonl::{self, JsonlError};
use crate::locate::char_slice;

pub use split::{split_sentences, ABBREVIATIONS};

/// Knowledge-base JSONL record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbItem {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub instance_of: Vec<String>,
    #[serde(default)]
    pub subclass_of: Vec<String>,
    #[serde(default)]
    pub occupation: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeProperty {
    InstanceOf,
    SubclassOf,
    Occupation,
}

impl KbItem {
    /// The type-bearing property values, in property order.
    pub fn type_claims(&self) -> impl Iterator<Item = (TypeProperty, &str)> {
        [
            (TypeProperty::InstanceOf, &self.instance_of),
            (TypeProperty::SubclassOf, &self.subclass_of),
            (TypeProperty::Occupation, &self.occupation),
        ]
        .into_iter()
        .flat_map(|(p, values)| values.iter().map(move |v| (p, v.as_str())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub surface: String,
    /// Item id of the link target.
    pub target: String,
    /// Character offset of the surface in the page text.
    pub offset: usize,
}

/// Page JSONL record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WikiPage {
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub anchors: Vec<Anchor>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub min_type_instances: usize,
    pub max_type_tokens: usize,
    pub top_np_count: usize,
    pub preposition_stoplist: Vec<String>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            min_type_instances: 5,
            max_type_tokens: 3,
            top_np_count: 3,
            preposition_stoplist: ["of", "in", "for", "on", "at", "by", "with", "from", "to"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid build config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl BuildConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.min_type_instances < 1 {
            return Err(CorpusError::Config("min_type_instances must be at least 1"));
        }
        if self.max_type_tokens < 1 {
            return Err(CorpusError::Config("max_type_tokens must be at least 1"));
        }
        Ok(())
    }
}

/// Lower-cases a type label and shortens labels longer than
/// `max_type_tokens` to their head words: the tokens before the first
/// stoplisted preposition, capped at `max_type_tokens`.
pub fn truncate_type_name(name: &str, cfg: &BuildConfig) -> Option<TypeId> {
    let lowered = name.to_lowercase();
    let tokens: Vec<&str> = lowered.split_whitespace().collect();
    if tokens.is_empty() {
        return None;
    }
    let kept: &[&str] = if tokens.len() <= cfg.max_type_tokens {
        &tokens
    } else {
        let head_end = tokens
            .iter()
            .position(|t| cfg.preposition_stoplist.iter().any(|p| p == t))
            .filter(|&p| p > 0)
            .unwrap_or(tokens.len());
        &tokens[..head_end.min(cfg.max_type_tokens)]
    };
    TypeId::new(&kept.join(" ")).ok()
}

/// Skipped-record tally from [`build_type_dictionary`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionaryDiagnostics {
    pub items: usize,
    pub malformed: usize,
    pub duplicate_ids: usize,
}

/// Counts, per truncated type, the distinct items claiming it and drops types
/// below `min_type_instances`.
pub fn build_type_dictionary<E>(
    items: impl IntoIterator<Item = Result<KbItem, E>>,
    cfg: &BuildConfig,
) -> (TypeDictionary, DictionaryDiagnostics) {
    let mut diag = DictionaryDiagnostics::default();
    let mut seen_ids = std::collections::HashSet::new();
    let mut counts: BTreeMap<TypeId, usize> = BTreeMap::new();
    for item in items {
        let Ok(item) = item else {
            diag.malformed += 1;
            continue;
        };
        if item.id.trim().is_empty() {
            diag.malformed += 1;
            continue;
        }
        if !seen_ids.insert(item.id.clone()) {
            diag.duplicate_ids += 1;
            continue;
        }
        diag.items += 1;
        let types: BTreeSet<TypeId> = item
            .type_claims()
            .filter_map(|(_, v)| truncate_type_name(v, cfg))
            .collect();
        for t in types {
            *counts.entry(t).or_default() += 1;
        }
    }
    (TypeDictionary::from_counts(counts, cfg.min_type_instances), diag)
}

#[derive(Debug, Clone)]
struct KbEntry {
    label: String,
    aliases: Vec<String>,
    types: Vec<TypeId>,
}

/// Item lookup used while harvesting, with types already resolved against
/// the dictionary.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    items: HashMap<String, KbEntry>,
    by_label: HashMap<String, String>,
}

impl KnowledgeBase {
    pub fn new<'a>(items: impl IntoIterator<Item = &'a KbItem>, dict: &TypeDictionary, cfg: &BuildConfig) -> Self {
        let mut kb = Self::default();
        for item in items {
            if kb.items.contains_key(&item.id) {
                continue;
            }
            let mut types: Vec<TypeId> = Vec::new();
            for (_, v) in item.type_claims() {
                if let Some(t) = truncate_type_name(v, cfg) {
                    if !t.is_other() && dict.contains(&t) && !types.contains(&t) {
                        types.push(t);
                    }
                }
            }
            kb.by_label.entry(item.label.clone()).or_insert_with(|| item.id.clone());
            kb.items.insert(
                item.id.clone(),
                KbEntry {
                    label: item.label.clone(),
                    aliases: item.aliases.clone(),
                    types,
                },
            );
        }
        kb
    }

    /// Dictionary types of an item; `["other"]` for unknown or untyped items.
    pub fn mention_types(&self, item_id: &str) -> Vec<TypeId> {
        match self.items.get(item_id) {
            Some(e) if !e.types.is_empty() => e.types.clone(),
            _ => vec![TypeId::other()],
        }
    }

    pub fn item_for_title(&self, title: &str) -> Option<&str> {
        self.by_label.get(title).map(String::as_str)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestDiagnostics {
    pub bad_anchors: usize,
    pub self_mentions: usize,
    pub cross_sentence_mentions: usize,
    pub unsafe_surfaces: usize,
    pub sentences_without_mentions: usize,
}

impl HarvestDiagnostics {
    fn absorb(&mut self, o: &HarvestDiagnostics) {
        self.bad_anchors += o.bad_anchors;
        self.self_mentions += o.self_mentions;
        self.cross_sentence_mentions += o.cross_sentence_mentions;
        self.unsafe_surfaces += o.unsafe_surfaces;
        self.sentences_without_mentions += o.sentences_without_mentions;
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    start: usize,
    end: usize,
    surface: String,
    types: Vec<TypeId>,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Non-overlapping, word-bounded occurrences of `needle` as character spans.
fn word_occurrences(chars: &[char], needle: &str) -> Vec<(usize, usize)> {
    let pat: Vec<char> = needle.chars().collect();
    let mut out = Vec::new();
    if pat.is_empty() || pat.len() > chars.len() {
        return out;
    }
    let mut i = 0;
    while i + pat.len() <= chars.len() {
        let end = i + pat.len();
        let bounded = (i == 0 || !is_word_char(chars[i - 1])) && (end == chars.len() || !is_word_char(chars[end]));
        if bounded && chars[i..end] == pat[..] {
            out.push((i, end));
            i = end;
        } else {
            i += 1;
        }
    }
    out
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Turns one page into annotated sentences.
pub fn harvest_mentions(page: &WikiPage, kb: &KnowledgeBase, cfg: &BuildConfig) -> (Vec<AnnotatedSentence>, HarvestDiagnostics) {
    let mut diag = HarvestDiagnostics::default();
    let chars: Vec<char> = page.text.chars().collect();
    let mut candidates: Vec<Candidate> = Vec::new();

    for a in &page.anchors {
        let end = a.offset + a.surface.chars().count();
        if a.surface.is_empty() || char_slice(&page.text, a.offset, end) != Some(a.surface.as_str()) {
            diag.bad_anchors += 1;
            continue;
        }
        candidates.push(Candidate {
            start: a.offset,
            end,
            surface: a.surface.clone(),
            types: kb.mention_types(&a.target),
        });
    }

    // Unlinked self-mentions: the page item's label and aliases, most frequent first.
    if let Some(item_id) = kb.item_for_title(&page.title) {
        let entry = &kb.items[item_id];
        let mut names: Vec<&str> = Vec::new();
        for n in std::iter::once(&entry.label).chain(&entry.aliases) {
            if !n.trim().is_empty() && !names.contains(&n.as_str()) {
                names.push(n);
            }
        }
        let mut ranked: Vec<(usize, Vec<(usize, usize)>)> = names
            .iter()
            .enumerate()
            .map(|(rank, n)| (rank, word_occurrences(&chars, n)))
            .filter(|(_, occ)| !occ.is_empty())
            .collect();
        ranked.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
        let types = kb.mention_types(item_id);
        // longer matches win where names nest ("J.K. Rowling" over "Rowling")
        let mut spans: Vec<((usize, usize), usize)> = ranked
            .into_iter()
            .take(cfg.top_np_count)
            .flat_map(|(rank, occ)| occ.into_iter().map(move |span| (span, rank)))
            .collect();
        spans.sort_by_key(|&((s, e), _)| (std::cmp::Reverse(e - s), s));
        for (span, rank) in spans {
            if candidates.iter().any(|c| overlaps((c.start, c.end), span)) {
                continue;
            }
            diag.self_mentions += 1;
            candidates.push(Candidate {
                start: span.0,
                end: span.1,
                surface: names[rank].to_string(),
                types: types.clone(),
            });
        }
    }
    candidates.sort_by_key(|c| (c.start, std::cmp::Reverse(c.end)));

    let mut out = Vec::new();
    let mut placed = vec![false; candidates.len()];
    for (idx, (s_start, s_end)) in split_sentences(&page.text).into_iter().enumerate() {
        let text: String = chars[s_start..s_end].iter().collect();
        let mut mentions = Vec::new();
        for (ci, c) in candidates.iter().enumerate() {
            if c.start < s_start || c.end > s_end {
                continue;
            }
            placed[ci] = true;
            if !surface_round_trips(&c.surface) {
                diag.unsafe_surfaces += 1;
                continue;
            }
            if let Ok(m) = TypedMention::new(c.surface.clone(), c.types.clone()) {
                mentions.push(m);
            }
        }
        if mentions.is_empty() {
            diag.sentences_without_mentions += 1;
            continue;
        }
        let Ok(sentence) = Sentence::new(format!("{}#{}", page.title, idx), text) else {
            continue;
        };
        let Ok(annotated) = AnnotatedSentence::ordered(sentence, mentions) else {
            continue;
        };
        debug_assert!(validate_annotated_sentence(&annotated).is_ok());
        out.push(annotated);
    }
    diag.cross_sentence_mentions += placed.iter().filter(|p| !**p).count();
    (out, diag)
}

/// Everything the builder produced.
#[derive(Debug, Clone)]
pub struct CorpusBuild {
    pub dictionary: TypeDictionary,
    pub sentences: Vec<AnnotatedSentence>,
    pub dictionary_diagnostics: DictionaryDiagnostics,
    pub harvest_diagnostics: HarvestDiagnostics,
    pub malformed_pages: usize,
}

/// Runs both passes over in-memory dumps, harvesting pages on up to `jobs`
/// workers.
pub fn build_corpus(
    items: Vec<Result<KbItem, JsonlError>>,
    pages: &[WikiPage],
    cfg: &BuildConfig,
    jobs: usize,
) -> Result<CorpusBuild, CorpusError> {
    cfg.validate()?;
    let good_items: Vec<KbItem> = items.iter().filter_map(|i| i.as_ref().ok().cloned()).collect();
    let (dictionary, dictionary_diagnostics) = build_type_dictionary(items, cfg);
    let kb = KnowledgeBase::new(&good_items, &dictionary, cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CorpusError::Pool(e.to_string()))?;
    let per_page: Vec<(Vec<AnnotatedSentence>, HarvestDiagnostics)> =
        pool.install(|| pages.par_iter().map(|p| harvest_mentions(p, &kb, cfg)).collect());
    let mut sentences = Vec::new();
    let mut harvest_diagnostics = HarvestDiagnostics::default();
    for (s, d) in per_page {
        sentences.extend(s);
        harvest_diagnostics.absorb(&d);
    }
    Ok(CorpusBuild {
        dictionary,
        sentences,
        dictionary_diagnostics,
        harvest_diagnostics,
        malformed_pages: 0,
    })
}

/// Reads both dumps from JSONL files and builds the corpus. Unreadable KB
/// lines are tallied; unreadable page lines are skipped and counted.
pub fn build_corpus_from_files(kb: &Path, pages: &Path, cfg: &BuildConfig, jobs: usize) -> Result<CorpusBuild, CorpusError> {
    let items = jsonl::read_lenient::<KbItem>(kb)?;
    let raw_pages = jsonl::read_lenient::<WikiPage>(pages)?;
    let malformed_pages = raw_pages.iter().filter(|p| p.is_err()).count();
    let pages: Vec<WikiPage> = raw_pages.into_iter().filter_map(Result::ok).collect();
    let mut build = build_corpus(items, &pages, cfg, jobs)?;
    build.malformed_pages = malformed_pages;
    Ok(build)
}
