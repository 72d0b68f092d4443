//! Flat-text wire format for prompts and target sequences.
//!
//! Writers are strict: clauses are joined by `"; "` and the last one ends with
//! `"."`. The reader is tolerant: it also accepts `". "` between clauses, a
//! `"."` after every clause, and `"t: {}"` for an undescribed type in prompts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    ConceptDescription, DataError, PromptEg, PromptMd, TargetPair, TargetSequence, Task, TypeId,
};

/// The literal pieces of the grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CodecConfig {
    pub md_descriptor: &'static str,
    pub eg_descriptor: &'static str,
    pub pair_separator_emit: &'static str,
    pub clause_terminator: &'static str,
    pub copula: &'static str,
    pub concept_separator: &'static str,
    pub type_desc_open: &'static str,
    pub type_desc_close: &'static str,
    pub type_list_separator: &'static str,
    pub type_desc_colon: &'static str,
}

impl CodecConfig {
    pub const STANDARD: CodecConfig = CodecConfig {
        md_descriptor: "[MD]",
        eg_descriptor: "[EG]",
        pair_separator_emit: "; ",
        clause_terminator: ".",
        copula: " is ",
        concept_separator: ", ",
        type_desc_open: "{",
        type_desc_close: "}",
        type_list_separator: "; ",
        type_desc_colon: ": ",
    };
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self::STANDARD
    }
}

/// Separators that make a surface or label ambiguous on the wire.
pub const RESERVED_SEPARATORS: [&str; 4] = [" is ", "; ", ", ", "."];

const CLAUSE_SEPARATOR_ALT: &str = ". ";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("prompt does not start with a task descriptor: {0:?}")]
    MissingDescriptor(String),
    #[error("malformed prompt entry {0:?}")]
    MalformedEntry(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// A clause the reader had to drop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub clause: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed {
    pub target: TargetSequence,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prompt {
    Md(PromptMd),
    Eg(PromptEg),
}

impl Prompt {
    pub fn task(&self) -> Task {
        match self {
            Prompt::Md(_) => Task::MentionDescribing,
            Prompt::Eg(_) => Task::EntityGeneration,
        }
    }
}

impl CodecConfig {
    pub fn serialize_prompt_md(&self, prompt: &PromptMd) -> String {
        format!(
            "{} {}",
            self.md_descriptor,
            prompt.targets().join(self.pair_separator_emit)
        )
    }

    pub fn serialize_prompt_eg(&self, prompt: &PromptEg) -> String {
        let entries: Vec<String> = prompt
            .entries()
            .iter()
            .map(|e| self.serialize_entry(e))
            .collect();
        format!(
            "{} {}",
            self.eg_descriptor,
            entries.join(self.type_list_separator)
        )
    }

    fn serialize_entry(&self, entry: &ConceptDescription) -> String {
        if entry.concepts.is_empty() {
            return entry.type_id.to_string();
        }
        let concepts: Vec<&str> = entry.concepts.iter().map(TypeId::as_str).collect();
        format!(
            "{}{}{}{}{}",
            entry.type_id,
            self.type_desc_colon,
            self.type_desc_open,
            concepts.join(self.concept_separator),
            self.type_desc_close
        )
    }

    /// `e1 is l1; e2 is l2, l3.`; an empty target serializes to `""`.
    pub fn serialize_target(&self, target: &TargetSequence) -> String {
        if target.pairs.is_empty() {
            return String::new();
        }
        let clauses: Vec<String> = target
            .pairs
            .iter()
            .map(|p| {
                let labels: Vec<&str> = p.labels.iter().map(TypeId::as_str).collect();
                format!(
                    "{}{}{}",
                    p.surface,
                    self.copula,
                    labels.join(self.concept_separator)
                )
            })
            .collect();
        let mut out = clauses.join(self.pair_separator_emit);
        out.push_str(self.clause_terminator);
        out
    }

    /// Reads model output back into pairs. Never fails: malformed clauses are
    /// dropped and reported.
    pub fn parse_generated(&self, task: Task, text: &str) -> Parsed {
        let mut pairs = Vec::new();
        let mut diagnostics = Vec::new();
        for clause in self.split_clauses(text) {
            match self.parse_clause(task, clause) {
                Ok(pair) => pairs.push(pair),
                Err(reason) => diagnostics.push(Diagnostic {
                    clause: clause.to_string(),
                    reason: reason.to_string(),
                }),
            }
        }
        Parsed {
            target: TargetSequence { task, pairs },
            diagnostics,
        }
    }

    fn split_clauses<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut clauses = Vec::new();
        for chunk in text.split(self.pair_separator_emit) {
            // ". " only ends a clause once the pending text holds a copula, so
            // abbreviations such as "J.K. Rowling" stay whole.
            let mut start = 0;
            for (pos, _) in chunk.match_indices(CLAUSE_SEPARATOR_ALT) {
                if pos < start {
                    continue;
                }
                if chunk[start..pos].contains(self.copula) {
                    clauses.push(&chunk[start..pos]);
                    start = pos + CLAUSE_SEPARATOR_ALT.len();
                }
            }
            clauses.push(&chunk[start..]);
        }
        clauses
            .into_iter()
            .map(|c| {
                let c = c.trim();
                c.strip_suffix(self.clause_terminator).unwrap_or(c).trim_end()
            })
            .filter(|c| !c.is_empty())
            .collect()
    }

    fn parse_clause(&self, task: Task, clause: &str) -> Result<TargetPair, &'static str> {
        // Labels never contain the copula; surfaces may.
        let at = clause.rfind(self.copula).ok_or("no copula")?;
        let surface = clause[..at].trim();
        let rhs = clause[at + self.copula.len()..].trim();
        if surface.is_empty() {
            return Err("empty mention");
        }
        if rhs.is_empty() {
            return Err("empty label");
        }
        let labels = match task {
            Task::EntityGeneration => vec![TypeId::new(rhs).map_err(|_| "empty label")?],
            Task::MentionDescribing => rhs
                .split(self.concept_separator)
                .map(|l| TypeId::new(l).map_err(|_| "empty label"))
                .collect::<Result<Vec<_>, _>>()?,
        };
        Ok(TargetPair::new(surface, labels))
    }

    pub fn parse_prompt(&self, text: &str) -> Result<Prompt, CodecError> {
        let text = text.trim();
        if let Some(rest) = text.strip_prefix(self.md_descriptor) {
            let targets: Vec<String> = rest
                .split(self.pair_separator_emit)
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect();
            return Ok(Prompt::Md(PromptMd::new(targets)?));
        }
        if let Some(rest) = text.strip_prefix(self.eg_descriptor) {
            let rest = rest.trim().trim_end_matches(';');
            let mut entries = Vec::new();
            for raw in rest.split(self.type_list_separator.trim_end()) {
                let raw = raw.trim();
                if raw.is_empty() {
                    continue;
                }
                entries.push(self.parse_entry(raw)?);
            }
            return Ok(Prompt::Eg(PromptEg::new(entries)?));
        }
        Err(CodecError::MissingDescriptor(text.chars().take(16).collect()))
    }

    fn parse_entry(&self, raw: &str) -> Result<ConceptDescription, CodecError> {
        let colon = self.type_desc_colon.trim_end();
        let Some((name, desc)) = raw.split_once(colon) else {
            return Ok(ConceptDescription::bare(TypeId::new(raw)?));
        };
        let inner = desc
            .trim()
            .strip_prefix(self.type_desc_open)
            .and_then(|d| d.strip_suffix(self.type_desc_close))
            .ok_or_else(|| CodecError::MalformedEntry(raw.to_string()))?;
        let concepts = inner
            .split(self.concept_separator.trim_end())
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .map(TypeId::new)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ConceptDescription::new(TypeId::new(name)?, concepts)?)
    }

    /// Whether a surface survives serialize→parse unchanged for both tasks,
    /// wherever it sits in a multi-clause target.
    pub fn surface_round_trips(&self, surface: &str) -> bool {
        if surface.is_empty() || surface.trim() != surface {
            return false;
        }
        let probe = |task: Task, labels: Vec<TypeId>| {
            let filler = TargetPair::new("x", vec![TypeId::other()]);
            let target = TargetSequence {
                task,
                pairs: vec![
                    filler.clone(),
                    TargetPair::new(surface, labels),
                    filler,
                ],
            };
            let parsed = self.parse_generated(task, &self.serialize_target(&target));
            parsed.diagnostics.is_empty() && parsed.target == target
        };
        let t = TypeId::other();
        probe(Task::EntityGeneration, vec![t.clone()])
            && probe(Task::MentionDescribing, vec![t.clone(), t])
    }
}

pub fn serialize_prompt_md(prompt: &PromptMd) -> String {
    CodecConfig::STANDARD.serialize_prompt_md(prompt)
}

pub fn serialize_prompt_eg(prompt: &PromptEg) -> String {
    CodecConfig::STANDARD.serialize_prompt_eg(prompt)
}

pub fn serialize_target(target: &TargetSequence) -> String {
    CodecConfig::STANDARD.serialize_target(target)
}

pub fn parse_generated(task: Task, text: &str) -> Parsed {
    CodecConfig::STANDARD.parse_generated(task, text)
}

pub fn parse_prompt(text: &str) -> Result<Prompt, CodecError> {
    CodecConfig::STANDARD.parse_prompt(text)
}

pub fn surface_round_trips(surface: &str) -> bool {
    CodecConfig::STANDARD.surface_round_trips(surface)
}

/// True when `s` contains none of [`RESERVED_SEPARATORS`].
pub fn is_separator_free(s: &str) -> bool {
    !RESERVED_SEPARATORS.iter().any(|sep| s.contains(sep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tid;

    fn eg(pairs: &[(&str, &str)]) -> TargetSequence {
        TargetSequence::new(
            Task::EntityGeneration,
            pairs.iter().map(|(s, t)| TargetPair::new(*s, vec![tid(t)])).collect(),
        )
        .unwrap()
    }

    fn desc(t: &str, cs: &[&str]) -> ConceptDescription {
        ConceptDescription::new(tid(t), cs.iter().map(|c| tid(c)).collect()).unwrap()
    }

    #[test]
    fn md_prompt() {
        let p = PromptMd::new(vec!["J.K. Rowling".into()]).unwrap();
        assert_eq!(serialize_prompt_md(&p), "[MD] J.K. Rowling");
        let p = PromptMd::new(vec!["Beijing".into(), "America".into()]).unwrap();
        assert_eq!(serialize_prompt_md(&p), "[MD] Beijing; America");
    }

    #[test]
    fn eg_prompt() {
        let p = PromptEg::new(vec![desc("person", &["actor", "writer"])]).unwrap();
        assert_eq!(serialize_prompt_eg(&p), "[EG] person: {actor, writer}");
        let p = PromptEg::new(vec![
            desc("GPE", &["state", "country", "city", "democracy", "republic", "community"]),
            desc("date", &[]),
        ])
        .unwrap();
        assert_eq!(
            serialize_prompt_eg(&p),
            "[EG] GPE: {state, country, city, democracy, republic, community}; date"
        );
        let p = PromptEg::new(vec![desc("person", &[])]).unwrap();
        assert_eq!(serialize_prompt_eg(&p), "[EG] person");
    }

    #[test]
    fn targets() {
        assert_eq!(serialize_target(&eg(&[("J.K. Rowling", "person")])), "J.K. Rowling is person.");
        assert_eq!(
            serialize_target(&eg(&[("China", "GPE"), ("a few days ago", "date")])),
            "China is GPE; a few days ago is date."
        );
        let md = TargetSequence::new(
            Task::MentionDescribing,
            vec![TargetPair::new("J.K. Rowling", vec![tid("person"), tid("writer")])],
        )
        .unwrap();
        assert_eq!(serialize_target(&md), "J.K. Rowling is person, writer.");
        assert_eq!(serialize_target(&TargetSequence::empty(Task::EntityGeneration)), "");
    }

    #[test]
    fn parse_accepts_period_separated_clauses() {
        let p = parse_generated(Task::EntityGeneration, "China is GPE. a few days ago is date.");
        assert!(p.diagnostics.is_empty());
        assert_eq!(p.target, eg(&[("China", "GPE"), ("a few days ago", "date")]));
        let p = parse_generated(Task::EntityGeneration, "Chris Hill is person.");
        assert_eq!(p.target, eg(&[("Chris Hill", "person")]));
    }

    #[test]
    fn parse_keeps_abbreviated_surfaces() {
        let p = parse_generated(Task::EntityGeneration, "J.K. Rowling is person.");
        assert_eq!(p.target, eg(&[("J.K. Rowling", "person")]));
        let p = parse_generated(Task::EntityGeneration, "China is GPE. J.K. Rowling is person.");
        assert_eq!(p.target, eg(&[("China", "GPE"), ("J.K. Rowling", "person")]));
    }

    #[test]
    fn parse_md_labels() {
        let p = parse_generated(Task::MentionDescribing, "Beijing is capital, city.");
        assert_eq!(p.target.pairs, vec![TargetPair::new("Beijing", vec![tid("capital"), tid("city")])]);
    }

    #[test]
    fn parse_splits_on_rightmost_copula() {
        let p = parse_generated(Task::EntityGeneration, "What is Love is work_of_art.");
        assert_eq!(p.target, eg(&[("What is Love", "work_of_art")]));
    }

    #[test]
    fn garbage_yields_diagnostics() {
        let p = parse_generated(Task::EntityGeneration, "garbled output with no copula");
        assert!(p.target.pairs.is_empty());
        assert_eq!(p.diagnostics.len(), 1);
        let p = parse_generated(Task::EntityGeneration, " is x; y is ; ok is t");
        assert_eq!(p.target, eg(&[("ok", "t")]));
        assert_eq!(p.diagnostics.len(), 2);
        let p = parse_generated(Task::EntityGeneration, "");
        assert!(p.target.pairs.is_empty() && p.diagnostics.is_empty());
    }

    #[test]
    fn duplicates_are_kept() {
        let p = parse_generated(Task::EntityGeneration, "a is t; a is t.");
        assert_eq!(p.target.pairs.len(), 2);
    }

    #[test]
    fn prompt_parsing_accepts_empty_braces() {
        let Prompt::Eg(p) = parse_prompt("[EG] GPE: {state, country}; date: {}").unwrap() else {
            panic!("expected EG prompt");
        };
        assert_eq!(p.entries(), &[desc("GPE", &["state", "country"]), desc("date", &[])]);
        let Prompt::Eg(q) = parse_prompt("[EG] GPE: {state, country}; date").unwrap() else {
            panic!("expected EG prompt");
        };
        assert_eq!(p, q);
        assert_eq!(serialize_prompt_eg(&q), "[EG] GPE: {state, country}; date");
        let Prompt::Md(m) = parse_prompt("[MD] Beijing; America").unwrap() else {
            panic!("expected MD prompt");
        };
        assert_eq!(m.targets(), &["Beijing".to_string(), "America".to_string()]);
        assert!(parse_prompt("person: {actor}").is_err());
    }

    #[test]
    fn round_trip_safety() {
        assert!(surface_round_trips("J.K. Rowling"));
        assert!(surface_round_trips("Chris Hill"));
        assert!(!surface_round_trips("a; b"));
        assert!(!surface_round_trips(" padded"));
        assert!(is_separator_free("Chris Hill"));
        assert!(!is_separator_free("J.K. Rowling"));
    }
}
