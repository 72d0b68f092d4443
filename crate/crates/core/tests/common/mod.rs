//! Helpers shared by the integration tests and the acceptance target.
#![allow(dead_code)]

pub mod oracles;

use std::path::PathBuf;

use conceptner::data::{tid, AnnotatedSentence, TargetPair, TargetSequence, Task, TypeId};
use conceptner::jsonl;
use rand::seq::IndexedRandom;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    // resolves from either crate that includes this module
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

pub fn corpus20() -> Vec<AnnotatedSentence> {
    jsonl::read(&fixture("corpus20.jsonl")).unwrap()
}

pub fn schema5() -> Vec<TypeId> {
    std::fs::read_to_string(fixture("schema5.txt")).unwrap().lines().map(tid).collect()
}

const WORDS: &[&str] = &[
    "Rowling", "JK", "New", "York", "a", "few", "days", "ago", "is", "this", "Zürich", "東京", "O'Neil", "Jean-Luc", "AT&T",
    "3M", "x", "Potter", "of", "the", "Bank", "{club}", "C++", "50%", "#tag", "@user",
];
const LABELS: &[&str] = &[
    "person", "GPE", "date", "creative_work", "creative-work", "state award", "association football player", "other",
    "writer", "city", "capital", "organization", "is", "location",
];

/// A surface of one to four words that avoids the reserved separators.
pub fn random_surface(rng: &mut impl Rng) -> String {
    loop {
        let n = rng.random_range(1..=4);
        let s = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ");
        if conceptner::codec::is_separator_free(&s) {
            return s;
        }
    }
}

pub fn random_label(rng: &mut impl Rng) -> TypeId {
    tid(LABELS.choose(rng).unwrap())
}

/// A well-formed target of zero to six pairs.
pub fn random_target(rng: &mut impl Rng) -> TargetSequence {
    let task = if rng.random_bool(0.5) { Task::EntityGeneration } else { Task::MentionDescribing };
    let n = rng.random_range(0..=6);
    let pairs = (0..n)
        .map(|_| {
            let labels = match task {
                Task::EntityGeneration => vec![random_label(rng)],
                Task::MentionDescribing => {
                    let mut ls: Vec<TypeId> = Vec::new();
                    for _ in 0..rng.random_range(1..=4) {
                        let l = random_label(rng);
                        if !ls.contains(&l) {
                            ls.push(l);
                        }
                    }
                    ls
                }
            };
            TargetPair::new(random_surface(rng), labels)
        })
        .collect();
    TargetSequence::new(task, pairs).unwrap()
}
