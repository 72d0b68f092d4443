//! The text-generation interface the pipeline drives. The toy model is one
//! implementation; fixed-output generators stand in for it in tests.

use std::collections::HashMap;

/// Maps a prompt and an input sentence to generated text.
pub trait Generator: Sync {
    fn generate(&self, prompt: &str, input: &str) -> String;
}

/// Returns the same text for every input.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConstantGenerator(pub String);

impl Generator for ConstantGenerator {
    fn generate(&self, _prompt: &str, _input: &str) -> String {
        self.0.clone()
    }
}

/// Looks outputs up by `(prompt, input)`, falling back to `""`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TableGenerator {
    pub table: HashMap<(String, String), String>,
}

impl TableGenerator {
    pub fn insert(&mut self, prompt: impl Into<String>, input: impl Into<String>, output: impl Into<String>) {
        self.table.insert((prompt.into(), input.into()), output.into());
    }
}

impl Generator for TableGenerator {
    fn generate(&self, prompt: &str, input: &str) -> String {
        self.table
            .get(&(prompt.to_string(), input.to_string()))
            .cloned()
            .unwrap_or_default()
    }
}
