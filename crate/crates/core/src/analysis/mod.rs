//! Static identifier analysis for Python source.
//!
//! Parses a file and classifies every identifier occurrence as global
//! (library, class, function or module-level variable) or not. Global
//! occurrences feed the global-attention set; every occurrence feeds the
//! identifier set.

pub mod lexer;
pub mod parser;
mod scope;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
pub use parser::SyntaxTree;

/// Half-open byte range into a source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn intersects(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentifierKind {
    Library,
    Class,
    Function,
    GlobalVariable,
    Parameter,
    LocalVariable,
    Attribute,
    Other,
}

impl IdentifierKind {
    pub fn is_global(self) -> bool {
        matches!(self, Self::Library | Self::Class | Self::Function | Self::GlobalVariable)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifierOccurrence {
    pub name: String,
    #[serde(flatten)]
    pub span: Span,
    pub kind: IdentifierKind,
    pub is_global: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifierAnalysis {
    #[serde(rename = "digest")]
    pub source_digest: String,
    pub parse_ok: bool,
    pub occurrences: Vec<IdentifierOccurrence>,
}

impl IdentifierAnalysis {
    pub fn globals(&self) -> impl Iterator<Item = &IdentifierOccurrence> {
        self.occurrences.iter().filter(|o| o.is_global)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalysisOptions {
    /// Report `self`/`cls` parameters as identifier occurrences.
    pub self_is_identifier: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self { self_is_identifier: true }
    }
}

pub fn source_digest(source: &str) -> String {
    hex::encode(Sha256::digest(source.as_bytes()))
}

/// Parses source text. Malformed code produces a tree with error nodes;
/// this never fails.
pub fn parse_source(source: &str) -> SyntaxTree {
    parser::parse(source)
}

/// Reads and parses a file.
pub fn parse_file(path: &Path) -> Result<(String, SyntaxTree)> {
    let source = std::fs::read_to_string(path)?;
    let tree = parse_source(&source);
    Ok((source, tree))
}

pub fn extract_identifiers(tree: &SyntaxTree, source: &str) -> IdentifierAnalysis {
    extract_identifiers_with(tree, source, &AnalysisOptions::default())
}

pub fn extract_identifiers_with(tree: &SyntaxTree, source: &str, options: &AnalysisOptions) -> IdentifierAnalysis {
    let source_digest = source_digest(source);
    if tree.has_errors() {
        return IdentifierAnalysis { source_digest, parse_ok: false, occurrences: Vec::new() };
    }
    let occurrences = scope::classify(tree, options);
    IdentifierAnalysis { source_digest, parse_ok: true, occurrences }
}

/// Parse + classify in one step.
pub fn analyze(source: &str) -> IdentifierAnalysis {
    extract_identifiers(&parse_source(source), source)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds_of(a: &IdentifierAnalysis, name: &str) -> Vec<IdentifierKind> {
        a.occurrences.iter().filter(|o| o.name == name).map(|o| o.kind).collect()
    }

    const CNN_FILE: &str = r#"import numpy as np
from keras import layers

class CNN:
    def __init__(self, input_shape, classes=10):
        self.model = layers.Conv2D(input_shape)
        self.classes = classes

def build(input_shape):
    cnn = CNN(input_shape)
    return cnn
"#;

    #[test]
    fn class_and_call_site_are_global() {
        let a = analyze(CNN_FILE);
        assert!(a.parse_ok);
        assert_eq!(kinds_of(&a, "CNN"), vec![IdentifierKind::Class, IdentifierKind::Class]);
        assert!(a.occurrences.iter().filter(|o| o.name == "CNN").all(|o| o.is_global));
        assert_eq!(kinds_of(&a, "cnn"), vec![IdentifierKind::LocalVariable; 2]);
        assert!(a.occurrences.iter().filter(|o| o.name == "cnn").all(|o| !o.is_global));
    }

    #[test]
    fn parameters_are_not_global() {
        let a = analyze(CNN_FILE);
        assert!(kinds_of(&a, "input_shape").iter().all(|k| *k == IdentifierKind::Parameter));
        assert_eq!(kinds_of(&a, "input_shape").len(), 4);
    }

    #[test]
    fn imports_and_dotted_access() {
        let a = analyze(CNN_FILE);
        assert_eq!(kinds_of(&a, "np"), vec![IdentifierKind::Library]);
        assert_eq!(kinds_of(&a, "numpy"), vec![IdentifierKind::Library]);
        assert_eq!(kinds_of(&a, "layers"), vec![IdentifierKind::Library; 2]);
        assert_eq!(kinds_of(&a, "Conv2D"), vec![IdentifierKind::Attribute]);
        assert_eq!(kinds_of(&a, "model"), vec![IdentifierKind::Attribute]);
        assert_eq!(kinds_of(&a, "build"), vec![IdentifierKind::Function]);
    }

    #[test]
    fn empty_source() {
        let a = analyze("");
        assert!(a.parse_ok);
        assert!(a.occurrences.is_empty());
    }

    #[test]
    fn syntax_error_degrades() {
        let a = analyze("def f(");
        assert!(!a.parse_ok);
        assert!(a.occurrences.is_empty());
    }

    #[test]
    fn occurrences_sorted_and_disjoint() {
        let a = analyze(CNN_FILE);
        for w in a.occurrences.windows(2) {
            assert!(w[0].span.end <= w[1].span.start);
        }
        for o in &a.occurrences {
            assert!(!o.span.is_empty());
            assert_eq!(&CNN_FILE[o.span.start..o.span.end], o.name);
            assert_eq!(o.is_global, o.kind.is_global());
        }
    }

    #[test]
    fn self_can_be_excluded() {
        let tree = parse_source(CNN_FILE);
        let with = extract_identifiers(&tree, CNN_FILE);
        let without = extract_identifiers_with(&tree, CNN_FILE, &AnalysisOptions { self_is_identifier: false });
        assert_eq!(kinds_of(&with, "self"), vec![IdentifierKind::Parameter; 3]);
        assert!(kinds_of(&without, "self").is_empty());
    }

    #[test]
    fn json_shape() {
        let a = analyze("x = 1\n");
        let v = serde_json::to_value(&a).unwrap();
        assert_eq!(v["parse_ok"], true);
        assert_eq!(v["occurrences"][0]["start"], 0);
        assert_eq!(v["occurrences"][0]["end"], 1);
        assert_eq!(v["occurrences"][0]["kind"], "global_variable");
        assert_eq!(v["occurrences"][0]["is_global"], true);
        assert!(v["digest"].as_str().unwrap().len() == 64);
    }
}
