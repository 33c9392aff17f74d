//! Lexical similarity: padded trigram Jaccard and token Jaccard.
//!
//! Text is lowercased and split into words on non-alphanumeric characters.
//! Each word is padded with two leading blanks and one trailing blank before
//! trigrams are taken, so `"ca"` yields `{"  c", " ca", "ca "}`.

use std::collections::{HashMap, HashSet};

use crate::planner::fnv1a64;
use crate::value::Value;

/// Pluggable scorer; the engine uses [`TrigramScorer`] unless told otherwise.
pub trait SimilarityScorer: Send + Sync {
    fn score(&self, a: &str, b: &str) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramScorer;

impl SimilarityScorer for TrigramScorer {
    fn score(&self, a: &str, b: &str) -> f64 {
        trigram_similarity(a, b)
    }
}

pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

pub fn trigrams(text: &str) -> HashSet<String> {
    let mut out = HashSet::new();
    for word in tokens(text) {
        let padded: Vec<char> = format!("  {word} ").chars().collect();
        for w in padded.windows(3) {
            out.insert(w.iter().collect());
        }
    }
    out
}

pub fn jaccard<T: Eq + std::hash::Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

pub fn trigram_similarity(a: &str, b: &str) -> f64 {
    let (ta, tb) = (trigrams(a), trigrams(b));
    if ta.is_empty() && tb.is_empty() {
        return if a.to_lowercase() == b.to_lowercase() && !a.is_empty() { 1.0 } else { 0.0 };
    }
    jaccard(&ta, &tb)
}

/// Deterministic sample of up to `k` distinct values: those with the
/// smallest FNV-1a hashes of their SQL literal. Each sampled value is paired
/// with the first payload seen for it. Nulls are skipped.
pub fn bottom_k<'a, P: Clone>(values: impl Iterator<Item = (&'a Value, P)>, k: usize) -> Vec<(Value, P)> {
    let mut first: HashMap<&'a Value, (u64, P)> = HashMap::new();
    for (v, p) in values {
        if v.is_null() {
            continue;
        }
        first.entry(v).or_insert_with(|| (fnv1a64(v.to_sql_literal().as_bytes()), p));
    }
    let mut all: Vec<(u64, &Value, P)> = first.into_iter().map(|(v, (h, p))| (h, v, p)).collect();
    all.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.total_cmp(b.1)));
    all.truncate(k);
    all.into_iter().map(|(_, v, p)| (v.clone(), p)).collect()
}

/// Jaccard overlap of word tokens.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let ta: HashSet<String> = tokens(a).into_iter().collect();
    let tb: HashSet<String> = tokens(b).into_iter().collect();
    jaccard(&ta, &tb)
}
