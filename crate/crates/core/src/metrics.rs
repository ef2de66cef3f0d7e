//! BLEU-4 with add-one smoothing, Rouge-L and Meteor over whitespace
//! tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BLEU_N: usize = 4;
pub const ROUGE_BETA: f64 = 1.2;
pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_BETA: f64 = 3.0;
pub const METEOR_GAMMA: f64 = 0.5;

/// Search nodes allowed when minimizing Meteor chunks. Past this, the best
/// alignment found so far is used.
const METEOR_NODE_BUDGET: usize = 2_000_000;

/// Lowercases and splits on whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and candidate total for n-grams of length `n`.
fn ngram_stats<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let matches = cand.iter().map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0))).sum();
    (matches, candidate.len().saturating_sub(n - 1))
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c <= r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    }
}

fn combine(precisions: &[(usize, usize)], c: usize, r: usize) -> f64 {
    let mut log_sum = 0.0;
    for (i, &(m, l)) in precisions.iter().enumerate() {
        let p = if i == 0 { m as f64 / l as f64 } else { (m + 1) as f64 / (l + 1) as f64 };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln() / precisions.len() as f64;
    }
    brevity_penalty(c, r) * log_sum.exp()
}

/// Sentence BLEU; unigram precision is unsmoothed, higher orders add one
/// to numerator and denominator.
pub fn bleu<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let stats: Vec<_> = (1..=n).map(|k| ngram_stats(candidate, reference, k)).collect();
    combine(&stats, candidate.len(), reference.len())
}

/// BLEU from n-gram statistics summed over the corpus.
pub fn corpus_bleu<S: AsRef<str>>(pairs: &[(Vec<S>, Vec<S>)], n: usize) -> f64 {
    let mut stats = vec![(0, 0); n];
    let (mut c, mut r) = (0, 0);
    for (cand, refr) in pairs {
        c += cand.len();
        r += refr.len();
        for (k, s) in stats.iter_mut().enumerate() {
            let (m, l) = ngram_stats(cand, refr, k + 1);
            s.0 += m;
            s.1 += l;
        }
    }
    if c == 0 {
        return 0.0;
    }
    combine(&stats, c, r)
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S], beta: f64) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Exact-match unigram alignment with the most matches, and among those
/// the fewest chunks. Returns `(matches, chunks)`.
pub fn meteor_alignment<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> (usize, usize) {
    let mut positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, t) in reference.iter().enumerate() {
        positions.entry(t.as_ref()).or_default().push(j);
    }
    let mut cand_left: HashMap<&str, usize> = HashMap::new();
    for t in candidate {
        *cand_left.entry(t.as_ref()).or_default() += 1;
    }
    // matches each word must still receive
    let mut need: HashMap<&str, usize> =
        cand_left.iter().map(|(w, &c)| (*w, c.min(positions.get(w).map_or(0, Vec::len)))).collect();
    let m: usize = need.values().sum();
    if m == 0 {
        return (0, 0);
    }
    let cand: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
    let mut search = ChunkSearch {
        cand: &cand,
        positions: &positions,
        used: vec![false; reference.len()],
        best: usize::MAX,
        nodes: 0,
    };
    search.dfs(0, None, 0, &mut cand_left, &mut need);
    (m, search.best)
}

struct ChunkSearch<'a> {
    cand: &'a [&'a str],
    positions: &'a HashMap<&'a str, Vec<usize>>,
    used: Vec<bool>,
    best: usize,
    nodes: usize,
}

impl<'a> ChunkSearch<'a> {
    /// `prev` is the reference position matched by candidate `i - 1`, if any.
    fn dfs(&mut self, i: usize, prev: Option<usize>, chunks: usize, left: &mut HashMap<&'a str, usize>, need: &mut HashMap<&'a str, usize>) {
        self.nodes += 1;
        if chunks >= self.best || (self.nodes > METEOR_NODE_BUDGET && self.best != usize::MAX) {
            return;
        }
        if i == self.cand.len() {
            self.best = chunks;
            return;
        }
        let w = self.cand[i];
        let n = need[w];
        let l = left[w];
        *left.get_mut(w).unwrap() -= 1;
        if n > 0 {
            // the continuing position first, then the rest in order
            let mut options: Vec<usize> = self.positions[w].iter().copied().filter(|&j| !self.used[j]).collect();
            if let Some(p) = prev {
                if let Some(k) = options.iter().position(|&j| j == p + 1) {
                    options[..=k].rotate_right(1);
                }
            }
            *need.get_mut(w).unwrap() -= 1;
            for j in options {
                let extends = prev.is_some_and(|p| p + 1 == j);
                self.used[j] = true;
                self.dfs(i + 1, Some(j), chunks + usize::from(!extends), left, need);
                self.used[j] = false;
            }
            *need.get_mut(w).unwrap() += 1;
        }
        // leaving this token unmatched is only possible with spare copies
        if l > n {
            self.dfs(i + 1, None, chunks, left, need);
        }
        *left.get_mut(w).unwrap() += 1;
    }
}

pub fn meteor<S: AsRef<str>>(candidate: &[S], reference: &[S], alpha: f64, beta: f64, gamma: f64) -> f64 {
    let (m, ch) = meteor_alignment(candidate, reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f = p * r / (alpha * p + (1.0 - alpha) * r);
    let pen = gamma * (ch as f64 / m as f64).powf(beta);
    f * (1.0 - pen)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuMode {
    /// Mean of sentence-level scores.
    #[default]
    Macro,
    /// Single score from pooled n-gram statistics.
    Corpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub bleu: f64,
    pub rouge_l: f64,
    pub meteor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConstants {
    pub n: usize,
    pub beta_rouge: f64,
    pub alpha: f64,
    pub beta_meteor: f64,
    pub gamma: f64,
}

impl Default for MetricConstants {
    fn default() -> Self {
        Self { n: BLEU_N, beta_rouge: ROUGE_BETA, alpha: METEOR_ALPHA, beta_meteor: METEOR_BETA, gamma: METEOR_GAMMA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub bleu_mode: BleuMode,
    pub constants: MetricConstants,
    pub per_example: Vec<ExampleScores>,
}

pub fn score_pair(candidate: &str, reference: &str) -> ExampleScores {
    let (c, r) = (normalize(candidate), normalize(reference));
    ExampleScores {
        bleu: bleu(&c, &r, BLEU_N),
        rouge_l: rouge_l(&c, &r, ROUGE_BETA),
        meteor: meteor(&c, &r, METEOR_ALPHA, METEOR_BETA, METEOR_GAMMA),
    }
}

pub fn evaluate_corpus<C: AsRef<str>, R: AsRef<str>>(pairs: &[(C, R)]) -> Result<EvalReport> {
    evaluate_corpus_with(pairs, BleuMode::Macro)
}

pub fn evaluate_corpus_with<C: AsRef<str>, R: AsRef<str>>(pairs: &[(C, R)], mode: BleuMode) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Data("no prediction/reference pairs to evaluate".into()));
    }
    let per_example: Vec<ExampleScores> = pairs.iter().map(|(c, r)| score_pair(c.as_ref(), r.as_ref())).collect();
    let mean = |f: fn(&ExampleScores) -> f64| per_example.iter().map(f).sum::<f64>() / per_example.len() as f64;
    let bleu = match mode {
        BleuMode::Macro => mean(|e| e.bleu),
        BleuMode::Corpus => {
            let tokenized: Vec<_> = pairs.iter().map(|(c, r)| (normalize(c.as_ref()), normalize(r.as_ref()))).collect();
            corpus_bleu(&tokenized, BLEU_N)
        }
    };
    Ok(EvalReport {
        bleu,
        rouge_l: mean(|e| e.rouge_l),
        meteor: mean(|e| e.meteor),
        bleu_mode: mode,
        constants: MetricConstants::default(),
        per_example,
    })
}
