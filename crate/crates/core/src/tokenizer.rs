//! Byte-level BPE with byte-span alignment, and projection of identifier
//! occurrences onto token positions.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{IdentifierAnalysis, Span};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_LEN: usize = 4096;
const BYTE_VOCAB: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    vocab: Vec<Vec<u8>>,
    merges: Vec<(u32, u32)>,
    // pair -> (rank, merged id)
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSequence {
    pub token_ids: Vec<u32>,
    pub spans: Vec<Span>,
}

impl TokenizedSequence {
    pub fn n(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Index of the first token whose span intersects `span`.
    pub fn first_intersecting(&self, span: Span) -> Option<usize> {
        let p = self.spans.partition_point(|s| s.end <= span.start);
        (p < self.spans.len() && self.spans[p].intersects(&span)).then_some(p)
    }
}

/// Splits text into runs of identifier characters, whitespace, or
/// punctuation. Merges never cross a run boundary.
fn pre_split(text: &[u8]) -> Vec<(usize, usize)> {
    #[derive(PartialEq, Clone, Copy)]
    enum Class {
        Word,
        Space,
        Punct,
    }
    fn class(b: u8) -> Class {
        if b.is_ascii_alphanumeric() || b == b'_' || b >= 0x80 {
            Class::Word
        } else if b.is_ascii_whitespace() {
            Class::Space
        } else {
            Class::Punct
        }
    }
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=text.len() {
        if i == text.len() || class(text[i]) != class(text[start]) {
            if i > start {
                out.push((start, i));
            }
            start = i;
        }
    }
    out
}

impl Tokenizer {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn token_bytes(&self, id: u32) -> &[u8] {
        &self.vocab[id as usize]
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut vocab: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let n = vocab.len() as u32;
            if a >= n || b >= n {
                return Err(Error::Data(format!("merge {rank} references unknown token")));
            }
            let mut bytes = vocab[a as usize].clone();
            bytes.extend_from_slice(&vocab[b as usize]);
            vocab.push(bytes);
            ranks.insert((a, b), (rank, n));
        }
        Ok(Self { vocab, merges, ranks })
    }

    /// Encodes up to `max_len` tokens. Spans tile the consumed prefix of
    /// `source` with no gaps.
    pub fn encode(&self, source: &str, max_len: usize) -> TokenizedSequence {
        let bytes = source.as_bytes();
        let mut token_ids = Vec::new();
        let mut spans = Vec::new();
        let mut cache: HashMap<&[u8], Vec<u32>> = HashMap::new();
        'outer: for (start, end) in pre_split(bytes) {
            let chunk = &bytes[start..end];
            let ids = cache.entry(chunk).or_insert_with(|| self.encode_chunk(chunk));
            let mut at = start;
            for &id in ids.iter() {
                if token_ids.len() >= max_len {
                    break 'outer;
                }
                let len = self.vocab[id as usize].len();
                token_ids.push(id);
                spans.push(Span::new(at, at + len));
                at += len;
            }
        }
        TokenizedSequence { token_ids, spans }
    }

    fn encode_chunk(&self, chunk: &[u8]) -> Vec<u32> {
        let mut ids: Vec<u32> = chunk.iter().map(|&b| b as u32).collect();
        loop {
            let best = ids
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0], w[1])).map(|&(rank, id)| (rank, i, id)))
                .min();
            let Some((rank, _, id)) = best else { break };
            let pair = self.merges[rank];
            let mut merged = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
                    merged.push(id);
                    i += 2;
                } else {
                    merged.push(ids[i]);
                    i += 1;
                }
            }
            ids = merged;
        }
        ids
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<u8> {
        ids.iter().flat_map(|&id| self.vocab[id as usize].iter().copied()).collect()
    }

    pub fn to_json(&self) -> TokenizerFile {
        let table = byte_to_unicode();
        TokenizerFile {
            vocab: self.vocab.iter().map(|t| t.iter().map(|&b| table[b as usize]).collect()).collect(),
            merges: self.merges.iter().map(|&(a, b)| [a, b]).collect(),
        }
    }

    pub fn from_json(file: &TokenizerFile) -> Result<Self> {
        let tok = Self::from_merges(file.merges.iter().map(|m| (m[0], m[1])).collect())?;
        if tok.to_json().vocab != file.vocab {
            return Err(Error::Data("tokenizer vocab does not match its merges".into()));
        }
        Ok(tok)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_json())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: TokenizerFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_json(&file)
    }
}

/// On-disk form. Vocabulary entries use the printable byte alphabet common
/// to byte-level BPE files; merges are pairs of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerFile {
    pub vocab: Vec<String>,
    pub merges: Vec<[u32; 2]>,
}

fn byte_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..256u32 {
        let printable = (33..=126).contains(&b) || (161..=172).contains(&b) || (174..=255).contains(&b);
        table[b as usize] = if printable {
            char::from_u32(b).unwrap()
        } else {
            extra += 1;
            char::from_u32(255 + extra).unwrap()
        };
    }
    table
}

/// Learns merges until the vocabulary holds `vocab_size` entries or no
/// adjacent pair remains. Ties go to the smallest (left, right) id pair.
pub fn train_tokenizer<I, S>(corpus: I, vocab_size: usize) -> Result<Tokenizer>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if vocab_size < BYTE_VOCAB {
        return Err(Error::Config(format!("vocab_size must be at least {BYTE_VOCAB}, got {vocab_size}")));
    }
    let mut chunk_counts: HashMap<Vec<u8>, u64> = HashMap::new();
    let mut docs = 0usize;
    for text in corpus {
        docs += 1;
        let bytes = text.as_ref().as_bytes();
        for (s, e) in pre_split(bytes) {
            *chunk_counts.entry(bytes[s..e].to_vec()).or_default() += 1;
        }
    }
    if docs == 0 {
        return Err(Error::Config("empty training corpus".into()));
    }
    let mut words: Vec<(Vec<u32>, u64)> =
        chunk_counts.into_iter().map(|(w, c)| (w.into_iter().map(u32::from).collect(), c)).collect();
    words.sort();

    let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut where_: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, (w, c)) in words.iter().enumerate() {
        for p in w.windows(2) {
            *pair_counts.entry((p[0], p[1])).or_default() += c;
            where_.entry((p[0], p[1])).or_default().insert(wi);
        }
    }

    let mut merges = Vec::new();
    let mut next_id = BYTE_VOCAB as u32;
    while (next_id as usize) < vocab_size {
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then(pb.cmp(pa)))
            .map(|(p, _)| *p);
        let Some(pair) = best else { break };
        merges.push(pair);
        let mut affected: Vec<usize> = where_.remove(&pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        for wi in affected {
            let (w, c) = &mut words[wi];
            for p in w.windows(2) {
                if let Some(x) = pair_counts.get_mut(&(p[0], p[1])) {
                    *x -= *c;
                }
            }
            let mut merged = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && (w[i], w[i + 1]) == pair {
                    merged.push(next_id);
                    i += 2;
                } else {
                    merged.push(w[i]);
                    i += 1;
                }
            }
            *w = merged;
            for p in w.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_default() += *c;
                where_.entry((p[0], p[1])).or_default().insert(wi);
            }
        }
        pair_counts.remove(&pair);
        next_id += 1;
    }
    Tokenizer::from_merges(merges)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionSets {
    /// Global-token positions, ascending.
    #[serde(rename = "G")]
    pub global: Vec<usize>,
    /// Non-global identifier positions, ascending, disjoint from `global`.
    #[serde(rename = "I_minus_G")]
    pub ident: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionCaps {
    pub cap_g: usize,
    pub cap_i_fraction: f64,
    /// Absolute ceiling on identifier positions, applied together with the
    /// fractional cap.
    pub cap_i_max: usize,
}

impl Default for PositionCaps {
    fn default() -> Self {
        Self { cap_g: 64, cap_i_fraction: 0.25, cap_i_max: 768 }
    }
}

impl PositionCaps {
    pub fn ident_limit(&self, n: usize) -> usize {
        let frac = (self.cap_i_fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
        frac.min(self.cap_i_max)
    }
}

/// Marks the first token of each identifier occurrence. Occurrences past
/// the truncation point, or past a full cap, are dropped; earlier ones win.
pub fn project_positions(seq: &TokenizedSequence, analysis: &IdentifierAnalysis, caps: &PositionCaps) -> PositionSets {
    let mut sets = PositionSets::default();
    if !analysis.parse_ok {
        return sets;
    }
    let ident_limit = caps.ident_limit(seq.n());
    for occ in &analysis.occurrences {
        let Some(p) = seq.first_intersecting(occ.span) else { continue };
        if sets.global.last() == Some(&p) || sets.ident.last() == Some(&p) {
            continue;
        }
        if occ.is_global {
            if sets.global.len() < caps.cap_g {
                sets.global.push(p);
            }
        } else if sets.ident.len() < ident_limit {
            sets.ident.push(p);
        }
    }
    sets
}
