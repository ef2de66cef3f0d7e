//! File-level <code, summary> pair construction: docstring extraction,
//! length and license filters, near-duplicate removal and a seeded split.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::{Regex, RegexSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MIN_SUMMARY_TOKENS: usize = 5;
pub const MAX_SUMMARY_TOKENS: usize = 128;
pub const DEDUP_THRESHOLD: f64 = 0.8;

static LICENSE_PATTERNS: LazyLock<RegexSet> = LazyLock::new(|| {
    RegexSet::new([
        r"(?i)licen[sc]ed\s+under",
        r"(?i)apache\s+license",
        r"(?i)\bmit\s+licen[sc]e",
        r"(?i)gnu\s+(lesser\s+|affero\s+)?general\s+public\s+licen[sc]e",
        r"(?i)\b[al]?gpl(v?\d(\.\d)?)?\b",
        r"(?i)\bbsd(\s+|-)(\d-clause\s+)?licen[sc]e|\b\d-clause\s+bsd",
        r"(?i)copyright\s*(\(c\)|©)?\s*(\d{4})",
        r"(?i)(\(c\)|©)\s*\d{4}",
        r"(?i)all\s+rights\s+reserved",
        r"(?i)spdx-license-identifier",
        r"(?i)permission\s+is\s+hereby\s+granted",
        r"(?i)this\s+(program|file|library)\s+is\s+free\s+software",
        r"(?i)without\s+warranties\s+or\s+conditions\s+of\s+any\s+kind",
    ])
    .unwrap()
});

static CODE_TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\w+|[^\w\s]").unwrap());

/// Location and trimmed body of the leading module docstring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Docstring {
    /// Bytes of the string literal including prefix and quotes.
    pub span: Range<usize>,
    pub text: String,
}

/// Finds a triple-quoted string that is the first statement of the file.
/// Only blank lines, comments and a byte-order mark may precede it.
pub fn find_docstring(source: &str) -> Option<Docstring> {
    let bytes = source.as_bytes();
    let mut i = if source.starts_with('\u{feff}') { 3 } else { 0 };
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        break;
    }
    let start = i;
    while i < bytes.len() && i - start < 2 && matches!(bytes[i], b'r' | b'R' | b'u' | b'U') {
        i += 1;
    }
    let quote = match &bytes.get(i..i + 3)? {
        b if *b == b"\"\"\"" => "\"\"\"",
        b if *b == b"'''" => "'''",
        _ => return None,
    };
    let body_start = i + 3;
    let raw = bytes[start..i].iter().any(|b| b.eq_ignore_ascii_case(&b'r'));
    let mut j = body_start;
    while j < bytes.len() {
        if !raw && bytes[j] == b'\\' {
            j += 2;
            continue;
        }
        if source[j..].starts_with(quote) {
            return Some(Docstring { span: start..j + 3, text: source[body_start..j].trim().to_string() });
        }
        j += 1;
    }
    None
}

pub fn extract_summary(source: &str) -> Option<String> {
    find_docstring(source).map(|d| d.text)
}

/// Removes the leading docstring and the rest of its line.
pub fn strip_docstring(source: &str) -> String {
    match find_docstring(source) {
        Some(d) => {
            let rest = &source[d.span.end..];
            let cut = rest.find('\n').map(|k| k + 1).filter(|&k| rest[..k].trim().is_empty()).unwrap_or(0);
            format!("{}{}", &source[..d.span.start], &rest[cut..])
        }
        None => source.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NotUtf8,
    NoDocstring,
    License,
    TooShort,
    TooLong,
    Duplicate,
    NearDuplicate,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).unwrap();
        f.write_str(s.as_str().unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Docstring,
    License,
    Length,
    Dedup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleOutcome {
    pub rule: Rule,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Keep,
    Reject(RejectReason),
}

pub fn summary_token_count(summary: &str) -> usize {
    summary.split_whitespace().count()
}

pub fn is_license_text(text: &str) -> bool {
    LICENSE_PATTERNS.is_match(text)
}

/// License text is checked before length so boilerplate headers are
/// labelled as such whatever their size.
pub fn apply_filters(summary: Option<&str>) -> Decision {
    let Some(summary) = summary else {
        return Decision::Reject(RejectReason::NoDocstring);
    };
    if is_license_text(summary) {
        return Decision::Reject(RejectReason::License);
    }
    match summary_token_count(summary) {
        c if c < MIN_SUMMARY_TOKENS => Decision::Reject(RejectReason::TooShort),
        c if c > MAX_SUMMARY_TOKENS => Decision::Reject(RejectReason::TooLong),
        _ => Decision::Keep,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Dev => "dev.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub id: String,
    pub path: String,
    /// Original file text.
    pub code: String,
    pub summary: String,
    pub summary_token_count: usize,
    pub split: Option<Split>,
    pub filter_trace: Vec<RuleOutcome>,
}

/// Stable identifier derived from the corpus-relative path.
pub fn record_id(path: &str) -> String {
    hex::encode(&Sha256::digest(path.as_bytes())[..8])
}

/// Lexical tokens used for dedup and code-length statistics.
pub fn code_tokens(code: &str) -> Vec<&str> {
    CODE_TOKEN.find_iter(code).map(|m| m.as_str()).collect()
}

fn multiset<'a>(tokens: &[&'a str]) -> HashMap<&'a str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(*t).or_insert(0) += 1;
    }
    m
}

/// Σ min / Σ max over token counts.
pub fn multiset_jaccard(a: &HashMap<&str, usize>, b: &HashMap<&str, usize>) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (t, &ca) in a {
        let cb = b.get(t).copied().unwrap_or(0);
        inter += ca.min(cb);
        union += ca.max(cb);
    }
    union += b.iter().filter(|(t, _)| !a.contains_key(*t)).map(|(_, &c)| c).sum::<usize>();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn code_jaccard(a: &str, b: &str) -> f64 {
    multiset_jaccard(&multiset(&code_tokens(a)), &multiset(&code_tokens(b)))
}

/// Keeps the first record, by id, of every exact or near-duplicate group.
/// Returns survivors and `(id, reason)` for the removed ones.
pub fn deduplicate(mut records: Vec<SummaryRecord>, threshold: f64) -> (Vec<SummaryRecord>, Vec<(String, RejectReason)>) {
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let bags: Vec<(HashMap<&str, usize>, usize)> = records
        .par_iter()
        .map(|r| {
            let toks = code_tokens(&r.code);
            (multiset(&toks), toks.len())
        })
        .collect();
    let mut exact: HashMap<&str, usize> = HashMap::new();
    let mut kept: Vec<usize> = Vec::new();
    let mut verdict: Vec<Option<RejectReason>> = vec![None; records.len()];
    for i in 0..records.len() {
        if exact.contains_key(records[i].code.as_str()) {
            verdict[i] = Some(RejectReason::Duplicate);
            continue;
        }
        let (bag, size) = &bags[i];
        // Jaccard is bounded by the size ratio, so distant sizes are skipped.
        let near = kept.par_iter().any(|&k| {
            let other = bags[k].1;
            let (lo, hi) = ((*size).min(other) as f64, (*size).max(other) as f64);
            (hi == 0.0 || lo / hi >= threshold) && multiset_jaccard(bag, &bags[k].0) >= threshold
        });
        if near {
            verdict[i] = Some(RejectReason::NearDuplicate);
            continue;
        }
        exact.insert(records[i].code.as_str(), i);
        kept.push(i);
    }
    drop(exact);
    drop(bags);
    let mut survivors = Vec::with_capacity(kept.len());
    let mut removed = Vec::new();
    for (mut r, v) in records.into_iter().zip(verdict) {
        r.filter_trace.push(RuleOutcome { rule: Rule::Dedup, passed: v.is_none() });
        match v {
            None => survivors.push(r),
            Some(reason) => removed.push((r.id, reason)),
        }
    }
    (survivors, removed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, dev: 0.1, test: 0.1 }
    }
}

/// Dev and test sizes are rounded to the nearest integer; train takes the
/// remainder.
pub fn split_sizes(n: usize, ratios: SplitRatios) -> [usize; 3] {
    let dev = ((ratios.dev * n as f64).round() as usize).min(n);
    let test = ((ratios.test * n as f64).round() as usize).min(n - dev);
    [n - dev - test, dev, test]
}

/// Split for each id, in input order. Ids are shuffled after sorting so
/// the assignment does not depend on input order.
pub fn split(ids: &[String], ratios: SplitRatios, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [train, dev, _] = split_sizes(ids.len(), ratios);
    let mut out = vec![Split::Test; ids.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < train {
            Split::Train
        } else if rank < train + dev {
            Split::Dev
        } else {
            Split::Test
        };
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub p25: usize,
    pub p50: usize,
    pub p75: usize,
}

impl Distribution {
    /// Quartiles use the nearest-rank rule: the ⌈pN/100⌉-th smallest value.
    pub fn of(values: &[usize]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_unstable();
        let rank = |p: usize| v[((p * v.len()).div_ceil(100)).max(1) - 1];
        Some(Self { mean: v.iter().sum::<usize>() as f64 / v.len() as f64, p25: rank(25), p50: rank(50), p75: rank(75) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub code: Option<Distribution>,
    pub summary: Option<Distribution>,
    pub percentile_rule: String,
    pub code_length_unit: String,
    pub summary_length_unit: String,
}

pub fn stats(records: &[SummaryRecord]) -> CorpusStats {
    let code: Vec<usize> = records.par_iter().map(|r| code_tokens(&r.code).len()).collect();
    let summary: Vec<usize> = records.iter().map(|r| r.summary_token_count).collect();
    CorpusStats {
        count: records.len(),
        code: Distribution::of(&code),
        summary: Distribution::of(&summary),
        percentile_rule: "nearest-rank".into(),
        code_length_unit: "lexical tokens".into(),
        summary_length_unit: "whitespace tokens".into(),
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>8} {:>6} {:>6} {:>6}", "", "Mean", "25%", "50%", "75%")?;
        for (label, d) in [("Source Code", &self.code), ("Summary", &self.summary)] {
            match d {
                Some(d) => writeln!(f, "{label:<12} {:>8.1} {:>6} {:>6} {:>6}", d.mean, d.p25, d.p50, d.p75)?,
                None => writeln!(f, "{label:<12} {:>8} {:>6} {:>6} {:>6}", "-", "-", "-", "-")?,
            }
        }
        write!(f, "({} pairs, {} percentiles)", self.count, self.percentile_rule)
    }
}

/// One corpus file before filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub content: String,
}

/// Raw file contents; `None` marks files that are not valid UTF-8.
pub type RawFile = (String, Option<String>);

/// Reads `.py` files under a directory, or `{path, content}` lines from a
/// JSONL file. Paths are relative and sorted.
pub fn read_corpus(input: &Path) -> Result<Vec<RawFile>> {
    let mut files = if input.is_dir() {
        let paths: Vec<PathBuf> = walkdir::WalkDir::new(input)
            .into_iter()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Data(e.to_string()))?
            .into_iter()
            .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "py"))
            .map(|e| e.into_path())
            .collect();
        paths
            .par_iter()
            .map(|p| {
                let rel = p.strip_prefix(input).unwrap_or(p).to_string_lossy().replace('\\', "/");
                Ok((rel, String::from_utf8(std::fs::read(p)?).ok()))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        let reader = BufReader::new(std::fs::File::open(input)?);
        let mut out = Vec::new();
        for (k, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: SourceFile = serde_json::from_str(&line).map_err(|e| Error::Data(format!("line {}: {e}", k + 1)))?;
            out.push((f.path, Some(f.content)));
        }
        out
    };
    files.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = files.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Data(format!("duplicate corpus path {}", w[0].0)));
    }
    Ok(files)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub seed: u64,
    /// Keep the docstring in the code written to the splits.
    pub keep_docstring: bool,
    pub dedup_threshold: f64,
    pub ratios: SplitRatios,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { seed: 0, keep_docstring: false, dedup_threshold: DEDUP_THRESHOLD, ratios: SplitRatios::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub records: Vec<SummaryRecord>,
    /// Sorted by id.
    pub rejections: Vec<Rejection>,
}

impl PipelineOutput {
    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &SummaryRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }
}

/// Filters, deduplicates and splits `files`. Records come back sorted by id.
pub fn run_pipeline(files: Vec<RawFile>, options: &PipelineOptions) -> PipelineOutput {
    let judged: Vec<std::result::Result<SummaryRecord, Rejection>> = files
        .into_par_iter()
        .map(|(path, content)| {
            let id = record_id(&path);
            let Some(code) = content else {
                return Err(Rejection { id, reason: RejectReason::NotUtf8 });
            };
            let summary = extract_summary(&code);
            match apply_filters(summary.as_deref()) {
                Decision::Reject(reason) => Err(Rejection { id, reason }),
                Decision::Keep => {
                    let summary = summary.unwrap();
                    let filter_trace = [Rule::Docstring, Rule::License, Rule::Length].map(|rule| RuleOutcome { rule, passed: true }).to_vec();
                    Ok(SummaryRecord { id, path, summary_token_count: summary_token_count(&summary), code, summary, split: None, filter_trace })
                }
            }
        })
        .collect();
    let mut rejections = Vec::new();
    let mut kept = Vec::new();
    for j in judged {
        match j {
            Ok(r) => kept.push(r),
            Err(r) => rejections.push(r),
        }
    }
    let (mut records, removed) = deduplicate(kept, options.dedup_threshold);
    rejections.extend(removed.into_iter().map(|(id, reason)| Rejection { id, reason }));
    rejections.sort_by(|a, b| a.id.cmp(&b.id));
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    for (r, s) in records.iter_mut().zip(split(&ids, options.ratios, options.seed)) {
        r.split = Some(s);
    }
    PipelineOutput { records, rejections }
}

#[derive(Serialize)]
struct OutputLine<'a> {
    id: &'a str,
    code: &'a str,
    summary: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub inputs: usize,
    pub split_counts: BTreeMap<Split, usize>,
    pub rejection_counts: BTreeMap<RejectReason, usize>,
    pub stats: CorpusStats,
    pub options: PipelineOptions,
}

/// Reads a corpus, runs the pipeline and writes the split files,
/// `rejections.jsonl` and `stats.json` into `out`.
pub fn build_dataset(input: &Path, out: &Path, options: &PipelineOptions) -> Result<BuildReport> {
    let files = read_corpus(input)?;
    let inputs = files.len();
    let result = run_pipeline(files, options);
    std::fs::create_dir_all(out)?;
    let mut split_counts = BTreeMap::new();
    for s in Split::ALL {
        let mut w = std::io::BufWriter::new(std::fs::File::create(out.join(s.file_name()))?);
        let mut count = 0;
        for r in result.split_records(s) {
            let code = if options.keep_docstring { r.code.clone() } else { strip_docstring(&r.code) };
            serde_json::to_writer(&mut w, &OutputLine { id: &r.id, code: &code, summary: &r.summary })?;
            w.write_all(b"\n")?;
            count += 1;
        }
        w.flush()?;
        split_counts.insert(s, count);
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("rejections.jsonl"))?);
    let mut rejection_counts = BTreeMap::new();
    for r in &result.rejections {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
        *rejection_counts.entry(r.reason).or_insert(0) += 1;
    }
    w.flush()?;
    let report = BuildReport { inputs, split_counts, rejection_counts, stats: stats(&result.records), options: *options };
    std::fs::write(out.join("stats.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// A line of a split file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub id: String,
    pub code: String,
    pub summary: String,
}

pub fn read_split(path: &Path) -> Result<Vec<Pair>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), k + 1)))?);
        }
    }
    Ok(out)
}
