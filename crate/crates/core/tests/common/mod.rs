#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsecoder::dataset::{record_id, RejectReason};
use sparsecoder::tensor::Tensor;

/// Allowed pairs straight from the three gate definitions.
pub fn oracle_pairs(n: usize, w: usize, global: &[usize], ident: &[usize]) -> BTreeSet<(usize, usize)> {
    let g: BTreeSet<usize> = global.iter().copied().collect();
    let i_only: BTreeSet<usize> = ident.iter().copied().filter(|p| !g.contains(p)).collect();
    let half = w / 2;
    let mut out = BTreeSet::new();
    for i in 0..n {
        for j in 0..n {
            let local = i.abs_diff(j) <= half;
            let glob = g.contains(&i) || g.contains(&j);
            let idnt = i_only.contains(&i) && i_only.contains(&j);
            if local || glob || idnt {
                out.insert((i, j));
            }
        }
    }
    out
}

/// Random subset of `0..n` with roughly `frac` density.
pub fn random_subset(rng: &mut impl Rng, n: usize, frac: f64) -> Vec<usize> {
    (0..n).filter(|_| rng.random_bool(frac)).collect()
}

/// Per-head softmax attention with an additive mask; masked scores get
/// −1e9 before the softmax.
pub fn masked_attention_oracle(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, allowed: &dyn Fn(usize, usize) -> bool) -> Tensor {
    let n = q.rows;
    let dk = q.cols / heads;
    let mut out = Tensor::zeros(n, q.cols);
    for h in 0..heads {
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| {
                    let s: f64 = (0..dk).map(|d| q.at(i, h * dk + d) * k.at(j, h * dk + d)).sum::<f64>() / (dk as f64).sqrt();
                    s + if allowed(i, j) { 0.0 } else { -1e9 }
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                for d in 0..dk {
                    out.data[i * q.cols + h * dk + d] += e / z * v.at(j, h * dk + d);
                }
            }
        }
    }
    out
}

/// Central-difference gradient of a scalar function of one tensor.
pub fn numeric_grad(x: &Tensor, f: &dyn Fn(&Tensor) -> f64, eps: f64) -> Tensor {
    let mut g = Tensor::zeros(x.rows, x.cols);
    let mut probe = x.clone();
    for k in 0..x.data.len() {
        let orig = probe.data[k];
        probe.data[k] = orig + eps;
        let up = f(&probe);
        probe.data[k] = orig - eps;
        let down = f(&probe);
        probe.data[k] = orig;
        g.data[k] = (up - down) / (2.0 * eps);
    }
    g
}

/// max |a − b| / max(1e-6, |a| + |b|) over all entries, ignoring pairs
/// where both are below `floor`.
pub fn rel_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .filter(|(x, y)| x.abs().max(y.abs()) > floor)
        .map(|(x, y)| (x - y).abs() / (x.abs() + y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Token multiset Jaccard, written independently of the library.
pub fn jaccard_oracle(a: &str, b: &str) -> f64 {
    use std::collections::HashMap;
    let re = regex::Regex::new(r"\w+|[^\w\s]").unwrap();
    let count = |s: &str| {
        let mut m: HashMap<String, i64> = HashMap::new();
        for t in re.find_iter(s) {
            *m.entry(t.as_str().to_string()).or_default() += 1;
        }
        m
    };
    let (ca, cb) = (count(a), count(b));
    let keys: BTreeSet<&String> = ca.keys().chain(cb.keys()).collect();
    let (mut num, mut den) = (0, 0);
    for k in keys {
        let (x, y) = (*ca.get(k).unwrap_or(&0), *cb.get(k).unwrap_or(&0));
        num += x.min(y);
        den += x.max(y);
    }
    num as f64 / den.max(1) as f64
}

const PLAIN_WORDS: [&str; 40] = [
    "parse", "the", "input", "file", "and", "return", "a", "list", "of", "records", "helpers", "for", "reading", "configuration", "values",
    "from", "disk", "utility", "functions", "to", "build", "plots", "simple", "queue", "worker", "that", "processes", "jobs", "in", "order",
    "compute", "statistics", "over", "batches", "training", "loop", "with", "logging", "cache", "layer",
];

const LICENSES: [&str; 6] = [
    "Licensed under the Apache License, Version 2.0 (the \"License\"); you may not use this file except in compliance with the License.",
    "Copyright 2018 Example Corp. All rights reserved.",
    "This program is free software: you can redistribute it and/or modify it under the terms of the GNU General Public License.",
    "Permission is hereby granted, free of charge, to any person obtaining a copy of this software.",
    "SPDX-License-Identifier: MIT plus some words about the module",
    "(c) 2020 Someone. Released under the MIT License for everyone to use.",
];

fn sentence(rng: &mut impl Rng, len: usize) -> String {
    (0..len).map(|_| *PLAIN_WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Code body with file-specific identifiers and a random statement mix.
fn body(rng: &mut impl Rng, tag: usize) -> String {
    let mut s = String::from("import os\n\n");
    for f in 0..rng.random_range(3..6) {
        s += &format!("def fn_{tag}_{f}(arg_{tag}_{f}, opt_{}):\n", rng.random_range(0..1000));
        for l in 0..rng.random_range(3..8) {
            let var = format!("v{tag}x{f}y{l}");
            s += &match rng.random_range(0..5) {
                0 => format!("    {var} = arg_{tag}_{f} * {}\n", rng.random_range(0..10_000)),
                1 => format!("    {var} = os.path.join(\"{}\", str({}))\n", rng.random_range(0..10_000), rng.random_range(0..99)),
                2 => format!("    {var} = [k{tag}_{l} for k{tag}_{l} in range({})]\n", rng.random_range(1..50)),
                3 => format!("    if arg_{tag}_{f} > {}:\n        {var} = None\n", rng.random_range(0..100)),
                _ => format!("    {var} = {{\"key_{tag}_{l}\": {}}}\n", rng.random_range(0..100)),
            };
        }
        s += &format!("    return arg_{tag}_{f}\n\n");
    }
    s
}

fn with_docstring(summary: &str, code: &str) -> String {
    format!("\"\"\"{summary}\"\"\"\n{code}")
}

/// A planted corpus file and the reason it must be rejected, if any.
pub struct PlantedFile {
    pub path: String,
    pub content: String,
    pub expected: Option<RejectReason>,
}

/// 200 files: 110 clean, and 15 each of missing/late docstring, too-short
/// and too-long summaries, license headers, exact copies and near copies.
/// For duplicate groups the member with the larger id is the one rejected.
pub fn planted_corpus(seed: u64) -> Vec<PlantedFile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut files = Vec::new();
    let mut clean = Vec::new();
    for k in 0..110 {
        let len = rng.random_range(5..40);
        let content = with_docstring(&sentence(&mut rng, len), &body(&mut rng, k));
        clean.push(content.clone());
        files.push(PlantedFile { path: format!("clean/m{k:03}.py"), content, expected: None });
    }
    for k in 0..15 {
        let code = body(&mut rng, 200 + k);
        let content = if k % 3 == 0 {
            format!("import sys\n\"\"\"{}\"\"\"\n{code}", sentence(&mut rng, 10))
        } else {
            code
        };
        files.push(PlantedFile { path: format!("nodoc/m{k:03}.py"), content, expected: Some(RejectReason::NoDocstring) });
    }
    for k in 0..15 {
        let len = 1 + k % 4;
        let content = with_docstring(&sentence(&mut rng, len), &body(&mut rng, 300 + k));
        files.push(PlantedFile { path: format!("short/m{k:03}.py"), content, expected: Some(RejectReason::TooShort) });
    }
    for k in 0..15 {
        let len = rng.random_range(129..200);
        let content = with_docstring(&sentence(&mut rng, len), &body(&mut rng, 400 + k));
        files.push(PlantedFile { path: format!("long/m{k:03}.py"), content, expected: Some(RejectReason::TooLong) });
    }
    for k in 0..15 {
        let content = with_docstring(LICENSES[k % LICENSES.len()], &body(&mut rng, 500 + k));
        files.push(PlantedFile { path: format!("license/m{k:03}.py"), content, expected: Some(RejectReason::License) });
    }
    let mut sources: Vec<usize> = (0..110).collect();
    sources.shuffle(&mut rng);
    for (k, &src) in sources[..15].iter().enumerate() {
        push_copy(&mut files, src, format!("dup/m{k:03}.py"), clean[src].clone(), RejectReason::Duplicate);
    }
    for (k, &src) in sources[15..30].iter().enumerate() {
        let renamed = clean[src].replace(&format!("arg_{src}_0"), &format!("renamed_{src}"));
        assert_ne!(renamed, clean[src]);
        push_copy(&mut files, src, format!("near/m{k:03}.py"), renamed, RejectReason::NearDuplicate);
    }
    files
}

fn push_copy(files: &mut Vec<PlantedFile>, src: usize, path: String, content: String, reason: RejectReason) {
    let orig = &mut files[src];
    if record_id(&path) > record_id(&orig.path) {
        files.push(PlantedFile { path, content, expected: Some(reason) });
    } else {
        orig.expected = Some(reason);
        files.push(PlantedFile { path, content, expected: None });
    }
}

pub fn write_corpus(files: &[PlantedFile], dir: &Path) {
    for f in files {
        let p = dir.join(&f.path);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, &f.content).unwrap();
    }
}
