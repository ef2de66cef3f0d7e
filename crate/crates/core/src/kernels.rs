//! Multi-head attention kernels. Heads are column blocks of width
//! `cols / heads` in Q, K and V.

use crate::error::{Error, Result};
use crate::mask::AttentionPattern;
use crate::tensor::{dot, Tensor};

fn head_width(t: &Tensor, heads: usize) -> usize {
    assert!(heads > 0 && t.cols.is_multiple_of(heads), "{} columns do not split into {heads} heads", t.cols);
    t.cols / heads
}

/// Softmax over `scores` in place, shifted by the maximum.
fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// Attention restricted to the pattern's allowed pairs. With `save`, the
/// returned vector holds the weights laid out as `[head][pair]`.
pub fn sparse_forward(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, pattern: &AttentionPattern, save: bool) -> (Tensor, Vec<f64>) {
    let n = q.rows;
    assert_eq!(pattern.n(), n);
    assert_eq!(k.rows, n);
    let dk = head_width(q, heads);
    let scale = 1.0 / (dk as f64).sqrt();
    let nnz = pattern.nnz();
    let mut out = Tensor::zeros(n, q.cols);
    let mut probs = if save { vec![0.0; heads * nnz] } else { Vec::new() };
    let mut scratch = Vec::new();
    for h in 0..heads {
        let c = h * dk;
        for i in 0..n {
            let cols = pattern.row(i);
            let qi = &q.row(i)[c..c + dk];
            scratch.clear();
            scratch.extend(cols.iter().map(|&j| dot(qi, &k.row(j as usize)[c..c + dk]) * scale));
            softmax_in_place(&mut scratch);
            let dst = &mut out.row_mut(i)[c..c + dk];
            for (&j, &p) in cols.iter().zip(&scratch) {
                for (d, &x) in dst.iter_mut().zip(&v.row(j as usize)[c..c + dk]) {
                    *d += p * x;
                }
            }
            if save {
                let base = h * nnz + pattern.row_ptr()[i];
                probs[base..base + cols.len()].copy_from_slice(&scratch);
            }
        }
    }
    (out, probs)
}

pub fn sparse_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    pattern: &AttentionPattern,
    probs: &[f64],
    dout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let n = q.rows;
    let dk = head_width(q, heads);
    let scale = 1.0 / (dk as f64).sqrt();
    let nnz = pattern.nnz();
    let (mut dq, mut dkm, mut dv) = (Tensor::zeros(n, q.cols), Tensor::zeros(n, k.cols), Tensor::zeros(n, v.cols));
    let mut dp = Vec::new();
    for h in 0..heads {
        let c = h * dk;
        for i in 0..n {
            let cols = pattern.row(i);
            let base = h * nnz + pattern.row_ptr()[i];
            let p = &probs[base..base + cols.len()];
            let go = &dout.row(i)[c..c + dk];
            dp.clear();
            dp.extend(cols.iter().map(|&j| dot(go, &v.row(j as usize)[c..c + dk])));
            let inner: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for ((&j, &pj), &dpj) in cols.iter().zip(p).zip(&dp) {
                let j = j as usize;
                for (d, &g) in dv.row_mut(j)[c..c + dk].iter_mut().zip(go) {
                    *d += pj * g;
                }
                let ds = pj * (dpj - inner) * scale;
                if ds == 0.0 {
                    continue;
                }
                for (d, &x) in dq.row_mut(i)[c..c + dk].iter_mut().zip(&k.row(j)[c..c + dk]) {
                    *d += ds * x;
                }
                for (d, &x) in dkm.row_mut(j)[c..c + dk].iter_mut().zip(&q.row(i)[c..c + dk]) {
                    *d += ds * x;
                }
            }
        }
    }
    (dq, dkm, dv)
}

/// Which keys a dense attention row may see.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseRule {
    pub causal: bool,
    /// Keys at or past this index are padding.
    pub key_len: usize,
}

impl DenseRule {
    pub fn full(key_len: usize) -> Self {
        Self { causal: false, key_len }
    }

    fn visible(&self, i: usize) -> usize {
        if self.causal {
            (i + 1).min(self.key_len)
        } else {
            self.key_len
        }
    }
}

/// Materializes each head's full score matrix in turn. Allocation failure
/// is reported instead of aborting. Saved weights are laid out as
/// `[head][row][key]`.
pub fn dense_forward(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, rule: DenseRule, save: bool) -> Result<(Tensor, Vec<f64>)> {
    let (m, n) = (q.rows, k.rows);
    let dk = head_width(q, heads);
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = Tensor::zeros(m, q.cols);
    let mut probs = Vec::new();
    if save {
        probs.try_reserve_exact(heads * m * n).map_err(|e| Error::OutOfMemory(e.to_string()))?;
        probs.resize(heads * m * n, 0.0);
    }
    for h in 0..heads {
        let c = h * dk;
        let mut scores: Vec<f64> = Vec::new();
        scores.try_reserve_exact(m * n).map_err(|e| Error::OutOfMemory(format!("{m}x{n} scores: {e}")))?;
        scores.resize(m * n, 0.0);
        for i in 0..m {
            let qi = &q.row(i)[c..c + dk];
            let row = &mut scores[i * n..(i + 1) * n];
            for (j, s) in row.iter_mut().enumerate() {
                *s = dot(qi, &k.row(j)[c..c + dk]) * scale;
            }
        }
        for i in 0..m {
            let vis = rule.visible(i);
            if vis == 0 {
                continue;
            }
            let row = &mut scores[i * n..i * n + vis];
            softmax_in_place(row);
            let dst = &mut out.row_mut(i)[c..c + dk];
            for (j, &p) in row.iter().enumerate() {
                for (d, &x) in dst.iter_mut().zip(&v.row(j)[c..c + dk]) {
                    *d += p * x;
                }
            }
            if save {
                probs[(h * m + i) * n..(h * m + i) * n + vis].copy_from_slice(row);
            }
        }
    }
    Ok((out, probs))
}

pub fn dense_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    rule: DenseRule,
    probs: &[f64],
    dout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (m, n) = (q.rows, k.rows);
    let dk = head_width(q, heads);
    let scale = 1.0 / (dk as f64).sqrt();
    let (mut dq, mut dkm, mut dv) = (Tensor::zeros(m, q.cols), Tensor::zeros(n, k.cols), Tensor::zeros(n, v.cols));
    let mut dp = Vec::new();
    for h in 0..heads {
        let c = h * dk;
        for i in 0..m {
            let vis = rule.visible(i);
            let p = &probs[(h * m + i) * n..(h * m + i) * n + vis];
            let go = &dout.row(i)[c..c + dk];
            dp.clear();
            dp.extend((0..vis).map(|j| dot(go, &v.row(j)[c..c + dk])));
            let inner: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for j in 0..vis {
                for (d, &g) in dv.row_mut(j)[c..c + dk].iter_mut().zip(go) {
                    *d += p[j] * g;
                }
                let ds = p[j] * (dp[j] - inner) * scale;
                if ds == 0.0 {
                    continue;
                }
                for t in 0..dk {
                    dq.data[i * q.cols + c + t] += ds * k.data[j * k.cols + c + t];
                    dkm.data[j * k.cols + c + t] += ds * q.data[i * q.cols + c + t];
                }
            }
        }
    }
    (dq, dkm, dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::AttentionMaskSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sparse_full_pattern_equals_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (q, k, v) = (Tensor::randn(7, 8, 1.0, &mut rng), Tensor::randn(7, 8, 1.0, &mut rng), Tensor::randn(7, 8, 1.0, &mut rng));
        let (s, _) = sparse_forward(&q, &k, &v, 2, &AttentionPattern::full(7), false);
        let (d, _) = dense_forward(&q, &k, &v, 2, DenseRule::full(7), false).unwrap();
        assert!(s.max_abs_diff(&d) < 1e-12);
    }

    #[test]
    fn singleton_row_copies_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (q, k, v) = (Tensor::randn(5, 4, 1.0, &mut rng), Tensor::randn(5, 4, 1.0, &mut rng), Tensor::randn(5, 4, 1.0, &mut rng));
        // w=2 gives rows of 2-3 entries; pad rows see only themselves
        let spec = AttentionMaskSpec::local(3, 2).unwrap();
        let pattern = AttentionPattern::from_spec_padded(&spec, 5);
        let (out, _) = sparse_forward(&q, &k, &v, 1, &pattern, false);
        assert_eq!(out.row(4), v.row(4));
    }

    #[test]
    fn causal_first_row_copies_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (q, k, v) = (Tensor::randn(4, 6, 1.0, &mut rng), Tensor::randn(4, 6, 1.0, &mut rng), Tensor::randn(4, 6, 1.0, &mut rng));
        let (out, _) = dense_forward(&q, &k, &v, 3, DenseRule { causal: true, key_len: 4 }, false).unwrap();
        for (a, b) in out.row(0).iter().zip(v.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
