//! Structural attention masks: a sliding window, global rows/columns and an
//! identifier clique. The dense n×n matrix is only built by [`DenseMask`],
//! which exists as a reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionMaskSpec {
    n: usize,
    w: usize,
    global: Vec<usize>,
    ident: Vec<usize>,
    #[serde(skip)]
    role: Vec<Role>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
enum Role {
    #[default]
    Plain,
    Global,
    Ident,
}

impl AttentionMaskSpec {
    /// Positions are sorted and deduplicated; identifier positions that are
    /// also global are dropped from the identifier set.
    pub fn new(n: usize, w: usize, global: &[usize], ident: &[usize]) -> Result<Self> {
        if w < 2 {
            return Err(Error::Config(format!("window must be at least 2, got {w}")));
        }
        if w % 2 == 1 {
            log::warn!("odd window {w} behaves like {}", w - 1);
        }
        if let Some(&p) = global.iter().chain(ident).find(|&&p| p >= n) {
            return Err(Error::Config(format!("position {p} out of range for n={n}")));
        }
        let mut role = vec![Role::Plain; n];
        for &p in ident {
            role[p] = Role::Ident;
        }
        for &p in global {
            role[p] = Role::Global;
        }
        let global = (0..n).filter(|&p| role[p] == Role::Global).collect();
        let ident = (0..n).filter(|&p| role[p] == Role::Ident).collect();
        Ok(Self { n, w, global, ident, role })
    }

    /// Window-only mask.
    pub fn local(n: usize, w: usize) -> Result<Self> {
        Self::new(n, w, &[], &[])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn half_window(&self) -> usize {
        self.w / 2
    }

    pub fn global(&self) -> &[usize] {
        &self.global
    }

    pub fn ident(&self) -> &[usize] {
        &self.ident
    }

    pub fn is_global(&self, i: usize) -> bool {
        self.role[i] == Role::Global
    }

    pub fn is_ident(&self, i: usize) -> bool {
        self.role[i] == Role::Ident
    }

    pub fn allows_local(&self, i: usize, j: usize) -> bool {
        i.abs_diff(j) <= self.half_window()
    }

    pub fn allows_global(&self, i: usize, j: usize) -> bool {
        self.is_global(i) || self.is_global(j)
    }

    pub fn allows_identifier(&self, i: usize, j: usize) -> bool {
        self.is_ident(i) && self.is_ident(j)
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allows_local(i, j) || self.allows_global(i, j) || self.allows_identifier(i, j)
    }

    fn band(&self, i: usize) -> (usize, usize) {
        let h = self.half_window();
        (i.saturating_sub(h), (i + h + 1).min(self.n))
    }

    /// Allowed columns of row `i`, ascending.
    pub fn row(&self, i: usize, out: &mut Vec<usize>) {
        out.clear();
        if self.is_global(i) {
            out.extend(0..self.n);
            return;
        }
        let (lo, hi) = self.band(i);
        let extra: &[usize] = if self.is_ident(i) { &self.ident } else { &[] };
        let (mut g, mut x) = (self.global.iter().peekable(), extra.iter().peekable());
        let mut band = lo..hi;
        let mut next_band = band.next();
        loop {
            let candidates = [next_band, g.peek().map(|&&p| p), x.peek().map(|&&p| p)];
            let Some(m) = candidates.iter().flatten().min().copied() else { break };
            out.push(m);
            if next_band == Some(m) {
                next_band = band.next();
            }
            if g.peek() == Some(&&m) {
                g.next();
            }
            if x.peek() == Some(&&m) {
                x.next();
            }
        }
    }

    pub fn row_count(&self, i: usize) -> usize {
        if self.is_global(i) {
            return self.n;
        }
        let (lo, hi) = self.band(i);
        let outside = |set: &[usize]| set.len() - (set.partition_point(|&p| p < hi) - set.partition_point(|&p| p < lo));
        let mut count = hi - lo + outside(&self.global);
        if self.is_ident(i) {
            count += outside(&self.ident);
        }
        count
    }

    /// Exact number of allowed pairs, without enumerating them.
    pub fn nonzero_count(&self) -> usize {
        (0..self.n).map(|i| self.row_count(i)).sum()
    }

    /// Sizes of each pattern on its own, plus their union.
    pub fn pattern_counts(&self) -> PatternCounts {
        let n = self.n;
        let local = (0..n).map(|i| {
            let (lo, hi) = self.band(i);
            hi - lo
        });
        let g = self.global.len();
        PatternCounts {
            local: local.sum(),
            global: n * n - (n - g) * (n - g),
            identifier: self.ident.len() * self.ident.len(),
            union: self.nonzero_count(),
        }
    }

    /// Allowed pairs in row-major order, each exactly once.
    pub fn iter_allowed_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| {
            let mut row = Vec::new();
            self.row(i, &mut row);
            row.into_iter().map(move |j| (i, j))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternCounts {
    pub local: usize,
    pub global: usize,
    pub identifier: usize,
    pub union: usize,
}

/// Compressed-row form of an allowed-pair set; drives the attention kernels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionPattern {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
}

impl AttentionPattern {
    pub fn from_spec(spec: &AttentionMaskSpec) -> Self {
        Self::from_spec_padded(spec, spec.n())
    }

    /// Pattern over `total` positions where positions past `spec.n()` are
    /// padding: each pad row sees only itself and no real row sees a pad.
    pub fn from_spec_padded(spec: &AttentionMaskSpec, total: usize) -> Self {
        assert!(total >= spec.n());
        let mut row_ptr = Vec::with_capacity(total + 1);
        let mut cols = Vec::with_capacity(spec.nonzero_count() + total - spec.n());
        let mut row = Vec::new();
        row_ptr.push(0);
        for i in 0..spec.n() {
            spec.row(i, &mut row);
            cols.extend(row.iter().map(|&j| j as u32));
            row_ptr.push(cols.len());
        }
        for i in spec.n()..total {
            cols.push(i as u32);
            row_ptr.push(cols.len());
        }
        Self { n: total, row_ptr, cols }
    }

    pub fn full(n: usize) -> Self {
        Self::full_padded(n, n)
    }

    /// Real rows see every real position; pad rows see only themselves.
    pub fn full_padded(n: usize, total: usize) -> Self {
        assert!(total >= n);
        let mut row_ptr: Vec<usize> = (0..=n).map(|i| i * n).collect();
        let mut cols: Vec<u32> = (0..n).flat_map(|_| 0..n as u32).collect();
        for i in n..total {
            cols.push(i as u32);
            row_ptr.push(cols.len());
        }
        Self { n: total, row_ptr, cols }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }
}

/// Additive value standing in for −∞ in the dense reference.
pub const DENSE_NEG: f64 = -1e9;

/// Extensional n×n mask built pattern by pattern and combined with an
/// element-wise max over {0, DENSE_NEG} entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMask {
    n: usize,
    entries: Vec<f64>,
}

impl DenseMask {
    pub fn build(n: usize, w: usize, global: &[usize], ident: &[usize]) -> Self {
        let half = (w / 2) as i64;
        let in_g = |p: usize| global.contains(&p);
        let in_i = |p: usize| ident.contains(&p) && !global.contains(&p);
        let gate = |ok: bool| if ok { 0.0 } else { DENSE_NEG };
        let mut entries = vec![DENSE_NEG; n * n];
        for i in 0..n {
            for j in 0..n {
                let local = gate((i as i64 - j as i64).abs() <= half);
                let glob = gate(in_g(i) || in_g(j));
                let idnt = gate(in_i(i) && in_i(j));
                entries[i * n + j] = local.max(glob).max(idnt);
            }
        }
        Self { n, entries }
    }

    pub fn from_spec(spec: &AttentionMaskSpec) -> Self {
        Self::build(spec.n(), spec.w(), spec.global(), spec.ident())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn additive(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.additive(i, j) == 0.0
    }

    pub fn allowed_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.n).flat_map(|i| (0..self.n).map(move |j| (i, j))).filter(|&(i, j)| self.allowed(i, j)).collect()
    }
}

/// Renders a mask as a binary PPM image, one pixel per pair. Window pairs
/// are grey, global pairs blue, identifier pairs red, forbidden pairs white.
pub fn render_ppm(spec: &AttentionMaskSpec) -> Vec<u8> {
    let n = spec.n();
    let mut out = format!("P6\n{n} {n}\n255\n").into_bytes();
    out.reserve(n * n * 3);
    for i in 0..n {
        for j in 0..n {
            let px: [u8; 3] = if spec.allows_global(i, j) {
                [40, 90, 200]
            } else if spec.allows_identifier(i, j) {
                [210, 50, 50]
            } else if spec.allows_local(i, j) {
                [120, 120, 120]
            } else {
                [255, 255, 255]
            };
            out.extend_from_slice(&px);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, w: usize, g: &[usize], i: &[usize]) -> AttentionMaskSpec {
        AttentionMaskSpec::new(n, w, g, i).unwrap()
    }

    #[test]
    fn local_band() {
        let s = spec(10, 2, &[], &[]);
        assert!(s.allows_local(5, 6));
        assert!(!s.allows_local(5, 7));
        assert_eq!(spec(5, 2, &[], &[]).nonzero_count(), 13);
    }

    #[test]
    fn global_pairs() {
        let s = spec(3, 2, &[0], &[]);
        let pairs: Vec<_> = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).filter(|&(i, j)| s.allows_global(i, j)).collect();
        assert_eq!(pairs, vec![(0, 0), (0, 1), (0, 2), (1, 0), (2, 0)]);
        assert_eq!(s.nonzero_count(), 9);
        assert!(!spec(3, 2, &[], &[]).allows_global(0, 0));
    }

    #[test]
    fn identifier_clique() {
        let s = spec(5, 2, &[], &[1, 3]);
        let pairs: Vec<_> = (0..5).flat_map(|i| (0..5).map(move |j| (i, j))).filter(|&(i, j)| s.allows_identifier(i, j)).collect();
        assert_eq!(pairs, vec![(1, 1), (1, 3), (3, 1), (3, 3)]);
        let s = spec(5, 2, &[1], &[1, 3]);
        assert!(!s.allows_identifier(1, 3));
        assert_eq!(s.ident(), &[3]);
    }

    #[test]
    fn combined() {
        let s = spec(8, 2, &[0], &[3, 6]);
        assert!(s.allows(3, 6));
        assert!((0..8).all(|i| s.allows(i, i)));
        assert!(!spec(8, 2, &[], &[]).allows(0, 7));
    }

    #[test]
    fn wide_window_is_full() {
        let s = spec(7, 14, &[], &[]);
        assert_eq!(s.nonzero_count(), 49);
    }

    #[test]
    fn stream_matches_counts_and_oracle() {
        for s in [spec(5, 2, &[], &[]), spec(3, 2, &[0], &[]), spec(12, 4, &[2, 9], &[0, 5, 11]), spec(7, 14, &[], &[])] {
            let pairs: Vec<_> = s.iter_allowed_pairs().collect();
            assert_eq!(pairs.len(), s.nonzero_count());
            assert_eq!(pairs, DenseMask::from_spec(&s).allowed_pairs());
        }
    }

    #[test]
    fn identifier_pairs_are_a_sixteenth() {
        for n in [64usize, 256] {
            let ident: Vec<usize> = (0..n).step_by(4).collect();
            let c = spec(n, 2, &[], &ident).pattern_counts();
            assert_eq!(c.identifier * 16, n * n);
        }
    }

    #[test]
    fn padded_pattern() {
        let s = spec(4, 2, &[0], &[]);
        let p = AttentionPattern::from_spec_padded(&s, 6);
        assert_eq!(p.row(0), &[0, 1, 2, 3]);
        assert_eq!(p.row(4), &[4]);
        assert_eq!(p.row(5), &[5]);
        assert_eq!(p.nnz(), s.nonzero_count() + 2);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(AttentionMaskSpec::new(4, 0, &[], &[]).is_err());
        assert!(AttentionMaskSpec::new(4, 2, &[4], &[]).is_err());
    }

    #[test]
    fn ppm_header() {
        let img = render_ppm(&spec(3, 2, &[], &[]));
        assert!(img.starts_with(b"P6\n3 3\n255\n"));
        assert_eq!(img.len(), 11 + 27);
    }
}
