//! Memory and time scaling of one attention layer in sparse and dense
//! modes, plus adapter overhead accounting.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{adapter_param_count, attention_block_param_count, global_rows, AttentionConfig, SparseAttentionLayer};
use crate::error::{Error, Result};
use crate::kernels::{self, DenseRule};
use crate::mask::{AttentionMaskSpec, AttentionPattern};
use crate::model::AttentionMode;
use crate::tensor::Tensor;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static ACTIVE: AtomicBool = AtomicBool::new(false);

/// System allocator that tracks live and peak heap bytes. Install it with
/// `#[global_allocator]` in the binary to get `peak_resident_bytes`.
pub struct CountingAlloc;

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
            ACTIVE.store(true, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            if new_size >= layout.size() {
                let now = CURRENT.fetch_add(new_size - layout.size(), Ordering::Relaxed) + new_size - layout.size();
                PEAK.fetch_max(now, Ordering::Relaxed);
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

/// Starts a measurement scope and returns the live byte count at its start.
fn reset_peak() -> usize {
    let now = CURRENT.load(Ordering::Relaxed);
    PEAK.store(now, Ordering::Relaxed);
    now
}

fn allocator_installed() -> bool {
    ACTIVE.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub attention: AttentionConfig,
    pub seed: u64,
    /// Rows whose estimated activations exceed this are reported as out of
    /// memory without running.
    pub memory_budget_bytes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub attention_mode: AttentionMode,
    pub nonzero_pairs: usize,
    /// Saved attention probabilities: pairs × heads × 8 bytes.
    pub est_activation_bytes: usize,
    pub peak_resident_bytes: Option<usize>,
    pub wall_time_ms: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
}

/// Evenly spaced global positions up to the cap, then identifier positions
/// spread over the remaining tokens up to the identifier cap.
pub fn synthetic_positions(n: usize, config: &AttentionConfig) -> (Vec<usize>, Vec<usize>) {
    let g = config.caps.cap_g.min(n);
    let global: Vec<usize> = (0..g).map(|k| k * n / g.max(1)).collect();
    let rest: Vec<usize> = (0..n).filter(|p| global.binary_search(p).is_err()).collect();
    let m = config.caps.ident_limit(n).min(rest.len());
    let ident = (0..m).map(|k| rest[k * rest.len() / m]).collect();
    (global, ident)
}

fn bytes_per_pair(config: &AttentionConfig) -> usize {
    config.heads * std::mem::size_of::<f64>()
}

fn run_row(n: usize, mode: AttentionMode, layer: &SparseAttentionLayer, config: &BenchConfig) -> BenchRow {
    let att = &config.attention;
    let (global, ident) = synthetic_positions(n, att);
    let spec = AttentionMaskSpec::new(n, att.w, &global, &ident).expect("synthetic positions lie in range");
    let nonzero_pairs = match mode {
        AttentionMode::Sparse => spec.nonzero_count(),
        AttentionMode::Dense => n * n,
    };
    let est = nonzero_pairs * bytes_per_pair(att);
    let mut row = BenchRow {
        n,
        attention_mode: mode,
        nonzero_pairs,
        est_activation_bytes: est,
        peak_resident_bytes: None,
        wall_time_ms: None,
        error: None,
    };
    if config.memory_budget_bytes.is_some_and(|b| est > b) {
        row.error = Some(Error::OutOfMemory(format!("{est} activation bytes exceed the budget")).to_string());
        return row;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ n as u64);
    let h = Tensor::randn(n, att.d_h, 1.0, &mut rng);
    let base = reset_peak();
    let start = Instant::now();
    let outcome = (|| -> Result<Tensor> {
        let (q, k, v) = match mode {
            AttentionMode::Sparse => layer.project(&h, &global_rows(&spec))?,
            AttentionMode::Dense => layer.project(&h, &vec![false; n])?,
        };
        let out = match mode {
            AttentionMode::Sparse => kernels::sparse_forward(&q, &k, &v, att.heads, &AttentionPattern::from_spec(&spec), true),
            AttentionMode::Dense => kernels::dense_forward(&q, &k, &v, att.heads, DenseRule::full(n), true)?,
        };
        Ok(out.0)
    })();
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    match outcome {
        Ok(_) => {
            row.wall_time_ms = Some(elapsed);
            row.peak_resident_bytes = allocator_installed().then(|| PEAK.load(Ordering::Relaxed).saturating_sub(base));
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// One forward pass per length and mode. Failures are recorded per row.
pub fn bench_scaling(lengths: &[usize], config: &BenchConfig) -> Result<BenchResult> {
    config.attention.validate()?;
    if lengths.is_empty() || lengths.contains(&0) {
        return Err(Error::Config("lengths must be a non-empty list of positive sizes".into()));
    }
    if lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("lengths must be strictly ascending".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layer = SparseAttentionLayer::new(config.attention, &mut rng)?;
    let mut rows = Vec::with_capacity(2 * lengths.len());
    for &n in lengths {
        for mode in [AttentionMode::Sparse, AttentionMode::Dense] {
            let row = run_row(n, mode, &layer, config);
            log::info!("n={n} {mode:?}: {} pairs, peak {:?} bytes", row.nonzero_pairs, row.peak_resident_bytes);
            rows.push(row);
        }
    }
    Ok(BenchResult { config: *config, rows })
}

/// Least-squares fit of `y = a + b·x`; returns (a, b, R²).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let b = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let a = my - b * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|yi| (yi - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (a, b, r2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// R² of sparse pair counts against n.
    pub sparse_linear_r2: f64,
    /// R² of dense pair counts against n².
    pub dense_quadratic_r2: f64,
}

pub fn scaling_fit(result: &BenchResult) -> ScalingFit {
    let series = |mode, power: i32| -> (Vec<f64>, Vec<f64>) {
        result.rows.iter().filter(|r| r.attention_mode == mode).map(|r| ((r.n as f64).powi(power), r.nonzero_pairs as f64)).unzip()
    };
    let (xs, ys) = series(AttentionMode::Sparse, 1);
    let (xd, yd) = series(AttentionMode::Dense, 2);
    ScalingFit { sparse_linear_r2: linear_fit(&xs, &ys).2, dense_quadratic_r2: linear_fit(&xd, &yd).2 }
}

/// Two-curve chart of the memory column against n. Measured peaks are
/// used when every row has one, the analytic estimate otherwise.
pub fn render_svg(result: &BenchResult) -> String {
    let measured = result.rows.iter().all(|r| r.peak_resident_bytes.is_some());
    let value = |r: &BenchRow| if measured { r.peak_resident_bytes.unwrap() } else { r.est_activation_bytes } as f64 / (1 << 20) as f64;
    let (w, h, pad) = (640.0, 400.0, 60.0);
    let max_n = result.rows.iter().map(|r| r.n).max().unwrap_or(1) as f64;
    let max_y = result.rows.iter().filter(|r| r.error.is_none()).map(value).fold(1e-9, f64::max);
    let px = |n: f64| pad + n / max_n * (w - 2.0 * pad);
    let py = |y: f64| h - pad - y / max_y * (h - 2.0 * pad);
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n");
    svg += &format!("<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n");
    svg += &format!("<line x1=\"{pad}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n", h - pad, w - pad);
    svg += &format!("<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n", h - pad);
    svg += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">sequence length n</text>\n", w / 2.0, h - 20.0);
    let label = if measured { "peak heap (MiB)" } else { "estimated activations (MiB)" };
    svg += &format!("<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">{label}</text>\n", h / 2.0, h / 2.0);
    svg += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{max_y:.1}</text>\n", pad - 5.0, pad + 4.0);
    for (mode, color, dy) in [(AttentionMode::Sparse, "#1f77b4", 0.0), (AttentionMode::Dense, "#d62728", 16.0)] {
        let pts: Vec<String> = result
            .rows
            .iter()
            .filter(|r| r.attention_mode == mode && r.error.is_none())
            .map(|r| format!("{:.1},{:.1}", px(r.n as f64), py(value(r))))
            .collect();
        svg += &format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n", pts.join(" "));
        for r in result.rows.iter().filter(|r| r.attention_mode == mode) {
            if r.error.is_some() {
                svg += &format!("<text x=\"{:.1}\" y=\"{}\" fill=\"{color}\" text-anchor=\"middle\">OOM</text>\n", px(r.n as f64), pad);
            }
        }
        let name = if mode == AttentionMode::Sparse { "sparse" } else { "dense" };
        svg += &format!("<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>\n", pad + 10.0, pad + dy);
    }
    for r in result.rows.iter().filter(|r| r.attention_mode == AttentionMode::Sparse) {
        svg += &format!("<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", px(r.n as f64), h - pad + 15.0, r.n);
    }
    svg + "</svg>\n"
}

/// Parameter counts of a 12-layer, 768-wide pre-trained encoder used to
/// put adapter overhead in whole-model terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub layers: usize,
    pub d_h: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub max_positions: usize,
}

impl Default for EncoderShape {
    fn default() -> Self {
        Self { layers: 12, d_h: 768, d_ff: 3072, vocab: 51_416, max_positions: 1026 }
    }
}

impl EncoderShape {
    /// Embeddings, attention and feed-forward weights with biases, and two
    /// layer norms per layer.
    pub fn param_count(&self) -> usize {
        let d = self.d_h;
        let embed = (self.vocab + self.max_positions) * d + 2 * d;
        let attn = 4 * (d * d + d);
        let ff = d * self.d_ff + self.d_ff + self.d_ff * d + d;
        embed + self.layers * (attn + ff + 4 * d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterReport {
    pub adapter_params_per_layer: usize,
    pub attention_block_params: usize,
    pub block_ratio: f64,
    pub whole_model_params: usize,
    pub whole_model_adapter_params: usize,
    pub whole_model_ratio: f64,
}

pub fn adapter_report(config: &AttentionConfig, encoder: &EncoderShape) -> AdapterReport {
    let per_layer = adapter_param_count(config);
    let block = attention_block_param_count(config);
    let total = encoder.layers * per_layer;
    let whole = encoder.param_count();
    AdapterReport {
        adapter_params_per_layer: per_layer,
        attention_block_params: block,
        block_ratio: per_layer as f64 / block as f64,
        whole_model_params: whole,
        whole_model_adapter_params: total,
        whole_model_ratio: total as f64 / whole as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig { attention: AttentionConfig { d_h: 16, heads: 2, r: 2, w: 8, ..AttentionConfig::default() }, ..BenchConfig::default() }
    }

    #[test]
    fn single_token_rows() {
        let r = bench_scaling(&[1], &small()).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows.iter().all(|row| row.nonzero_pairs == 1 && row.error.is_none()));
    }

    #[test]
    fn dense_pairs_are_square_and_rows_sorted() {
        let r = bench_scaling(&[8, 32, 64], &small()).unwrap();
        assert!(r.rows.windows(2).all(|w| w[0].n <= w[1].n));
        for row in r.rows.iter().filter(|r| r.attention_mode == AttentionMode::Dense) {
            assert_eq!(row.nonzero_pairs, row.n * row.n);
        }
    }

    #[test]
    fn budget_marks_dense_rows_only() {
        let mut cfg = small();
        cfg.memory_budget_bytes = Some(128 * 128 * 16 - 1);
        let r = bench_scaling(&[32, 128], &cfg).unwrap();
        let failed: Vec<_> = r.rows.iter().filter(|r| r.error.is_some()).map(|r| (r.n, r.attention_mode)).collect();
        assert_eq!(failed, vec![(128, AttentionMode::Dense)]);
        assert!(r.rows.iter().any(|row| row.n == 128 && row.attention_mode == AttentionMode::Sparse && row.wall_time_ms.is_some()));
        assert!(render_svg(&r).contains("OOM"));
    }

    #[test]
    fn rejects_unsorted_lengths() {
        assert!(bench_scaling(&[64, 32], &small()).is_err());
        assert!(bench_scaling(&[], &small()).is_err());
    }

    #[test]
    fn perfect_line_fit() {
        let (a, b, r2) = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_positions_respect_caps() {
        let cfg = AttentionConfig::default();
        let (g, i) = synthetic_positions(1024, &cfg);
        assert_eq!(g.len(), 64);
        assert_eq!(i.len(), 256);
        assert!(i.iter().all(|p| !g.contains(p)));
        let (g, i) = synthetic_positions(4096, &cfg);
        assert_eq!((g.len(), i.len()), (64, 768));
    }

    #[test]
    fn adapter_ratio() {
        let cfg = AttentionConfig { d_h: 768, heads: 12, r: 8, ..AttentionConfig::default() };
        let rep = adapter_report(&cfg, &EncoderShape::default());
        assert_eq!(rep.adapter_params_per_layer, 36_864);
        assert!(rep.block_ratio < 0.02);
        assert!(rep.whole_model_ratio < 0.005);
    }
}
