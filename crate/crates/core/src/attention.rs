//! Masked multi-head self-attention with low-rank adapters on the
//! projections of global-token rows.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels;
use crate::mask::{AttentionMaskSpec, AttentionPattern};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::tokenizer::PositionCaps;

/// Standard deviation of the Gaussian init for adapter factor A.
pub const LORA_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub d_h: usize,
    pub heads: usize,
    pub r: usize,
    pub w: usize,
    pub caps: PositionCaps,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self { d_h: 128, heads: 4, r: 8, w: 128, caps: PositionCaps::default() }
    }
}

impl AttentionConfig {
    pub fn d_k(&self) -> usize {
        self.d_h / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_h == 0 || !self.d_h.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("d_h={} is not divisible into {} heads", self.d_h, self.heads)));
        }
        if self.r == 0 || self.r > self.d_h.min(self.d_k()) {
            return Err(Error::Config(format!("rank {} must lie in 1..={}", self.r, self.d_h.min(self.d_k()))));
        }
        if self.w < 2 {
            return Err(Error::Config(format!("window must be at least 2, got {}", self.w)));
        }
        if !(self.caps.cap_i_fraction > 0.0 && self.caps.cap_i_fraction <= 1.0) {
            return Err(Error::Config("identifier cap fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Adapter parameters for the Q, K and V projections of one layer. Each
/// factor pair is B (d_h×r) and A (r×heads·d_k).
pub fn adapter_param_count(config: &AttentionConfig) -> usize {
    3 * config.r * (config.d_h + config.heads * config.d_k())
}

/// Parameters of one attention block: shared projections plus the attention
/// half's output projection.
pub fn attention_block_param_count(config: &AttentionConfig) -> usize {
    3 * config.d_h * config.heads * config.d_k() + config.d_h * config.d_h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoraIds {
    pub a: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    /// Q, K, V adapters.
    pub lora: Option<[LoraIds; 3]>,
}

impl AttnIds {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, config: &AttentionConfig, with_lora: bool, rng: &mut R) -> Self {
        let d = config.d_h;
        let inner = config.heads * config.d_k();
        let std = 1.0 / (d as f64).sqrt();
        let wq = store.add(format!("{prefix}.w_q"), Tensor::randn(d, inner, std, rng));
        let wk = store.add(format!("{prefix}.w_k"), Tensor::randn(d, inner, std, rng));
        let wv = store.add(format!("{prefix}.w_v"), Tensor::randn(d, inner, std, rng));
        let wo = store.add(format!("{prefix}.w_o"), Tensor::randn(inner, d, 1.0 / (inner as f64).sqrt(), rng));
        let lora = with_lora.then(|| {
            ["q", "k", "v"].map(|which| LoraIds {
                a: store.add(format!("{prefix}.lora_{which}.a"), Tensor::randn(config.r, inner, LORA_INIT_STD, rng)),
                b: store.add(format!("{prefix}.lora_{which}.b"), Tensor::zeros(d, config.r)),
            })
        });
        Self { wq, wk, wv, wo, lora }
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> AttnVars {
        AttnVars {
            wq: g.param(store, self.wq),
            wk: g.param(store, self.wk),
            wv: g.param(store, self.wv),
            wo: g.param(store, self.wo),
            lora: self.lora.map(|l| l.map(|x| (g.param(store, x.a), g.param(store, x.b)))),
        }
    }
}

/// Graph handles for one attention block's parameters. Adapter pairs are
/// `(A, B)`.
#[derive(Debug, Clone, Copy)]
pub struct AttnVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub lora: Option<[(Var, Var); 3]>,
}

fn project_graph(g: &mut Graph, h: Var, w: Var, adapter: Option<(Var, Var)>, masked: Option<Var>) -> Var {
    let base = g.matmul(h, w);
    match (adapter, masked) {
        (Some((a, b)), Some(hm)) => {
            let hb = g.matmul(hm, b);
            let delta = g.matmul(hb, a);
            g.add(base, delta)
        }
        _ => base,
    }
}

/// Q/K/V projections on the tape. Rows flagged in `global_rows` get W + B·A.
pub fn project_block(g: &mut Graph, p: &AttnVars, h: Var, global_rows: &Rc<[bool]>) -> (Var, Var, Var) {
    let masked = p.lora.map(|_| g.row_mask(h, global_rows.clone()));
    let ad = |i: usize| p.lora.map(|l| l[i]);
    let q = project_graph(g, h, p.wq, ad(0), masked);
    let k = project_graph(g, h, p.wk, ad(1), masked);
    let v = project_graph(g, h, p.wv, ad(2), masked);
    (q, k, v)
}

/// Full attention half of a layer on the tape.
pub fn attention_block(g: &mut Graph, p: &AttnVars, heads: usize, h: Var, global_rows: &Rc<[bool]>, pattern: &Rc<AttentionPattern>) -> Var {
    let (q, k, v) = project_block(g, p, h, global_rows);
    let o = g.sparse_attention(q, k, v, heads, pattern.clone());
    g.matmul(o, p.wo)
}

/// A standalone attention layer owning its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAttentionLayer {
    pub config: AttentionConfig,
    pub store: ParamStore,
    pub ids: AttnIds,
}

impl SparseAttentionLayer {
    pub fn new<R: Rng + ?Sized>(config: AttentionConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let ids = AttnIds::init(&mut store, "attn", &config, true, rng);
        Ok(Self { config, store, ids })
    }

    /// Same shared weights, no adapters.
    pub fn without_adapters(&self) -> Self {
        Self { ids: AttnIds { lora: None, ..self.ids }, ..self.clone() }
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        self.store.get(id)
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        self.store.get_mut(id)
    }

    fn check_input(&self, h: &Tensor) -> Result<()> {
        if h.cols != self.config.d_h {
            return Err(Error::Shape(format!("input has {} columns, layer expects {}", h.cols, self.config.d_h)));
        }
        Ok(())
    }

    fn project_one(&self, h: &Tensor, masked: Option<&Tensor>, w: ParamId, lora: Option<LoraIds>) -> Tensor {
        let base = h.matmul(self.param(w));
        match (lora, masked) {
            (Some(l), Some(hm)) => base.add(&hm.matmul(self.param(l.b)).matmul(self.param(l.a))),
            _ => base,
        }
    }

    /// Q, K, V with heads as column blocks. Rows with `global_rows[i]` use
    /// the adapted projections.
    pub fn project(&self, h: &Tensor, global_rows: &[bool]) -> Result<(Tensor, Tensor, Tensor)> {
        self.check_input(h)?;
        if global_rows.len() != h.rows {
            return Err(Error::Shape(format!("{} role flags for {} rows", global_rows.len(), h.rows)));
        }
        let masked = self.ids.lora.map(|_| {
            let mut m = h.clone();
            for (i, &keep) in global_rows.iter().enumerate() {
                if !keep {
                    m.row_mut(i).fill(0.0);
                }
            }
            m
        });
        let l = |i: usize| self.ids.lora.map(|x| x[i]);
        Ok((
            self.project_one(h, masked.as_ref(), self.ids.wq, l(0)),
            self.project_one(h, masked.as_ref(), self.ids.wk, l(1)),
            self.project_one(h, masked.as_ref(), self.ids.wv, l(2)),
        ))
    }

    /// Per-head attention over the allowed pairs of `spec`, heads
    /// concatenated column-wise.
    pub fn attend(&self, q: &Tensor, k: &Tensor, v: &Tensor, spec: &AttentionMaskSpec) -> Result<Tensor> {
        let inner = self.config.heads * self.config.d_k();
        for t in [q, k, v] {
            if t.rows != spec.n() || t.cols != inner {
                return Err(Error::Shape(format!("{:?} does not match n={} and width {inner}", t.shape(), spec.n())));
            }
        }
        let pattern = AttentionPattern::from_spec(spec);
        Ok(kernels::sparse_forward(q, k, v, self.config.heads, &pattern, false).0)
    }

    pub fn forward(&self, h: &Tensor, spec: &AttentionMaskSpec) -> Result<Tensor> {
        self.check_input(h)?;
        if h.rows != spec.n() {
            return Err(Error::Shape(format!("{} rows for a mask over {}", h.rows, spec.n())));
        }
        let roles = global_rows(spec);
        let (q, k, v) = self.project(h, &roles)?;
        Ok(self.attend(&q, &k, &v, spec)?.matmul(self.param(self.ids.wo)))
    }

    /// Same computation recorded on a tape.
    pub fn forward_graph(&self, g: &mut Graph, h: Var, spec: &AttentionMaskSpec) -> Var {
        let p = self.ids.bind(g, &self.store);
        let roles: Rc<[bool]> = global_rows(spec).into();
        let pattern = Rc::new(AttentionPattern::from_spec(spec));
        attention_block(g, &p, self.config.heads, h, &roles, &pattern)
    }

    pub fn adapter_param_count(&self) -> usize {
        adapter_param_count(&self.config)
    }
}

pub fn global_rows(spec: &AttentionMaskSpec) -> Vec<bool> {
    (0..spec.n()).map(|i| spec.is_global(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(d_h: usize, heads: usize, r: usize, seed: u64) -> SparseAttentionLayer {
        let config = AttentionConfig { d_h, heads, r, w: 2, caps: PositionCaps::default() };
        SparseAttentionLayer::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn adapter_counts() {
        let c = |d_h, heads, r| AttentionConfig { d_h, heads, r, w: 2, caps: PositionCaps::default() };
        assert_eq!(adapter_param_count(&c(4, 1, 1)), 24);
        assert_eq!(adapter_param_count(&c(768, 1, 8)), 36_864);
        let l = layer(8, 2, 2, 0);
        let lora_scalars = l.store.scalar_count_where(|n| n.contains("lora"));
        assert_eq!(lora_scalars, l.adapter_param_count());
    }

    #[test]
    fn config_validation() {
        let ok = AttentionConfig { d_h: 8, heads: 2, r: 2, w: 2, caps: PositionCaps::default() };
        assert!(ok.validate().is_ok());
        assert!(AttentionConfig { heads: 3, ..ok }.validate().is_err());
        assert!(AttentionConfig { r: 0, ..ok }.validate().is_err());
        assert!(AttentionConfig { r: 5, ..ok }.validate().is_err());
        assert!(AttentionConfig { w: 1, ..ok }.validate().is_err());
    }

    #[test]
    fn basis_vector_projection() {
        let mut l = layer(4, 1, 1, 1);
        let w = Tensor::from_vec(4, 4, (0..16).map(f64::from).collect()).unwrap();
        *l.param_mut(l.ids.wq) = w.clone();
        let h = Tensor::from_vec(1, 4, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let (q, _, _) = l.project(&h, &[false]).unwrap();
        assert_eq!(q.row(0), w.row(0));
    }

    #[test]
    fn rank_one_perturbation_on_global_rows() {
        let mut l = layer(4, 1, 1, 2);
        let lq = l.ids.lora.unwrap()[0];
        // B·A = 2·u·vᵀ
        let u = [1.0, 0.0, -1.0, 0.5];
        let v = [0.5, 1.0, 0.0, -2.0];
        *l.param_mut(lq.b) = Tensor::from_vec(4, 1, u.iter().map(|x| 2.0 * x).collect()).unwrap();
        *l.param_mut(lq.a) = Tensor::from_vec(1, 4, v.to_vec()).unwrap();
        let h = Tensor::from_rows(&[vec![0.3, -0.2, 0.7, 1.0], vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let (q, _, _) = l.project(&h, &[true, false]).unwrap();
        let shared = h.matmul(l.param(l.ids.wq));
        let hu: f64 = h.row(0).iter().zip(&u).map(|(a, b)| a * b).sum();
        for j in 0..4 {
            assert!((q.at(0, j) - (shared.at(0, j) + 2.0 * hu * v[j])).abs() < 1e-12);
        }
        assert_eq!(q.row(1), shared.row(1));
    }

    #[test]
    fn fresh_adapters_are_neutral() {
        let l = layer(16, 4, 2, 3);
        let spec = AttentionMaskSpec::new(10, 2, &[0, 7], &[3, 5]).unwrap();
        let h = Tensor::randn(10, 16, 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        let with = l.forward(&h, &spec).unwrap();
        let without = l.without_adapters().forward(&h, &spec).unwrap();
        assert!(with.data.iter().zip(&without.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        let mut other_a = l.clone();
        let a = other_a.ids.lora.unwrap()[1].a;
        *other_a.param_mut(a) = Tensor::randn(2, 16, 5.0, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(other_a.forward(&h, &spec).unwrap(), with);
    }

    #[test]
    fn graph_matches_plain_forward() {
        let mut l = layer(8, 2, 2, 6);
        let b = l.ids.lora.unwrap()[0].b;
        *l.param_mut(b) = Tensor::randn(8, 2, 0.5, &mut ChaCha8Rng::seed_from_u64(7));
        let spec = AttentionMaskSpec::new(6, 2, &[2], &[0, 5]).unwrap();
        let h = Tensor::randn(6, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(8));
        let mut g = Graph::new();
        let hv = g.leaf(h.clone());
        let out = l.forward_graph(&mut g, hv, &spec);
        assert_eq!(g.value(out), &l.forward(&h, &spec).unwrap());
    }

    #[test]
    fn single_row_input() {
        let l = layer(4, 2, 1, 9);
        let spec = AttentionMaskSpec::local(1, 2).unwrap();
        let h = Tensor::from_vec(1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let (_, _, v) = l.project(&h, &[false]).unwrap();
        let out = l.forward(&h, &spec).unwrap();
        let expected = v.matmul(l.param(l.ids.wo));
        assert!(out.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let l = layer(4, 1, 1, 10);
        let spec = AttentionMaskSpec::local(3, 2).unwrap();
        assert!(matches!(l.forward(&Tensor::zeros(3, 5), &spec), Err(Error::Shape(_))));
        assert!(matches!(l.forward(&Tensor::zeros(2, 4), &spec), Err(Error::Shape(_))));
    }
}
