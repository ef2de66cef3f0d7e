//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards
//! visits every node after all of its consumers.

use std::collections::HashMap;
use std::rc::Rc;

use crate::kernels::{self, DenseRule};
use crate::mask::AttentionPattern;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    RowMask(Var, Rc<[bool]>),
    SparseAttention { q: Var, k: Var, v: Var, heads: usize, pattern: Rc<AttentionPattern>, probs: Vec<f64> },
    DenseAttention { q: Var, k: Var, v: Var, heads: usize, rule: DenseRule, probs: Vec<f64> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, inv_std: Vec<f64> },
    Gelu(Var),
    Gather { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Tensor, count: usize },
    WeightedSum(Var, Tensor),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

pub struct Grads(Vec<Option<Tensor>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0[v.0].as_ref()
    }

    /// Gradient of `v`, zeros if the loss does not depend on it.
    pub fn get_or_zeros(&self, g: &Graph, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            let t = g.value(v);
            Tensor::zeros(t.rows, t.cols)
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone());
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).add(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds a 1×c row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows, 1);
        let mut out = self.value(a).clone();
        for i in 0..out.rows {
            for (x, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *x += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Zeroes the rows whose flag is false.
    pub fn row_mask(&mut self, a: Var, keep: Rc<[bool]>) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(keep.len(), out.rows);
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                out.row_mut(i).fill(0.0);
            }
        }
        self.push(out, Op::RowMask(a, keep))
    }

    pub fn sparse_attention(&mut self, q: Var, k: Var, v: Var, heads: usize, pattern: Rc<AttentionPattern>) -> Var {
        let (out, probs) = kernels::sparse_forward(self.value(q), self.value(k), self.value(v), heads, &pattern, true);
        self.push(out, Op::SparseAttention { q, k, v, heads, pattern, probs })
    }

    pub fn dense_attention(&mut self, q: Var, k: Var, v: Var, heads: usize, rule: DenseRule) -> Var {
        let (out, probs) = kernels::dense_forward(self.value(q), self.value(k), self.value(v), heads, rule, true)
            .expect("dense attention inside a training graph must fit in memory");
        self.push(out, Op::DenseAttention { q, k, v, heads, rule, probs })
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let d = xv.cols as f64;
        let mut xhat = Tensor::zeros(xv.rows, xv.cols);
        let mut out = Tensor::zeros(xv.rows, xv.cols);
        let mut inv_std = Vec::with_capacity(xv.rows);
        for i in 0..xv.rows {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for j in 0..xv.cols {
                let h = (row[j] - mean) * is;
                xhat.data[i * xv.cols + j] = h;
                out.data[i * xv.cols + j] = h * g.data[j] + b.data[j];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data.iter().map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())).collect();
        let out = Tensor { rows: xv.rows, cols: xv.cols, data };
        self.push(out, Op::Gelu(x))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols);
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(t.row(id));
        }
        self.push(out, Op::Gather { table, ids: ids.to_vec() })
    }

    /// Mean negative log-likelihood over rows with a target. Returns a 1×1
    /// node; zero when no row has a target.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows, targets.len());
        let mut probs = Tensor::zeros(l.rows, l.cols);
        let mut loss = 0.0;
        let mut count = 0;
        for (i, t) in targets.iter().enumerate() {
            let row = l.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            for (p, x) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (x - max).exp() / sum;
            }
            if let Some(t) = t {
                loss -= row[*t] - max - sum.ln();
                count += 1;
            }
        }
        let value = if count > 0 { loss / count as f64 } else { 0.0 };
        self.push(Tensor { rows: 1, cols: 1, data: vec![value] }, Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count })
    }

    /// Σ w ⊙ x as a 1×1 node.
    pub fn weighted_sum(&mut self, x: Var, w: Tensor) -> Var {
        let s = self.value(x).data.iter().zip(&w.data).map(|(a, b)| a * b).sum();
        self.push(Tensor { rows: 1, cols: 1, data: vec![s] }, Op::WeightedSum(x, w))
    }

    /// Parameter leaves created through [`Graph::param`].
    pub fn param_vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&id, &v)| (id, v))
    }

    /// Gradients of the 1×1 node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor { rows: 1, cols: 1, data: vec![1.0] });
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads(grads)
    }

    /// Gradients for every parameter in `store`, indexed by parameter id.
    pub fn param_grads(&self, grads: &Grads, store: &ParamStore) -> Vec<Option<Tensor>> {
        let mut out: Vec<Option<Tensor>> = (0..store.len()).map(|_| None).collect();
        for (id, v) in self.param_vars() {
            out[id] = grads.get(v).cloned();
        }
        out
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                accumulate(grads, *a, g.matmul_t(val(*b)));
                accumulate(grads, *b, val(*a).t_matmul(g));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                let mut gr = Tensor::zeros(1, g.cols);
                for i in 0..g.rows {
                    for (s, x) in gr.data.iter_mut().zip(g.row(i)) {
                        *s += x;
                    }
                }
                accumulate(grads, *a, g.clone());
                accumulate(grads, *row, gr);
            }
            Op::RowMask(a, keep) => {
                let mut ga = g.clone();
                for (i, &k) in keep.iter().enumerate() {
                    if !k {
                        ga.row_mut(i).fill(0.0);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SparseAttention { q, k, v, heads, pattern, probs } => {
                let (dq, dk, dv) = kernels::sparse_backward(val(*q), val(*k), val(*v), *heads, pattern, probs, g);
                accumulate(grads, *q, dq);
                accumulate(grads, *k, dk);
                accumulate(grads, *v, dv);
            }
            Op::DenseAttention { q, k, v, heads, rule, probs } => {
                let (dq, dk, dv) = kernels::dense_backward(val(*q), val(*k), val(*v), *heads, *rule, probs, g);
                accumulate(grads, *q, dq);
                accumulate(grads, *k, dk);
                accumulate(grads, *v, dv);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gm = val(*gamma);
                let (rows, cols) = g.shape();
                let d = cols as f64;
                let mut dgamma = Tensor::zeros(1, cols);
                let mut dbeta = Tensor::zeros(1, cols);
                let mut dx = Tensor::zeros(rows, cols);
                let mut dxhat = vec![0.0; cols];
                for i in 0..rows {
                    let (gi, hi) = (g.row(i), xhat.row(i));
                    for j in 0..cols {
                        dgamma.data[j] += gi[j] * hi[j];
                        dbeta.data[j] += gi[j];
                        dxhat[j] = gi[j] * gm.data[j];
                    }
                    let s1: f64 = dxhat.iter().sum();
                    let s2: f64 = dxhat.iter().zip(hi).map(|(a, b)| a * b).sum();
                    for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                        *o = inv_std[i] / d * (d * dxhat[j] - s1 - hi[j] * s2);
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *gamma, dgamma);
                accumulate(grads, *beta, dbeta);
            }
            Op::Gelu(x) => {
                let xv = val(*x);
                let data = xv
                    .data
                    .iter()
                    .zip(&g.data)
                    .map(|(&x, &go)| {
                        let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
                        let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        go * d
                    })
                    .collect();
                accumulate(grads, *x, Tensor { rows: xv.rows, cols: xv.cols, data });
            }
            Op::Gather { table, ids } => {
                let t = val(*table);
                let mut gt = Tensor::zeros(t.rows, t.cols);
                for (i, &id) in ids.iter().enumerate() {
                    for (s, x) in gt.row_mut(id).iter_mut().zip(g.row(i)) {
                        *s += x;
                    }
                }
                accumulate(grads, *table, gt);
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                let mut gl = Tensor::zeros(probs.rows, probs.cols);
                if *count > 0 {
                    let s = g.data[0] / *count as f64;
                    for (i, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        for (o, p) in gl.row_mut(i).iter_mut().zip(probs.row(i)) {
                            *o = p * s;
                        }
                        gl.row_mut(i)[*t] -= s;
                    }
                }
                accumulate(grads, *logits, gl);
            }
            Op::WeightedSum(x, w) => {
                accumulate(grads, *x, w.scale(g.data[0]));
            }
        }
    }
}
