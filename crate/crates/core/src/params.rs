//! Named parameter storage and the Adam optimizer.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub type ParamId = usize;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Scalar count of parameters whose name satisfies `pred`.
    pub fn scalar_count_where(&self, pred: impl Fn(&str) -> bool) -> usize {
        self.iter().filter(|(n, _)| pred(n)).map(|(_, t)| t.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One update. `grads[i]` belongs to parameter `i`; `None` means zero.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) {
        self.step += 1;
        let c = self.config;
        let norm = grads.iter().flatten().flat_map(|g| g.data.iter()).map(|x| x * x).sum::<f64>().sqrt();
        let clip = if c.clip_norm > 0.0 && norm > c.clip_norm { c.clip_norm / norm } else { 1.0 };
        let b1t = 1.0 - c.beta1.powi(self.step as i32);
        let b2t = 1.0 - c.beta2.powi(self.step as i32);
        for (id, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for (((p, &g), m), v) in store.tensors[id].data.iter_mut().zip(&grad.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g * clip;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *p -= c.lr * (*m / b1t) / ((*v / b2t).sqrt() + c.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap());
        let before = store.clone();
        let mut adam = Adam::new(AdamConfig { lr: 0.0, ..Default::default() }, &store);
        adam.update(&mut store, &[Some(Tensor::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap())]);
        assert_eq!(store, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::from_vec(1, 2, vec![0.0, 0.0]).unwrap());
        let mut adam = Adam::new(AdamConfig { lr: 0.1, clip_norm: 0.0, ..Default::default() }, &store);
        adam.update(&mut store, &[Some(Tensor::from_vec(1, 2, vec![3.0, -0.5]).unwrap())]);
        let w = &store.get(0).data;
        assert!((w[0] + 0.1).abs() < 1e-6 && (w[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    #[should_panic]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(1, 1));
        store.add("w", Tensor::zeros(1, 1));
    }
}
