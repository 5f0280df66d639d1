//! Named parameter storage and the adaptive-moment gradient descent used by
//! both optimization stages of the pipeline.

use std::collections::HashMap;

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Registry of named parameter tensors. Optimizer state is indexed by the
/// insertion order, which is deterministic.
#[derive(Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter {name}"
        );
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(t);
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.values[self.id(name)]
    }

    pub fn get_by_id(&self, id: usize) -> &Tensor {
        &self.values[id]
    }

    pub fn set(&mut self, name: &str, t: Tensor) {
        let id = self.id(name);
        assert_eq!(self.values[id].shape, t.shape);
        self.values[id] = t;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Ids of all parameters whose names start with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<usize> {
        self.names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with(prefix))
            .map(|(i, _)| i)
            .collect()
    }

    /// Materialize a parameter as a gradient-tracked leaf on `g`.
    pub fn leaf<'g>(&self, g: &'g Graph, name: &str) -> Var<'g> {
        g.leaf(self.get(name).clone())
    }
}

/// Per-parameter gradient accumulator aligned with a `ParamSet`.
pub struct GradAccum {
    grads: Vec<Option<Tensor>>,
}

impl GradAccum {
    pub fn new(params: &ParamSet) -> Self {
        GradAccum {
            grads: (0..params.len()).map(|_| None).collect(),
        }
    }

    pub fn add(&mut self, id: usize, g: Tensor) {
        match &mut self.grads[id] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    pub fn merge(&mut self, other: GradAccum) {
        for (id, g) in other.grads.into_iter().enumerate() {
            if let Some(g) = g {
                self.add(id, g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in &mut g.data {
                *v *= s;
            }
        }
    }

    pub fn get(&self, id: usize) -> Option<&Tensor> {
        self.grads[id].as_ref()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }
}

/// Adam with per-parameter step counts, so parameters that only receive
/// sparse gradients (per-frame vertex offsets) are bias-corrected by their
/// own update count.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    steps: Vec<u64>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.values.iter().map(|t| Tensor::zeros(t.shape.clone())).collect(),
            v: params.values.iter().map(|t| Tensor::zeros(t.shape.clone())).collect(),
            steps: vec![0; params.len()],
        }
    }

    /// Apply one update to the listed parameter ids (others are frozen even
    /// if they received gradients).
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradAccum, active: &[usize]) {
        for &id in active {
            let Some(g) = grads.get(id) else { continue };
            self.steps[id] += 1;
            let t = self.steps[id] as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            let p = &mut params.values[id];
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut params = ParamSet::new();
        params.insert("x", Tensor::vector(vec![5.0, -3.0]));
        let mut adam = Adam::new(&params, 0.1);
        let active = vec![0];
        for _ in 0..400 {
            let g = Graph::new();
            let x = params.leaf(&g, "x");
            let target = g.constant(Tensor::vector(vec![1.0, 2.0]));
            let loss = x.sub(target).square().sum();
            let grads = g.backward(loss);
            let mut acc = GradAccum::new(&params);
            acc.add(0, grads.of(x));
            adam.step(&mut params, &acc, &active);
        }
        let x = params.get("x");
        assert!((x.data[0] - 1.0).abs() < 1e-3, "{:?}", x.data);
        assert!((x.data[1] - 2.0).abs() < 1e-3, "{:?}", x.data);
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut params = ParamSet::new();
        params.insert("a", Tensor::scalar(1.0));
        params.insert("b", Tensor::scalar(2.0));
        let mut adam = Adam::new(&params, 0.5);
        let g = Graph::new();
        let a = params.leaf(&g, "a");
        let b = params.leaf(&g, "b");
        let loss = a.mul(b).sum();
        let grads = g.backward(loss);
        let mut acc = GradAccum::new(&params);
        acc.add(0, grads.of(a));
        acc.add(1, grads.of(b));
        adam.step(&mut params, &acc, &[0]);
        assert_eq!(params.get("b").item(), 2.0);
        assert!(params.get("a").item() < 1.0);
    }
}
