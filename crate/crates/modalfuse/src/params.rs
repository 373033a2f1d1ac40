//! Named, ordered parameter tensors plus initialization and the Adam
//! optimizer. Tensor order is insertion order and fixed for a given config,
//! which keeps checkpoints, optimizer state, and gradient walks aligned.

use crate::autodiff::{Gradients, Graph, NodeId};
use crate::error::{Error, Result};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::HashMap;

/// Ordered collection of named trainable matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    tensors: Vec<(String, Array2<f64>)>,
    index: HashMap<String, usize>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        self.index.insert(name.clone(), self.tensors.len());
        self.tensors.push((name, value));
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        let idx = self.index[name];
        &self.tensors[idx].1
    }

    pub fn try_get(&self, name: &str) -> Result<&Array2<f64>> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i].1)
            .ok_or_else(|| Error::Load(format!("missing parameter tensor `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        let idx = self.index[name];
        &mut self.tensors[idx].1
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total count of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    /// Registers every tensor as a trainable leaf on the graph.
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        let entries = self
            .tensors
            .iter()
            .map(|(n, t)| (n.clone(), graph.leaf(t.clone())))
            .collect();
        BoundParams { entries }
    }

    /// Rounds every entry to its nearest f32.
    ///
    /// Called after writing a checkpoint so the in-memory state and the
    /// saved f32 payload stay exactly equal; the checkpoint is canonical.
    pub fn quantize_f32(&mut self) {
        for (_, t) in &mut self.tensors {
            t.mapv_inplace(|v| v as f32 as f64);
        }
    }

    /// Fails when any parameter entry is non-finite.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in &self.tensors {
            if !t.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric {
                    layer: usize::MAX,
                    detail: format!("non-finite values in parameter `{name}`"),
                });
            }
        }
        Ok(())
    }
}

/// Graph leaves for one [`ParamSet`], in tensor order.
pub struct BoundParams {
    entries: Vec<(String, NodeId)>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> NodeId {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unbound parameter `{name}`"))
            .1
    }

    /// Gradients per tensor name; zero matrices for tensors the loss never
    /// touched, so optimizer state advances uniformly.
    pub fn collect_grads(
        &self,
        params: &ParamSet,
        grads: &Gradients,
    ) -> Vec<(String, Array2<f64>)> {
        self.entries
            .iter()
            .map(|(name, id)| {
                let g = grads
                    .get(*id)
                    .cloned()
                    .unwrap_or_else(|| Array2::zeros(params.get(name).raw_dim()));
                (name.clone(), g)
            })
            .collect()
    }
}

/// Normal draw with std `std`, resampled until within two deviations.
pub fn trunc_normal(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| loop {
        let v: f64 = StandardNormal.sample(rng);
        if v.abs() <= 2.0 {
            return v * std;
        }
    })
}

/// Fan-in scaled init for linear maps: truncated normal, std 1/sqrt(fan_in).
pub fn scaled_init(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    trunc_normal(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
}

/// Adam with bias correction; the learning rate is supplied per step by the
/// caller's schedule.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    moment1: HashMap<String, Array2<f64>>,
    moment2: HashMap<String, Array2<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { beta1, beta2, eps, step: 0, moment1: HashMap::new(), moment2: HashMap::new() }
    }

    /// The usual transformer settings: betas 0.9/0.999, eps 1e-8.
    pub fn standard() -> Self {
        Adam::new(0.9, 0.999, 1e-8)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, params: &mut ParamSet, grads: &[(String, Array2<f64>)], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, g) in grads {
            let m = self
                .moment1
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            let v = self
                .moment2
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);

            let target = params.get_mut(name);
            for ((t, m), v) in target.iter_mut().zip(m.iter()).zip(v.iter()) {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *t -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
