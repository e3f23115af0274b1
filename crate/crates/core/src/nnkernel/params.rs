use std::collections::HashMap;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{cast, NnError, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// A named parameter tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub value: Array2<S>,
    pub grad: Array2<S>,
    m: Array2<S>,
    v: Array2<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
    by_name: HashMap<String, ParamId>,
    step: u64,
    grads_populated: bool,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new(), step: 0, grads_populated: false }
    }

    /// Registers a tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Array2<S>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.params.len());
        let zeros = Array2::zeros(value.raw_dim());
        self.params.push(Param { name: name.clone(), grad: zeros.clone(), m: zeros.clone(), v: zeros, value });
        self.by_name.insert(name, id);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn value(&self, id: ParamId) -> &Array2<S> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<S> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<S> {
        &self.params[id.0].grad
    }

    /// Gradient accumulator for `id`; marks the store as holding gradients.
    pub fn grad_mut(&mut self, id: ParamId) -> &mut Array2<S> {
        self.grads_populated = true;
        &mut self.params[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::zero());
        }
        self.grads_populated = false;
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| {
                let g = g.to_f64().unwrap();
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale: S = cast(max_norm / norm);
            for p in &mut self.params {
                p.grad.mapv_inplace(|g| g * scale);
            }
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    /// Adam with bias correction; gradients are zeroed afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<(), NnError> {
        if !self.grads_populated {
            return Err(NnError::EmptyGradients);
        }
        self.step += 1;
        let t = self.step as f64;
        let b1: S = cast(cfg.beta1);
        let b2: S = cast(cfg.beta2);
        let one = S::one();
        let bc1: S = cast(1.0 - cfg.beta1.powf(t));
        let bc2: S = cast(1.0 - cfg.beta2.powf(t));
        let lr: S = cast(cfg.lr);
        let eps: S = cast(cfg.eps);
        for p in &mut self.params {
            Zip::from(&mut p.value).and(&mut p.m).and(&mut p.v).and(&p.grad).for_each(|w, m, v, &g| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
        self.zero_grads();
        Ok(())
    }

    pub fn adam_steps_taken(&self) -> u64 {
        self.step
    }

    /// Copies values from another store with identical names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore<S>) -> Result<(), NnError> {
        for p in &other.params {
            let id = self.id(&p.name).ok_or_else(|| NnError::Checkpoint(format!("unknown parameter {}", p.name)))?;
            let dst = &mut self.params[id.0].value;
            if dst.shape() != p.value.shape() {
                return Err(NnError::ShapeMismatch {
                    op: "copy_values_from",
                    expected: format!("{:?}", dst.shape()),
                    got: format!("{:?}", p.value.shape()),
                });
            }
            dst.assign(&p.value);
        }
        Ok(())
    }

    /// Converts values to another precision (moments and gradients reset).
    pub fn cast_to<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.add(p.name.clone(), p.value.mapv(|v| T::from(v).unwrap()));
        }
        out
    }
}
