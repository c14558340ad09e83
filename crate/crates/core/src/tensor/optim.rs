//! Parameter storage, Glorot initialization, Adam, and the cosine decay
//! learning-rate schedule.

use std::collections::{BTreeMap, BTreeSet};

use super::dense::{DenseTensor, Scalar};
use super::rng::StreamKey;
use crate::error::{Error, Result};

/// Persistent owner of trainable parameters across training steps.
///
/// Parameters are created lazily by name; initialization draws from a stream
/// keyed by `(seed, "init", name)`, so values do not depend on creation order.
#[derive(Debug)]
pub struct ParameterStore<T: Scalar = f32> {
    seed: u64,
    params: BTreeMap<String, DenseTensor<T>>,
    regularized: BTreeSet<String>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new(seed: u64) -> Self {
        ParameterStore {
            seed,
            params: BTreeMap::new(),
            regularized: BTreeSet::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Glorot-uniform init with limit `sqrt(6 / (fan_in + fan_out))`.
    pub fn get_or_init_glorot(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> DenseTensor<T> {
        self.get_or_init_glorot_shaped(name, vec![fan_in, fan_out], fan_in, fan_out)
    }

    /// Glorot-uniform init over an arbitrary shape (attention vectors and
    /// other non-matrix parameters) with explicit fan-in/out for the limit.
    pub fn get_or_init_glorot_shaped(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        fan_in: usize,
        fan_out: usize,
    ) -> DenseTensor<T> {
        if let Some(t) = self.params.get(name) {
            return t.clone();
        }
        let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let mut stream = StreamKey::new(self.seed).label("init").label(name).stream();
        let count = shape.iter().product();
        let values = (0..count)
            .map(|_| T::from_f64(stream.uniform(-limit, limit)))
            .collect();
        let t = DenseTensor::new(shape, values).expect("shape/values agree");
        self.params.insert(name.to_string(), t.clone());
        t
    }

    pub fn get_or_init_zeros(&mut self, name: &str, shape: Vec<usize>) -> DenseTensor<T> {
        self.params
            .entry(name.to_string())
            .or_insert_with(|| DenseTensor::zeros(shape))
            .clone()
    }

    pub fn get_or_init_ones(&mut self, name: &str, shape: Vec<usize>) -> DenseTensor<T> {
        self.params
            .entry(name.to_string())
            .or_insert_with(|| {
                let n = shape.iter().product();
                DenseTensor::new(shape, vec![T::ONE; n]).expect("shape/values agree")
            })
            .clone()
    }

    /// Mark a parameter as subject to L2 weight penalty (weights, not biases).
    pub fn mark_regularized(&mut self, name: &str) {
        self.regularized.insert(name.to_string());
    }

    pub fn regularized(&self) -> impl Iterator<Item = &str> {
        self.regularized.iter().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&DenseTensor<T>> {
        self.params.get(name)
    }

    pub fn set(&mut self, name: &str, value: DenseTensor<T>) {
        self.params.insert(name.to_string(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &DenseTensor<T>)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(DenseTensor::len).sum()
    }
}

/// Adam moment estimates. `m` and `v` share shapes with their parameters.
pub struct AdamState<T: Scalar = f32> {
    step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: BTreeMap<String, DenseTensor<T>>,
    v: BTreeMap<String, DenseTensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Defaults: beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn new() -> Self {
        Self::with_hyperparams(0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            step: 0,
            beta1,
            beta2,
            epsilon,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update over every parameter in the store.
    /// Parameters without a gradient are skipped; their names are returned
    /// so the caller can warn.
    pub fn apply(
        &mut self,
        store: &mut ParameterStore<T>,
        grads: &BTreeMap<String, DenseTensor<T>>,
        lr: f64,
    ) -> Result<Vec<String>> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut skipped = Vec::new();
        let names: Vec<String> = store.params.keys().cloned().collect();
        for name in names {
            let Some(grad) = grads.get(&name) else {
                skipped.push(name);
                continue;
            };
            let param = store.params.get_mut(&name).expect("listed above");
            if grad.shape() != param.shape() {
                return Err(Error::DimMismatch {
                    op: format!("adam_step {name}"),
                    lhs: param.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| DenseTensor::zeros(param.shape().to_vec()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| DenseTensor::zeros(param.shape().to_vec()));
            for k in 0..param.len() {
                let g = grad.values()[k].to_f64();
                let mk = self.beta1 * m.values()[k].to_f64() + (1.0 - self.beta1) * g;
                let vk = self.beta2 * v.values()[k].to_f64() + (1.0 - self.beta2) * g * g;
                m.values_mut()[k] = T::from_f64(mk);
                v.values_mut()[k] = T::from_f64(vk);
                let update = lr * (mk / bc1) / ((vk / bc2).sqrt() + self.epsilon);
                let p = param.values()[k].to_f64() - update;
                param.values_mut()[k] = T::from_f64(p);
            }
        }
        Ok(skipped)
    }
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Cosine decay:
/// `base_lr * (floor + (1 - floor) * 0.5 * (1 + cos(pi * min(step, total) / total)))`.
pub fn cosine_decay_lr(step: u64, total_steps: u64, base_lr: f64, floor_fraction: f64) -> f64 {
    debug_assert!(total_steps >= 1);
    let progress = step.min(total_steps) as f64 / total_steps as f64;
    base_lr
        * (floor_fraction
            + (1.0 - floor_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
