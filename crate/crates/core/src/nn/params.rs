use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named trainable array with its accumulated gradient.
///
/// Equality compares path and value; the gradient buffer is scratch space.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub path: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl PartialEq for ParamTensor {
    fn eq(&self, other: &Self) -> bool {
        self.path == other.path && self.value == other.value
    }
}

impl ParamTensor {
    pub fn new(path: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { path: path.into(), value, grad }
    }
}

/// Parameter set addressed by stable string paths, iterated in path order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, ParamTensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) -> Result<()> {
        let path = path.into();
        if self.tensors.contains_key(&path) {
            return Err(Error::Config(format!("duplicate parameter path `{path}`")));
        }
        self.tensors.insert(path.clone(), ParamTensor::new(path, value));
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&ParamTensor> {
        self.tensors
            .get(path)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{path}`")))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut ParamTensor> {
        self.tensors
            .get_mut(path)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{path}`")))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.tensors.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.tensors.values_mut()
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.tensors.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, c: f64) {
        for p in self.tensors.values_mut() {
            p.grad.scale(c);
        }
    }
}

/// Deterministic initializers drawing from a caller-supplied generator.
pub mod init {
    use super::*;

    pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], limit: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    /// Glorot/Xavier uniform for a `fan_out × fan_in` weight.
    pub fn xavier<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        uniform(rng, shape, limit)
    }
}
