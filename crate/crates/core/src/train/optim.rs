//! Adam with global-norm clipping, and the plateau learning-rate rule.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    /// Number of updates applied so far.
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = || params.iter().map(|p| (p.path.clone(), Tensor::zeros(p.value.shape()))).collect();
        Self { t: 0, m: zeros(), v: zeros() }
    }
}

/// One bias-corrected Adam update from the gradients stored in `params`.
/// A non-finite gradient aborts before anything is modified.
pub fn adam_step(params: &mut ModelParams, state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::NonFinite { op: format!("gradient of {}", p.path) });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for p in params.iter_mut() {
        let m = state.m.entry(p.path.clone()).or_insert_with(|| Tensor::zeros(p.value.shape()));
        let v = state.v.entry(p.path.clone()).or_insert_with(|| Tensor::zeros(p.value.shape()));
        if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
            return Err(Error::shape("adam", format!("moment shape mismatch for {}", p.path)));
        }
        let g = p.grad.data();
        for (i, w) in p.value.data_mut().iter_mut().enumerate() {
            let mi = &mut m.data_mut()[i];
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g[i];
            let vi = &mut v.data_mut()[i];
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m.data()[i] / c1;
            let v_hat = v.data()[i] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Rescales gradients so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm && norm.is_finite() {
        params.scale_grads(max_norm / norm);
    }
    norm
}

/// Replays the plateau rule over `history` (one validation loss per epoch,
/// the last entry belonging to `epoch`) and returns the number of halvings
/// applied up to and including `epoch`.
///
/// An epoch counts as non-improving when its loss is `>=` the previous one.
/// After `patience` consecutive such epochs, and only past `warmup`, the rate
/// is halved and the count restarts.
pub fn halvings(epoch: usize, history: &[f64], warmup: usize, patience: usize) -> usize {
    let first = (epoch + 1).saturating_sub(history.len());
    let mut run = 0;
    let mut count = 0;
    for i in 1..history.len() {
        let e = first + i;
        run = if history[i] >= history[i - 1] { run + 1 } else { 0 };
        if e > warmup && run >= patience {
            count += 1;
            run = 0;
        }
    }
    count
}

/// Whether the rule halves the learning rate at `epoch`.
pub fn lr_schedule(epoch: usize, history: &[f64], warmup: usize, patience: usize) -> bool {
    let before = if history.is_empty() { 0 } else { halvings(epoch - 1, &history[..history.len() - 1], warmup, patience) };
    halvings(epoch, history, warmup, patience) > before
}

/// Learning rate in effect after `epoch`.
pub fn lr_after(base: f64, epoch: usize, history: &[f64], warmup: usize, patience: usize) -> f64 {
    base * 0.5f64.powi(halvings(epoch, history, warmup, patience) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(x: f64) -> ModelParams {
        let mut p = ModelParams::new();
        p.insert("x", Tensor::full(&[1], x)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_params(0.3);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &mut s, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p.get("x").unwrap().value.data()[0], 0.3);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.5, -3.0, 1e-3] {
            let mut p = scalar_params(1.0);
            p.get_mut("x").unwrap().grad.data_mut()[0] = g;
            let mut s = AdamState::new(&p);
            adam_step(&mut p, &mut s, 0.01, &AdamConfig::default()).unwrap();
            let moved = p.get("x").unwrap().value.data()[0] - 1.0;
            let eps = AdamConfig::default().eps;
            assert!((moved + 0.01 * g / (g.abs() + eps)).abs() < 1e-12, "{moved}");
        }
    }

    #[test]
    fn quadratic_bowl() {
        let mut p = scalar_params(1.0);
        let mut s = AdamState::new(&p);
        for _ in 0..200 {
            let x = p.get("x").unwrap().value.data()[0];
            p.get_mut("x").unwrap().grad.data_mut()[0] = 2.0 * x;
            adam_step(&mut p, &mut s, 0.1, &AdamConfig::default()).unwrap();
        }
        assert!(p.get("x").unwrap().value.data()[0].abs() < 1e-2);
    }

    #[test]
    fn non_finite_gradient_names_path() {
        let mut p = scalar_params(1.0);
        p.get_mut("x").unwrap().grad.data_mut()[0] = f64::NAN;
        let mut s = AdamState::new(&p);
        let e = adam_step(&mut p, &mut s, 0.1, &AdamConfig::default()).unwrap_err();
        assert!(e.to_string().contains("gradient of x"));
        assert_eq!(s.t, 0);
    }

    #[test]
    fn clipping() {
        let mut p = scalar_params(0.0);
        p.get_mut("x").unwrap().grad.data_mut()[0] = -10.0;
        assert_eq!(clip_grad_norm(&mut p, 5.0), 10.0);
        assert_eq!(p.get("x").unwrap().grad.data()[0], -5.0);
    }

    #[test]
    fn schedule_examples() {
        assert!(lr_schedule(55, &[5.0, 5.1, 5.2, 5.3], 50, 3));
        assert!(!lr_schedule(30, &[5.0, 5.1, 5.2, 5.3], 50, 3));
        let decreasing: Vec<f64> = (0..60).map(|i| 100.0 - i as f64).collect();
        assert!(!lr_schedule(59, &decreasing, 50, 3));
        // A halving resets the window: the next epoch does not halve again.
        assert!(!lr_schedule(56, &[5.0, 5.1, 5.2, 5.3, 5.4], 50, 3));
        assert_eq!(lr_after(1.0, 58, &[5.0, 5.1, 5.2, 5.3, 5.4, 5.5, 5.6], 50, 3), 0.25);
    }
}
