//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, NodeId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub op_name: String,
    pub max_rel_error: f64,
    /// Flat index over the concatenation of all inputs.
    pub worst_index: usize,
    pub h: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Check at most this many coordinates per input (sampled), all if `None`.
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { h: 1e-5, max_coords_per_input: None, seed: 0 }
    }
}

/// Below this magnitude the relative error turns into an absolute one,
/// scaled by `1 / RELATIVE_FLOOR`.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Checks the gradient of `sum(build(inputs))` against central differences.
pub fn grad_check<F>(op_name: &str, inputs: &[Tensor], h: f64, build: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    grad_check_with(op_name, inputs, GradCheckOptions { h, ..Default::default() }, build)
}

pub fn grad_check_with<F>(op_name: &str, inputs: &[Tensor], opts: GradCheckOptions, build: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if inputs.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite { op: format!("{op_name} (grad_check input)") });
    }
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &ids)?;
    let root = g.sum_all(out)?;
    let grads = g.backward(root)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let forward = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &ids)?;
        Ok(g.value(out).sum())
    };
    compare_gradients(op_name, inputs, &analytic, opts, forward)
}

/// Compares supplied analytic gradients with central differences of `forward`.
pub fn compare_gradients<F>(
    op_name: &str,
    inputs: &[Tensor],
    analytic: &[Tensor],
    opts: GradCheckOptions,
    forward: F,
) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    if opts.h <= 0.0 {
        return Err(Error::Config("grad_check step h must be > 0".into()));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradReport { op_name: op_name.to_string(), max_rel_error: 0.0, worst_index: 0, h: opts.h, checked: 0 };
    let mut offset = 0;
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for j in coords {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + opts.h;
            let plus = forward(&work)?;
            work[i].data_mut()[j] = orig - opts.h;
            let minus = forward(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            if !numeric.is_finite() {
                return Err(Error::NonFinite { op: format!("{op_name} (finite difference)") });
            }
            let err = relative_error(analytic[i].data()[j], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_index = offset + j;
            }
            report.checked += 1;
        }
        offset += n;
    }
    Ok(report)
}
