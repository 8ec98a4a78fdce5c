//! Reductions and scalar-valued ops: means, dots, normalization, SI-SNR.

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, NodeId, Op};
use crate::tensor::Tensor;

pub const SI_SNR_EPS: f64 = 1e-8;
/// `10·log10(1/eps)` for `eps = 1e-8`.
pub const SI_SNR_CAP_DB: f64 = 80.0;

const DB: f64 = 10.0 / std::f64::consts::LN_10;

impl Graph {
    /// Mean over one axis; the axis is removed (a rank-1 input yields `[1]`).
    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(Error::shape("mean", format!("axis {axis} out of range for {:?}", xv.shape())));
        }
        let (outer, len, inner) = Tensor::axis_split(xv.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &xv.data()[(o * len + a) * inner..(o * len + a + 1) * inner];
                out[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut shape: Vec<usize> = xv.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.push("mean", Tensor::from_parts(shape, out), Op::MeanAxis { x, axis }, &[x])
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).sum();
        self.push("sum", Tensor::scalar(s), Op::SumAll { x }, &[x])
    }

    /// Full inner product of two equally sized arrays.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).numel() != self.value(b).numel() {
            return Err(Error::shape("dot", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let d = self.value(a).dot(self.value(b));
        self.push("dot", Tensor::scalar(d), Op::Dot { a, b }, &[a, b])
    }

    /// Scales the whole array to unit L2 norm.
    pub fn l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let norm = xv.dot(xv).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::NonFinite { op: "l2_normalize (zero vector)".into() });
        }
        let data = xv.data().iter().map(|v| v / norm).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push("l2_normalize", value, Op::L2Normalize { x, norm }, &[x])
    }

    /// Scale-invariant SNR in dB of `est` against a constant `reference`,
    /// clamped to `±80 dB`; zero gradient when clamped.
    pub fn si_snr(&mut self, est: NodeId, reference: &[f64]) -> Result<NodeId> {
        let ev = self.value(est).data();
        let parts = si_snr_parts(ev, reference)?;
        let raw = if parts.den_error > 0.0 {
            DB * ((parts.den_target).ln() - (parts.den_error).ln())
        } else {
            -SI_SNR_CAP_DB
        };
        let clamped = raw.abs() >= SI_SNR_CAP_DB;
        let value = raw.clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB);
        let op = Op::SiSnr {
            est,
            target: parts.target,
            error: parts.error,
            clamped,
            den_target: parts.den_target,
            den_error: parts.den_error,
        };
        self.push("si_snr", Tensor::scalar(value), op, &[est])
    }
}

pub(crate) struct SiSnrParts {
    pub target: Vec<f64>,
    pub error: Vec<f64>,
    pub den_target: f64,
    pub den_error: f64,
}

/// Zero-means both signals and splits `est` into the projection on `reference`
/// and the residual. Both energies get `eps · ‖est‖²` added, which keeps the
/// ratio exactly invariant to rescaling `est`; a silent estimate has both
/// energies zero and scores `-cap`.
pub(crate) fn si_snr_parts(est: &[f64], reference: &[f64]) -> Result<SiSnrParts> {
    if est.len() != reference.len() {
        return Err(Error::shape("si_snr", format!("length {} vs {}", est.len(), reference.len())));
    }
    if est.len() < 2 {
        return Err(Error::shape("si_snr", "signals need at least 2 samples"));
    }
    let n = est.len() as f64;
    let me = est.iter().sum::<f64>() / n;
    let mr = reference.iter().sum::<f64>() / n;
    let r: Vec<f64> = reference.iter().map(|v| v - mr).collect();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr <= 0.0 {
        return Err(Error::Data("si_snr: reference is constant after zero-meaning".into()));
    }
    let x: Vec<f64> = est.iter().map(|v| v - me).collect();
    let a = x.iter().zip(&r).map(|(x, r)| x * r).sum::<f64>() / rr;
    let target: Vec<f64> = r.iter().map(|v| a * v).collect();
    let error: Vec<f64> = x.iter().zip(&target).map(|(x, t)| x - t).collect();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let reg = SI_SNR_EPS * energy;
    let den_target = target.iter().map(|v| v * v).sum::<f64>() + reg;
    let den_error = error.iter().map(|v| v * v).sum::<f64>() + reg;
    Ok(SiSnrParts { target, error, den_target, den_error })
}

pub(crate) fn mean_axis_backward(g: &Graph, x: NodeId, axis: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
    let shape = g.shape(x).to_vec();
    let (outer, len, inner) = Tensor::axis_split(&shape, axis);
    let mut dx = vec![0.0; outer * len * inner];
    let scale = 1.0 / len as f64;
    for o in 0..outer {
        let src = &dy.data()[o * inner..(o + 1) * inner];
        for a in 0..len {
            dx[(o * len + a) * inner..(o * len + a + 1) * inner]
                .iter_mut()
                .zip(src)
                .for_each(|(d, s)| *d = s * scale);
        }
    }
    g.accumulate(grads, x, Tensor::from_parts(shape, dx));
}

pub(crate) fn dot_backward(g: &Graph, a: NodeId, b: NodeId, dy: &Tensor, grads: &mut [Option<Tensor>]) {
    let s = dy.data()[0];
    let (av, bv) = (g.value(a), g.value(b));
    if g.needs_grad(a) {
        let da = bv.data().iter().map(|v| v * s).collect();
        g.accumulate(grads, a, Tensor::from_parts(av.shape().to_vec(), da));
    }
    if g.needs_grad(b) {
        let db = av.data().iter().map(|v| v * s).collect();
        g.accumulate(grads, b, Tensor::from_parts(bv.shape().to_vec(), db));
    }
}

pub(crate) fn l2_normalize_backward(
    g: &Graph,
    x: NodeId,
    norm: f64,
    y: &Tensor,
    dy: &Tensor,
    grads: &mut [Option<Tensor>],
) {
    let proj = y.dot(dy);
    let dx = dy.data().iter().zip(y.data()).map(|(d, yv)| (d - yv * proj) / norm).collect();
    g.accumulate(grads, x, Tensor::from_parts(y.shape().to_vec(), dx));
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn si_snr_backward(
    g: &Graph,
    est: NodeId,
    target: &[f64],
    error: &[f64],
    clamped: bool,
    den_target: f64,
    den_error: f64,
    dy: &Tensor,
    grads: &mut [Option<Tensor>],
) {
    let shape = g.shape(est).to_vec();
    if clamped {
        g.accumulate(grads, est, Tensor::zeros(&shape));
        return;
    }
    let s = dy.data()[0] * DB * 2.0;
    let eps = SI_SNR_EPS;
    let ct = (1.0 + eps) / den_target - eps / den_error;
    let ce = eps / den_target - (1.0 + eps) / den_error;
    // d/dx of the zero-meaned signal; the projection removes the mean again.
    let mut dx: Vec<f64> = target.iter().zip(error).map(|(t, e)| s * (ct * t + ce * e)).collect();
    let mean = dx.iter().sum::<f64>() / dx.len() as f64;
    dx.iter_mut().for_each(|v| *v -= mean);
    g.accumulate(grads, est, Tensor::from_parts(shape, dx));
}
