//! Scaled dot-product attention core shared by every multi-head layer.

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, NodeId, Op};
use crate::tensor::{gemm_strided, Tensor};

impl Graph {
    /// `softmax(Q_h K_hᵀ / sqrt(D/heads)) V_h` per head, heads concatenated.
    ///
    /// `q`, `k`, `v` are `[.., L, D]` with identical shapes; leading axes batch.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> Result<NodeId> {
        let qv = self.value(q);
        if self.shape(k) != qv.shape() || self.shape(v) != qv.shape() || qv.rank() < 2 {
            return Err(Error::shape("mhsa", "q, k and v must share a [.., L, D] shape"));
        }
        let d = qv.last_dim();
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("model dim {d} is not divisible by {heads} heads")));
        }
        let l = qv.shape()[qv.rank() - 2];
        let batch = qv.numel() / (l * d);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (qv.data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; batch * heads * l * l];
        let mut out = vec![0.0; qv.numel()];
        for b in 0..batch {
            for h in 0..heads {
                let off = b * l * d + h * dh;
                let p = &mut probs[(b * heads + h) * l * l..(b * heads + h + 1) * l * l];
                // SAFETY: each view addresses rows `off + i*d .. off + i*d + dh` with i < l,
                // inside the `batch*l*d` buffers; `p` is an owned l×l block.
                unsafe {
                    gemm_strided(l, dh, l, qd.as_ptr().add(off), d, 1, kd.as_ptr().add(off), 1, d, p.as_mut_ptr(), l, false);
                }
                for row in p.chunks_mut(l) {
                    let mut max = f64::NEG_INFINITY;
                    for s in row.iter_mut() {
                        *s *= scale;
                        max = max.max(*s);
                    }
                    let mut z = 0.0;
                    for s in row.iter_mut() {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    row.iter_mut().for_each(|s| *s /= z);
                }
                unsafe {
                    gemm_strided(l, l, dh, p.as_ptr(), l, 1, vd.as_ptr().add(off), d, 1, out.as_mut_ptr().add(off), d, false);
                }
            }
        }
        let value = Tensor::from_parts(qv.shape().to_vec(), out);
        self.push("mhsa", value, Op::Attention { q, k, v, heads, probs }, &[q, k, v])
    }

    /// Attention weights recorded by an attention node, `[batch, heads, L, L]`.
    pub fn attention_weights(&self, node: NodeId) -> Option<&[f64]> {
        self.op_probs(node)
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward(
    g: &Graph,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    heads: usize,
    probs: &[f64],
    dy: &Tensor,
    grads: &mut [Option<Tensor>],
) {
    let qv = g.value(q);
    let d = qv.last_dim();
    let l = qv.shape()[qv.rank() - 2];
    let batch = qv.numel() / (l * d);
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (qd, kd, vd) = (qv.data(), g.value(k).data(), g.value(v).data());
    let dyd = dy.data();
    let mut dq = vec![0.0; qd.len()];
    let mut dk = vec![0.0; qd.len()];
    let mut dv = vec![0.0; qd.len()];
    let mut dp = vec![0.0; l * l];
    for b in 0..batch {
        for h in 0..heads {
            let off = b * l * d + h * dh;
            let p = &probs[(b * heads + h) * l * l..(b * heads + h + 1) * l * l];
            // SAFETY: same view geometry as the forward pass.
            unsafe {
                // dV_h = Pᵀ dO_h
                gemm_strided(l, l, dh, p.as_ptr(), 1, l, dyd.as_ptr().add(off), d, 1, dv.as_mut_ptr().add(off), d, false);
                // dP = dO_h V_hᵀ
                gemm_strided(l, dh, l, dyd.as_ptr().add(off), d, 1, vd.as_ptr().add(off), 1, d, dp.as_mut_ptr(), l, false);
            }
            for (prow, dprow) in p.chunks(l).zip(dp.chunks_mut(l)) {
                let dot: f64 = prow.iter().zip(dprow.iter()).map(|(a, b)| a * b).sum();
                for (ds, pv) in dprow.iter_mut().zip(prow) {
                    *ds = pv * (*ds - dot) * scale;
                }
            }
            unsafe {
                // dQ_h = dS K_h ; dK_h = dSᵀ Q_h
                gemm_strided(l, l, dh, dp.as_ptr(), l, 1, kd.as_ptr().add(off), d, 1, dq.as_mut_ptr().add(off), d, false);
                gemm_strided(l, l, dh, dp.as_ptr(), 1, l, qd.as_ptr().add(off), d, 1, dk.as_mut_ptr().add(off), d, false);
            }
        }
    }
    let shape = qv.shape().to_vec();
    g.accumulate(grads, q, Tensor::from_parts(shape.clone(), dq));
    g.accumulate(grads, k, Tensor::from_parts(shape.clone(), dk));
    g.accumulate(grads, v, Tensor::from_parts(shape, dv));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_sum_to_one() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..2 * 6 * 8).map(|i| ((i * 7919) % 113) as f64 / 30.0 - 1.8).collect();
        let x = g.constant(Tensor::new(vec![2, 6, 8], data).unwrap());
        let y = g.attention(x, x, x, 2).unwrap();
        let probs = g.attention_weights(y).unwrap();
        for row in probs.chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_position_returns_values() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(vec![1, 4], vec![3.0, -1.0, 2.0, 0.0]).unwrap());
        let v = g.constant(Tensor::new(vec![1, 4], vec![0.5, 0.25, -2.0, 9.0]).unwrap());
        let y = g.attention(q, q, v, 2).unwrap();
        assert_eq!(g.value(y).data(), g.value(v).data());
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 6]));
        assert!(matches!(g.attention(x, x, x, 4), Err(Error::Config(_))));
    }
}
