use crate::error::{Error, Result};
use crate::nn::graph::{Graph, NodeId, Op};
use crate::tensor::Tensor;

impl Graph {
    /// Normalizes each position over the trailing axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        if eps <= 0.0 {
            return Err(Error::Config("layer_norm eps must be > 0".into()));
        }
        let xv = self.value(x);
        let d = xv.last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!("affine params must be [{d}], got {:?} / {:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let rows = xv.numel() / d;
        let mut xhat = vec![0.0; xv.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.numel()];
        for (r, row) in xv.data().chunks(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for i in 0..d {
                let h = (row[i] - mean) * rs;
                xhat[r * d + i] = h;
                out[r * d + i] = h * gv[i] + bv[i];
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push("layer_norm", value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta])
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward(
    g: &Graph,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    xhat: &[f64],
    rstd: &[f64],
    dy: &Tensor,
    grads: &mut [Option<Tensor>],
) {
    let d = g.value(gamma).numel();
    let gv = g.value(gamma).data();
    let dyd = dy.data();
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    let mut dx = vec![0.0; dyd.len()];
    let want_x = g.needs_grad(x);
    for (r, rs) in rstd.iter().enumerate() {
        let dyr = &dyd[r * d..(r + 1) * d];
        let hr = &xhat[r * d..(r + 1) * d];
        let mut mean_dh = 0.0;
        let mut mean_dh_h = 0.0;
        for i in 0..d {
            dgamma[i] += dyr[i] * hr[i];
            dbeta[i] += dyr[i];
            let dh = dyr[i] * gv[i];
            mean_dh += dh;
            mean_dh_h += dh * hr[i];
        }
        if want_x {
            mean_dh /= d as f64;
            mean_dh_h /= d as f64;
            for i in 0..d {
                dx[r * d + i] = rs * (dyr[i] * gv[i] - mean_dh - hr[i] * mean_dh_h);
            }
        }
    }
    if want_x {
        g.accumulate(grads, x, Tensor::from_parts(dy.shape().to_vec(), dx));
    }
    g.accumulate(grads, gamma, Tensor::from_parts(vec![d], dgamma));
    g.accumulate(grads, beta, Tensor::from_parts(vec![d], dbeta));
}
