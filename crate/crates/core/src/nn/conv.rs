//! Affine maps: linear layers and 1-D convolutions.

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, NodeId, Op};
use crate::tensor::{gemm, Tensor};

impl Graph {
    /// `y = x·Wᵀ + b` over the trailing axis of `x`; `w` is `D_out × D_in`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xv = self.value(x);
        let wv = self.value(w);
        if wv.rank() != 2 {
            return Err(Error::shape("linear", format!("weight must be 2-D, got {:?}", wv.shape())));
        }
        let (d_out, d_in) = (wv.shape()[0], wv.shape()[1]);
        if xv.last_dim() != d_in {
            return Err(Error::shape(
                "linear",
                format!("input trailing dim {} != weight D_in {d_in}", xv.last_dim()),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [d_out] {
                return Err(Error::shape("linear", format!("bias shape {:?} != [{d_out}]", self.shape(b))));
            }
        }
        let rows = xv.numel() / d_in;
        let mut out = vec![0.0; rows * d_out];
        gemm(rows, d_in, d_out, xv.data(), false, wv.data(), true, &mut out, false);
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in out.chunks_mut(d_out) {
                row.iter_mut().zip(bv).for_each(|(o, b)| *o += b);
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = d_out;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", Tensor::from_parts(shape, out), Op::Linear { x, w, b }, &inputs)
    }

    /// Valid (unpadded) strided convolution: `x` is `C_in × T`, `w` is `C_out × C_in × K`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let wv = self.value(w);
        if stride == 0 {
            return Err(Error::Config("conv1d stride must be >= 1".into()));
        }
        if xv.rank() != 2 || wv.rank() != 3 {
            return Err(Error::shape(
                "conv1d",
                format!("expected x [C_in, T] and w [C_out, C_in, K], got {:?} and {:?}", xv.shape(), wv.shape()),
            ));
        }
        let (c_in, t) = (xv.shape()[0], xv.shape()[1]);
        let (c_out, w_in, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if w_in != c_in {
            return Err(Error::shape("conv1d", format!("C_in: input has {c_in}, weight has {w_in}")));
        }
        if t < k {
            return Err(Error::shape("conv1d", format!("T: input length {t} shorter than kernel {k}")));
        }
        check_bias(self, "conv1d", b, c_out)?;
        let t_out = (t - k) / stride + 1;
        let ck = c_in * k;
        let xd = xv.data();
        let mut cols = vec![0.0; t_out * ck];
        for (ti, row) in cols.chunks_mut(ck).enumerate() {
            for ci in 0..c_in {
                let src = &xd[ci * t + ti * stride..ci * t + ti * stride + k];
                row[ci * k..(ci + 1) * k].copy_from_slice(src);
            }
        }
        let mut out = vec![0.0; c_out * t_out];
        gemm(c_out, ck, t_out, wv.data(), false, &cols, true, &mut out, false);
        add_channel_bias(self, b, &mut out, t_out);
        let value = Tensor::from_parts(vec![c_out, t_out], out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("conv1d", value, Op::Conv1d { x, w, b, stride, cols }, &inputs)
    }

    /// Transposed convolution: `x` is `C_in × T`, `w` is `C_in × C_out × K`;
    /// output length `(T − 1)·stride + K`.
    pub fn conv_transpose1d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let wv = self.value(w);
        if stride == 0 {
            return Err(Error::Config("transposed_conv1d stride must be >= 1".into()));
        }
        if xv.rank() != 2 || wv.rank() != 3 {
            return Err(Error::shape(
                "transposed_conv1d",
                format!("expected x [C_in, T] and w [C_in, C_out, K], got {:?} and {:?}", xv.shape(), wv.shape()),
            ));
        }
        let (c_in, t) = (xv.shape()[0], xv.shape()[1]);
        let (w_in, c_out, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if w_in != c_in {
            return Err(Error::shape("transposed_conv1d", format!("C_in: input has {c_in}, weight has {w_in}")));
        }
        check_bias(self, "transposed_conv1d", b, c_out)?;
        let t_out = (t - 1) * stride + k;
        let ck = c_out * k;
        let mut cols = vec![0.0; t * ck];
        gemm(t, c_in, ck, xv.data(), true, wv.data(), false, &mut cols, false);
        let mut out = vec![0.0; c_out * t_out];
        for (ti, row) in cols.chunks(ck).enumerate() {
            for co in 0..c_out {
                let dst = &mut out[co * t_out + ti * stride..co * t_out + ti * stride + k];
                dst.iter_mut().zip(&row[co * k..(co + 1) * k]).for_each(|(o, v)| *o += v);
            }
        }
        add_channel_bias(self, b, &mut out, t_out);
        let value = Tensor::from_parts(vec![c_out, t_out], out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("transposed_conv1d", value, Op::ConvTranspose1d { x, w, b, stride }, &inputs)
    }

    /// Per-channel "same" convolution along the sequence axis of a channel-last
    /// `[.., L, C]` input with zero padding; `w` is `C × K` with odd `K`.
    pub fn depthwise_conv(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xv = self.value(x);
        let wv = self.value(w);
        if xv.rank() < 2 || wv.rank() != 2 {
            return Err(Error::shape(
                "depthwise_conv1d",
                format!("expected x [.., L, C] and w [C, K], got {:?} and {:?}", xv.shape(), wv.shape()),
            ));
        }
        let (c, k) = (wv.shape()[0], wv.shape()[1]);
        if k % 2 == 0 {
            return Err(Error::Config(format!("depthwise_conv1d kernel must be odd, got {k}")));
        }
        let (batch, l) = seq_dims(xv);
        if xv.last_dim() != c {
            return Err(Error::shape("depthwise_conv1d", format!("C: input has {}, weight has {c}", xv.last_dim())));
        }
        check_bias(self, "depthwise_conv1d", b, c)?;
        let pad = (k - 1) / 2;
        let xd = xv.data();
        let wt = transpose(wv.data(), c, k);
        let mut out = vec![0.0; xd.len()];
        for bi in 0..batch {
            let base = bi * l * c;
            for li in 0..l {
                let dst = &mut out[base + li * c..base + (li + 1) * c];
                for j in 0..k {
                    let src = li + j;
                    if src < pad || src - pad >= l {
                        continue;
                    }
                    let s = &xd[base + (src - pad) * c..base + (src - pad + 1) * c];
                    let wj = &wt[j * c..(j + 1) * c];
                    for ((o, xv), wv) in dst.iter_mut().zip(s).zip(wj) {
                        *o += xv * wv;
                    }
                }
                if let Some(b) = b {
                    dst.iter_mut().zip(self.value(b).data()).for_each(|(o, b)| *o += b);
                }
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("depthwise_conv1d", value, Op::Depthwise { x, w, b }, &inputs)
    }

    /// Channel-first `C × T` form of [`Graph::depthwise_conv`].
    pub fn depthwise_conv_ct(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let xt = self.permute(x, &[1, 0])?;
        let y = self.depthwise_conv(xt, w, None)?;
        self.permute(y, &[1, 0])
    }
}

fn seq_dims(t: &Tensor) -> (usize, usize) {
    let r = t.rank();
    let l = t.shape()[r - 2];
    (t.numel() / (l * t.last_dim()), l)
}

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn check_bias(g: &Graph, op: &'static str, b: Option<NodeId>, c_out: usize) -> Result<()> {
    match b {
        Some(b) if g.shape(b) != [c_out] => {
            Err(Error::shape(op, format!("bias shape {:?} != [{c_out}]", g.shape(b))))
        }
        _ => Ok(()),
    }
}

fn add_channel_bias(g: &Graph, b: Option<NodeId>, out: &mut [f64], t_out: usize) {
    if let Some(b) = b {
        for (row, bias) in out.chunks_mut(t_out).zip(g.value(b).data()) {
            row.iter_mut().for_each(|o| *o += bias);
        }
    }
}

fn channel_bias_grad(dy: &Tensor, c: usize) -> Tensor {
    let t = dy.numel() / c;
    let data = dy.data().chunks(t).map(|r| r.iter().sum()).collect();
    Tensor::from_parts(vec![c], data)
}

pub(crate) fn linear_backward(
    g: &Graph,
    x: NodeId,
    w: NodeId,
    b: Option<NodeId>,
    dy: &Tensor,
    grads: &mut [Option<Tensor>],
) {
    let xv = g.value(x);
    let wv = g.value(w);
    let (d_out, d_in) = (wv.shape()[0], wv.shape()[1]);
    let rows = xv.numel() / d_in;
    if g.needs_grad(x) {
        let mut dx = vec![0.0; rows * d_in];
        gemm(rows, d_out, d_in, dy.data(), false, wv.data(), false, &mut dx, false);
        g.accumulate(grads, x, Tensor::from_parts(xv.shape().to_vec(), dx));
    }
    if g.needs_grad(w) {
        let mut dw = vec![0.0; d_out * d_in];
        gemm(d_out, rows, d_in, dy.data(), true, xv.data(), false, &mut dw, false);
        g.accumulate(grads, w, Tensor::from_parts(vec![d_out, d_in], dw));
    }
    if let Some(b) = b.filter(|&b| g.needs_grad(b)) {
        let mut db = vec![0.0; d_out];
        for row in dy.data().chunks(d_out) {
            db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
        }
        g.accumulate(grads, b, Tensor::from_parts(vec![d_out], db));
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward(
    g: &Graph,
    x: NodeId,
    w: NodeId,
    b: Option<NodeId>,
    stride: usize,
    cols: &[f64],
    dy: &Tensor,
    grads: &mut [Option<Tensor>],
) {
    let xv = g.value(x);
    let wv = g.value(w);
    let (c_in, t) = (xv.shape()[0], xv.shape()[1]);
    let (c_out, k) = (wv.shape()[0], wv.shape()[2]);
    let t_out = dy.shape()[1];
    let ck = c_in * k;
    if g.needs_grad(w) {
        let mut dw = vec![0.0; c_out * ck];
        gemm(c_out, t_out, ck, dy.data(), false, cols, false, &mut dw, false);
        g.accumulate(grads, w, Tensor::from_parts(wv.shape().to_vec(), dw));
    }
    if g.needs_grad(x) {
        let mut dcols = vec![0.0; t_out * ck];
        gemm(t_out, c_out, ck, dy.data(), true, wv.data(), false, &mut dcols, false);
        let mut dx = vec![0.0; c_in * t];
        for (ti, row) in dcols.chunks(ck).enumerate() {
            for ci in 0..c_in {
                let dst = &mut dx[ci * t + ti * stride..ci * t + ti * stride + k];
                dst.iter_mut().zip(&row[ci * k..(ci + 1) * k]).for_each(|(d, v)| *d += v);
            }
        }
        g.accumulate(grads, x, Tensor::from_parts(vec![c_in, t], dx));
    }
    if let Some(b) = b.filter(|&b| g.needs_grad(b)) {
        g.accumulate(grads, b, channel_bias_grad(dy, c_out));
    }
}

pub(crate) fn conv_transpose1d_backward(
    g: &Graph,
    x: NodeId,
    w: NodeId,
    b: Option<NodeId>,
    stride: usize,
    dy: &Tensor,
    grads: &mut [Option<Tensor>],
) {
    let xv = g.value(x);
    let wv = g.value(w);
    let (c_in, t) = (xv.shape()[0], xv.shape()[1]);
    let (c_out, k) = (wv.shape()[1], wv.shape()[2]);
    let t_out = dy.shape()[1];
    let ck = c_out * k;
    let dyd = dy.data();
    let mut dcols = vec![0.0; t * ck];
    for (ti, row) in dcols.chunks_mut(ck).enumerate() {
        for co in 0..c_out {
            let src = &dyd[co * t_out + ti * stride..co * t_out + ti * stride + k];
            row[co * k..(co + 1) * k].copy_from_slice(src);
        }
    }
    if g.needs_grad(x) {
        let mut dx = vec![0.0; c_in * t];
        gemm(c_in, ck, t, wv.data(), false, &dcols, true, &mut dx, false);
        g.accumulate(grads, x, Tensor::from_parts(vec![c_in, t], dx));
    }
    if g.needs_grad(w) {
        let mut dw = vec![0.0; c_in * ck];
        gemm(c_in, t, ck, xv.data(), false, &dcols, false, &mut dw, false);
        g.accumulate(grads, w, Tensor::from_parts(wv.shape().to_vec(), dw));
    }
    if let Some(b) = b.filter(|&b| g.needs_grad(b)) {
        g.accumulate(grads, b, channel_bias_grad(dy, c_out));
    }
}

pub(crate) fn depthwise_backward(
    g: &Graph,
    x: NodeId,
    w: NodeId,
    b: Option<NodeId>,
    dy: &Tensor,
    grads: &mut [Option<Tensor>],
) {
    let xv = g.value(x);
    let wv = g.value(w);
    let (c, k) = (wv.shape()[0], wv.shape()[1]);
    let (batch, l) = seq_dims(xv);
    let pad = (k - 1) / 2;
    let xd = xv.data();
    let dyd = dy.data();
    let wt = transpose(wv.data(), c, k);
    let want_x = g.needs_grad(x);
    let want_w = g.needs_grad(w);
    let mut dx = vec![0.0; if want_x { xd.len() } else { 0 }];
    let mut dwt = vec![0.0; k * c];
    for bi in 0..batch {
        let base = bi * l * c;
        for li in 0..l {
            let d = &dyd[base + li * c..base + (li + 1) * c];
            for j in 0..k {
                let src = li + j;
                if src < pad || src - pad >= l {
                    continue;
                }
                let off = base + (src - pad) * c;
                if want_x {
                    let wj = &wt[j * c..(j + 1) * c];
                    for ((o, dv), wv) in dx[off..off + c].iter_mut().zip(d).zip(wj) {
                        *o += dv * wv;
                    }
                }
                if want_w {
                    let s = &xd[off..off + c];
                    for ((o, dv), xv) in dwt[j * c..(j + 1) * c].iter_mut().zip(d).zip(s) {
                        *o += dv * xv;
                    }
                }
            }
        }
    }
    if want_x {
        g.accumulate(grads, x, Tensor::from_parts(xv.shape().to_vec(), dx));
    }
    if want_w {
        g.accumulate(grads, w, Tensor::from_parts(vec![c, k], transpose(&dwt, k, c)));
    }
    if let Some(b) = b.filter(|&b| g.needs_grad(b)) {
        let mut db = vec![0.0; c];
        for row in dyd.chunks(c) {
            db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
        }
        g.accumulate(grads, b, Tensor::from_parts(vec![c], db));
    }
}
