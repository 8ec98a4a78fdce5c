//! Elementwise activations and arithmetic.

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, NodeId, Op, Unary};
use crate::tensor::Tensor;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Swish => "swish",
            Unary::Square => "square",
            Unary::SqrtEps(_) => "sqrt",
            Unary::LogEps(_) => "log",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Swish => x * sigmoid(x),
            Unary::Square => x * x,
            Unary::SqrtEps(eps) => (x + eps).sqrt(),
            Unary::LogEps(eps) => (x + eps).ln(),
        }
    }

    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Unary::Square => 2.0 * x,
            Unary::SqrtEps(_) => 0.5 / y,
            Unary::LogEps(eps) => 1.0 / (x + eps),
        }
    }
}

impl Graph {
    pub fn unary(&mut self, x: NodeId, kind: Unary) -> Result<NodeId> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| kind.apply(v)).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push(kind.name(), value, Op::Unary { x, kind }, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Unary::Relu)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Unary::Tanh)
    }

    pub fn swish(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Unary::Swish)
    }

    /// Parametric ReLU with a single learned slope (`slope` has shape `[1]`).
    pub fn prelu(&mut self, x: NodeId, slope: NodeId) -> Result<NodeId> {
        if self.value(slope).numel() != 1 {
            return Err(Error::shape("prelu", "slope must hold a single value"));
        }
        let a = self.value(slope).data()[0];
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| if v > 0.0 { v } else { a * v }).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push("prelu", value, Op::Prelu { x, slope }, &[x, slope])
    }

    /// Gated linear unit over the trailing axis: first half ⊗ sigmoid(second half).
    pub fn glu(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if d % 2 != 0 {
            return Err(Error::shape("glu", format!("channel dim {d} is odd")));
        }
        let h = d / 2;
        let mut out = Vec::with_capacity(xv.numel() / 2);
        for row in xv.data().chunks(d) {
            out.extend(row[..h].iter().zip(&row[h..]).map(|(a, g)| a * sigmoid(*g)));
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = h;
        self.push("glu", Tensor::from_parts(shape, out), Op::Glu { x }, &[x])
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_with(&mut self, name: &'static str, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<NodeId> {
        self.same_shape(name, a, b)?;
        let av = self.value(a);
        let data = av.data().iter().zip(self.value(b).data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * c).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push("scale", value, Op::Scale { x, c }, &[x])
    }

    /// Multiplies `x: [B, L, C]` (or `[L, C]`) by a per-sequence channel gate `g: [B, C]`.
    pub fn scale_channels(&mut self, x: NodeId, g: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let gv = self.value(g);
        let c = xv.last_dim();
        let l = xv.shape()[xv.rank().saturating_sub(2)];
        let batch = xv.numel() / (l * c);
        if gv.numel() != batch * c || gv.last_dim() != c {
            return Err(Error::shape(
                "scale_channels",
                format!("gate {:?} does not match input {:?}", gv.shape(), xv.shape()),
            ));
        }
        let mut out = xv.data().to_vec();
        for (b, seq) in out.chunks_mut(l * c).enumerate() {
            let gate = &gv.data()[b * c..(b + 1) * c];
            for row in seq.chunks_mut(c) {
                row.iter_mut().zip(gate).for_each(|(o, g)| *o *= g);
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push("scale_channels", value, Op::ScaleChannels { x, g }, &[x, g])
    }
}

pub(crate) fn unary_backward(g: &Graph, x: NodeId, kind: Unary, y: &Tensor, dy: &Tensor, grads: &mut [Option<Tensor>]) {
    let xv = g.value(x);
    let data = xv
        .data()
        .iter()
        .zip(y.data())
        .zip(dy.data())
        .map(|((&xv, &yv), &d)| d * kind.derivative(xv, yv))
        .collect();
    g.accumulate(grads, x, Tensor::from_parts(xv.shape().to_vec(), data));
}

pub(crate) fn prelu_backward(g: &Graph, x: NodeId, slope: NodeId, dy: &Tensor, grads: &mut [Option<Tensor>]) {
    let xv = g.value(x);
    let a = g.value(slope).data()[0];
    let mut da = 0.0;
    let dx = xv
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &d)| {
            if v > 0.0 {
                d
            } else {
                da += v * d;
                a * d
            }
        })
        .collect();
    g.accumulate(grads, x, Tensor::from_parts(xv.shape().to_vec(), dx));
    g.accumulate(grads, slope, Tensor::from_parts(vec![1], vec![da]));
}

pub(crate) fn glu_backward(g: &Graph, x: NodeId, dy: &Tensor, grads: &mut [Option<Tensor>]) {
    let xv = g.value(x);
    let d = xv.last_dim();
    let h = d / 2;
    let mut dx = vec![0.0; xv.numel()];
    for ((row, drow), out) in xv.data().chunks(d).zip(dy.data().chunks(h)).zip(dx.chunks_mut(d)) {
        for i in 0..h {
            let s = sigmoid(row[h + i]);
            out[i] = drow[i] * s;
            out[h + i] = drow[i] * row[i] * s * (1.0 - s);
        }
    }
    g.accumulate(grads, x, Tensor::from_parts(xv.shape().to_vec(), dx));
}

pub(crate) fn mul_backward(g: &Graph, a: NodeId, b: NodeId, dy: &Tensor, grads: &mut [Option<Tensor>]) {
    let (av, bv) = (g.value(a), g.value(b));
    if g.needs_grad(a) {
        let da = dy.data().iter().zip(bv.data()).map(|(d, v)| d * v).collect();
        g.accumulate(grads, a, Tensor::from_parts(av.shape().to_vec(), da));
    }
    if g.needs_grad(b) {
        let db = dy.data().iter().zip(av.data()).map(|(d, v)| d * v).collect();
        g.accumulate(grads, b, Tensor::from_parts(bv.shape().to_vec(), db));
    }
}

pub(crate) fn scale_channels_backward(g: &Graph, x: NodeId, gate: NodeId, dy: &Tensor, grads: &mut [Option<Tensor>]) {
    let xv = g.value(x);
    let gv = g.value(gate);
    let c = xv.last_dim();
    let l = xv.shape()[xv.rank().saturating_sub(2)];
    let mut dx = dy.data().to_vec();
    let mut dg = vec![0.0; gv.numel()];
    for (b, (dseq, xseq)) in dx.chunks_mut(l * c).zip(xv.data().chunks(l * c)).enumerate() {
        let gate_b = &gv.data()[b * c..(b + 1) * c];
        let dg_b = &mut dg[b * c..(b + 1) * c];
        for (drow, xrow) in dseq.chunks_mut(c).zip(xseq.chunks(c)) {
            for i in 0..c {
                dg_b[i] += drow[i] * xrow[i];
                drow[i] *= gate_b[i];
            }
        }
    }
    g.accumulate(grads, x, Tensor::from_parts(xv.shape().to_vec(), dx));
    g.accumulate(grads, gate, Tensor::from_parts(gv.shape().to_vec(), dg));
}
