//! Sequence layers over channel-last `[batch, length, channels]` nodes.
//!
//! Every layer is a pair of functions: `init_*` registers its parameters under
//! a path prefix in a fixed order, and the forward function binds them from
//! the same paths.

use rand::Rng;

use crate::error::Result;
use crate::nn::{init, Graph, ModelParams, NodeId};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Registers parameters in a deterministic order from one generator.
pub struct ParamInit<'a, R: Rng> {
    pub params: &'a mut ModelParams,
    pub rng: &'a mut R,
}

impl<R: Rng> ParamInit<'_, R> {
    pub fn linear(&mut self, path: &str, d_in: usize, d_out: usize, bias: bool) -> Result<()> {
        let w = init::xavier(self.rng, &[d_out, d_in], d_in, d_out);
        self.params.insert(format!("{path}/weight"), w)?;
        if bias {
            self.params.insert(format!("{path}/bias"), Tensor::zeros(&[d_out]))?;
        }
        Ok(())
    }

    pub fn norm(&mut self, path: &str, d: usize) -> Result<()> {
        self.params.insert(format!("{path}/gamma"), Tensor::full(&[d], 1.0))?;
        self.params.insert(format!("{path}/beta"), Tensor::zeros(&[d]))
    }

    pub fn xavier(&mut self, path: &str, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<()> {
        let w = init::xavier(self.rng, shape, fan_in, fan_out);
        self.params.insert(path, w)
    }

    pub fn tensor(&mut self, path: &str, value: Tensor) -> Result<()> {
        self.params.insert(path, value)
    }
}

pub fn linear(g: &mut Graph, p: &ModelParams, path: &str, x: NodeId) -> Result<NodeId> {
    let w = g.param(p, &format!("{path}/weight"))?;
    let bias_path = format!("{path}/bias");
    let b = if p.contains(&bias_path) { Some(g.param(p, &bias_path)?) } else { None };
    g.linear(x, w, b)
}

pub fn norm(g: &mut Graph, p: &ModelParams, path: &str, x: NodeId) -> Result<NodeId> {
    let gamma = g.param(p, &format!("{path}/gamma"))?;
    let beta = g.param(p, &format!("{path}/beta"))?;
    g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
}

fn add_norm(g: &mut Graph, p: &ModelParams, path: &str, x: NodeId, branch: NodeId) -> Result<NodeId> {
    let s = g.add(x, branch)?;
    norm(g, p, path, s)
}

pub fn init_mhsa<R: Rng>(pi: &mut ParamInit<R>, prefix: &str, d: usize) -> Result<()> {
    for proj in ["q", "k", "v", "o"] {
        pi.linear(&format!("{prefix}/{proj}"), d, d, true)?;
    }
    Ok(())
}

/// Multi-head self-attention with input and output projections.
pub fn mhsa(g: &mut Graph, p: &ModelParams, prefix: &str, x: NodeId, heads: usize) -> Result<NodeId> {
    let q = linear(g, p, &format!("{prefix}/q"), x)?;
    let k = linear(g, p, &format!("{prefix}/k"), x)?;
    let v = linear(g, p, &format!("{prefix}/v"), x)?;
    let a = g.attention(q, k, v, heads)?;
    linear(g, p, &format!("{prefix}/o"), a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfnActivation {
    Relu,
    Swish,
}

pub fn init_ffn<R: Rng>(pi: &mut ParamInit<R>, prefix: &str, d: usize, mult: usize) -> Result<()> {
    pi.linear(&format!("{prefix}/lin1"), d, d * mult, true)?;
    pi.linear(&format!("{prefix}/lin2"), d * mult, d, true)
}

pub fn ffn(g: &mut Graph, p: &ModelParams, prefix: &str, x: NodeId, act: FfnActivation) -> Result<NodeId> {
    let h = linear(g, p, &format!("{prefix}/lin1"), x)?;
    let h = match act {
        FfnActivation::Relu => g.relu(h)?,
        FfnActivation::Swish => g.swish(h)?,
    };
    linear(g, p, &format!("{prefix}/lin2"), h)
}

pub fn init_se_block<R: Rng>(pi: &mut ParamInit<R>, prefix: &str, d: usize, reduction: usize) -> Result<()> {
    let hidden = d / reduction;
    pi.linear(&format!("{prefix}/w1"), d, hidden, false)?;
    pi.linear(&format!("{prefix}/w2"), hidden, d, false)
}

/// Channel gate `sigmoid(W2 relu(W1 mean_t(v)))`, shape `[batch, channels]`.
pub fn se_gate(g: &mut Graph, p: &ModelParams, prefix: &str, v: NodeId) -> Result<NodeId> {
    let rank = g.shape(v).len();
    let pooled = g.mean_axis(v, rank - 2)?;
    let h = linear(g, p, &format!("{prefix}/w1"), pooled)?;
    let h = g.relu(h)?;
    let h = linear(g, p, &format!("{prefix}/w2"), h)?;
    g.sigmoid(h)
}

/// Squeeze-and-excitation: every channel of `v` scaled by its gate.
pub fn se_block(g: &mut Graph, p: &ModelParams, prefix: &str, v: NodeId) -> Result<NodeId> {
    let gate = se_gate(g, p, prefix, v)?;
    g.scale_channels(v, gate)
}

pub fn init_conv_module<R: Rng>(pi: &mut ParamInit<R>, prefix: &str, d: usize, kernel: usize) -> Result<()> {
    pi.norm(&format!("{prefix}/norm1"), d)?;
    pi.linear(&format!("{prefix}/pw1"), d, 2 * d, true)?;
    let dw = init::uniform(pi.rng, &[d, kernel], (1.0 / kernel as f64).sqrt());
    pi.tensor(&format!("{prefix}/dw_weight"), dw)?;
    pi.tensor(&format!("{prefix}/dw_bias"), Tensor::zeros(&[d]))?;
    pi.norm(&format!("{prefix}/norm2"), d)?;
    pi.linear(&format!("{prefix}/pw2"), d, d, true)
}

/// LN → pointwise (2N) → GLU → depthwise(kernel) → LN → swish → pointwise (N).
pub fn conformer_conv_module(g: &mut Graph, p: &ModelParams, prefix: &str, x: NodeId) -> Result<NodeId> {
    let h = norm(g, p, &format!("{prefix}/norm1"), x)?;
    let h = linear(g, p, &format!("{prefix}/pw1"), h)?;
    let h = g.glu(h)?;
    let w = g.param(p, &format!("{prefix}/dw_weight"))?;
    let b = g.param(p, &format!("{prefix}/dw_bias"))?;
    let h = g.depthwise_conv(h, w, Some(b))?;
    let h = norm(g, p, &format!("{prefix}/norm2"), h)?;
    let h = g.swish(h)?;
    linear(g, p, &format!("{prefix}/pw2"), h)
}

/// How the SE sublayer contributes to its Add & Norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeBranch {
    Gate,
    /// An explicit all-zero branch.
    Zero,
    /// Ablation: no branch, the sublayer norm is still applied.
    Disabled,
}

pub fn init_se_conformer<R: Rng>(
    pi: &mut ParamInit<R>,
    prefix: &str,
    d: usize,
    kernel: usize,
    mult: usize,
    se_reduction: Option<usize>,
) -> Result<()> {
    init_ffn(pi, &format!("{prefix}/ffn1"), d, mult)?;
    pi.norm(&format!("{prefix}/norm_ffn1"), d)?;
    init_mhsa(pi, &format!("{prefix}/mhsa"), d)?;
    pi.norm(&format!("{prefix}/norm_mhsa"), d)?;
    init_conv_module(pi, &format!("{prefix}/conv"), d, kernel)?;
    pi.norm(&format!("{prefix}/norm_conv"), d)?;
    if let Some(r) = se_reduction {
        init_se_block(pi, &format!("{prefix}/se"), d, r)?;
    }
    pi.norm(&format!("{prefix}/norm_se"), d)?;
    init_ffn(pi, &format!("{prefix}/ffn2"), d, mult)?;
    pi.norm(&format!("{prefix}/norm_ffn2"), d)
}

/// Half-step FFN, MHSA, convolution module, SE block, half-step FFN; each a
/// post-norm residual sublayer.
pub fn se_conformer_layer(
    g: &mut Graph,
    p: &ModelParams,
    prefix: &str,
    x: NodeId,
    heads: usize,
    se: SeBranch,
) -> Result<NodeId> {
    let f = ffn(g, p, &format!("{prefix}/ffn1"), x, FfnActivation::Swish)?;
    let f = g.scale(f, 0.5)?;
    let x1 = add_norm(g, p, &format!("{prefix}/norm_ffn1"), x, f)?;

    let a = mhsa(g, p, &format!("{prefix}/mhsa"), x1, heads)?;
    let x2 = add_norm(g, p, &format!("{prefix}/norm_mhsa"), x1, a)?;

    let c = conformer_conv_module(g, p, &format!("{prefix}/conv"), x2)?;
    let x3 = add_norm(g, p, &format!("{prefix}/norm_conv"), x2, c)?;

    let x4 = match se {
        SeBranch::Gate => {
            let s = se_block(g, p, &format!("{prefix}/se"), x3)?;
            add_norm(g, p, &format!("{prefix}/norm_se"), x3, s)?
        }
        SeBranch::Zero => {
            let zero = g.constant(Tensor::zeros(g.shape(x3)));
            add_norm(g, p, &format!("{prefix}/norm_se"), x3, zero)?
        }
        SeBranch::Disabled => norm(g, p, &format!("{prefix}/norm_se"), x3)?,
    };

    let f = ffn(g, p, &format!("{prefix}/ffn2"), x4, FfnActivation::Swish)?;
    let f = g.scale(f, 0.5)?;
    add_norm(g, p, &format!("{prefix}/norm_ffn2"), x4, f)
}

pub fn init_transformer<R: Rng>(pi: &mut ParamInit<R>, prefix: &str, d: usize, mult: usize) -> Result<()> {
    init_mhsa(pi, &format!("{prefix}/mhsa"), d)?;
    pi.norm(&format!("{prefix}/norm1"), d)?;
    init_ffn(pi, &format!("{prefix}/ffn"), d, mult)?;
    pi.norm(&format!("{prefix}/norm2"), d)
}

/// Post-norm encoder layer with a ReLU feed-forward block.
pub fn transformer_layer(g: &mut Graph, p: &ModelParams, prefix: &str, x: NodeId, heads: usize) -> Result<NodeId> {
    let a = mhsa(g, p, &format!("{prefix}/mhsa"), x, heads)?;
    let x1 = add_norm(g, p, &format!("{prefix}/norm1"), x, a)?;
    let f = ffn(g, p, &format!("{prefix}/ffn"), x1, FfnActivation::Relu)?;
    add_norm(g, p, &format!("{prefix}/norm2"), x1, f)
}

/// Sinusoidal position table, `[length, d]`.
pub fn positional_encoding(length: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; length * d];
    for pos in 0..length {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::from_parts(vec![length, d], data)
}

/// Adds the position table to every sequence of a `[batch, L, d]` node.
pub fn add_positional(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let shape = g.shape(x).to_vec();
    let (l, d) = (shape[1], shape[2]);
    let table = positional_encoding(l, d);
    let tiled: Vec<f64> = (0..shape[0]).flat_map(|_| table.data().iter().copied()).collect();
    let pe = g.constant(Tensor::from_parts(shape, tiled));
    g.add(x, pe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn rand_input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        init::uniform(&mut rng, shape, 1.0)
    }

    #[test]
    fn se_hand_example() {
        // v = [[1,1],[0,2]] as N x L is [[1,0],[1,2]] in L x N layout.
        let mut p = ModelParams::new();
        p.insert("se/w1/weight", Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap()).unwrap();
        p.insert("se/w2/weight", Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap()).unwrap();
        let mut g = Graph::new();
        let v = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 1.0, 2.0]).unwrap());
        let y = se_block(&mut g, &p, "se", v).unwrap();
        let s1 = 1.0 / (1.0 + (-1.0f64).exp());
        let want = [s1, 0.0, s1, 1.0];
        for (a, b) in g.value(y).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_se_weights_halve() {
        let mut p = ModelParams::new();
        p.insert("se/w1/weight", Tensor::zeros(&[2, 8])).unwrap();
        p.insert("se/w2/weight", Tensor::zeros(&[8, 2])).unwrap();
        let mut g = Graph::new();
        let vt = rand_input(&[3, 5, 8], 2);
        let v = g.constant(vt.clone());
        let y = se_block(&mut g, &p, "se", v).unwrap();
        for (a, b) in g.value(y).data().iter().zip(vt.data()) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn conv_module_zero_in_zero_out() {
        let mut p = ModelParams::new();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        init_conv_module(&mut ParamInit { params: &mut p, rng: &mut rng }, "c", 8, 5).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 6, 8]));
        let y = conformer_conv_module(&mut g, &p, "c", x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        let x = g.constant(rand_input(&[2, 6, 8], 3));
        let y = conformer_conv_module(&mut g, &p, "c", x).unwrap();
        assert_eq!(g.shape(y), &[2, 6, 8]);
    }

    #[test]
    fn disabled_se_equals_zero_branch() {
        let mut p = ModelParams::new();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        init_se_conformer(&mut ParamInit { params: &mut p, rng: &mut rng }, "l", 8, 3, 4, None).unwrap();
        let xt = rand_input(&[2, 7, 8], 6);
        let run = |se| {
            let mut g = Graph::new();
            let x = g.constant(xt.clone());
            let y = se_conformer_layer(&mut g, &p, "l", x, 2, se).unwrap();
            g.value(y).clone()
        };
        let a = run(SeBranch::Disabled);
        assert_eq!(a, run(SeBranch::Zero));
        assert_eq!(a.shape(), xt.shape());
    }

    #[test]
    fn transformer_single_position_closed_form() {
        let mut p = ModelParams::new();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        init_transformer(&mut ParamInit { params: &mut p, rng: &mut rng }, "t", 4, 2).unwrap();
        let xt = rand_input(&[1, 4], 8);
        let mut g = Graph::new();
        let x = g.constant(xt.clone());
        let y = transformer_layer(&mut g, &p, "t", x, 2).unwrap();

        // With one key the attention output is the value projection.
        let mut g2 = Graph::new();
        let x2 = g2.constant(xt);
        let v = linear(&mut g2, &p, "t/mhsa/v", x2).unwrap();
        let a = linear(&mut g2, &p, "t/mhsa/o", v).unwrap();
        let s = g2.add(x2, a).unwrap();
        let x1 = norm(&mut g2, &p, "t/norm1", s).unwrap();
        let f = ffn(&mut g2, &p, "t/ffn", x1, FfnActivation::Relu).unwrap();
        let s = g2.add(x1, f).unwrap();
        let want = norm(&mut g2, &p, "t/norm2", s).unwrap();
        assert!(g.value(y).max_abs_diff(g2.value(want)) < 1e-12);
    }

    #[test]
    fn positional_table_values() {
        let pe = positional_encoding(3, 4);
        assert_eq!(pe.at(&[0, 0]), 0.0);
        assert_eq!(pe.at(&[0, 1]), 1.0);
        assert!((pe.at(&[2, 0]) - 2f64.sin()).abs() < 1e-15);
        assert!((pe.at(&[1, 3]) - (1.0 / 100.0f64).cos()).abs() < 1e-15);
    }
}
