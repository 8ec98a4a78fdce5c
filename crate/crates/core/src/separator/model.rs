use rand::Rng;

use super::block::{dual_path_block, init_block};
use super::config::SeparatorConfig;
use super::fusion::{fuse, init_fusion};
use super::layers::ParamInit;
use crate::error::{Error, Result};
use crate::frontend::{self, Waveform};
use crate::nn::{ChunkGeometry, Graph, ModelParams, NodeId};
use crate::tensor::Tensor;

/// Fresh parameters for the whole network, drawn in a fixed order.
pub fn init_params<R: Rng>(cfg: &SeparatorConfig, rng: &mut R) -> Result<ModelParams> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::ConfigFields(errs));
    }
    let mut params = ModelParams::new();
    frontend::init_params(&cfg.frontend(), &mut params, rng)?;
    let mut pi = ParamInit { params: &mut params, rng };
    for j in 0..cfg.num_blocks {
        init_block(&mut pi, cfg, &format!("block{j}"))?;
    }
    init_fusion(&mut pi, cfg)?;

    let (n, c) = (cfg.channels, cfg.num_speakers);
    pi.tensor("mask/prelu/slope", Tensor::full(&[1], 0.25))?;
    pi.xavier("mask/expand/weight", &[c * n, n, 1], n, c * n)?;
    pi.tensor("mask/expand/bias", Tensor::zeros(&[c * n]))?;
    for gate in ["tanh", "sigmoid"] {
        pi.xavier(&format!("mask/{gate}/weight"), &[n, n, 1], n, n)?;
        pi.tensor(&format!("mask/{gate}/bias"), Tensor::zeros(&[n]))?;
    }
    Ok(params)
}

/// Total scalar parameter count implied by `cfg`.
pub fn param_count(cfg: &SeparatorConfig) -> Result<usize> {
    let mut rng = <rand_xoshiro::Xoshiro256PlusPlus as rand::SeedableRng>::seed_from_u64(0);
    Ok(init_params(cfg, &mut rng)?.count())
}

/// Applies the `P` blocks in sequence and returns every block's output.
pub fn run_blocks(g: &mut Graph, p: &ModelParams, cfg: &SeparatorConfig, z: NodeId) -> Result<Vec<NodeId>> {
    let mut ys = Vec::with_capacity(cfg.num_blocks);
    let mut h = z;
    for j in 0..cfg.num_blocks {
        h = dual_path_block(g, p, cfg, &format!("block{j}"), h)?;
        ys.push(h);
    }
    Ok(ys)
}

fn pointwise(g: &mut Graph, p: &ModelParams, path: &str, x: NodeId) -> Result<NodeId> {
    let w = g.param(p, &format!("{path}/weight"))?;
    let b = g.param(p, &format!("{path}/bias"))?;
    g.conv1d(x, w, Some(b), 1)
}

/// Non-negative `[N, T]` masks, one per speaker, from a fused `[N, K, S]` tensor.
pub fn mask_head(g: &mut Graph, p: &ModelParams, cfg: &SeparatorConfig, r: NodeId, geom: &ChunkGeometry) -> Result<Vec<NodeId>> {
    let (n, c) = (cfg.channels, cfg.num_speakers);
    let (k, s) = (geom.chunk, geom.num_chunks);
    let slope = g.param(p, "mask/prelu/slope")?;
    let h = g.prelu(r, slope)?;
    let flat = g.reshape(h, &[n, k * s])?;
    let wide = pointwise(g, p, "mask/expand", flat)?;
    let chunks = g.reshape(wide, &[c * n, k, s])?;
    let frames = g.overlap_add(chunks, geom)?;
    let mut masks = Vec::with_capacity(c);
    for spk in 0..c {
        let x = g.slice(frames, 0, spk * n, n)?;
        let a = pointwise(g, p, "mask/tanh", x)?;
        let a = g.tanh(a)?;
        let b = pointwise(g, p, "mask/sigmoid", x)?;
        let b = g.sigmoid(b)?;
        let m = g.mul(a, b)?;
        masks.push(g.relu(m)?);
    }
    Ok(masks)
}

#[derive(Debug, Clone)]
pub struct ForwardNodes {
    pub encoded: NodeId,
    pub masks: Vec<NodeId>,
    /// `[1, len]` per speaker.
    pub estimates: Vec<NodeId>,
}

/// Builds the full network on a `[1, len]` mixture node.
pub fn forward_graph(g: &mut Graph, p: &ModelParams, cfg: &SeparatorConfig, mix: NodeId) -> Result<ForwardNodes> {
    let fcfg = cfg.frontend();
    let len = g.shape(mix)[1];
    let encoded = frontend::encode_node(g, p, &fcfg, mix)?;
    let (z, geom) = g.segment(encoded, cfg.chunk_size)?;
    let ys = run_blocks(g, p, cfg, z)?;
    let r = fuse(g, p, cfg, &ys)?;
    let masks = mask_head(g, p, cfg, r, &geom)?;
    let estimates = decode_masks(g, p, cfg, encoded, &masks, len)?;
    Ok(ForwardNodes { encoded, masks, estimates })
}

pub fn decode_masks(
    g: &mut Graph,
    p: &ModelParams,
    cfg: &SeparatorConfig,
    encoded: NodeId,
    masks: &[NodeId],
    len: usize,
) -> Result<Vec<NodeId>> {
    let fcfg = cfg.frontend();
    masks
        .iter()
        .map(|&m| {
            let masked = g.mul(m, encoded)?;
            frontend::decode_node(g, p, &fcfg, masked, len)
        })
        .collect()
}

/// Separates a mixture into `num_speakers` waveforms of the mixture's length.
pub fn separate_forward(mix: &Waveform, p: &ModelParams, cfg: &SeparatorConfig) -> Result<Vec<Waveform>> {
    let mut g = Graph::new();
    let x = g.constant(mix.to_tensor());
    let out = forward_graph(&mut g, p, cfg, x)?;
    Ok(out.estimates.iter().map(|&e| Waveform::new(g.value(e).data().to_vec(), mix.sample_rate)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::separator::config::Fusion;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn mixture(len: usize, seed: u64) -> Waveform {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 8000)
    }

    #[test]
    fn two_outputs_of_input_length_deterministic() {
        let cfg = SeparatorConfig::tiny();
        let p = init_params(&cfg, &mut Xoshiro256PlusPlus::seed_from_u64(1)).unwrap();
        let mix = mixture(200, 2);
        let a = separate_forward(&mix, &p, &cfg).unwrap();
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|w| w.len() == 200 && w.samples.iter().all(|s| s.is_finite())));
        assert_eq!(a, separate_forward(&mix, &p, &cfg).unwrap());
    }

    #[test]
    fn init_is_reproducible_and_counted() {
        let cfg = SeparatorConfig::tiny();
        let a = init_params(&cfg, &mut Xoshiro256PlusPlus::seed_from_u64(9)).unwrap();
        let b = init_params(&cfg, &mut Xoshiro256PlusPlus::seed_from_u64(9)).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.path == y.path && x.value == y.value));
        assert_eq!(a.count(), param_count(&cfg).unwrap());
        let no_se = SeparatorConfig { use_se_block: false, ..cfg };
        assert!(param_count(&no_se).unwrap() < a.count());
    }

    #[test]
    fn masks_are_nonnegative_with_encoder_shape() {
        let cfg = SeparatorConfig::tiny();
        let p = init_params(&cfg, &mut Xoshiro256PlusPlus::seed_from_u64(3)).unwrap();
        let mut g = Graph::new();
        let x = g.constant(mixture(240, 4).to_tensor());
        let out = forward_graph(&mut g, &p, &cfg, x).unwrap();
        let enc_shape = g.shape(out.encoded).to_vec();
        for &m in &out.masks {
            assert_eq!(g.shape(m), enc_shape.as_slice());
            assert!(g.value(m).data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zero_input_gives_zero_masks() {
        let cfg = SeparatorConfig::tiny();
        let p = init_params(&cfg, &mut Xoshiro256PlusPlus::seed_from_u64(3)).unwrap();
        let geom = ChunkGeometry::new(9, cfg.chunk_size).unwrap();
        let mut g = Graph::new();
        let r = g.constant(Tensor::zeros(&[cfg.channels, geom.chunk, geom.num_chunks]));
        for m in mask_head(&mut g, &p, &cfg, r, &geom).unwrap() {
            assert!(g.value(m).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn beta_one_matches_last_block_only() {
        let cfg = SeparatorConfig { beta: 1.0, fusion: Fusion::Mbfa, num_blocks: 3, ..SeparatorConfig::tiny() };
        let p = init_params(&cfg, &mut Xoshiro256PlusPlus::seed_from_u64(5)).unwrap();
        let mix = mixture(200, 6);
        let full = separate_forward(&mix, &p, &cfg).unwrap();

        let mut g = Graph::new();
        let x = g.constant(mix.to_tensor());
        let enc = frontend::encode_node(&mut g, &p, &cfg.frontend(), x).unwrap();
        let (z, geom) = g.segment(enc, cfg.chunk_size).unwrap();
        let ys = run_blocks(&mut g, &p, &cfg, z).unwrap();
        let masks = mask_head(&mut g, &p, &cfg, *ys.last().unwrap(), &geom).unwrap();
        let est = decode_masks(&mut g, &p, &cfg, enc, &masks, mix.len()).unwrap();
        for (w, &e) in full.iter().zip(&est) {
            assert_eq!(w.samples.as_slice(), g.value(e).data());
        }
    }
}
