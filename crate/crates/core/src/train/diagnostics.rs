//! Finite-difference checks over the primitive ops and the assembled model.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::config::ExperimentConfig;
use crate::data::{derive_seed, dynamic_mix, speaker_pool};
use crate::error::Result;
use crate::frontend::Waveform;
use crate::nn::{compare_gradients, grad_check, GradCheckOptions, GradReport, Graph, ModelParams, NodeId};
use crate::objectives::{total_loss_node, MelStatEmbedder};
use crate::separator::{forward_graph, init_params};
use crate::tensor::Tensor;

/// Maximum relative error accepted for the primitive checks.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
pub const ATTENTION_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckOutcome {
    pub report: GradReport,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.report.passes(self.tolerance)
    }
}

fn random(rng: &mut Xoshiro256PlusPlus, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches data")
}

type Build = Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>>;

struct Case {
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    tolerance: f64,
    build: Build,
}

fn case(name: &'static str, shapes: &[&[usize]], build: impl Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + 'static) -> Case {
    Case { name, shapes: shapes.iter().map(|s| s.to_vec()).collect(), tolerance: PRIMITIVE_TOLERANCE, build: Box::new(build) }
}

fn cases(seed: u64) -> Vec<Case> {
    let mut reference_rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(&[seed, 99]));
    let reference: Vec<f64> = (0..12).map(|_| reference_rng.gen_range(-1.0..1.0)).collect();
    let mut attention = case("mhsa", &[&[5, 8], &[8, 8], &[8], &[8, 8], &[8], &[8, 8], &[8], &[8, 8], &[8]], |g, x| {
        let q = g.linear(x[0], x[1], Some(x[2]))?;
        let k = g.linear(x[0], x[3], Some(x[4]))?;
        let v = g.linear(x[0], x[5], Some(x[6]))?;
        let a = g.attention(q, k, v, 2)?;
        g.linear(a, x[7], Some(x[8]))
    });
    attention.tolerance = ATTENTION_TOLERANCE;
    vec![
        case("conv1d", &[&[2, 9], &[3, 2, 3], &[3]], |g, x| g.conv1d(x[0], x[1], Some(x[2]), 2)),
        case("transposed_conv1d", &[&[2, 5], &[2, 3, 4], &[3]], |g, x| g.conv_transpose1d(x[0], x[1], Some(x[2]), 2)),
        case("linear", &[&[4, 3], &[5, 3], &[5]], |g, x| g.linear(x[0], x[1], Some(x[2]))),
        case("layer_norm", &[&[3, 6], &[6], &[6]], |g, x| g.layer_norm(x[0], x[1], x[2], 1e-5)),
        attention,
        case("depthwise_conv1d", &[&[10, 4], &[4, 5], &[4]], |g, x| g.depthwise_conv(x[0], x[1], Some(x[2]))),
        case("glu", &[&[5, 6]], |g, x| g.glu(x[0])),
        case("swish", &[&[4, 5]], |g, x| g.swish(x[0])),
        case("sigmoid", &[&[4, 5]], |g, x| g.sigmoid(x[0])),
        case("tanh", &[&[4, 5]], |g, x| g.tanh(x[0])),
        case("prelu", &[&[4, 5], &[1]], |g, x| g.prelu(x[0], x[1])),
        case("scale_channels", &[&[5, 4], &[4]], |g, x| g.scale_channels(x[0], x[1])),
        case("segment_overlap_add", &[&[3, 17]], |g, x| {
            let (z, geom) = g.segment(x[0], 4)?;
            g.overlap_add(z, &geom)
        }),
        case("mean_axis", &[&[3, 4, 5]], |g, x| g.mean_axis(x[0], 1)),
        case("l2_normalize", &[&[7]], |g, x| g.l2_normalize(x[0])),
        case("si_snr", &[&[1, 12]], move |g, x| g.si_snr(x[0], &reference)),
    ]
}

/// Checks every primitive on random inputs drawn from `seed`. The scalar
/// objective is a random weighting of each op's output.
pub fn primitive_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for (i, c) in cases(seed).into_iter().enumerate() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(&[seed, i as u64]));
        let inputs: Vec<Tensor> = c.shapes.iter().map(|s| random(&mut rng, s)).collect();
        let mut probe = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
        let probe_out = (c.build)(&mut probe, &ids)?;
        let out_shape = probe.shape(probe_out).to_vec();
        let weights = random(&mut rng, &out_shape);
        let build = &c.build;
        let report = grad_check(c.name, &inputs, 1e-5, |g, x| {
            let y = build(g, x)?;
            let w = g.constant(weights.clone());
            g.mul(y, w)
        })?;
        out.push(CheckOutcome { report, tolerance: c.tolerance });
    }
    Ok(out)
}

fn with_values(template: &ModelParams, values: &[Tensor]) -> ModelParams {
    let mut p = template.clone();
    for (slot, v) in p.iter_mut().zip(values) {
        slot.value = v.clone();
    }
    p
}

fn model_loss(params: &ModelParams, cfg: &ExperimentConfig, emb: &MelStatEmbedder, mix: &Waveform, refs: &[Waveform]) -> Result<(Graph, NodeId)> {
    let mut g = Graph::new();
    let x = g.constant(mix.to_tensor());
    let out = forward_graph(&mut g, params, &cfg.model, x)?;
    let loss = total_loss_node(&mut g, &out.estimates, refs, emb, cfg.train.alpha)?;
    Ok((g, loss.total))
}

/// Gradient of the full training objective (separator plus SI-SNR/PIT plus
/// the speaker term) with respect to every parameter tensor, checked on up
/// to `coords_per_tensor` sampled coordinates each.
pub fn model_check(cfg: &ExperimentConfig, seed: u64, samples: usize, coords_per_tensor: usize) -> Result<CheckOutcome> {
    let cfg = cfg.clone().validated()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(&[seed, 7]));
    let params = init_params(&cfg.model, &mut rng)?;
    let pool = speaker_pool(2, derive_seed(&[seed, 8]));
    let mut mix_cfg = cfg.data.mix.clone();
    mix_cfg.duration_s = samples as f64 / mix_cfg.sample_rate as f64;
    let ex = dynamic_mix(&pool, &mix_cfg, &mut rng)?;
    let emb = MelStatEmbedder::new(cfg.embedder)?;

    let (g, root) = model_loss(&params, &cfg, &emb, &ex.mixture, &ex.targets)?;
    let grads = g.backward(root)?;
    let mut with_grads = params.clone();
    with_grads.zero_grad();
    g.accumulate_param_grads(&grads, &mut with_grads)?;
    let analytic: Vec<Tensor> = with_grads.iter().map(|p| p.grad.clone()).collect();
    let values: Vec<Tensor> = params.iter().map(|p| p.value.clone()).collect();

    let opts = GradCheckOptions { h: 1e-6, max_coords_per_input: Some(coords_per_tensor), seed };
    let report = compare_gradients("model+total_loss", &values, &analytic, opts, |xs| {
        let p = with_values(&params, xs);
        let (g, root) = model_loss(&p, &cfg, &emb, &ex.mixture, &ex.targets)?;
        Ok(g.value(root).data()[0])
    })?;
    Ok(CheckOutcome { report, tolerance: MODEL_TOLERANCE })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes() {
        for o in primitive_checks(3).unwrap() {
            assert!(o.passed(), "{:?}", o.report);
            assert!(o.report.checked > 0);
        }
    }
}
