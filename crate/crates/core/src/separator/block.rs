use rand::Rng;

use super::config::{LayerType, SeparatorConfig};
use super::layers::{self, ParamInit, SeBranch};
use crate::error::Result;
use crate::nn::{Graph, ModelParams, NodeId};

fn se_branch(cfg: &SeparatorConfig) -> SeBranch {
    if cfg.use_se_block {
        SeBranch::Gate
    } else {
        SeBranch::Disabled
    }
}

fn init_layer<R: Rng>(pi: &mut ParamInit<R>, cfg: &SeparatorConfig, prefix: &str, ty: LayerType, kernel: usize) -> Result<()> {
    match ty {
        LayerType::SeConformer => {
            let se = cfg.use_se_block.then_some(cfg.se_reduction);
            layers::init_se_conformer(pi, prefix, cfg.channels, kernel, cfg.ffn_mult, se)
        }
        LayerType::Transformer => layers::init_transformer(pi, prefix, cfg.channels, cfg.ffn_mult),
    }
}

fn layer(g: &mut Graph, p: &ModelParams, cfg: &SeparatorConfig, prefix: &str, ty: LayerType, x: NodeId) -> Result<NodeId> {
    match ty {
        LayerType::SeConformer => layers::se_conformer_layer(g, p, prefix, x, cfg.heads, se_branch(cfg)),
        LayerType::Transformer => layers::transformer_layer(g, p, prefix, x, cfg.heads),
    }
}

pub fn init_block<R: Rng>(pi: &mut ParamInit<R>, cfg: &SeparatorConfig, prefix: &str) -> Result<()> {
    for l in 0..cfg.intra_layers {
        init_layer(pi, cfg, &format!("{prefix}/intra/{l}"), cfg.intra_type, cfg.kernel_ladder[l])?;
    }
    for l in 0..cfg.inter_layers {
        init_layer(pi, cfg, &format!("{prefix}/inter/{l}"), cfg.inter_type, cfg.inter_kernel(l))?;
    }
    Ok(())
}

/// Intra stack over `[S, K, N]` (chunks as batch).
pub fn intra_pass(g: &mut Graph, p: &ModelParams, cfg: &SeparatorConfig, prefix: &str, z: NodeId) -> Result<NodeId> {
    let seq = g.permute(z, &[2, 1, 0])?;
    let mut h = layers::add_positional(g, seq)?;
    for l in 0..cfg.intra_layers {
        h = layer(g, p, cfg, &format!("{prefix}/intra/{l}"), cfg.intra_type, h)?;
    }
    Ok(h)
}

/// One dual-path block on an `[N, K, S]` chunk tensor.
pub fn dual_path_block(g: &mut Graph, p: &ModelParams, cfg: &SeparatorConfig, prefix: &str, z: NodeId) -> Result<NodeId> {
    let intra = intra_pass(g, p, cfg, prefix, z)?;
    let seq = g.permute(intra, &[1, 0, 2])?;
    let mut h = layers::add_positional(g, seq)?;
    for l in 0..cfg.inter_layers {
        h = layer(g, p, cfg, &format!("{prefix}/inter/{l}"), cfg.inter_type, h)?;
    }
    g.permute(h, &[2, 0, 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn setup(cfg: &SeparatorConfig) -> ModelParams {
        let mut p = ModelParams::new();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        init_block(&mut ParamInit { params: &mut p, rng: &mut rng }, cfg, "b").unwrap();
        p
    }

    #[test]
    fn shape_preserved_for_every_type_pair() {
        use LayerType::*;
        let input = init::uniform(&mut Xoshiro256PlusPlus::seed_from_u64(2), &[8, 10, 4], 1.0);
        for (intra, inter) in [(SeConformer, Transformer), (Transformer, Transformer), (SeConformer, SeConformer), (Transformer, SeConformer)] {
            let cfg = SeparatorConfig { intra_type: intra, inter_type: inter, ..SeparatorConfig::tiny() };
            let p = setup(&cfg);
            assert_eq!(p.contains("b/intra/0/conv/dw_weight"), intra == SeConformer);
            assert_eq!(p.contains("b/inter/1/conv/dw_weight"), inter == SeConformer);
            let mut g = Graph::new();
            let z = g.constant(input.clone());
            let y = dual_path_block(&mut g, &p, &cfg, "b", z).unwrap();
            assert_eq!(g.shape(y), &[8, 10, 4]);
        }
    }

    #[test]
    fn intra_pass_is_chunk_equivariant() {
        let cfg = SeparatorConfig::tiny();
        let p = setup(&cfg);
        let input = init::uniform(&mut Xoshiro256PlusPlus::seed_from_u64(4), &[8, 10, 4], 1.0);
        let perm = [2usize, 0, 3, 1];
        let mut permuted = input.clone();
        for n in 0..8 {
            for k in 0..10 {
                for (s, &src) in perm.iter().enumerate() {
                    permuted.data_mut()[(n * 10 + k) * 4 + s] = input.at(&[n, k, src]);
                }
            }
        }
        let run = |t: &crate::Tensor| {
            let mut g = Graph::new();
            let z = g.constant(t.clone());
            let y = intra_pass(&mut g, &p, &cfg, "b", z).unwrap();
            g.value(y).clone()
        };
        let (a, b) = (run(&input), run(&permuted));
        let per_chunk = 10 * 8;
        for (s, &src) in perm.iter().enumerate() {
            assert_eq!(&b.data()[s * per_chunk..(s + 1) * per_chunk], &a.data()[src * per_chunk..(src + 1) * per_chunk]);
        }
    }
}
