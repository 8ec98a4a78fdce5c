//! Combining the outputs of successive dual-path blocks.

use rand::Rng;

use super::config::{Fusion, SeparatorConfig};
use super::layers::ParamInit;
use crate::error::{Error, Result};
use crate::nn::{Graph, ModelParams, NodeId};
use crate::tensor::Tensor;

/// `R_j = β·Y_j + (1 − β)·R_{j−1}` from `R_0 = 0`, returning `R_P`.
pub fn mbfa(ys: &[Tensor], beta: f64) -> Result<Tensor> {
    let (first, rest) = ys.split_first().ok_or_else(|| Error::Config("mbfa needs at least one block output".into()))?;
    let mut r = first.clone();
    r.scale(beta);
    for y in rest {
        if y.shape() != r.shape() {
            return Err(Error::shape("mbfa", "block outputs differ in shape"));
        }
        for (ri, yi) in r.data_mut().iter_mut().zip(y.data()) {
            *ri = beta * yi + (1.0 - beta) * *ri;
        }
    }
    Ok(r)
}

/// `Σ_j β(1 − β)^{P−j} Y_j`.
pub fn mbfa_closed_form(ys: &[Tensor], beta: f64) -> Result<Tensor> {
    let p = ys.len();
    let first = ys.first().ok_or_else(|| Error::Config("mbfa needs at least one block output".into()))?;
    let mut out = Tensor::zeros(first.shape());
    for (j, y) in ys.iter().enumerate() {
        let w = beta * (1.0 - beta).powi((p - 1 - j) as i32);
        for (o, v) in out.data_mut().iter_mut().zip(y.data()) {
            *o += w * v;
        }
    }
    Ok(out)
}

pub fn init_fusion<R: Rng>(pi: &mut ParamInit<R>, cfg: &SeparatorConfig) -> Result<()> {
    if cfg.fusion == Fusion::Concat {
        let (n, pn) = (cfg.channels, cfg.channels * cfg.num_blocks);
        pi.xavier("fusion/proj/weight", &[n, pn, 1], pn, n)?;
        pi.tensor("fusion/proj/bias", Tensor::zeros(&[n]))?;
    }
    Ok(())
}

pub fn mbfa_node(g: &mut Graph, ys: &[NodeId], beta: f64) -> Result<NodeId> {
    let (&first, rest) = ys.split_first().ok_or_else(|| Error::Config("mbfa needs at least one block output".into()))?;
    let mut r = g.scale(first, beta)?;
    for &y in rest {
        let a = g.scale(y, beta)?;
        let b = g.scale(r, 1.0 - beta)?;
        r = g.add(a, b)?;
    }
    Ok(r)
}

/// Fuses `[N, K, S]` block outputs into one `[N, K, S]` representation.
pub fn fuse(g: &mut Graph, p: &ModelParams, cfg: &SeparatorConfig, ys: &[NodeId]) -> Result<NodeId> {
    if ys.is_empty() {
        return Err(Error::Config("fusion needs at least one block output".into()));
    }
    match cfg.fusion {
        Fusion::Mbfa => mbfa_node(g, ys, cfg.beta),
        Fusion::Sum => {
            let mut r = ys[0];
            for &y in &ys[1..] {
                r = g.add(r, y)?;
            }
            Ok(r)
        }
        Fusion::Concat => {
            let shape = g.shape(ys[0]).to_vec();
            let (n, k, s) = (shape[0], shape[1], shape[2]);
            let cat = g.concat(ys, 0)?;
            let flat = g.reshape(cat, &[n * ys.len(), k * s])?;
            let w = g.param(p, "fusion/proj/weight")?;
            let b = g.param(p, "fusion/proj/bias")?;
            let proj = g.conv1d(flat, w, Some(b), 1)?;
            g.reshape(proj, &[g.shape(w)[0], k, s])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn blocks(p: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        (0..p).map(|_| init::uniform(&mut rng, &[3, 4, 2], 1.0)).collect()
    }

    #[test]
    fn beta_one_keeps_last_block() {
        let ys = blocks(4, 1);
        assert_eq!(mbfa(&ys, 1.0).unwrap(), ys[3]);
    }

    #[test]
    fn three_block_weights() {
        let ys: Vec<Tensor> = (0..3).map(|j| Tensor::full(&[1], [1.0, 10.0, 100.0][j])).collect();
        let r = mbfa(&ys, 0.6).unwrap();
        let want = 0.6 * 100.0 + 0.24 * 10.0 + 0.096 * 1.0;
        assert!((r.data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(mbfa(&[], 0.5).is_err());
        assert!(mbfa_closed_form(&[], 0.5).is_err());
    }

    #[test]
    fn sum_of_opposites_vanishes() {
        let y = blocks(1, 3).remove(0);
        let mut neg = y.clone();
        neg.scale(-1.0);
        let cfg = SeparatorConfig { fusion: Fusion::Sum, ..SeparatorConfig::tiny() };
        let mut g = Graph::new();
        let ids = [g.constant(y), g.constant(neg)];
        let r = fuse(&mut g, &ModelParams::new(), &cfg, &ids).unwrap();
        assert!(g.value(r).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn concat_projects_back_to_n() {
        let cfg = SeparatorConfig { fusion: Fusion::Concat, channels: 3, num_blocks: 2, ..SeparatorConfig::tiny() };
        let mut p = ModelParams::new();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        init_fusion(&mut ParamInit { params: &mut p, rng: &mut rng }, &cfg).unwrap();
        let mut g = Graph::new();
        let ids: Vec<_> = blocks(2, 6).into_iter().map(|t| g.constant(t)).collect();
        let r = fuse(&mut g, &p, &cfg, &ids).unwrap();
        assert_eq!(g.shape(r), &[3, 4, 2]);
    }

    #[test]
    fn single_block_strategies() {
        let y = blocks(1, 8).remove(0);
        for (fusion, factor) in [(Fusion::Sum, 1.0), (Fusion::Mbfa, 0.6)] {
            let cfg = SeparatorConfig { fusion, beta: 0.6, ..SeparatorConfig::tiny() };
            let mut g = Graph::new();
            let id = g.constant(y.clone());
            let r = fuse(&mut g, &ModelParams::new(), &cfg, &[id]).unwrap();
            for (a, b) in g.value(r).data().iter().zip(y.data()) {
                assert_eq!(*a, factor * b);
            }
        }
    }
}
