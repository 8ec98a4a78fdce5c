//! The training objective: negative PIT SI-SNR plus the weighted speaker loss.

use serde::Serialize;

use super::embedder::SpeakerEmbedder;
use super::pit::{best_assignment, invert, pit_si_snr, PitResult, MAX_PIT_SPEAKERS};
use crate::error::{Error, Result};
use crate::frontend::Waveform;
use crate::nn::{Graph, NodeId};
use crate::tensor::Tensor;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `−Σ_c ⟨s_c, ŝ_c⟩ + Σ_{c<c'} ⟨ŝ_c, ŝ_c'⟩` over embeddings, with `est[c]`
/// already aligned to `refs[c]`.
pub fn l_spk_embeddings(refs: &[Vec<f64>], ests: &[Vec<f64>]) -> Result<f64> {
    if refs.len() != ests.len() {
        return Err(Error::shape("l_spk", format!("{} references vs {} estimates", refs.len(), ests.len())));
    }
    let mut loss = 0.0;
    for (r, e) in refs.iter().zip(ests) {
        loss -= dot(r, e);
    }
    for i in 0..ests.len() {
        for j in i + 1..ests.len() {
            loss += dot(&ests[i], &ests[j]);
        }
    }
    Ok(loss)
}

/// Speaker loss with estimates paired to references by `perm` (estimate → reference).
pub fn l_spk(refs: &[Waveform], ests: &[Waveform], emb: &dyn SpeakerEmbedder, perm: &[usize]) -> Result<f64> {
    if perm.len() != ests.len() || refs.len() != ests.len() {
        return Err(Error::shape("l_spk", "references, estimates and permutation differ in length"));
    }
    let ref_e = refs.iter().map(|w| emb.embed(w)).collect::<Result<Vec<_>>>()?;
    let inv = invert(perm);
    let est_e = inv.iter().map(|&i| emb.embed(&ests[i])).collect::<Result<Vec<_>>>()?;
    l_spk_embeddings(&ref_e, &est_e)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// `−` PIT mean SI-SNR.
    pub si_snr_loss: f64,
    pub l_spk: f64,
    pub pit: PitResult,
}

pub fn total_loss(refs: &[Waveform], ests: &[Waveform], emb: &dyn SpeakerEmbedder, alpha: f64) -> Result<LossBreakdown> {
    if alpha < 0.0 {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    let e: Vec<&[f64]> = ests.iter().map(|w| w.samples.as_slice()).collect();
    let r: Vec<&[f64]> = refs.iter().map(|w| w.samples.as_slice()).collect();
    let pit = pit_si_snr(&e, &r)?;
    let spk = l_spk(refs, ests, emb, &pit.permutation)?;
    let si_snr_loss = -pit.mean_si_snr;
    Ok(LossBreakdown { total: si_snr_loss + alpha * spk, si_snr_loss, l_spk: spk, pit })
}

/// Graph form of [`total_loss`] over `[1, L]` estimate nodes.
#[derive(Debug, Clone)]
pub struct LossNodes {
    pub total: NodeId,
    pub si_snr_loss: f64,
    pub l_spk: f64,
    pub pit: PitResult,
}

/// Builds the objective on estimate nodes. The PIT assignment is chosen on
/// the current values; the speaker term is differentiated through the
/// embedder only when `alpha > 0`.
pub fn total_loss_node(
    g: &mut Graph,
    ests: &[NodeId],
    refs: &[Waveform],
    emb: &dyn SpeakerEmbedder,
    alpha: f64,
) -> Result<LossNodes> {
    let c = refs.len();
    if ests.len() != c {
        return Err(Error::shape("total_loss", format!("{} estimates for {c} references", ests.len())));
    }
    if !(2..=MAX_PIT_SPEAKERS).contains(&c) {
        return Err(Error::Unsupported(format!("PIT supports 2..={MAX_PIT_SPEAKERS} speakers, got {c}")));
    }
    if alpha < 0.0 {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    let sample_rate = refs[0].sample_rate;

    // SI-SNR for every (estimate, reference) pair, then keep the best assignment.
    let mut pair_nodes = Vec::with_capacity(c);
    let mut scores = Vec::with_capacity(c);
    for &e in ests {
        let row = refs.iter().map(|r| g.si_snr(e, &r.samples)).collect::<Result<Vec<_>>>()?;
        scores.push(row.iter().map(|&n| g.value(n).data()[0]).collect::<Vec<_>>());
        pair_nodes.push(row);
    }
    let pit = best_assignment(&scores);
    let inv = invert(&pit.permutation);

    let mut sum = pair_nodes[inv[0]][0];
    for j in 1..c {
        sum = g.add(sum, pair_nodes[inv[j]][j])?;
    }
    let si_snr_term = g.scale(sum, -1.0 / c as f64)?;
    let si_snr_loss = g.value(si_snr_term).data()[0];

    let ref_e = refs.iter().map(|w| emb.embed(w)).collect::<Result<Vec<_>>>()?;
    if alpha == 0.0 {
        let est_e = inv
            .iter()
            .map(|&i| emb.embed(&Waveform::new(g.value(ests[i]).data().to_vec(), sample_rate)))
            .collect::<Result<Vec<_>>>()?;
        let spk = l_spk_embeddings(&ref_e, &est_e)?;
        return Ok(LossNodes { total: si_snr_term, si_snr_loss, l_spk: spk, pit });
    }

    let est_nodes = inv.iter().map(|&i| emb.embed_node(g, ests[i], sample_rate)).collect::<Result<Vec<_>>>()?;
    let mut spk = None;
    for (r, &e) in ref_e.into_iter().zip(&est_nodes) {
        let r = g.constant(Tensor::from_parts(vec![r.len()], r));
        let d = g.dot(r, e)?;
        let d = g.scale(d, -1.0)?;
        spk = Some(match spk {
            None => d,
            Some(s) => g.add(s, d)?,
        });
    }
    let mut spk = spk.expect("at least two speakers");
    for i in 0..c {
        for j in i + 1..c {
            let d = g.dot(est_nodes[i], est_nodes[j])?;
            spk = g.add(spk, d)?;
        }
    }
    let l_spk = g.value(spk).data()[0];
    let weighted = g.scale(spk, alpha)?;
    let total = g.add(si_snr_term, weighted)?;
    Ok(LossNodes { total, si_snr_loss, l_spk, pit })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }

    #[test]
    fn closed_form_cases() {
        let (a, b) = (e(&[1.0, 0.0]), e(&[0.0, 1.0]));
        assert_eq!(l_spk_embeddings(&[a.clone(), b.clone()], &[a.clone(), b.clone()]).unwrap(), -2.0);
        assert_eq!(l_spk_embeddings(&[a.clone(), a.clone()], &[a.clone(), a.clone()]).unwrap(), -1.0);
        assert_eq!(l_spk_embeddings(&[a.clone(), b.clone()], &[b, a]).unwrap(), 0.0);
    }

    #[test]
    fn three_speaker_generalization() {
        let basis: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| (i == j) as u8 as f64).collect()).collect();
        assert_eq!(l_spk_embeddings(&basis, &basis).unwrap(), -3.0);
    }
}
