use serde::Serialize;

use super::metrics::si_snr;
use crate::error::{Error, Result};

pub const MAX_PIT_SPEAKERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PitResult {
    /// `permutation[i]` is the reference index assigned to estimate `i`.
    pub permutation: Vec<usize>,
    /// SI-SNR of each reference against its assigned estimate, in reference order.
    pub per_pair_si_snr: Vec<f64>,
    pub mean_si_snr: f64,
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                go(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Inverse of an estimate→reference permutation.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &j) in perm.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

/// Picks the assignment with the highest mean from a score matrix
/// `scores[est][ref]`. Ties go to the lexicographically smallest permutation.
pub fn best_assignment(scores: &[Vec<f64>]) -> PitResult {
    let c = scores.len();
    let mut best: Option<PitResult> = None;
    for perm in permutations(c) {
        let inv = invert(&perm);
        let per_pair: Vec<f64> = (0..c).map(|j| scores[inv[j]][j]).collect();
        let mean = per_pair.iter().sum::<f64>() / c as f64;
        if best.as_ref().map_or(true, |b| mean > b.mean_si_snr) {
            best = Some(PitResult { permutation: perm, per_pair_si_snr: per_pair, mean_si_snr: mean });
        }
    }
    best.expect("at least one permutation")
}

/// Utterance-level permutation-invariant SI-SNR by exhaustive search.
pub fn pit_si_snr<E: AsRef<[f64]>, R: AsRef<[f64]>>(ests: &[E], refs: &[R]) -> Result<PitResult> {
    let c = refs.len();
    if ests.len() != c {
        return Err(Error::shape("pit", format!("{} estimates for {c} references", ests.len())));
    }
    if c < 2 {
        return Err(Error::Unsupported(format!("PIT needs at least 2 speakers, got {c}")));
    }
    if c > MAX_PIT_SPEAKERS {
        return Err(Error::Unsupported(format!(
            "exhaustive PIT supports at most {MAX_PIT_SPEAKERS} speakers, got {c}"
        )));
    }
    let scores = ests
        .iter()
        .map(|e| refs.iter().map(|r| si_snr(e.as_ref(), r.as_ref())).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(best_assignment(&scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signals() -> Vec<Vec<f64>> {
        (1..=3).map(|k| (0..200).map(|i| (i as f64 * 0.02 * k as f64).sin() + 0.1 * k as f64 * (i as f64 * 0.3).cos()).collect()).collect()
    }

    #[test]
    fn lexicographic_order() {
        assert_eq!(permutations(3), vec![
            vec![0, 1, 2], vec![0, 2, 1], vec![1, 0, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0]
        ]);
        assert_eq!(permutations(4).len(), 24);
    }

    #[test]
    fn reversed_estimates_are_swapped_back() {
        let refs = signals()[..2].to_vec();
        let ests = vec![refs[1].clone(), refs[0].clone()];
        let pit = pit_si_snr(&ests, &refs).unwrap();
        assert_eq!(pit.permutation, vec![1, 0]);
        assert_eq!(pit.mean_si_snr, pit_si_snr(&refs, &refs).unwrap().mean_si_snr);
    }

    #[test]
    fn identical_estimates_take_identity() {
        let refs = signals();
        let ests = vec![refs[0].clone(); 3];
        assert_eq!(pit_si_snr(&ests, &refs).unwrap().permutation, vec![0, 1, 2]);
    }

    #[test]
    fn speaker_count_limits() {
        let s = signals();
        assert!(matches!(pit_si_snr(&s[..1], &s[..1]), Err(Error::Unsupported(_))));
        let five = vec![s[0].clone(); 5];
        assert!(matches!(pit_si_snr(&five, &five), Err(Error::Unsupported(_))));
        assert!(pit_si_snr(&s[..2], &s).is_err());
    }
}
