//! Plain (non-differentiable) separation metrics in dB.

use crate::error::{Error, Result};
use crate::nn::{si_snr_parts, SI_SNR_CAP_DB, SI_SNR_EPS};

/// Scale-invariant SNR, clamped to `±80 dB`.
pub fn si_snr(est: &[f64], reference: &[f64]) -> Result<f64> {
    let parts = si_snr_parts(est, reference)?;
    if parts.den_error == 0.0 {
        return Ok(-SI_SNR_CAP_DB);
    }
    let db = 10.0 * (parts.den_target / parts.den_error).log10();
    Ok(db.clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB))
}

/// Plain signal-to-distortion ratio `‖ref‖² / ‖ref − est‖²`, clamped like [`si_snr`].
pub fn sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::shape("sdr", format!("length {} vs {}", est.len(), reference.len())));
    }
    let signal: f64 = reference.iter().map(|r| r * r).sum();
    let distortion: f64 = reference.iter().zip(est).map(|(r, e)| (r - e) * (r - e)).sum();
    let db = 10.0 * (signal / (distortion + SI_SNR_EPS)).log10();
    Ok(db.clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB))
}

pub fn si_snri(est: &[f64], reference: &[f64], mix: &[f64]) -> Result<f64> {
    Ok(si_snr(est, reference)? - si_snr(mix, reference)?)
}

pub fn sdri(est: &[f64], reference: &[f64], mix: &[f64]) -> Result<f64> {
    Ok(sdr(est, reference)? - sdr(mix, reference)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize, f: f64, amp: f64) -> Vec<f64> {
        (0..len).map(|i| amp * (i as f64 * f).sin()).collect()
    }

    #[test]
    fn hand_example_is_zero_db() {
        let r = [1.0, -1.0, 1.0, -1.0];
        let e = [1.0, -1.0, 0.0, 0.0];
        assert!(si_snr(&e, &r).unwrap().abs() < 1e-9);
    }

    #[test]
    fn identical_and_scaled_hit_the_cap() {
        let r = tone(400, 0.05, 1.0);
        assert_eq!(si_snr(&r, &r).unwrap(), SI_SNR_CAP_DB);
        let scaled: Vec<f64> = r.iter().map(|v| 3.0 * v).collect();
        assert_eq!(si_snr(&scaled, &r).unwrap(), SI_SNR_CAP_DB);
        assert_eq!(sdr(&r, &r).unwrap(), SI_SNR_CAP_DB);
    }

    #[test]
    fn improvement_of_mixture_is_zero() {
        let r = tone(300, 0.03, 1.0);
        let mix: Vec<f64> = r.iter().zip(tone(300, 0.11, 0.7)).map(|(a, b)| a + b).collect();
        assert_eq!(si_snri(&mix, &r, &mix).unwrap(), 0.0);
        assert_eq!(sdri(&mix, &r, &mix).unwrap(), 0.0);
    }

    #[test]
    fn sdr_matches_noise_power() {
        let r = tone(1000, 0.07, 1.0);
        let noise = tone(1000, 0.31, 0.1);
        let est: Vec<f64> = r.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let ps: f64 = r.iter().map(|v| v * v).sum();
        let pn: f64 = noise.iter().map(|v| v * v).sum();
        assert!((sdr(&est, &r).unwrap() - 10.0 * (ps / pn).log10()).abs() < 0.01);
    }

    #[test]
    fn errors() {
        assert!(si_snr(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(si_snr(&[1.0, 2.0], &[4.0, 4.0]).is_err());
        assert!(sdr(&[1.0], &[1.0, 2.0]).is_err());
    }
}
