//! Harmonic "speakers": each voice is a stack of harmonics on a wandering f0
//! track with a speaker-specific spectral envelope.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::frontend::Waveform;

pub const PEAK: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LowF0,
    HighF0,
}

impl Family {
    pub fn code(self) -> char {
        match self {
            Family::LowF0 => 'L',
            Family::HighF0 => 'H',
        }
    }

    /// Range of `f0_base` in Hz.
    pub fn f0_range(self) -> (f64, f64) {
        match self {
            Family::LowF0 => (100.0, 140.0),
            Family::HighF0 => (190.0, 250.0),
        }
    }
}

/// Unordered family combination label such as `LL`, `HH` or `LH`.
pub fn family_group(families: &[Family]) -> String {
    let mut codes: Vec<char> = families.iter().map(|f| f.code()).collect();
    codes.sort_by_key(|&c| c != 'L');
    codes.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeaker {
    pub speaker_id: String,
    pub family: Family,
    pub f0_base: f64,
    pub f0_jitter: f64,
    /// Relative amplitude of harmonic 1, 2, …; the fundamental is 1.
    pub envelope: Vec<f64>,
}

pub const HARMONICS: usize = 12;

impl SyntheticSpeaker {
    pub fn random<R: Rng>(speaker_id: impl Into<String>, family: Family, rng: &mut R) -> Self {
        let (lo, hi) = family.f0_range();
        let f0_base = rng.gen_range(lo..hi);
        let decay: f64 = rng.gen_range(0.55..0.85);
        let bump = rng.gen_range(2..HARMONICS);
        let envelope = (0..HARMONICS)
            .map(|h| {
                if h == 0 {
                    1.0
                } else {
                    let formant = if h.abs_diff(bump) <= 1 { 1.6 } else { 1.0 };
                    (decay.powi(h as i32) * formant * rng.gen_range(0.6..1.0)).min(0.95)
                }
            })
            .collect();
        Self { speaker_id: speaker_id.into(), family, f0_base, f0_jitter: 0.02 * f0_base, envelope }
    }
}

/// `per_family` speakers of each family, ids `L00`, `L01`, …, `H00`, ….
pub fn speaker_pool(per_family: usize, seed: u64) -> Vec<SyntheticSpeaker> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut pool = Vec::with_capacity(2 * per_family);
    for family in [Family::LowF0, Family::HighF0] {
        for i in 0..per_family {
            pool.push(SyntheticSpeaker::random(format!("{}{i:02}", family.code()), family, &mut rng));
        }
    }
    pool
}

fn utterance_seed(spk: &SyntheticSpeaker, seed: u64) -> u64 {
    let mut h = crc32fast::Hasher::new();
    h.update(spk.speaker_id.as_bytes());
    ((h.finalize() as u64) << 32) ^ seed
}

/// Deterministic utterance of `duration_s` seconds, peak-normalized to 0.9.
pub fn synth_utterance(spk: &SyntheticSpeaker, duration_s: f64, sample_rate: u32, seed: u64) -> Waveform {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(utterance_seed(spk, seed));
    let sr = sample_rate as f64;
    let len = (duration_s * sr).round().max(1.0) as usize;
    let step = Normal::new(0.0, 0.15).unwrap();
    let mut phases: Vec<f64> = (0..spk.envelope.len()).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let syllable_rate = rng.gen_range(2.0..5.0);
    let syllable_phase = rng.gen_range(0.0..2.0 * PI);

    // The pitch walk moves every 10 ms, drifts back towards f0_base and is
    // linearly interpolated in between.
    let block = (sr / 100.0).max(1.0) as usize;
    let mut walk = vec![0.0f64; len / block + 2];
    for i in 1..walk.len() {
        walk[i] = (0.9 * walk[i - 1] + step.sample(&mut rng)).clamp(-1.0, 1.0);
    }

    let mut out = Vec::with_capacity(len);
    for n in 0..len {
        let (b, frac) = (n / block, (n % block) as f64 / block as f64);
        let w = walk[b] * (1.0 - frac) + walk[b + 1] * frac;
        let f0 = spk.f0_base + spk.f0_jitter * w;
        let t = n as f64 / sr;
        let amp = 0.65 + 0.35 * (2.0 * PI * syllable_rate * t + syllable_phase).sin();
        let mut s = 0.0;
        for (h, (a, ph)) in spk.envelope.iter().zip(phases.iter_mut()).enumerate() {
            let f = f0 * (h + 1) as f64;
            if f < sr / 2.0 {
                s += a * ph.sin();
            }
            *ph = (*ph + 2.0 * PI * f / sr) % (2.0 * PI);
        }
        out.push(amp * s);
    }
    peak_normalize(&mut out, PEAK);
    Waveform::new(out, sample_rate)
}

/// Scales so that the peak magnitude is `peak`; returns the factor applied.
pub fn peak_normalize(samples: &mut [f64], peak: f64) -> f64 {
    let max = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if max == 0.0 {
        return 1.0;
    }
    let k = peak / max;
    samples.iter_mut().for_each(|s| *s *= k);
    k
}
