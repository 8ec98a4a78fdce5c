//! Mixing sources at given gains, optional additive noise, and on-the-fly
//! ("dynamic") mixture sampling from a speaker pool.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::synth::{synth_utterance, Family, SyntheticSpeaker, PEAK};
use crate::error::{Error, Result};
use crate::frontend::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    White,
    /// Low-passed noise with a slow syllabic amplitude envelope.
    BabbleLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub snr_db_range: [f64; 2],
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self { kind: NoiseKind::None, snr_db_range: [0.0, 0.0] }
    }

    pub fn validate(&self) -> Option<String> {
        let [lo, hi] = self.snr_db_range;
        (self.kind != NoiseKind::None && !(lo <= hi)).then(|| format!("noise.snr_db_range must satisfy lo <= hi, got [{lo}, {hi}]"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixture: Waveform,
    /// Gain-scaled (and renormalized) sources.
    pub targets: Vec<Waveform>,
    /// Realized signal-to-noise ratio, when noise was added.
    pub snr_db: Option<f64>,
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

fn noise_signal<R: Rng>(kind: NoiseKind, len: usize, sample_rate: u32, rng: &mut R) -> Vec<f64> {
    let mut white: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
    if kind == NoiseKind::BabbleLike {
        let rate = rng.gen_range(3.0..6.0);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut y = 0.0;
        for (n, v) in white.iter_mut().enumerate() {
            y = 0.9 * y + 0.1 * *v;
            let t = n as f64 / sample_rate as f64;
            *v = y * (0.6 + 0.4 * (std::f64::consts::TAU * rate * t + phase).sin());
        }
    }
    white
}

/// Sums `gain_c · s_c` (shorter sources zero-padded), adds noise at an SNR
/// drawn from `noise.snr_db_range`, then rescales everything so the mixture
/// peak is at most 0.9.
pub fn mix<R: Rng>(sources: &[Waveform], gains_db: &[f64], noise: &NoiseSpec, rng: &mut R) -> Result<Mixture> {
    if sources.is_empty() || sources.len() != gains_db.len() {
        return Err(Error::Data(format!("{} sources with {} gains", sources.len(), gains_db.len())));
    }
    if let Some(e) = noise.validate() {
        return Err(Error::Config(e));
    }
    let sample_rate = sources[0].sample_rate;
    let len = sources.iter().map(Waveform::len).max().unwrap_or(0);
    let mut targets: Vec<Vec<f64>> = sources
        .iter()
        .zip(gains_db)
        .map(|(s, g)| {
            let k = 10f64.powf(g / 20.0);
            let mut v: Vec<f64> = s.samples.iter().map(|x| k * x).collect();
            v.resize(len, 0.0);
            v
        })
        .collect();
    let sum_targets = |targets: &[Vec<f64>]| {
        let mut m = vec![0.0; len];
        for t in targets {
            m.iter_mut().zip(t).for_each(|(m, v)| *m += v);
        }
        m
    };
    let clean = sum_targets(&targets);

    let mut snr_db = None;
    let mut noise_part = vec![0.0; len];
    if noise.kind != NoiseKind::None {
        let [lo, hi] = noise.snr_db_range;
        let snr = if lo == hi { lo } else { rng.gen_range(lo..hi) };
        let n = noise_signal(noise.kind, len, sample_rate, rng);
        let (ps, pn) = (power(&clean), power(&n));
        if pn > 0.0 && ps > 0.0 {
            let k = (ps / (pn * 10f64.powf(snr / 10.0))).sqrt();
            noise_part.iter_mut().zip(&n).for_each(|(d, v)| *d = k * v);
            snr_db = Some(snr);
        }
    }

    let peak = clean.iter().zip(&noise_part).fold(0.0f64, |m, (c, n)| m.max((c + n).abs()));
    if peak > PEAK {
        let k = PEAK / peak;
        targets.iter_mut().chain(std::iter::once(&mut noise_part)).for_each(|t| t.iter_mut().for_each(|v| *v *= k));
    }
    // The mixture is rebuilt from the final targets so it equals their sum exactly.
    let mut mixture = sum_targets(&targets);
    mixture.iter_mut().zip(&noise_part).for_each(|(m, n)| *m += n);
    Ok(Mixture {
        mixture: Waveform::new(mixture, sample_rate),
        targets: targets.into_iter().map(|t| Waveform::new(t, sample_rate)).collect(),
        snr_db,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Any distinct speakers.
    Any,
    /// Speakers alternate between families.
    CrossFamily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub num_speakers: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    /// Per-source gains are uniform in `[−gain_db, +gain_db]`.
    pub gain_db: f64,
    pub noise: NoiseSpec,
    pub pairing: Pairing,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            num_speakers: 2,
            duration_s: 0.5,
            sample_rate: 8000,
            gain_db: 2.5,
            noise: NoiseSpec::none(),
            pairing: Pairing::Any,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixExample {
    pub mixture: Waveform,
    pub targets: Vec<Waveform>,
    pub speaker_ids: Vec<String>,
    pub families: Vec<Family>,
    pub gains_db: Vec<f64>,
    pub snr_db: Option<f64>,
}

fn pick_speakers<'a, R: Rng>(pool: &'a [SyntheticSpeaker], cfg: &MixConfig, rng: &mut R) -> Result<Vec<&'a SyntheticSpeaker>> {
    let c = cfg.num_speakers;
    match cfg.pairing {
        Pairing::Any => {
            if pool.len() < c {
                return Err(Error::Data(format!("speaker pool has {} speakers, need {c} distinct", pool.len())));
            }
            Ok(pool.choose_multiple(rng, c).collect())
        }
        Pairing::CrossFamily => {
            let fams = [Family::LowF0, Family::HighF0];
            let groups: Vec<Vec<&SyntheticSpeaker>> =
                fams.iter().map(|f| pool.iter().filter(|s| s.family == *f).collect()).collect();
            let start = rng.gen_range(0..2);
            let mut counts = [0usize; 2];
            for i in 0..c {
                counts[(start + i) % 2] += 1;
            }
            if groups.iter().zip(counts).any(|(g, n)| g.len() < n) {
                return Err(Error::Data(format!("speaker pool cannot supply {c} alternating-family speakers")));
            }
            let mut chosen: Vec<Vec<&SyntheticSpeaker>> =
                groups.iter().zip(counts).map(|(g, n)| g.choose_multiple(rng, n).copied().collect()).collect();
            Ok((0..c).map(|i| chosen[(start + i) % 2].remove(0)).collect())
        }
    }
}

/// Draws distinct speakers, fresh utterances and gains, then mixes them.
/// The draw is a pure function of the generator state.
pub fn dynamic_mix<R: Rng>(pool: &[SyntheticSpeaker], cfg: &MixConfig, rng: &mut R) -> Result<MixExample> {
    let speakers = pick_speakers(pool, cfg, rng)?;
    let sources: Vec<Waveform> =
        speakers.iter().map(|s| synth_utterance(s, cfg.duration_s, cfg.sample_rate, rng.gen())).collect();
    let gains_db: Vec<f64> = (0..speakers.len())
        .map(|_| if cfg.gain_db > 0.0 { rng.gen_range(-cfg.gain_db..=cfg.gain_db) } else { 0.0 })
        .collect();
    let m = mix(&sources, &gains_db, &cfg.noise, rng)?;
    Ok(MixExample {
        mixture: m.mixture,
        targets: m.targets,
        speaker_ids: speakers.iter().map(|s| s.speaker_id.clone()).collect(),
        families: speakers.iter().map(|s| s.family).collect(),
        gains_db,
        snr_db: m.snr_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::speaker_pool;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn rng(seed: u64) -> Xoshiro256PlusPlus {
        Xoshiro256PlusPlus::seed_from_u64(seed)
    }

    #[test]
    fn opposite_sources_cancel() {
        let pool = speaker_pool(1, 1);
        let s = synth_utterance(&pool[0], 0.1, 8000, 1);
        let neg = Waveform::new(s.samples.iter().map(|v| -v).collect(), 8000);
        let m = mix(&[s, neg], &[0.0, 0.0], &NoiseSpec::none(), &mut rng(0)).unwrap();
        assert!(m.mixture.samples.iter().all(|&v| v == 0.0));
        assert!(m.targets.iter().all(|t| t.energy() > 0.0));
    }

    #[test]
    fn mixture_is_sum_of_targets_and_padded() {
        let pool = speaker_pool(2, 2);
        let a = synth_utterance(&pool[0], 0.2, 8000, 1);
        let b = synth_utterance(&pool[2], 0.1, 8000, 2);
        let m = mix(&[a, b], &[1.5, -2.0], &NoiseSpec::none(), &mut rng(0)).unwrap();
        assert_eq!(m.targets[1].len(), 1600);
        assert!(m.mixture.peak() <= PEAK + 1e-9);
        for (i, v) in m.mixture.samples.iter().enumerate() {
            assert_eq!(*v, m.targets[0].samples[i] + m.targets[1].samples[i]);
        }
    }

    #[test]
    fn white_noise_hits_requested_snr() {
        let pool = speaker_pool(2, 3);
        let a = synth_utterance(&pool[0], 0.5, 8000, 1);
        let b = synth_utterance(&pool[3], 0.5, 8000, 2);
        for snr in [5.0, 10.0, 15.0] {
            let spec = NoiseSpec { kind: NoiseKind::White, snr_db_range: [snr, snr] };
            let m = mix(&[a.clone(), b.clone()], &[0.0, 0.0], &spec, &mut rng(4)).unwrap();
            let clean: Vec<f64> = (0..a.len()).map(|i| m.targets[0].samples[i] + m.targets[1].samples[i]).collect();
            let n: Vec<f64> = m.mixture.samples.iter().zip(&clean).map(|(x, c)| x - c).collect();
            let measured = 10.0 * (power(&clean) / power(&n)).log10();
            assert!((measured - snr).abs() < 0.1, "{measured} vs {snr}");
        }
    }

    #[test]
    fn dynamic_mix_replays_and_pairs() {
        let pool = speaker_pool(3, 5);
        let cfg = MixConfig::default();
        let a = dynamic_mix(&pool, &cfg, &mut rng(9)).unwrap();
        assert_eq!(a, dynamic_mix(&pool, &cfg, &mut rng(9)).unwrap());
        let cross = MixConfig { pairing: Pairing::CrossFamily, ..cfg.clone() };
        for seed in 0..20 {
            let m = dynamic_mix(&pool, &cfg, &mut rng(seed)).unwrap();
            assert_ne!(m.speaker_ids[0], m.speaker_ids[1]);
            assert!(m.gains_db.iter().all(|g| g.abs() <= 2.5));
            let c = dynamic_mix(&pool, &cross, &mut rng(seed)).unwrap();
            assert_ne!(c.families[0], c.families[1]);
        }
        assert!(dynamic_mix(&pool[..1], &cfg, &mut rng(0)).is_err());
    }
}
