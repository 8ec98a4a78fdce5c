//! Speaker embedders: a differentiable log-mel statistics embedder and an
//! adapter for embeddings computed elsewhere.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::Waveform;
use crate::nn::{Graph, NodeId, Unary};
use crate::tensor::Tensor;

pub trait SpeakerEmbedder {
    fn dim(&self) -> usize;

    /// Unit-norm embedding of `w`.
    fn embed(&self, w: &Waveform) -> Result<Vec<f64>>;

    /// Embedding of a `[1, L]` node. The default treats the embedding as a
    /// constant, so no gradient reaches `x`.
    fn embed_node(&self, g: &mut Graph, x: NodeId, sample_rate: u32) -> Result<NodeId> {
        let w = Waveform::new(g.value(x).data().to_vec(), sample_rate);
        let e = self.embed(&w)?;
        let n = e.len();
        Ok(g.constant(Tensor::from_parts(vec![n], e)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelStatConfig {
    pub sample_rate: u32,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub bands: usize,
}

impl Default for MelStatConfig {
    fn default() -> Self {
        Self { sample_rate: 8000, frame_ms: 32.0, hop_ms: 16.0, bands: 24 }
    }
}

const LOG_EPS: f64 = 1e-6;
const STD_EPS: f64 = 1e-6;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over the `frame/2 + 1` DFT bins, `[bands, bins]`.
pub fn mel_filterbank(sample_rate: u32, frame: usize, bands: usize) -> Vec<Vec<f64>> {
    let bins = frame / 2 + 1;
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..bands + 2).map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64)).collect();
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / frame as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Per-band mean and standard deviation of log-mel energies (`E = 2·bands`),
/// L2-normalized. Built from graph ops, so it is differentiable.
#[derive(Debug, Clone)]
pub struct MelStatEmbedder {
    cfg: MelStatConfig,
    frame: usize,
    hop: usize,
    /// `[2·bins, 1, frame]`: Hann-windowed cosine rows, then sine rows.
    analysis: Tensor,
    /// `[bands, 2·bins, 1]`: the filterbank applied to both halves.
    mel: Tensor,
}

impl MelStatEmbedder {
    pub fn new(cfg: MelStatConfig) -> Result<Self> {
        let frame = (cfg.sample_rate as f64 * cfg.frame_ms / 1000.0).round() as usize;
        let hop = (cfg.sample_rate as f64 * cfg.hop_ms / 1000.0).round() as usize;
        if frame < 2 || hop == 0 || cfg.bands == 0 {
            return Err(Error::Config(format!("invalid embedder analysis setup {cfg:?}")));
        }
        let bins = frame / 2 + 1;
        let window: Vec<f64> = (0..frame).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / frame as f64).cos()).collect();
        let mut analysis = Vec::with_capacity(2 * bins * frame);
        for part in 0..2 {
            for k in 0..bins {
                for (n, w) in window.iter().enumerate() {
                    let phase = 2.0 * PI * (k * n) as f64 / frame as f64;
                    analysis.push(w * if part == 0 { phase.cos() } else { phase.sin() });
                }
            }
        }
        let fb = mel_filterbank(cfg.sample_rate, frame, cfg.bands);
        let mel: Vec<f64> = fb.iter().flat_map(|row| row.iter().chain(row.iter()).copied()).collect();
        Ok(Self {
            cfg,
            frame,
            hop,
            analysis: Tensor::from_parts(vec![2 * bins, 1, frame], analysis),
            mel: Tensor::from_parts(vec![cfg.bands, 2 * bins, 1], mel),
        })
    }

    pub fn config(&self) -> &MelStatConfig {
        &self.cfg
    }

    pub fn frame_len(&self) -> usize {
        self.frame
    }

    /// `[bands, frames]` log-mel energies of a `[1, L]` node.
    pub fn log_mel_node(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let len = g.shape(x)[1];
        if len < self.frame {
            return Err(Error::TooShort { what: "speaker embedder", min: self.frame, got: len });
        }
        let w = g.constant(self.analysis.clone());
        let spec = g.conv1d(x, w, None, self.hop)?;
        let power = g.unary(spec, Unary::Square)?;
        let mel = g.constant(self.mel.clone());
        let energies = g.conv1d(power, mel, None, 1)?;
        g.unary(energies, Unary::LogEps(LOG_EPS))
    }
}

impl SpeakerEmbedder for MelStatEmbedder {
    fn dim(&self) -> usize {
        2 * self.cfg.bands
    }

    fn embed(&self, w: &Waveform) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.constant(w.to_tensor());
        let e = self.embed_node(&mut g, x, w.sample_rate)?;
        Ok(g.value(e).data().to_vec())
    }

    fn embed_node(&self, g: &mut Graph, x: NodeId, _sample_rate: u32) -> Result<NodeId> {
        let logmel = self.log_mel_node(g, x)?;
        let mean = g.mean_axis(logmel, 1)?;
        let sq = g.unary(logmel, Unary::Square)?;
        let m2 = g.mean_axis(sq, 1)?;
        let mean_sq = g.unary(mean, Unary::Square)?;
        let var = g.sub(m2, mean_sq)?;
        let std = g.unary(var, Unary::SqrtEps(STD_EPS))?;
        let stats = g.concat(&[mean, std], 0)?;
        g.l2_normalize(stats)
    }
}

/// Reads an embedding file: a little-endian `u32` dimension followed by that
/// many `f32` values.
pub fn read_embedding(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: String| Error::Data(format!("{}: {detail}", path.display()));
    let header: [u8; 4] = bytes.get(..4).ok_or_else(|| bad("missing dimension header".into()))?.try_into().unwrap();
    let dim = u32::from_le_bytes(header) as usize;
    let body = &bytes[4..];
    if body.len() != dim * 4 {
        return Err(bad(format!("header says {dim} values but payload holds {} bytes", body.len())));
    }
    Ok(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
}

pub fn write_embedding(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 + 4 * values.len());
    bytes.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Content fingerprint used to look up precomputed embeddings.
pub fn fingerprint(w: &Waveform) -> u64 {
    let mut h = crc32fast::Hasher::new();
    for s in &w.samples {
        h.update(&s.to_le_bytes());
    }
    ((w.samples.len() as u64) << 32) | h.finalize() as u64
}

fn normalized(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Data("embedding has zero or non-finite norm".into()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

fn missing(w: &Waveform) -> Error {
    Error::Data(format!("no precomputed embedding for a {}-sample waveform", w.len()))
}

/// Serves embeddings registered per waveform; anything unregistered goes to
/// the fallback embedder, if there is one.
pub struct PrecomputedEmbedder {
    dim: usize,
    table: HashMap<u64, Vec<f64>>,
    fallback: Option<Box<dyn SpeakerEmbedder>>,
}

impl PrecomputedEmbedder {
    pub fn new(dim: usize, fallback: Option<Box<dyn SpeakerEmbedder>>) -> Result<Self> {
        if let Some(f) = &fallback {
            if f.dim() != dim {
                return Err(Error::Config(format!("fallback embedder has dim {}, expected {dim}", f.dim())));
            }
        }
        Ok(Self { dim, table: HashMap::new(), fallback })
    }

    pub fn insert(&mut self, w: &Waveform, embedding: Vec<f64>) -> Result<()> {
        if embedding.len() != self.dim {
            return Err(Error::Data(format!("embedding has dim {}, expected {}", embedding.len(), self.dim)));
        }
        self.table.insert(fingerprint(w), normalized(embedding)?);
        Ok(())
    }

    pub fn insert_file(&mut self, w: &Waveform, path: &Path) -> Result<()> {
        self.insert(w, read_embedding(path)?)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl SpeakerEmbedder for PrecomputedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, w: &Waveform) -> Result<Vec<f64>> {
        if let Some(e) = self.table.get(&fingerprint(w)) {
            return Ok(e.clone());
        }
        match &self.fallback {
            Some(f) => f.embed(w),
            None => Err(missing(w)),
        }
    }

    fn embed_node(&self, g: &mut Graph, x: NodeId, sample_rate: u32) -> Result<NodeId> {
        let w = Waveform::new(g.value(x).data().to_vec(), sample_rate);
        match (self.table.get(&fingerprint(&w)), &self.fallback) {
            (Some(e), _) => Ok(g.constant(Tensor::from_parts(vec![self.dim], e.clone()))),
            (None, Some(f)) => f.embed_node(g, x, sample_rate),
            (None, None) => Err(missing(&w)),
        }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect(), 8000)
    }

    #[test]
    fn unit_norm_and_deterministic() {
        let emb = MelStatEmbedder::new(MelStatConfig::default()).unwrap();
        assert_eq!(emb.dim(), 48);
        for seed in 0..5 {
            let w = noise(1600, seed);
            let e = emb.embed(&w).unwrap();
            assert_eq!(e.len(), 48);
            let norm: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
            assert_eq!(e, emb.embed(&w).unwrap());
        }
    }

    #[test]
    fn too_short_input() {
        let emb = MelStatEmbedder::new(MelStatConfig::default()).unwrap();
        assert!(matches!(emb.embed(&noise(100, 1)), Err(Error::TooShort { min: 256, .. })));
    }

    #[test]
    fn filterbank_covers_every_band() {
        let fb = mel_filterbank(8000, 256, 24);
        assert!(fb.iter().all(|row| row.iter().sum::<f64>() > 0.0));
    }

    #[test]
    fn power_matches_fft() {
        use rustfft::{num_complex::Complex, FftPlanner};
        let emb = MelStatEmbedder::new(MelStatConfig::default()).unwrap();
        let w = noise(256, 3);
        let mut g = Graph::new();
        let x = g.constant(w.to_tensor());
        let a = g.constant(emb.analysis.clone());
        let spec = g.conv1d(x, a, None, 128).unwrap();
        let s = g.value(spec);
        let mut buf: Vec<Complex<f64>> = w
            .samples
            .iter()
            .enumerate()
            .map(|(n, v)| Complex::new(v * (0.5 - 0.5 * (2.0 * PI * n as f64 / 256.0).cos()), 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(256).process(&mut buf);
        for k in 0..129 {
            let p = s.at(&[k, 0]).powi(2) + s.at(&[129 + k, 0]).powi(2);
            assert!((p - buf[k].norm_sqr()).abs() < 1e-9 * (1.0 + p));
        }
    }

    #[test]
    fn embedding_file_round_trip_and_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.emb");
        write_embedding(&path, &[3.0, 4.0]).unwrap();
        assert_eq!(read_embedding(&path).unwrap(), vec![3.0, 4.0]);

        let mut pre = PrecomputedEmbedder::new(2, None).unwrap();
        let w = noise(300, 1);
        pre.insert_file(&w, &path).unwrap();
        assert_eq!(pre.embed(&w).unwrap(), vec![0.6, 0.8]);
        assert!(pre.embed(&noise(300, 2)).is_err());

        fs::write(&path, [5u8, 0, 0, 0, 1, 2]).unwrap();
        assert!(read_embedding(&path).is_err());
    }
}
