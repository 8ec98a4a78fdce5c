//! Waveform ↔ feature map ↔ chunk tensor conversions.
//!
//! The encoder is a strided 1-D convolution followed by ReLU; the decoder is
//! the matching transposed convolution. Segmentation into half-overlapping
//! chunks and the coverage-normalized overlap-add are exact inverses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{init, ChunkGeometry, Graph, ModelParams, NodeId};
use crate::tensor::Tensor;

pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![1, self.samples.len()], self.samples.clone())
    }
}

/// Encoder output, `N × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub data: Tensor,
    pub frame_stride_samples: usize,
    pub kernel_samples: usize,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }
}

/// `N × K × S` chunks plus the geometry needed to invert the segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkTensor {
    pub data: Tensor,
    pub geometry: ChunkGeometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl FrontendConfig {
    pub fn frames_for(&self, samples: usize) -> Option<usize> {
        (samples >= self.kernel).then(|| (samples - self.kernel) / self.stride + 1)
    }

    pub fn decoded_len(&self, frames: usize) -> usize {
        (frames - 1) * self.stride + self.kernel
    }
}

pub fn init_params<R: Rng>(cfg: &FrontendConfig, params: &mut ModelParams, rng: &mut R) -> Result<()> {
    let (n, k) = (cfg.channels, cfg.kernel);
    params.insert("encoder/weight", init::uniform(rng, &[n, 1, k], (1.0 / k as f64).sqrt()))?;
    params.insert("encoder/bias", Tensor::zeros(&[n]))?;
    params.insert("decoder/weight", init::uniform(rng, &[n, 1, k], (1.0 / n as f64).sqrt()))?;
    params.insert("decoder/bias", Tensor::zeros(&[1]))?;
    Ok(())
}

/// Encodes a `[1, L]` waveform node into an `[N, T]` ReLU feature map.
pub fn encode_node(g: &mut Graph, params: &ModelParams, cfg: &FrontendConfig, wave: NodeId) -> Result<NodeId> {
    let len = g.shape(wave)[1];
    if len < cfg.kernel {
        return Err(Error::TooShort { what: "encoder", min: cfg.kernel, got: len });
    }
    let w = g.param(params, "encoder/weight")?;
    let b = g.param(params, "encoder/bias")?;
    let z = g.conv1d(wave, w, Some(b), cfg.stride)?;
    g.relu(z)
}

/// Decodes an `[N, T]` node to `[1, len]` (cropped or zero-padded).
pub fn decode_node(g: &mut Graph, params: &ModelParams, cfg: &FrontendConfig, feats: NodeId, len: usize) -> Result<NodeId> {
    let w = g.param(params, "decoder/weight")?;
    let b = g.param(params, "decoder/bias")?;
    let y = g.conv_transpose1d(feats, w, Some(b), cfg.stride)?;
    g.fit_length(y, len)
}

pub fn encode(w: &Waveform, params: &ModelParams, cfg: &FrontendConfig) -> Result<FeatureMap> {
    let mut g = Graph::new();
    let x = g.constant(w.to_tensor());
    let z = encode_node(&mut g, params, cfg, x)?;
    Ok(FeatureMap { data: g.value(z).clone(), frame_stride_samples: cfg.stride, kernel_samples: cfg.kernel })
}

/// Decodes to `len` samples, or the natural `(T − 1)·stride + kernel` length.
pub fn decode(f: &FeatureMap, params: &ModelParams, cfg: &FrontendConfig, len: Option<usize>, sample_rate: u32) -> Result<Waveform> {
    let mut g = Graph::new();
    let x = g.constant(f.data.clone());
    let len = len.unwrap_or_else(|| cfg.decoded_len(f.frames()));
    let y = decode_node(&mut g, params, cfg, x, len)?;
    Ok(Waveform::new(g.value(y).data().to_vec(), sample_rate))
}

pub fn segment(f: &FeatureMap, chunk: usize) -> Result<ChunkTensor> {
    let mut g = Graph::new();
    let x = g.constant(f.data.clone());
    let (c, geometry) = g.segment(x, chunk)?;
    Ok(ChunkTensor { data: g.value(c).clone(), geometry })
}

pub fn overlap_add(c: &ChunkTensor, frame_stride_samples: usize, kernel_samples: usize) -> Result<FeatureMap> {
    let mut g = Graph::new();
    let x = g.constant(c.data.clone());
    let f = g.overlap_add(x, &c.geometry)?;
    Ok(FeatureMap { data: g.value(f).clone(), frame_stride_samples, kernel_samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn setup(n: usize) -> (FrontendConfig, ModelParams) {
        let cfg = FrontendConfig { channels: n, kernel: 16, stride: 8 };
        let mut params = ModelParams::new();
        init_params(&cfg, &mut params, &mut Xoshiro256PlusPlus::seed_from_u64(3)).unwrap();
        (cfg, params)
    }

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), DEFAULT_SAMPLE_RATE)
    }

    #[test]
    fn zero_waveform_encodes_to_zero() {
        let (cfg, params) = setup(8);
        let f = encode(&Waveform::zeros(80, DEFAULT_SAMPLE_RATE), &params, &cfg).unwrap();
        assert_eq!(f.data.shape(), &[8, 9]);
        assert!(f.data.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_output_is_nonnegative_with_expected_frames() {
        let (cfg, params) = setup(16);
        for len in [16, 17, 80, 333] {
            let f = encode(&noise(len, len as u64), &params, &cfg).unwrap();
            assert_eq!(f.data.shape(), &[16, (len - 16) / 8 + 1]);
            assert!(f.data.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn too_short_input_reports_minimum() {
        let (cfg, params) = setup(4);
        let err = encode(&Waveform::zeros(10, DEFAULT_SAMPLE_RATE), &params, &cfg).unwrap_err();
        assert!(matches!(err, Error::TooShort { min: 16, got: 10, .. }));
    }

    #[test]
    fn decode_lengths() {
        let (cfg, params) = setup(8);
        let f = FeatureMap { data: Tensor::zeros(&[8, 9]), frame_stride_samples: 8, kernel_samples: 16 };
        let w = decode(&f, &params, &cfg, None, DEFAULT_SAMPLE_RATE).unwrap();
        assert_eq!(w.len(), 8 * 8 + 16);
        assert!(w.samples.iter().all(|&s| s == 0.0));

        let x = noise(203, 9);
        let f = encode(&x, &params, &cfg).unwrap();
        let y = decode(&f, &params, &cfg, Some(x.len()), DEFAULT_SAMPLE_RATE).unwrap();
        assert_eq!(y.len(), 203);
        assert!(y.samples.iter().all(|s| s.is_finite()));
    }

    #[test]
    fn segment_round_trip_and_ones() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let data = (0..3 * 8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let f = FeatureMap { data: Tensor::new(vec![3, 8], data).unwrap(), frame_stride_samples: 8, kernel_samples: 16 };
        let c = segment(&f, 4).unwrap();
        assert_eq!(c.data.shape(), &[3, 4, 5]);
        let back = overlap_add(&c, 8, 16).unwrap();
        assert!(back.data.max_abs_diff(&f.data) < 1e-12);
        assert!(segment(&f, 3).is_err());
    }
}
