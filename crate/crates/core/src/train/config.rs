use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DataConfig;
use crate::error::{Error, Result};
use crate::objectives::MelStatConfig;
use crate::separator::SeparatorConfig;

pub const SEED_ENV: &str = "ISCT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_steps: usize,
    pub steps_per_epoch: usize,
    /// Utterances per optimizer step; gradients are averaged over them.
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs before the plateau rule may halve the learning rate.
    pub warmup_epochs: usize,
    /// Consecutive non-improving epochs that trigger a halving.
    pub patience: usize,
    pub clip_norm: f64,
    /// Weight of the speaker loss; 0 disables it in the optimized total.
    pub alpha: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub out_dir: PathBuf,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            max_steps: 2000,
            steps_per_epoch: 100,
            batch_size: 4,
            lr: 1e-3,
            warmup_epochs: 5,
            patience: 3,
            clip_norm: 5.0,
            alpha: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            out_dir: PathBuf::from("runs/desk"),
        }
    }

    pub fn paper() -> Self {
        Self { lr: 1.5e-4, warmup_epochs: 50, out_dir: PathBuf::from("runs/paper"), ..Self::desk() }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: SeparatorConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub embedder: MelStatConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            model: SeparatorConfig::desk(),
            data: DataConfig::default(),
            train: TrainConfig::desk(),
            embedder: MelStatConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn paper() -> Self {
        Self { model: SeparatorConfig::paper(), train: TrainConfig::paper(), ..Self::default() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validated()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validated(self) -> Result<Self> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(self)
        } else {
            Err(Error::ConfigFields(errs))
        }
    }

    /// Replaces `seed` with the value of `ISCT_SEED`, when set.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?;
        }
        Ok(())
    }

    /// Every invalid field, across all sections.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.model.validate();
        errs.extend(self.data.validate("data."));
        let t = &self.train;
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        check(t.max_steps >= 1, "train.max_steps must be >= 1".into());
        check(t.steps_per_epoch >= 1, "train.steps_per_epoch must be >= 1".into());
        check(t.batch_size >= 1, "train.batch_size must be >= 1".into());
        check(t.lr > 0.0 && t.lr.is_finite(), format!("train.lr must be > 0, got {}", t.lr));
        check(t.patience >= 1, "train.patience must be >= 1".into());
        check(t.clip_norm > 0.0, format!("train.clip_norm must be > 0, got {}", t.clip_norm));
        check(t.alpha >= 0.0 && t.alpha.is_finite(), format!("train.alpha must be >= 0, got {}", t.alpha));
        check((0.0..1.0).contains(&t.adam_beta1), format!("train.adam_beta1 must be in [0, 1), got {}", t.adam_beta1));
        check((0.0..1.0).contains(&t.adam_beta2), format!("train.adam_beta2 must be in [0, 1), got {}", t.adam_beta2));
        check(t.adam_eps > 0.0, format!("train.adam_eps must be > 0, got {}", t.adam_eps));
        check(
            self.data.mix.sample_rate == self.model.sample_rate,
            format!(
                "data.mix.sample_rate ({}) must equal model.sample_rate ({})",
                self.data.mix.sample_rate, self.model.sample_rate
            ),
        );
        check(
            self.embedder.sample_rate == self.model.sample_rate,
            format!(
                "embedder.sample_rate ({}) must equal model.sample_rate ({})",
                self.embedder.sample_rate, self.model.sample_rate
            ),
        );
        check(
            self.data.mix.num_speakers == self.model.num_speakers,
            format!(
                "data.mix.num_speakers ({}) must equal model.num_speakers ({})",
                self.data.mix.num_speakers, self.model.num_speakers
            ),
        );
        let min_samples = (self.embedder.sample_rate as f64 * self.embedder.frame_ms / 1000.0).ceil();
        check(
            self.data.mix.duration_s * self.data.mix.sample_rate as f64 >= min_samples.max(self.model.encoder_kernel as f64),
            format!("data.mix.duration_s ({}) is shorter than one analysis frame", self.data.mix.duration_s),
        );
        check(self.data.val_mixtures >= 1, "data.val_mixtures must be >= 1 for validation".into());
        errs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        assert!(ExperimentConfig::default().validate().is_empty());
        assert!(ExperimentConfig::paper().validate().is_empty());
        let p = ExperimentConfig::paper();
        assert_eq!((p.train.lr, p.train.warmup_epochs), (1.5e-4, 50));
        assert_eq!(ExperimentConfig::default().train.warmup_epochs, 5);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"seed": 9, "model": {"fusion": "sum"}, "train": {"alpha": 0}}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.fusion, crate::separator::Fusion::Sum);
        assert_eq!(cfg.model.channels, 32);
        assert_eq!(cfg.train.alpha, 0.0);
    }

    #[test]
    fn every_invalid_field_is_listed() {
        let text = r#"{"model": {"heads": 5, "beta": 2.0}, "train": {"lr": -1, "batch_size": 0}}"#;
        match ExperimentConfig::from_json(text).unwrap_err() {
            Error::ConfigFields(errs) => {
                for key in ["heads", "beta", "train.lr", "train.batch_size"] {
                    assert!(errs.iter().any(|e| e.contains(key)), "{key} missing from {errs:?}");
                }
            }
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(ExperimentConfig::from_json(r#"{"modle": {}}"#), Err(Error::Config(_))));
    }

    #[test]
    fn seed_override() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_seed_override(Some("42")).unwrap();
        assert_eq!(cfg.seed, 42);
        assert!(cfg.apply_seed_override(Some("x")).is_err());
        cfg.apply_seed_override(None).unwrap();
        assert_eq!(cfg.seed, 42);
    }
}
