//! The optimization loop: dynamic-mixing batches, PIT objective, Adam,
//! per-epoch validation, plateau learning-rate halving and checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, verify_params, Checkpoint};
use super::config::ExperimentConfig;
use super::evaluate::score_utterance;
use super::optim::{adam_step, clip_grad_norm, lr_after, AdamConfig, AdamState};
use crate::data::{derive_seed, dynamic_mix, speaker_split, split_set, DataConfig, MixExample, Split};
use crate::data::corpus::SpeakerSplit;
use crate::error::{Error, Result};
use crate::nn::{Graph, ModelParams};
use crate::objectives::{total_loss, total_loss_node, MelStatEmbedder};
use crate::separator::{self, forward_graph, separate_forward};

const INIT_TAG: u64 = 0x1;
const BATCH_TAG: u64 = 0x2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub lr: f64,
    pub adam: AdamState,
    pub val_loss_history: Vec<f64>,
    /// Batches are drawn from `(seed, step)`, so this pair is the RNG state.
    pub seed: u64,
    pub best_val_loss: Option<f64>,
    pub epoch_loss_sum: f64,
    pub epoch_l_spk_sum: f64,
    pub epoch_steps: usize,
}

/// Everything in [`TrainState`] except the Adam moments, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainProgress {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub adam_t: u64,
    pub val_loss_history: Vec<f64>,
    pub seed: u64,
    pub best_val_loss: Option<f64>,
    pub epoch_loss_sum: f64,
    pub epoch_l_spk_sum: f64,
    pub epoch_steps: usize,
}

impl TrainState {
    pub fn new(seed: u64, lr: f64, params: &ModelParams) -> Self {
        Self {
            step: 0,
            epoch: 0,
            lr,
            adam: AdamState::new(params),
            val_loss_history: Vec::new(),
            seed,
            best_val_loss: None,
            epoch_loss_sum: 0.0,
            epoch_l_spk_sum: 0.0,
            epoch_steps: 0,
        }
    }

    pub fn progress(&self) -> TrainProgress {
        TrainProgress {
            step: self.step,
            epoch: self.epoch,
            lr: self.lr,
            adam_t: self.adam.t,
            val_loss_history: self.val_loss_history.clone(),
            seed: self.seed,
            best_val_loss: self.best_val_loss,
            epoch_loss_sum: self.epoch_loss_sum,
            epoch_l_spk_sum: self.epoch_l_spk_sum,
            epoch_steps: self.epoch_steps,
        }
    }

    pub fn from_progress(p: TrainProgress, adam: AdamState) -> Self {
        Self {
            step: p.step,
            epoch: p.epoch,
            lr: p.lr,
            adam,
            val_loss_history: p.val_loss_history,
            seed: p.seed,
            best_val_loss: p.best_val_loss,
            epoch_loss_sum: p.epoch_loss_sum,
            epoch_l_spk_sum: p.epoch_l_spk_sum,
            epoch_steps: p.epoch_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    pub si_snr_loss: f64,
    pub l_spk: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValStats {
    pub loss: f64,
    pub l_spk: f64,
    pub si_snri: f64,
    pub sdri: f64,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: u64,
    /// Rate used during the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub train_l_spk: f64,
    pub val_loss: f64,
    pub val_l_spk: f64,
    pub val_si_snri: f64,
    pub val_sdri: f64,
}

pub struct Trainer {
    pub cfg: ExperimentConfig,
    pub params: ModelParams,
    pub state: TrainState,
    embedder: MelStatEmbedder,
    speakers: SpeakerSplit,
    val_set: Vec<MixExample>,
}

fn validation_set(data: &DataConfig, speakers: &SpeakerSplit) -> Result<Vec<MixExample>> {
    split_set(data, speakers, Split::Val, data.val_mixtures)
}

impl Trainer {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let cfg = cfg.validated()?;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(&[cfg.seed, INIT_TAG]));
        let params = separator::init_params(&cfg.model, &mut rng)?;
        let state = TrainState::new(cfg.seed, cfg.train.lr, &params);
        Self::assemble(cfg, params, state)
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let cfg = ck.config.validated()?;
        verify_params(&ck.params, &cfg.model)?;
        Self::assemble(cfg, ck.params, ck.state)
    }

    fn assemble(cfg: ExperimentConfig, params: ModelParams, state: TrainState) -> Result<Self> {
        let embedder = MelStatEmbedder::new(cfg.embedder)?;
        let speakers = speaker_split(&cfg.data);
        let val_set = validation_set(&cfg.data, &speakers)?;
        Ok(Self { cfg, params, state, embedder, speakers, val_set })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { config: self.cfg.clone(), params: self.params.clone(), state: self.state.clone() }
    }

    pub fn embedder(&self) -> &MelStatEmbedder {
        &self.embedder
    }

    /// The mixture for utterance `index` of training step `step`.
    pub fn batch_example(&self, step: u64, index: usize) -> Result<MixExample> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(&[self.state.seed, BATCH_TAG, step, index as u64]));
        dynamic_mix(&self.speakers.train, &self.cfg.data.mix, &mut rng)
    }

    /// One optimizer step over a freshly drawn batch.
    pub fn step(&mut self) -> Result<StepStats> {
        let t = &self.cfg.train;
        let batch = t.batch_size;
        self.params.zero_grad();
        let (mut loss, mut si, mut spk) = (0.0, 0.0, 0.0);
        for b in 0..batch {
            let ex = self.batch_example(self.state.step, b)?;
            let mut g = Graph::new();
            let x = g.constant(ex.mixture.to_tensor());
            let out = forward_graph(&mut g, &self.params, &self.cfg.model, x)?;
            let l = total_loss_node(&mut g, &out.estimates, &ex.targets, &self.embedder, t.alpha)?;
            loss += g.value(l.total).data()[0];
            si += l.si_snr_loss;
            spk += l.l_spk;
            let grads = g.backward(l.total)?;
            g.accumulate_param_grads(&grads, &mut self.params)?;
        }
        let n = batch as f64;
        self.params.scale_grads(1.0 / n);
        let grad_norm = clip_grad_norm(&mut self.params, t.clip_norm);
        let adam = AdamConfig { beta1: t.adam_beta1, beta2: t.adam_beta2, eps: t.adam_eps };
        adam_step(&mut self.params, &mut self.state.adam, self.state.lr, &adam)?;
        self.state.step += 1;
        let stats = StepStats { step: self.state.step, loss: loss / n, si_snr_loss: si / n, l_spk: spk / n, grad_norm };
        if !stats.loss.is_finite() {
            return Err(Error::NonFinite { op: format!("training loss at step {}", stats.step) });
        }
        self.state.epoch_loss_sum += stats.loss;
        self.state.epoch_l_spk_sum += stats.l_spk;
        self.state.epoch_steps += 1;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<ValStats> {
        let (mut loss, mut spk, mut si, mut sd) = (0.0, 0.0, 0.0, 0.0);
        for ex in &self.val_set {
            let ests = separate_forward(&ex.mixture, &self.params, &self.cfg.model)?;
            let l = total_loss(&ex.targets, &ests, &self.embedder, self.cfg.train.alpha)?;
            let s = score_utterance(&ex.mixture, &ex.targets, &ests)?;
            loss += l.total;
            spk += l.l_spk;
            si += s.si_snri;
            sd += s.sdri;
        }
        let n = self.val_set.len() as f64;
        Ok(ValStats { loss: loss / n, l_spk: spk / n, si_snri: si / n, sdri: sd / n })
    }

    /// Validates, records the epoch and applies the learning-rate rule.
    pub fn end_epoch(&mut self) -> Result<EpochMetrics> {
        let val = self.validate()?;
        let st = &mut self.state;
        let steps = st.epoch_steps.max(1) as f64;
        st.epoch += 1;
        let metrics = EpochMetrics {
            epoch: st.epoch,
            step: st.step,
            lr: st.lr,
            train_loss: st.epoch_loss_sum / steps,
            train_l_spk: st.epoch_l_spk_sum / steps,
            val_loss: val.loss,
            val_l_spk: val.l_spk,
            val_si_snri: val.si_snri,
            val_sdri: val.sdri,
        };
        st.val_loss_history.push(val.loss);
        let t = &self.cfg.train;
        st.lr = lr_after(t.lr, st.epoch, &st.val_loss_history, t.warmup_epochs, t.patience);
        st.epoch_loss_sum = 0.0;
        st.epoch_l_spk_sum = 0.0;
        st.epoch_steps = 0;
        Ok(metrics)
    }

    pub fn finished(&self) -> bool {
        self.state.step >= self.cfg.train.max_steps as u64
    }

    fn epoch_boundary(&self) -> bool {
        self.state.step % self.cfg.train.steps_per_epoch as u64 == 0 || self.finished()
    }

    /// Trains until `max_steps`, writing `metrics.jsonl`, `effective_config.json`,
    /// `last.ckpt` and `best.ckpt` into `out_dir`.
    pub fn run(&mut self, out_dir: &Path, mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<RunSummary> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let cfg_path = out_dir.join("effective_config.json");
        fs::write(&cfg_path, serde_json::to_string_pretty(&self.cfg)?).map_err(|e| Error::io(&cfg_path, e))?;
        let metrics_path = out_dir.join("metrics.jsonl");
        let mut log = open_metrics(&metrics_path, self.state.epoch)?;
        let (last, best) = (out_dir.join("last.ckpt"), out_dir.join("best.ckpt"));
        let mut history = Vec::new();
        while !self.finished() {
            let s = self.step()?;
            log::debug!("step {} loss {:.4} grad_norm {:.3}", s.step, s.loss, s.grad_norm);
            if self.epoch_boundary() {
                let m = self.end_epoch()?;
                info!(
                    "epoch {} step {} lr {:.2e} train {:.3} val {:.3} val SI-SNRi {:.2} dB",
                    m.epoch, m.step, m.lr, m.train_loss, m.val_loss, m.val_si_snri
                );
                writeln!(log, "{}", serde_json::to_string(&m)?).map_err(|e| Error::io(&metrics_path, e))?;
                log.flush().map_err(|e| Error::io(&metrics_path, e))?;
                if self.state.best_val_loss.map_or(true, |b| m.val_loss < b) {
                    self.state.best_val_loss = Some(m.val_loss);
                    save_checkpoint(&best, &self.checkpoint())?;
                }
                save_checkpoint(&last, &self.checkpoint())?;
                on_epoch(&m);
                history.push(m);
            }
        }
        Ok(RunSummary { epochs: history, last_checkpoint: last, best_checkpoint: best, metrics: metrics_path })
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub epochs: Vec<EpochMetrics>,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Opens the metrics log for appending, dropping lines past `completed_epochs`
/// so a resumed run continues the log where its checkpoint left off.
fn open_metrics(path: &Path, completed_epochs: usize) -> Result<fs::File> {
    let kept: Vec<String> = match fs::read_to_string(path) {
        Ok(text) if completed_epochs > 0 => text
            .lines()
            .filter(|l| serde_json::from_str::<EpochMetrics>(l).is_ok_and(|m| m.epoch <= completed_epochs))
            .map(str::to_string)
            .collect(),
        _ => Vec::new(),
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for l in kept {
        writeln!(f, "{l}").map_err(|e| Error::io(path, e))?;
    }
    Ok(f)
}
