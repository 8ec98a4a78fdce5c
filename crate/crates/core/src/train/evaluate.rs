//! Scoring separated outputs and running a trained model over manifests and files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::checkpoint::{load_checkpoint, verify_params};
use crate::data::{family_group, manifest_read, wav_read, wav_write, Family};
use crate::error::{Error, Result};
use crate::frontend::Waveform;
use crate::nn::ModelParams;
use crate::objectives::{pit_si_snr, sdr, si_snr};
use crate::separator::{separate_forward, SeparatorConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceScore {
    pub si_snri: f64,
    pub sdri: f64,
    pub si_snr: f64,
    pub permutation: Vec<usize>,
}

/// PIT-aligned SI-SNRi and SDRi, each averaged over speakers.
pub fn score_utterance(mix: &Waveform, refs: &[Waveform], ests: &[Waveform]) -> Result<UtteranceScore> {
    let pit = pit_si_snr(ests.iter().map(|w| w.samples.as_slice()).collect::<Vec<_>>().as_slice(), refs
        .iter()
        .map(|w| w.samples.as_slice())
        .collect::<Vec<_>>()
        .as_slice())?;
    let c = refs.len() as f64;
    let (mut si_i, mut sd_i) = (0.0, 0.0);
    for (e, &r) in ests.iter().zip(&pit.permutation) {
        let (refr, est) = (&refs[r].samples, &e.samples);
        si_i += si_snr(est, refr)? - si_snr(&mix.samples, refr)?;
        sd_i += sdr(est, refr)? - sdr(&mix.samples, refr)?;
    }
    Ok(UtteranceScore { si_snri: si_i / c, sdri: sd_i / c, si_snr: pit.mean_si_snr, permutation: pit.permutation })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceReport {
    pub mixture_path: PathBuf,
    pub group: String,
    #[serde(flatten)]
    pub score: UtteranceScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupStats {
    pub count: usize,
    pub si_snri: f64,
    pub sdri: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub utterances: Vec<UtteranceReport>,
    /// Keyed by family combination (`LL`, `HH`, `LH`).
    pub groups: BTreeMap<String, GroupStats>,
    pub overall: GroupStats,
    /// Files referenced by the manifest that could not be found.
    pub missing: Vec<PathBuf>,
}

fn stats<'a>(items: impl Iterator<Item = &'a UtteranceScore>) -> GroupStats {
    let (mut n, mut si, mut sd) = (0, 0.0, 0.0);
    for s in items {
        n += 1;
        si += s.si_snri;
        sd += s.sdri;
    }
    let d = n.max(1) as f64;
    GroupStats { count: n, si_snri: si / d, sdri: sd / d }
}

impl EvalReport {
    pub fn from_utterances(utterances: Vec<UtteranceReport>, missing: Vec<PathBuf>) -> Self {
        let mut groups = BTreeMap::new();
        let names: std::collections::BTreeSet<&String> = utterances.iter().map(|u| &u.group).collect();
        for g in names {
            groups.insert(g.clone(), stats(utterances.iter().filter(|u| &u.group == g).map(|u| &u.score)));
        }
        let overall = stats(utterances.iter().map(|u| &u.score));
        Self { utterances, groups, overall, missing }
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<8}{:>8}{:>12}{:>10}", "group", "count", "SI-SNRi", "SDRi").unwrap();
        let rows = self.groups.iter().map(|(k, v)| (k.as_str(), v)).chain(std::iter::once(("AVG", &self.overall)));
        for (name, g) in rows {
            writeln!(s, "{name:<8}{:>8}{:>12.2}{:>10.2}", g.count, g.si_snri, g.sdri).unwrap();
        }
        if !self.missing.is_empty() {
            writeln!(s, "missing files ({}):", self.missing.len()).unwrap();
            for p in &self.missing {
                writeln!(s, "  {}", p.display()).unwrap();
            }
        }
        s
    }
}

fn group_of(families: &[Family]) -> String {
    family_group(families)
}

/// Separates every mixture in the manifest and scores it. Records with
/// missing files are listed in the report and skipped.
pub fn evaluate_manifest(params: &ModelParams, cfg: &SeparatorConfig, manifest: &Path) -> Result<EvalReport> {
    let records = manifest_read(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut utterances = Vec::new();
    let mut missing = Vec::new();
    for r in &records {
        let gone = r.missing_files(base);
        if !gone.is_empty() {
            missing.extend(gone);
            continue;
        }
        let (mix_path, src_paths) = r.resolve(base);
        let mix = wav_read(&mix_path)?;
        let refs = src_paths.iter().map(|p| wav_read(p)).collect::<Result<Vec<_>>>()?;
        let ests = separate_forward(&mix, params, cfg)?;
        let score = score_utterance(&mix, &refs, &ests)?;
        utterances.push(UtteranceReport { mixture_path: r.mixture_path.clone(), group: group_of(&r.families), score });
    }
    Ok(EvalReport::from_utterances(utterances, missing))
}

pub fn evaluate_checkpoint(ckpt: &Path, manifest: &Path) -> Result<EvalReport> {
    let ck = load_checkpoint(ckpt)?;
    verify_params(&ck.params, &ck.config.model)?;
    evaluate_manifest(&ck.params, &ck.config.model, manifest)
}

pub fn separate_wave(params: &ModelParams, cfg: &SeparatorConfig, mix: &Waveform) -> Result<Vec<Waveform>> {
    if mix.sample_rate != cfg.sample_rate {
        return Err(Error::Data(format!(
            "input sample rate {} Hz does not match the model's {} Hz (no resampling is done)",
            mix.sample_rate, cfg.sample_rate
        )));
    }
    separate_forward(mix, params, cfg)
}

/// Writes `spk1.wav … spkC.wav` into `out_dir`; returns their paths.
pub fn separate_file(ckpt: &Path, input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let ck = load_checkpoint(ckpt)?;
    verify_params(&ck.params, &ck.config.model)?;
    let mix = wav_read(input)?;
    let outs = separate_wave(&ck.params, &ck.config.model, &mix)?;
    outs.iter()
        .enumerate()
        .map(|(i, w)| {
            let p = out_dir.join(format!("spk{}.wav", i + 1));
            wav_write(&p, w).map(|_| p)
        })
        .collect()
}
