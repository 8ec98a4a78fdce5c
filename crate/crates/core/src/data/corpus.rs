//! Reproducible synthetic corpora: a speaker split plus fixed evaluation sets,
//! generated in memory or written to disk as wav files and manifests.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::manifest::{manifest_write, MixtureRecord};
use super::mix::{dynamic_mix, MixConfig, MixExample};
use super::synth::{speaker_pool, Family, SyntheticSpeaker};
use super::wav::wav_write;
use super::derive_seed;
use crate::error::{Error, Result};
use crate::objectives::embedder::{cosine, MelStatConfig, MelStatEmbedder, SpeakerEmbedder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    /// Training speakers per family.
    pub speakers_per_family: usize,
    /// Additional unseen speakers per family, used only by the test split.
    pub held_out_per_family: usize,
    pub val_mixtures: usize,
    pub test_mixtures: usize,
    pub mix: MixConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            speakers_per_family: 8,
            held_out_per_family: 3,
            val_mixtures: 16,
            test_mixtures: 16,
            mix: MixConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self, prefix: &str) -> Vec<String> {
        let mut errs = Vec::new();
        let c = self.mix.num_speakers;
        if c < 2 || c > 4 {
            errs.push(format!("{prefix}mix.num_speakers must be in 2..=4, got {c}"));
        }
        if 2 * self.speakers_per_family < c {
            errs.push(format!("{prefix}speakers_per_family is too small for {c} distinct speakers"));
        }
        if self.test_mixtures > 0 && 2 * self.held_out_per_family < c {
            errs.push(format!("{prefix}held_out_per_family is too small for {c} distinct speakers"));
        }
        if !(self.mix.duration_s > 0.0) {
            errs.push(format!("{prefix}mix.duration_s must be > 0"));
        }
        if self.mix.sample_rate == 0 {
            errs.push(format!("{prefix}mix.sample_rate must be > 0"));
        }
        if !(self.mix.gain_db >= 0.0) {
            errs.push(format!("{prefix}mix.gain_db must be >= 0"));
        }
        if let Some(e) = self.mix.noise.validate() {
            errs.push(format!("{prefix}mix.{e}"));
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerSplit {
    pub train: Vec<SyntheticSpeaker>,
    pub held_out: Vec<SyntheticSpeaker>,
}

pub fn speaker_split(cfg: &DataConfig) -> SpeakerSplit {
    let per = cfg.speakers_per_family + cfg.held_out_per_family;
    let (mut train, mut held_out) = (Vec::new(), Vec::new());
    for (i, spk) in speaker_pool(per, cfg.seed).into_iter().enumerate() {
        if i % per < cfg.speakers_per_family {
            train.push(spk);
        } else {
            held_out.push(spk);
        }
    }
    SpeakerSplit { train, held_out }
}

/// Mixture `index` of a split; a pure function of `(cfg, split, index)`.
pub fn split_example(cfg: &DataConfig, speakers: &SpeakerSplit, split: Split, index: u64) -> Result<MixExample> {
    let pool = if split == Split::Test { &speakers.held_out } else { &speakers.train };
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(&[cfg.seed, split.tag(), index]));
    dynamic_mix(pool, &cfg.mix, &mut rng)
}

pub fn split_set(cfg: &DataConfig, speakers: &SpeakerSplit, split: Split, count: usize) -> Result<Vec<MixExample>> {
    (0..count as u64).map(|i| split_example(cfg, speakers, split, i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilySimilarity {
    pub same_family: f64,
    pub cross_family: f64,
}

/// Mean embedding cosine over same-family and cross-family pairs of `utterances`.
pub fn family_similarity(utterances: &[(Family, crate::frontend::Waveform)]) -> Result<FamilySimilarity> {
    let emb = MelStatEmbedder::new(MelStatConfig {
        sample_rate: utterances.first().map_or(8000, |u| u.1.sample_rate),
        ..MelStatConfig::default()
    })?;
    let embs = utterances.iter().map(|(f, w)| Ok((*f, emb.embed(w)?))).collect::<Result<Vec<_>>>()?;
    let (mut same, mut cross) = ((0.0, 0usize), (0.0, 0usize));
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            let c = cosine(&embs[i].1, &embs[j].1);
            let acc = if embs[i].0 == embs[j].0 { &mut same } else { &mut cross };
            acc.0 += c;
            acc.1 += 1;
        }
    }
    if same.1 == 0 || cross.1 == 0 {
        return Err(Error::Data("family similarity needs utterances from both families".into()));
    }
    Ok(FamilySimilarity { same_family: same.0 / same.1 as f64, cross_family: cross.0 / cross.1 as f64 })
}

#[derive(Debug, Clone, Serialize)]
pub struct CorpusSummary {
    pub val: usize,
    pub test: usize,
    pub train_speakers: Vec<String>,
    pub held_out_speakers: Vec<String>,
    pub family_similarity: FamilySimilarity,
}

/// Writes `speakers.json`, `data_config.json`, and for each evaluation split
/// `<split>.jsonl` with `<split>/{mix,s1,…}/NNNNN.wav`.
pub fn write_corpus(cfg: &DataConfig, out: &Path) -> Result<CorpusSummary> {
    let errs = cfg.validate("");
    if !errs.is_empty() {
        return Err(Error::ConfigFields(errs));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let speakers = speaker_split(cfg);
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "train": speakers.train,
        "held_out": speakers.held_out,
    }))?;
    fs::write(out.join("speakers.json"), json).map_err(|e| Error::io(out.join("speakers.json"), e))?;
    let cfg_path = out.join("data_config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(cfg)?).map_err(|e| Error::io(&cfg_path, e))?;

    let mut probe = Vec::new();
    for (split, count) in [(Split::Val, cfg.val_mixtures), (Split::Test, cfg.test_mixtures)] {
        let mut records = Vec::with_capacity(count);
        for i in 0..count {
            let ex = split_example(cfg, &speakers, split, i as u64)?;
            let name = format!("{i:05}.wav");
            let mix_rel = Path::new(split.name()).join("mix").join(&name);
            wav_write(&out.join(&mix_rel), &ex.mixture)?;
            let mut source_paths = Vec::new();
            for (c, t) in ex.targets.iter().enumerate() {
                let rel = Path::new(split.name()).join(format!("s{}", c + 1)).join(&name);
                wav_write(&out.join(&rel), t)?;
                source_paths.push(rel);
                probe.push((ex.families[c], t.clone()));
            }
            records.push(MixtureRecord {
                mixture_path: mix_rel,
                source_paths,
                speaker_ids: ex.speaker_ids.clone(),
                families: ex.families.clone(),
                snr_db: ex.snr_db,
                sample_rate: ex.mixture.sample_rate,
                num_samples: ex.mixture.len(),
            });
        }
        manifest_write(&records, &out.join(format!("{}.jsonl", split.name())))?;
    }
    let family_similarity = family_similarity(&probe)?;
    Ok(CorpusSummary {
        val: cfg.val_mixtures,
        test: cfg.test_mixtures,
        train_speakers: speakers.train.iter().map(|s| s.speaker_id.clone()).collect(),
        held_out_speakers: speakers.held_out.iter().map(|s| s.speaker_id.clone()).collect(),
        family_similarity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::manifest_read_checked;

    #[test]
    fn split_keeps_test_speakers_unseen() {
        let cfg = DataConfig::default();
        let s = speaker_split(&cfg);
        assert_eq!(s.train.len(), 16);
        assert_eq!(s.held_out.len(), 6);
        let ex = split_set(&cfg, &s, Split::Test, 5).unwrap();
        for e in &ex {
            assert!(e.speaker_ids.iter().all(|id| s.held_out.iter().any(|h| &h.speaker_id == id)));
        }
        assert_eq!(ex, split_set(&cfg, &s, Split::Test, 5).unwrap());
    }

    #[test]
    fn written_corpus_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DataConfig { val_mixtures: 3, test_mixtures: 2, ..DataConfig::default() };
        let summary = write_corpus(&cfg, dir.path()).unwrap();
        assert_eq!(summary.held_out_speakers.len(), 6);
        let recs = manifest_read_checked(&dir.path().join("test.jsonl")).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].num_samples, 4000);
        assert_eq!(manifest_read_checked(&dir.path().join("val.jsonl")).unwrap().len(), 3);
    }

    #[test]
    fn families_are_separable_by_embedding() {
        let pool = speaker_pool(5, 3);
        let utts: Vec<_> = (0..50)
            .map(|i| {
                let spk = &pool[i % pool.len()];
                (spk.family, crate::data::synth_utterance(spk, 0.5, 8000, i as u64))
            })
            .collect();
        let sim = family_similarity(&utts).unwrap();
        println!("{sim:?}");
        assert!(sim.same_family > sim.cross_family, "{sim:?}");
    }

    #[test]
    fn validation_lists_problems() {
        let mut cfg = DataConfig { speakers_per_family: 0, held_out_per_family: 0, ..DataConfig::default() };
        cfg.mix.duration_s = 0.0;
        assert_eq!(cfg.validate("data.").len(), 3);
    }
}
