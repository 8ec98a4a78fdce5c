//! JSON-lines mixture manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::Family;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureRecord {
    /// Relative paths resolve against the manifest's directory.
    pub mixture_path: PathBuf,
    pub source_paths: Vec<PathBuf>,
    pub speaker_ids: Vec<String>,
    pub families: Vec<Family>,
    /// `null` for noise-free mixtures.
    pub snr_db: Option<f64>,
    pub sample_rate: u32,
    pub num_samples: usize,
}

const FIELDS: [&str; 7] =
    ["mixture_path", "source_paths", "speaker_ids", "families", "snr_db", "sample_rate", "num_samples"];

impl MixtureRecord {
    pub fn num_speakers(&self) -> usize {
        self.source_paths.len()
    }

    fn check(&self) -> Option<String> {
        let c = self.source_paths.len();
        if c == 0 {
            return Some("source_paths is empty".into());
        }
        if self.speaker_ids.len() != c || self.families.len() != c {
            return Some(format!(
                "source_paths, speaker_ids and families must have equal lengths ({c}, {}, {})",
                self.speaker_ids.len(),
                self.families.len()
            ));
        }
        if self.sample_rate == 0 || self.num_samples == 0 {
            return Some("sample_rate and num_samples must be positive".into());
        }
        None
    }

    pub fn resolve(&self, base: &Path) -> (PathBuf, Vec<PathBuf>) {
        (base.join(&self.mixture_path), self.source_paths.iter().map(|p| base.join(p)).collect())
    }

    /// Referenced files that do not exist.
    pub fn missing_files(&self, base: &Path) -> Vec<PathBuf> {
        let (mix, srcs) = self.resolve(base);
        std::iter::once(mix).chain(srcs).filter(|p| !p.is_file()).collect()
    }
}

pub fn manifest_write(records: &[MixtureRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Parses and structurally validates every line; file existence is not checked.
pub fn manifest_read(path: &Path) -> Result<Vec<MixtureRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| Error::Manifest { line: line_no, detail };
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(format!("invalid JSON: {e}")))?;
        let obj = value.as_object().ok_or_else(|| bad("expected a JSON object".into()))?;
        if let Some(missing) = FIELDS.iter().find(|f| !obj.contains_key(**f)) {
            return Err(bad(format!("missing field \"{missing}\"")));
        }
        let record: MixtureRecord = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
        if let Some(problem) = record.check() {
            return Err(bad(problem));
        }
        records.push(record);
    }
    Ok(records)
}

/// [`manifest_read`] that also requires every referenced file to exist.
pub fn manifest_read_checked(path: &Path) -> Result<Vec<MixtureRecord>> {
    let records = manifest_read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for (i, r) in records.iter().enumerate() {
        if let Some(p) = r.missing_files(base).first() {
            return Err(Error::Manifest { line: i + 1, detail: format!("file not found: {}", p.display()) });
        }
    }
    Ok(records)
}
