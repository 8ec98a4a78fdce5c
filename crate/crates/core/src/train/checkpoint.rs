//! Self-describing binary checkpoints.
//!
//! Layout (little-endian): `"ISCT"`, `u32` format version, then a payload of
//! length-prefixed config JSON, a tensor table and length-prefixed train-state
//! JSON, then a `u32` CRC-32 of the payload. Each tensor entry is a
//! length-prefixed UTF-8 path, a dtype byte (`0` = f64), a `u32` rank, `u64`
//! dims and the raw values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::config::ExperimentConfig;
use super::optim::AdamState;
use super::trainer::{TrainProgress, TrainState};
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::separator;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ISCT";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

const PARAM: &str = "param/";
const ADAM_M: &str = "adam_m/";
const ADAM_V: &str = "adam_v/";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub params: ModelParams,
    pub state: TrainState,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_bytes(out, name.as_bytes());
    out.push(DTYPE_F64);
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    put_bytes(&mut payload, serde_json::to_string(&ck.config)?.as_bytes());
    let mut tensors: Vec<(String, &Tensor)> = Vec::new();
    for p in ck.params.iter() {
        tensors.push((format!("{PARAM}{}", p.path), &p.value));
    }
    for (k, t) in &ck.state.adam.m {
        tensors.push((format!("{ADAM_M}{k}"), t));
    }
    for (k, t) in &ck.state.adam.v {
        tensors.push((format!("{ADAM_V}{k}"), t));
    }
    put_u32(&mut payload, tensors.len() as u32);
    for (name, t) in &tensors {
        put_tensor(&mut payload, name, t);
    }
    put_bytes(&mut payload, serde_json::to_string(&ck.state.progress())?.as_bytes());

    let mut out = Vec::with_capacity(payload.len() + 12);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    out.extend_from_slice(&payload);
    put_u32(&mut out, crc32fast::hash(&payload));
    Ok(out)
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.b.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated payload".into()))?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn str(&mut self) -> Result<&'a str> {
        std::str::from_utf8(self.bytes()?).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let payload = &bytes[8..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Reader { b: payload, pos: 0 };
    let config: ExperimentConfig = serde_json::from_str(r.str()?)?;
    let count = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name = r.str()?.to_string();
        if r.take(1)?[0] != DTYPE_F64 {
            return Err(Error::Checkpoint(format!("tensor `{name}` has an unsupported dtype")));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    let progress: TrainProgress = serde_json::from_str(r.str()?)?;
    if r.pos != payload.len() {
        return Err(Error::Checkpoint("trailing bytes after train state".into()));
    }

    let mut params = ModelParams::new();
    let mut adam = AdamState { t: progress.adam_t, ..AdamState::default() };
    for (name, t) in tensors {
        if let Some(p) = name.strip_prefix(PARAM) {
            params.insert(p, t)?;
        } else if let Some(p) = name.strip_prefix(ADAM_M) {
            adam.m.insert(p.to_string(), t);
        } else if let Some(p) = name.strip_prefix(ADAM_V) {
            adam.v.insert(p.to_string(), t);
        } else {
            return Err(Error::Checkpoint(format!("unknown tensor `{name}`")));
        }
    }
    Ok(Checkpoint { config, params, state: TrainState::from_progress(progress, adam) })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = encode(ck)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Checks that `params` has exactly the tensors (paths and shapes) a fresh
/// model built from `cfg` would have.
pub fn verify_params(params: &ModelParams, cfg: &separator::SeparatorConfig) -> Result<()> {
    let expected = separator::init_params(cfg, &mut <rand_xoshiro::Xoshiro256PlusPlus as rand::SeedableRng>::seed_from_u64(0))?;
    for p in expected.iter() {
        let found = params
            .get(&p.path)
            .map_err(|_| Error::Checkpoint(format!("tensor `{}` is missing", p.path)))?;
        if found.value.shape() != p.value.shape() {
            return Err(Error::TensorShape {
                path: p.path.clone(),
                found: found.value.shape().to_vec(),
                expected: p.value.shape().to_vec(),
            });
        }
    }
    if let Some(extra) = params.paths().find(|path| !expected.contains(path)) {
        return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
    }
    if params.count() != expected.count() {
        return Err(Error::Checkpoint(format!(
            "parameter count {} does not match the configuration's {}",
            params.count(),
            expected.count()
        )));
    }
    Ok(())
}
