//! Minimal RIFF/WAVE reader (PCM16 or IEEE float32, mono) and PCM16 writer.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::frontend::Waveform;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn err(msg: impl Into<String>) -> Error {
    Error::Wav(msg.into())
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn parse_fmt(body: &[u8]) -> Result<Format> {
    if body.len() < 16 {
        return Err(err("fmt chunk shorter than 16 bytes"));
    }
    let mut tag = u16_at(body, 0);
    if tag == FORMAT_EXTENSIBLE {
        if body.len() < 26 {
            return Err(err("extensible fmt chunk is missing its subformat"));
        }
        tag = u16_at(body, 24);
    }
    Ok(Format { tag, channels: u16_at(body, 2), sample_rate: u32_at(body, 4), bits: u16_at(body, 14) })
}

/// Decodes WAV bytes into samples in `[−1, 1]`.
pub fn decode(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(err("missing RIFF/WAVE header"));
    }
    let mut pos = 12;
    let mut format = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let start = pos + 8;
        if id == b"data" {
            let fmt = format.ok_or_else(|| err("data chunk before fmt chunk"))?;
            let end = start.checked_add(size).filter(|&e| e <= bytes.len());
            let body = &bytes[start..end.ok_or_else(|| err("unexpected EOF in data chunk"))?];
            return decode_samples(&fmt, body);
        }
        let body = bytes.get(start..start + size).ok_or_else(|| err(format!("unexpected EOF in {} chunk", String::from_utf8_lossy(id).trim())))?;
        if id == b"fmt " {
            format = Some(parse_fmt(body)?);
        }
        pos = start + size + (size & 1);
    }
    Err(err("no data chunk"))
}

fn decode_samples(fmt: &Format, body: &[u8]) -> Result<Waveform> {
    if fmt.channels != 1 {
        return Err(err(format!("only mono is supported, file has {} channels", fmt.channels)));
    }
    let samples = match (fmt.tag, fmt.bits) {
        (FORMAT_PCM, 16) => {
            if body.len() % 2 != 0 {
                return Err(err("unexpected EOF in data chunk"));
            }
            body.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0).collect()
        }
        (FORMAT_FLOAT, 32) => {
            if body.len() % 4 != 0 {
                return Err(err("unexpected EOF in data chunk"));
            }
            body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect()
        }
        (tag, bits) => return Err(err(format!("unsupported encoding (format tag {tag}, {bits} bits)"))),
    };
    Ok(Waveform::new(samples, fmt.sample_rate))
}

/// Encodes as 16-bit PCM mono; samples outside `[−1, 1]` are clipped.
pub fn encode(w: &Waveform) -> Vec<u8> {
    let data_len = 2 * w.samples.len() as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in &w.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn wav_read(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Wav(msg) => Error::Wav(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn wav_write(path: &Path, w: &Waveform) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(w)).map_err(|e| Error::io(path, e))
}
