//! WAV framing and schema-tagged JSON records.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::Frame;

/// Major version written into every record and accepted by the readers.
pub const SCHEMA_MAJOR: u32 = 1;
const SCHEMA_MINOR: u32 = 0;

const PCM_SCALE: f64 = 32768.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Framing {
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for Framing {
    fn default() -> Self {
        Self {
            frame_len: 240,
            hop: 240,
        }
    }
}

// Anything that goes wrong while decoding an opened file is a format problem.
fn decode_error(e: hound::Error) -> Error {
    Error::Format(e.to_string())
}

fn encode_error(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io.to_string()),
        other => Error::Format(other.to_string()),
    }
}

/// Decodes a mono 16-bit PCM stream into samples in `[−1, 1)`.
pub fn decode_wav<R: Read>(reader: R) -> Result<(Vec<f64>, f64)> {
    let wav = hound::WavReader::new(reader).map_err(decode_error)?;
    let spec = wav.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "expected a mono file, found {} channels",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "expected 16-bit integer PCM, found {} bits {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let expected = wav.len() as usize;
    let samples = wav
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / PCM_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(decode_error)?;
    if samples.len() != expected {
        return Err(Error::Format(format!(
            "file is truncated: {} of {expected} samples present",
            samples.len()
        )));
    }
    Ok((samples, spec.sample_rate as f64))
}

/// Splits `samples` into full frames; a trailing partial frame is dropped.
pub fn split_frames(samples: &[f64], sample_rate: f64, framing: Framing) -> Result<Vec<Frame>> {
    if framing.frame_len == 0 || framing.hop == 0 {
        return Err(Error::invalid("frame length and hop must be positive"));
    }
    let mut frames = Vec::new();
    let mut start = 0;
    while start + framing.frame_len <= samples.len() {
        frames.push(Frame::new(
            samples[start..start + framing.frame_len].to_vec(),
            sample_rate,
        )?);
        start += framing.hop;
    }
    Ok(frames)
}

pub fn read_wav(path: &Path, framing: Framing) -> Result<Vec<Frame>> {
    let file = File::open(path)?;
    let (samples, fs) = decode_wav(BufReader::new(file))?;
    split_frames(&samples, fs, framing)
}

/// Writes 16-bit mono PCM. Samples must lie in `[−1, 1]`; `1.0` maps to the
/// largest code.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: f64) -> Result<()> {
    if let Some(v) = samples.iter().find(|v| !(v.abs() <= 1.0)) {
        return Err(Error::invalid(format!(
            "sample {v} is outside [-1, 1]; rescale before writing"
        )));
    }
    if !(sample_rate >= 1.0 && sample_rate.fract() == 0.0 && sample_rate <= u32::MAX as f64) {
        return Err(Error::invalid(format!(
            "sample rate {sample_rate} is not a positive integer"
        )));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(encode_error)?;
    for &v in samples {
        let q = (v * PCM_SCALE)
            .round()
            .clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        w.write_sample(q).map_err(encode_error)?;
    }
    w.finalize().map_err(encode_error)
}

/// Record kinds carried in the `schema` tag, e.g. `"synth-frame/1.0"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    SynthFrame,
    Analysis,
    Experiment,
    Model,
}

impl RecordKind {
    pub fn name(self) -> &'static str {
        match self {
            RecordKind::SynthFrame => "synth-frame",
            RecordKind::Analysis => "analysis",
            RecordKind::Experiment => "experiment",
            RecordKind::Model => "pole-zero-model",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        [
            RecordKind::SynthFrame,
            RecordKind::Analysis,
            RecordKind::Experiment,
            RecordKind::Model,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    schema: String,
    #[serde(flatten)]
    body: &'a T,
}

/// Parses a `kind/major.minor` tag.
pub fn parse_schema(tag: &str) -> Result<(RecordKind, u32)> {
    let bad = || Error::Format(format!("malformed schema tag {tag:?}"));
    let (name, version) = tag.split_once('/').ok_or_else(bad)?;
    let kind = RecordKind::from_name(name)
        .ok_or_else(|| Error::Format(format!("unknown record kind {name:?}")))?;
    let major = version
        .split('.')
        .next()
        .and_then(|m| m.parse::<u32>().ok())
        .ok_or_else(bad)?;
    Ok((kind, major))
}

pub fn to_json<T: Serialize>(kind: RecordKind, body: &T) -> Result<String> {
    let tagged = Tagged {
        schema: format!("{}/{SCHEMA_MAJOR}.{SCHEMA_MINOR}", kind.name()),
        body,
    };
    let mut s = serde_json::to_string_pretty(&tagged)?;
    s.push('\n');
    Ok(s)
}

/// Kind of a parsed record; rejects missing tags and unknown major versions.
pub fn record_kind(value: &Value) -> Result<RecordKind> {
    let tag = value
        .get("schema")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Format("record has no schema tag".into()))?;
    let (kind, major) = parse_schema(tag)?;
    if major != SCHEMA_MAJOR {
        return Err(Error::Format(format!(
            "unsupported {} schema major version {major} (expected {SCHEMA_MAJOR})",
            kind.name()
        )));
    }
    Ok(kind)
}

pub fn from_value<T: DeserializeOwned>(kind: RecordKind, value: Value) -> Result<T> {
    let found = record_kind(&value)?;
    if found != kind {
        return Err(Error::Format(format!(
            "expected a {} record, found {}",
            kind.name(),
            found.name()
        )));
    }
    Ok(serde_json::from_value(value)?)
}

pub fn from_json<T: DeserializeOwned>(kind: RecordKind, text: &str) -> Result<T> {
    from_value(kind, serde_json::from_str(text)?)
}

pub fn read_value(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_record<T: Serialize>(path: &Path, kind: RecordKind, body: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(to_json(kind, body)?.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_record<T: DeserializeOwned>(path: &Path, kind: RecordKind) -> Result<T> {
    from_value(kind, read_value(path)?)
}

/// A bare model record, as exchanged by the distortion command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model: crate::model::PoleZeroModel,
}
