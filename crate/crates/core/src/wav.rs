//! Mono WAV reading and writing: 16-bit PCM and 32-bit float.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavFormat {
    Pcm16,
    #[default]
    Float32,
}

fn unsupported(path: &Path, reason: impl Into<String>) -> Error {
    Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => unsupported(path, other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(unsupported(path, format!("{} channels, expected mono", spec.channels)));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => return Err(unsupported(path, format!("{bits}-bit {fmt:?} samples"))),
    };
    AudioBuffer::new(samples, spec.sample_rate).map_err(|_| unsupported(path, "non-finite samples"))
}

pub fn write_wav(path: &Path, buffer: &AudioBuffer, format: WavFormat) -> Result<()> {
    let (bits, sample_format) = match format {
        WavFormat::Pcm16 => (16, hound::SampleFormat::Int),
        WavFormat::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate(),
        bits_per_sample: bits,
        sample_format,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in buffer.samples() {
        match format {
            WavFormat::Pcm16 => w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?,
            WavFormat::Float32 => w.write_sample(s as f32)?,
        }
    }
    w.finalize()?;
    Ok(())
}
