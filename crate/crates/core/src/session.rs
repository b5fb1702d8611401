//! Multitrack sessions and their JSON manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::{resample_linear, AudioBuffer, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::training::Song;
use crate::wav::{read_wav, write_wav, WavFormat};

/// Default upper bound on channels per session.
pub const MAX_CHANNELS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelEntry {
    /// Path relative to the manifest directory, or absolute.
    pub file: PathBuf,
    pub name: String,
    #[serde(default)]
    pub instrument: String,
}

/// On-disk session description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    pub channels: Vec<ChannelEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_mix: Option<PathBuf>,
    /// Known mix gains, written by the synthetic generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_gains: Option<Vec<f64>>,
}

fn default_rate() -> u32 {
    DEFAULT_SAMPLE_RATE
}

#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub name: String,
    pub instrument: String,
    pub audio: AudioBuffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultitrackSession {
    pub channels: Vec<Channel>,
    pub reference_mix: Option<AudioBuffer>,
    pub sample_rate: u32,
    pub manifest_path: Option<PathBuf>,
    pub target_gains: Option<Vec<f64>>,
}

impl MultitrackSession {
    /// Validates channel count, lengths and rates.
    pub fn new(channels: Vec<Channel>, reference_mix: Option<AudioBuffer>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::NoChannels);
        }
        let len = channels[0].audio.len();
        for buf in channels.iter().map(|c| &c.audio).chain(reference_mix.iter()) {
            if buf.sample_rate() != sample_rate {
                return Err(Error::InvalidConfig(format!(
                    "buffer at {} Hz in a {sample_rate} Hz session",
                    buf.sample_rate()
                )));
            }
            if buf.len() != len {
                return Err(Error::LengthMismatch {
                    expected: len,
                    actual: buf.len(),
                });
            }
        }
        Ok(Self {
            channels,
            reference_mix,
            sample_rate,
            manifest_path: None,
            target_gains: None,
        })
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.audio.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn buffers(&self) -> Vec<AudioBuffer> {
        self.channels.iter().map(|c| c.audio.clone()).collect()
    }

    pub fn to_song(&self) -> Result<Song> {
        let reference = self.reference_mix.clone().ok_or(Error::MissingReference)?;
        Song::new(self.buffers(), reference)
    }
}

fn resolve(base: &Path, file: &Path) -> PathBuf {
    if file.is_absolute() {
        file.to_path_buf()
    } else {
        base.join(file)
    }
}

fn ingest(path: &Path, rate: u32) -> Result<AudioBuffer> {
    let buf = read_wav(path)?;
    if buf.sample_rate() == rate {
        Ok(buf)
    } else {
        log::info!("resampling {} from {} Hz to {rate} Hz", path.display(), buf.sample_rate());
        Ok(resample_linear(&buf, rate))
    }
}

/// Loads a manifest, decoding, resampling and trimming every file to the
/// shortest common length.
pub fn load_session(manifest: &Path) -> Result<MultitrackSession> {
    load_session_with_limit(manifest, MAX_CHANNELS)
}

pub fn load_session_with_limit(manifest: &Path, max_channels: usize) -> Result<MultitrackSession> {
    if !manifest.exists() {
        return Err(Error::MissingFile(manifest.to_path_buf()));
    }
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.channels.is_empty() {
        return Err(Error::NoChannels);
    }
    if m.channels.len() > max_channels {
        return Err(Error::InvalidConfig(format!(
            "{} channels exceed the maximum of {max_channels}",
            m.channels.len()
        )));
    }
    if m.sample_rate == 0 {
        return Err(Error::InvalidConfig("sample_rate must be positive".into()));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut channels = m
        .channels
        .iter()
        .map(|c| {
            Ok(Channel {
                name: c.name.clone(),
                instrument: c.instrument.clone(),
                audio: ingest(&resolve(base, &c.file), m.sample_rate)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut reference = m
        .reference_mix
        .as_ref()
        .map(|f| ingest(&resolve(base, f), m.sample_rate))
        .transpose()?;

    let shortest = channels
        .iter()
        .map(|c| c.audio.len())
        .chain(reference.iter().map(AudioBuffer::len))
        .min()
        .unwrap_or(0);
    for buf in channels.iter_mut().map(|c| &mut c.audio).chain(reference.iter_mut()) {
        if buf.len() > shortest {
            log::warn!("trimming {} samples to the shortest length {shortest}", buf.len());
            buf.truncate(shortest);
        }
    }
    if let Some(g) = &m.target_gains {
        if g.len() != channels.len() {
            return Err(Error::ChannelMismatch {
                expected: channels.len(),
                actual: g.len(),
            });
        }
    }
    let mut s = MultitrackSession::new(channels, reference, m.sample_rate)?;
    s.manifest_path = Some(manifest.to_path_buf());
    s.target_gains = m.target_gains;
    Ok(s)
}

/// Writes every buffer as a 32-bit float WAV plus `manifest.json` into
/// `dir`. Returns the manifest path.
pub fn save_session(session: &MultitrackSession, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(session.channels.len());
    for (i, c) in session.channels.iter().enumerate() {
        let file = PathBuf::from(format!("ch{i:02}.wav"));
        write_wav(&dir.join(&file), &c.audio, WavFormat::Float32)?;
        entries.push(ChannelEntry {
            file,
            name: c.name.clone(),
            instrument: c.instrument.clone(),
        });
    }
    let reference_mix = match &session.reference_mix {
        Some(r) => {
            let file = PathBuf::from("reference.wav");
            write_wav(&dir.join(&file), r, WavFormat::Float32)?;
            Some(file)
        }
        None => None,
    };
    let manifest = Manifest {
        sample_rate: session.sample_rate,
        channels: entries,
        reference_mix,
        target_gains: session.target_gains.clone(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Every `*.json` manifest directly inside `dir`, or `dir` itself when it
/// is a manifest file.
pub fn find_manifests(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    if !dir.exists() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "json") {
            out.push(p);
        } else if p.is_dir() && p.join("manifest.json").is_file() {
            out.push(p.join("manifest.json"));
        }
    }
    out.sort();
    Ok(out)
}
