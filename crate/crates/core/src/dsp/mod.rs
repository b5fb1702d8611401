//! Signal primitives shared by the engine, the simulator and the trainer.
//!
//! Everything here is a pure function of its inputs.

mod mel;
pub(crate) mod stft;

pub use mel::{log_mel, mel_filterbank, LogMelConfig, LOG_FLOOR};
pub use stft::{hann_window, stft_mag, SpectralConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default engine sample rate. F1/F2 durations map to whole sample counts here.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono audio at a fixed sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn slice(&self, start: usize, end: usize) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, gain: f64) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn truncate(&mut self, len: usize) {
        self.samples.truncate(len);
    }
}

/// Round-half-up conversion of a duration to a sample count.
pub fn ms_to_samples(duration_ms: f64, sample_rate: u32) -> usize {
    debug_assert!(duration_ms >= 0.0);
    (duration_ms * sample_rate as f64 / 1000.0 + 0.5).floor() as usize
}

pub fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn gain_to_db(gain: f64) -> f64 {
    20.0 * gain.log10()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateMode {
    /// Short control frames, long embedding frames refreshed every few control frames.
    Mr,
    /// Control and embedding frames are the same length and non-overlapping.
    Sr,
}

impl std::fmt::Display for RateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RateMode::Mr => "mr",
            RateMode::Sr => "sr",
        })
    }
}

impl std::str::FromStr for RateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mr" => Ok(RateMode::Mr),
            "sr" => Ok(RateMode::Sr),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

/// Half-open sample interval. A negative start denotes left zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleInterval {
    pub start: i64,
    pub end: i64,
}

impl SampleInterval {
    pub fn len(&self) -> usize {
        (self.end - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Number of leading samples that fall before the stream start.
    pub fn zero_padding(&self) -> usize {
        if self.start < 0 {
            (-self.start).min(self.end - self.start) as usize
        } else {
            0
        }
    }
}

/// F1/F2 frame geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameClock {
    f1_ms: f64,
    f2_ms: f64,
    stride: usize,
    sample_rate: u32,
    f1_samples: usize,
    f2_samples: usize,
}

impl FrameClock {
    pub const F1_MS: f64 = 975.0;
    pub const F2_MS: f64 = 50.0;
    pub const MR_STRIDE: usize = 6;

    pub fn new(f1_ms: f64, f2_ms: f64, stride: usize, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 || stride == 0 {
            return Err(Error::InvalidConfig(
                "sample rate and stride must be positive".into(),
            ));
        }
        if !(f1_ms >= 0.0 && f2_ms >= 0.0) {
            return Err(Error::InvalidConfig("frame durations must be >= 0".into()));
        }
        let f1_samples = ms_to_samples(f1_ms, sample_rate);
        let f2_samples = ms_to_samples(f2_ms, sample_rate);
        if f2_samples == 0 || f1_samples < f2_samples {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= f2_samples <= f1_samples, got f1={f1_samples} f2={f2_samples}"
            )));
        }
        Ok(Self {
            f1_ms,
            f2_ms,
            stride,
            sample_rate,
            f1_samples,
            f2_samples,
        })
    }

    pub fn multi_rate(sample_rate: u32) -> Result<Self> {
        Self::new(Self::F1_MS, Self::F2_MS, Self::MR_STRIDE, sample_rate)
    }

    pub fn single_rate(sample_rate: u32) -> Result<Self> {
        Self::new(Self::F1_MS, Self::F1_MS, 1, sample_rate)
    }

    pub fn for_mode(mode: RateMode, sample_rate: u32) -> Result<Self> {
        match mode {
            RateMode::Mr => Self::multi_rate(sample_rate),
            RateMode::Sr => Self::single_rate(sample_rate),
        }
    }

    pub fn f1_ms(&self) -> f64 {
        self.f1_ms
    }

    pub fn f2_ms(&self) -> f64 {
        self.f2_ms
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn f1_samples(&self) -> usize {
        self.f1_samples
    }

    pub fn f2_samples(&self) -> usize {
        self.f2_samples
    }

    /// Time between consecutive F1 refreshes.
    pub fn f1_stride_ms(&self) -> f64 {
        self.stride as f64 * self.f2_ms
    }

    pub fn is_refresh(&self, k: usize) -> bool {
        k.is_multiple_of(self.stride)
    }

    /// Number of F2 frames (including a final partial one) covering `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        len.div_ceil(self.f2_samples)
    }

    /// F1 analysis window serving F2 frame `k`. It ends at the start of the
    /// latest refresh frame, so it never contains audio from that frame.
    pub fn f1_window_for(&self, k: usize) -> SampleInterval {
        let refresh = (k / self.stride) * self.stride;
        let end = (refresh * self.f2_samples) as i64;
        SampleInterval {
            start: end - self.f1_samples as i64,
            end,
        }
    }
}

/// Root mean square of a frame.
pub fn rms(frame: &[f64]) -> Result<f64> {
    if frame.is_empty() {
        return Err(Error::EmptyFrame);
    }
    let sum: f64 = frame.iter().map(|s| s * s).sum();
    Ok((sum / frame.len() as f64).sqrt())
}

/// Multiplies every sample by `gain`.
pub fn apply_gain(frame: &[f64], gain: f64) -> Result<Vec<f64>> {
    if gain < 0.0 || gain.is_nan() {
        return Err(Error::NegativeGain(gain));
    }
    Ok(frame.iter().map(|s| s * gain).collect())
}

/// Like [`apply_gain`] but ramps linearly from `previous_gain` to `gain` over
/// the first `ramp_len` samples.
pub fn apply_gain_ramped(
    frame: &[f64],
    previous_gain: f64,
    gain: f64,
    ramp_len: usize,
) -> Result<Vec<f64>> {
    if gain < 0.0 || gain.is_nan() {
        return Err(Error::NegativeGain(gain));
    }
    if previous_gain < 0.0 || previous_gain.is_nan() {
        return Err(Error::NegativeGain(previous_gain));
    }
    Ok(frame
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let g = if i < ramp_len {
                let t = (i + 1) as f64 / (ramp_len + 1) as f64;
                previous_gain + (gain - previous_gain) * t
            } else {
                gain
            };
            s * g
        })
        .collect())
}

/// Sample-wise sum. No normalization or clipping.
pub fn sum_channels<S: AsRef<[f64]>>(frames: &[S]) -> Result<Vec<f64>> {
    let first = frames.first().ok_or(Error::NoChannels)?.as_ref();
    let mut out = first.to_vec();
    for f in &frames[1..] {
        let f = f.as_ref();
        if f.len() != out.len() {
            return Err(Error::LengthMismatch {
                expected: out.len(),
                actual: f.len(),
            });
        }
        for (o, s) in out.iter_mut().zip(f) {
            *o += s;
        }
    }
    Ok(out)
}

/// Scales `buffer` so its absolute peak equals `target_dbfs`.
pub fn normalize_peak(buffer: &AudioBuffer, target_dbfs: f64) -> Result<AudioBuffer> {
    let peak = buffer.peak();
    if peak == 0.0 {
        return Err(Error::SilentBuffer);
    }
    Ok(buffer.scaled(db_to_gain(target_dbfs) / peak))
}

/// Linear-interpolation resampler. Output length is `round(n * to / from)`.
pub fn resample_linear(buffer: &AudioBuffer, to: u32) -> AudioBuffer {
    let from = buffer.sample_rate();
    if from == to {
        return buffer.clone();
    }
    let n = buffer.len();
    let out_len = ((n as u64 * to as u64 * 2 + from as u64) / (2 * from as u64)) as usize;
    let src = buffer.samples();
    let ratio = from as f64 / to as f64;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let i0 = pos.floor() as usize;
            let frac = pos - i0 as f64;
            let a = src.get(i0).copied().unwrap_or(0.0);
            let b = src.get(i0 + 1).copied().unwrap_or(a);
            a + (b - a) * frac
        })
        .collect();
    AudioBuffer {
        samples,
        sample_rate: to,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn ms_to_samples_examples() {
        assert_eq!(ms_to_samples(975.0, 16_000), 15_600);
        assert_eq!(ms_to_samples(0.0, 16_000), 0);
        assert_eq!(ms_to_samples(50.0, 44_100), 2_205);
        // half-up
        assert_eq!(ms_to_samples(0.03125, 16_000), 1);
    }

    #[test]
    fn clock_defaults() {
        let c = FrameClock::multi_rate(16_000).unwrap();
        assert_eq!(c.f1_samples(), 15_600);
        assert_eq!(c.f2_samples(), 800);
        assert_eq!(c.f1_stride_ms(), 300.0);
        let s = FrameClock::single_rate(16_000).unwrap();
        assert_eq!(s.f2_samples(), 15_600);
        assert_eq!(s.stride(), 1);
        assert!(FrameClock::new(50.0, 975.0, 1, 16_000).is_err());
        assert!(FrameClock::new(975.0, 0.0, 1, 16_000).is_err());
    }

    #[test]
    fn f1_window_examples() {
        let c = FrameClock::multi_rate(16_000).unwrap();
        let w = c.f1_window_for(7);
        assert_eq!((w.start, w.end), (-10_800, 4_800));
        assert_eq!(w.zero_padding(), 10_800);
        let w0 = c.f1_window_for(0);
        assert_eq!((w0.start, w0.end), (-15_600, 0));
        assert_eq!(w0.zero_padding(), 15_600);
        let w12 = c.f1_window_for(12);
        assert_eq!((w12.start, w12.end), (-6_000, 9_600));
    }

    #[test]
    fn rms_examples() {
        assert_eq!(rms(&[0.5; 800]).unwrap(), 0.5);
        assert_eq!(rms(&[0.0; 800]).unwrap(), 0.0);
        assert!(matches!(rms(&[]), Err(Error::EmptyFrame)));

        // 10 whole periods over 800 samples; reference by direct summation
        let sine: Vec<f64> = (0..800)
            .map(|n| (2.0 * std::f64::consts::PI * 10.0 * n as f64 / 800.0).sin())
            .collect();
        let mut acc = 0.0;
        for s in &sine {
            acc += s * s;
        }
        let oracle = (acc / 800.0).sqrt();
        assert_abs_diff_eq!(oracle, 0.70711, epsilon = 1e-5);
        assert_abs_diff_eq!(rms(&sine).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn gain_examples() {
        let f = [0.1, -0.3, 0.7];
        assert_eq!(apply_gain(&f, 1.0).unwrap(), f.to_vec());
        assert_eq!(apply_gain(&f, 0.0).unwrap(), vec![0.0; 3]);
        assert_eq!(apply_gain(&[0.4; 4], 0.5).unwrap(), vec![0.2; 4]);
        assert!(matches!(apply_gain(&f, -0.1), Err(Error::NegativeGain(_))));
    }

    #[test]
    fn ramp_reaches_target() {
        let out = apply_gain_ramped(&[1.0; 10], 0.0, 1.0, 4).unwrap();
        assert_abs_diff_eq!(out[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(out[3], 0.8, epsilon = 1e-12);
        assert_eq!(&out[4..], &[1.0; 6]);
    }

    #[test]
    fn sum_examples() {
        let x = [0.3, -0.2, 0.9];
        let nx: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(sum_channels(&[x.to_vec(), nx]).unwrap(), vec![0.0; 3]);
        assert_eq!(sum_channels(&[x]).unwrap(), x.to_vec());
        let s = sum_channels(&[[0.1; 5], [0.2; 5], [0.3; 5]]).unwrap();
        for v in s {
            assert_abs_diff_eq!(v, 0.6, epsilon = 1e-15);
        }
        assert!(sum_channels(&[vec![0.0; 3], vec![0.0; 4]]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let b = AudioBuffer::new(vec![0.2, -1.0, 0.5], 16_000).unwrap();
        let n = normalize_peak(&b, -6.0).unwrap();
        assert_abs_diff_eq!(n.peak(), 0.50119, epsilon = 1e-5);
        assert_abs_diff_eq!(n.peak(), 10f64.powf(-6.0 / 20.0), epsilon = 1e-12);
        let again = normalize_peak(&n, -6.0).unwrap();
        for (a, b) in again.samples().iter().zip(n.samples()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
        let q = AudioBuffer::new(vec![0.25, -0.1], 16_000).unwrap();
        assert_abs_diff_eq!(normalize_peak(&q, 0.0).unwrap().peak(), 1.0, epsilon = 1e-12);
        assert!(matches!(
            normalize_peak(&AudioBuffer::silence(4, 16_000), -6.0),
            Err(Error::SilentBuffer)
        ));
    }

    #[test]
    fn audio_buffer_rejects_nan() {
        assert!(AudioBuffer::new(vec![0.0, f64::NAN], 16_000).is_err());
        assert!(AudioBuffer::new(vec![], 0).is_err());
    }

    #[test]
    fn resample_length() {
        let b = AudioBuffer::new(vec![0.0; 44_100], 44_100).unwrap();
        assert_eq!(resample_linear(&b, 16_000).len(), 16_000);
        let b = AudioBuffer::new(vec![0.0; 1_001], 44_100).unwrap();
        assert_eq!(resample_linear(&b, 16_000).len(), (1_001.0f64 * 16_000.0 / 44_100.0).round() as usize);
    }

    proptest! {
        #[test]
        fn ms_to_samples_monotone(a in 0.0f64..5_000.0, d in 0.0f64..100.0, sr in 1u32..96_000, dsr in 0u32..1_000) {
            prop_assert!(ms_to_samples(a, sr) <= ms_to_samples(a + d, sr));
            prop_assert!(ms_to_samples(a, sr) <= ms_to_samples(a, sr + dsr));
        }

        #[test]
        fn rms_is_absolutely_homogeneous(x in proptest::collection::vec(-1.0f64..1.0, 1..256), c in -10.0f64..10.0) {
            let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
            let lhs = rms(&scaled).unwrap();
            let rhs = c.abs() * rms(&x).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1e-300));
        }

        #[test]
        fn gain_then_sum_is_linear(
            x in proptest::collection::vec(-1.0f64..1.0, 32),
            y in proptest::collection::vec(-1.0f64..1.0, 32),
            a in 0.0f64..4.0,
            b in 0.0f64..4.0,
        ) {
            let mixed = sum_channels(&[apply_gain(&x, a).unwrap(), apply_gain(&y, b).unwrap()]).unwrap();
            for i in 0..32 {
                prop_assert!((mixed[i] - (a * x[i] + b * y[i])).abs() <= 1e-9);
            }
        }

        #[test]
        fn normalize_hits_target(x in proptest::collection::vec(-1.0f64..1.0, 1..128), db in -40.0f64..0.0) {
            prop_assume!(x.iter().any(|v| *v != 0.0));
            let b = AudioBuffer::new(x, 16_000).unwrap();
            let n = normalize_peak(&b, db).unwrap();
            prop_assert!((n.peak() - db_to_gain(db)).abs() <= 1e-6);
        }
    }
}
