//! Two-rate streaming engine with the one-frame-ahead gain contract.
//!
//! Frame `k` is rendered with gains predicted at frame `k - 1`, so output for
//! `[0, (k+1)·f2)` never depends on later input.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dsp::{apply_gain_ramped, ms_to_samples, rms, AudioBuffer, FrameClock, RateMode};
use crate::error::{Error, Result};
use crate::model::GainPredictor;
use crate::tensor::Matrix;

/// Rendering options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    /// Gain applied to frame 0, before any prediction exists.
    pub warmup_gain: f64,
    /// Linear crossfade between consecutive frame gains; 0 disables it.
    pub crossfade_ms: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            warmup_gain: 1.0,
            crossfade_ms: 0.0,
        }
    }
}

/// Output of one [`StreamState::step`].
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    /// Mixed samples for this frame; same length as the input frame.
    pub mix: Vec<f64>,
    /// Gains used to render this frame.
    pub applied: Vec<f64>,
    /// Gains predicted from this frame, pending for the next one.
    pub predicted: Vec<f64>,
    /// Whether the F1 context was refreshed on this step.
    pub refreshed: bool,
}

/// Per-channel gains per F2 frame, as predicted and as applied.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GainTimeline {
    applied: Vec<Vec<f64>>,
    predicted: Vec<Vec<f64>>,
}

impl GainTimeline {
    /// Frames between prediction and application.
    pub const APPLIED_OFFSET: usize = 1;

    fn with_channels(c: usize) -> Self {
        Self {
            applied: vec![Vec::new(); c],
            predicted: vec![Vec::new(); c],
        }
    }

    fn push(&mut self, applied: &[f64], predicted: &[f64]) {
        for (c, (a, p)) in applied.iter().zip(predicted).enumerate() {
            self.applied[c].push(*a);
            self.predicted[c].push(*p);
        }
    }

    pub fn channels(&self) -> usize {
        self.applied.len()
    }

    pub fn frames(&self) -> usize {
        self.applied.first().map_or(0, Vec::len)
    }

    /// Gains that rendered each frame, one row per channel.
    pub fn applied(&self) -> &[Vec<f64>] {
        &self.applied
    }

    /// Gains predicted at each frame, one row per channel.
    pub fn predicted(&self) -> &[Vec<f64>] {
        &self.predicted
    }

    pub fn applied_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.applied).unwrap_or_else(|_| Matrix::zeros(0, 0))
    }

    /// Largest gain change between consecutive applied frames, any channel.
    pub fn max_step(&self) -> f64 {
        self.applied
            .iter()
            .flat_map(|g| g.windows(2).map(|w| (w[1] - w[0]).abs()))
            .fold(0.0, f64::max)
    }

    pub fn mean_gain(&self, channel: usize) -> f64 {
        let g = &self.applied[channel];
        if g.is_empty() {
            0.0
        } else {
            g.iter().sum::<f64>() / g.len() as f64
        }
    }

    /// `channel,frame_index,gain` rows of the applied gains.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "channel,frame_index,gain")?;
        for (c, gains) in self.applied.iter().enumerate() {
            for (k, g) in gains.iter().enumerate() {
                writeln!(w, "{c},{k},{g}")?;
            }
        }
        Ok(())
    }
}

/// Single-writer state of one stream.
#[derive(Clone, Debug)]
pub struct StreamState {
    clock: FrameClock,
    config: StreamConfig,
    next_f2_index: usize,
    channels: Option<usize>,
    /// Most recent samples per channel, at most `f1_samples` of them.
    history: Vec<Vec<f64>>,
    cached_f1_context: Option<(Matrix, usize)>,
    pending_gains: Option<Vec<f64>>,
    last_applied: Option<Vec<f64>>,
    recurrent_state: Option<Matrix>,
    finished: bool,
}

impl StreamState {
    pub fn new(clock: FrameClock, config: StreamConfig) -> Result<Self> {
        if !(config.warmup_gain >= 0.0 && config.warmup_gain.is_finite()) {
            return Err(Error::InvalidConfig(format!("warm-up gain {}", config.warmup_gain)));
        }
        if !(config.crossfade_ms >= 0.0 && config.crossfade_ms.is_finite()) {
            return Err(Error::InvalidConfig(format!("crossfade {} ms", config.crossfade_ms)));
        }
        Ok(Self {
            clock,
            config,
            next_f2_index: 0,
            channels: None,
            history: Vec::new(),
            cached_f1_context: None,
            pending_gains: None,
            last_applied: None,
            recurrent_state: None,
            finished: false,
        })
    }

    pub fn clock(&self) -> &FrameClock {
        &self.clock
    }

    pub fn next_f2_index(&self) -> usize {
        self.next_f2_index
    }

    /// Gains that will render the next frame; `None` before the first step.
    pub fn pending_gains(&self) -> Option<&[f64]> {
        self.pending_gains.as_deref()
    }

    /// F2 index at which the cached F1 context was extracted.
    pub fn f1_refresh_index(&self) -> Option<usize> {
        self.cached_f1_context.as_ref().map(|(_, k)| *k)
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Clears all stream state, keeping clock and config.
    pub fn reset(&mut self) {
        *self = Self::new(self.clock, self.config.clone()).expect("config already validated");
    }

    /// The F1 window for the current refresh: the last `f1_samples` of
    /// history, left zero-padded.
    fn f1_windows(&self) -> Vec<Vec<f64>> {
        let f1 = self.clock.f1_samples();
        self.history
            .iter()
            .map(|h| {
                let mut w = vec![0.0; f1 - h.len()];
                w.extend_from_slice(h);
                w
            })
            .collect()
    }

    fn push_history<S: AsRef<[f64]>>(&mut self, frames: &[S]) {
        let f1 = self.clock.f1_samples();
        for (h, f) in self.history.iter_mut().zip(frames) {
            h.extend_from_slice(f.as_ref());
            if h.len() > f1 {
                h.drain(..h.len() - f1);
            }
        }
    }

    /// Renders one F2 frame and predicts gains for the next.
    pub fn step<S, P>(&mut self, new_audio: &[S], predictor: &P) -> Result<StepOutput>
    where
        S: AsRef<[f64]>,
        P: GainPredictor + ?Sized,
    {
        let c = new_audio.len();
        if c == 0 {
            return Err(Error::NoChannels);
        }
        match self.channels {
            None => {
                self.channels = Some(c);
                self.history = vec![Vec::new(); c];
            }
            Some(expected) if expected != c => return Err(Error::ChannelMismatch { expected, actual: c }),
            Some(_) => {}
        }
        if self.finished {
            return Err(Error::InvalidConfig("stream already ended with a partial frame".into()));
        }
        let f2 = self.clock.f2_samples();
        let len = new_audio[0].as_ref().len();
        for f in new_audio {
            let l = f.as_ref().len();
            if l != len {
                return Err(Error::LengthMismatch { expected: len, actual: l });
            }
            if f.as_ref().iter().any(|s| !s.is_finite()) {
                return Err(Error::NonFinite("input audio".into()));
            }
        }
        if len == 0 || len > f2 {
            return Err(Error::LengthMismatch { expected: f2, actual: len });
        }
        let k = self.next_f2_index;

        // 1. render with pending gains
        let applied = self
            .pending_gains
            .clone()
            .unwrap_or_else(|| vec![self.config.warmup_gain; c]);
        let ramp = ms_to_samples(self.config.crossfade_ms, self.clock.sample_rate()).min(len);
        let mut mix = vec![0.0; len];
        for (ch, frame) in new_audio.iter().enumerate() {
            let prev = self.last_applied.as_ref().map_or(applied[ch], |p| p[ch]);
            let g = apply_gain_ramped(frame.as_ref(), prev, applied[ch], ramp)?;
            for (m, s) in mix.iter_mut().zip(g) {
                *m += s;
            }
        }

        // 2. F1 refresh from history that ends at the start of frame k
        let refreshed = self.clock.is_refresh(k) || self.cached_f1_context.is_none();
        if refreshed {
            let ctx = predictor.f1_context(&self.f1_windows())?;
            self.cached_f1_context = Some((ctx, k - k % self.clock.stride()));
        }

        // 3. F2 path on frame k, zero-padded if partial
        let levels = new_audio
            .iter()
            .map(|f| {
                let f = f.as_ref();
                if f.len() == f2 {
                    rms(f)
                } else {
                    let mut padded = f.to_vec();
                    padded.resize(f2, 0.0);
                    rms(&padded)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let (ctx, _) = self.cached_f1_context.as_ref().expect("context cached above");
        let predicted = predictor.predict(ctx, &levels, &mut self.recurrent_state)?;
        if predicted.len() != c {
            return Err(Error::ChannelMismatch {
                expected: c,
                actual: predicted.len(),
            });
        }
        if let Some(g) = predicted.iter().find(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("predicted gain {g}")));
        }
        if let Some(g) = predicted.iter().find(|g| **g < 0.0) {
            return Err(Error::NegativeGain(*g));
        }

        // 4. advance
        self.push_history(new_audio);
        self.pending_gains = Some(predicted.clone());
        self.last_applied = Some(applied.clone());
        self.next_f2_index += 1;
        self.finished = len < f2;
        Ok(StepOutput {
            mix,
            applied,
            predicted,
            refreshed,
        })
    }
}

/// Streams a whole multitrack through the engine.
pub fn run_offline<P: GainPredictor + ?Sized>(
    channels: &[AudioBuffer],
    clock: &FrameClock,
    predictor: &P,
    config: &StreamConfig,
) -> Result<(AudioBuffer, GainTimeline)> {
    let first = channels.first().ok_or(Error::NoChannels)?;
    let n = first.len();
    for ch in channels {
        if ch.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: ch.len(),
            });
        }
        if ch.sample_rate() != clock.sample_rate() {
            return Err(Error::InvalidConfig(format!(
                "channel rate {} Hz differs from engine rate {} Hz",
                ch.sample_rate(),
                clock.sample_rate()
            )));
        }
    }
    if n == 0 {
        return Err(Error::SignalTooShort { len: 0, needed: 1 });
    }
    let f2 = clock.f2_samples();
    let mut state = StreamState::new(*clock, config.clone())?;
    let mut timeline = GainTimeline::with_channels(channels.len());
    let mut mix = Vec::with_capacity(n);
    for k in 0..clock.frame_count(n) {
        let (s, e) = (k * f2, ((k + 1) * f2).min(n));
        let frames: Vec<&[f64]> = channels.iter().map(|c| &c.samples()[s..e]).collect();
        let out = state.step(&frames, predictor)?;
        mix.extend_from_slice(&out.mix);
        timeline.push(&out.applied, &out.predicted);
    }
    Ok((AudioBuffer::new(mix, clock.sample_rate())?, timeline))
}

/// [`run_offline`] with the default clock for `mode` at the channels' rate.
pub fn run_offline_mode<P: GainPredictor + ?Sized>(
    channels: &[AudioBuffer],
    mode: RateMode,
    predictor: &P,
    config: &StreamConfig,
) -> Result<(AudioBuffer, GainTimeline)> {
    let sr = channels.first().ok_or(Error::NoChannels)?.sample_rate();
    run_offline(channels, &FrameClock::for_mode(mode, sr)?, predictor, config)
}
