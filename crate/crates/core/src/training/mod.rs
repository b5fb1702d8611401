//! Training harness: differentiable zero-latency rendering, chunked
//! truncated backpropagation, AdamW with a step schedule and the embedder
//! freeze.

mod loss;
mod optim;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{mrstft_loss, mrstft_loss_tape, mrstft_terms, LOG_EPS, NORM_EPS};
pub use optim::{adamw_update, AdamW, AdamWConfig, LrSchedule};

use crate::autodiff::{Tape, Var};
use crate::bleedsim::{apply_bleed_with, BleedConfig};
use crate::dsp::{normalize_peak, rms, AudioBuffer, FrameClock, RateMode, SpectralConfig};
use crate::error::{Error, Result};
use crate::model::{GainModel, ParamGroup, D_MODEL};
use crate::tensor::Matrix;

/// Which gain predictor a run trains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    #[default]
    Alm,
    Dmc,
}

impl Head {
    fn groups(self) -> [ParamGroup; 2] {
        match self {
            Head::Alm => [ParamGroup::Embedder, ParamGroup::Alm],
            Head::Dmc => [ParamGroup::Embedder, ParamGroup::Dmc],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub snippet_seconds: f64,
    /// Truncation length in F2 frames.
    pub bptt_frames: usize,
    pub freeze_embedder_epochs: usize,
    pub mode: RateMode,
    pub head: Head,
    pub schedule: LrSchedule,
    pub adamw: AdamWConfig,
    pub spectral: SpectralConfig,
    /// Bleed augmentation; `None` trains on the clean stems.
    pub bleed: Option<BleedConfig>,
    /// Peak level the target mix is normalized to; `None` keeps it as is.
    pub target_peak_dbfs: Option<f64>,
    pub warmup_gain: f64,
    pub seed: u64,
    /// Save weights every N epochs; 0 disables checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            snippet_seconds: 20.0,
            bptt_frames: 50,
            freeze_embedder_epochs: 100,
            mode: RateMode::Mr,
            head: Head::Alm,
            schedule: LrSchedule::default(),
            adamw: AdamWConfig::default(),
            spectral: SpectralConfig::default(),
            bleed: Some(BleedConfig::default()),
            target_peak_dbfs: Some(-6.0),
            warmup_gain: 1.0,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bptt_frames == 0 {
            return Err(Error::InvalidConfig("bptt_frames must be positive".into()));
        }
        if !(self.snippet_seconds > 0.0) {
            return Err(Error::InvalidConfig("snippet_seconds must be positive".into()));
        }
        self.spectral.validate()?;
        if let Some(b) = &self.bleed {
            b.validate()?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Clean stems with the mix they should produce.
#[derive(Clone, Debug, PartialEq)]
pub struct Song {
    pub stems: Vec<AudioBuffer>,
    pub reference: AudioBuffer,
}

impl Song {
    pub fn new(stems: Vec<AudioBuffer>, reference: AudioBuffer) -> Result<Self> {
        let first = stems.first().ok_or(Error::NoChannels)?;
        for s in stems.iter().chain(std::iter::once(&reference)) {
            if s.len() != first.len() {
                return Err(Error::LengthMismatch {
                    expected: first.len(),
                    actual: s.len(),
                });
            }
            if s.sample_rate() != first.sample_rate() {
                return Err(Error::InvalidConfig("stems and reference differ in sample rate".into()));
            }
        }
        Ok(Self { stems, reference })
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }
}

/// How a snippet is rendered on the tape.
#[derive(Clone, Debug)]
pub struct RenderOptions {
    pub clock: FrameClock,
    pub head: Head,
    pub bptt_frames: usize,
    pub spectral: SpectralConfig,
    pub warmup_gain: f64,
}

/// Result of rendering one snippet.
#[derive(Clone, Debug)]
pub struct SnippetOutput {
    /// The zero-latency mix, identical to what the streaming engine renders.
    pub pred_mix: Vec<f64>,
    /// Mean of the per-chunk losses; the quantity the gradients belong to.
    pub objective: f64,
    /// Mean per-chunk gradients per parameter tensor, when requested.
    pub grads: Option<Vec<Option<Vec<f64>>>>,
    pub chunks: usize,
}

/// Frame ranges of the truncation chunks. A tail shorter than the longest
/// loss window joins the previous chunk.
fn chunk_frames(n: usize, f2: usize, bptt: usize, min_len: usize) -> Vec<(usize, usize)> {
    let frames = n.div_ceil(f2);
    let mut out: Vec<(usize, usize)> = Vec::new();
    let mut k = 0;
    while k < frames {
        let end = (k + bptt).min(frames);
        let samples = (end * f2).min(n) - k * f2;
        match out.last_mut() {
            Some(last) if samples < min_len => last.1 = end,
            _ => out.push((k, end)),
        }
        k = end;
    }
    out
}

/// Carried between chunks as constants.
struct Carry {
    pending: Vec<f64>,
    hidden: Option<Matrix>,
    context: Option<Matrix>,
}

/// Renders `stems` with one-frame-ahead gains and scores each truncation
/// chunk against `target`.
pub fn render_snippet<S: AsRef<[f64]>>(
    model: &GainModel,
    stems: &[S],
    target: &[f64],
    opts: &RenderOptions,
    with_grads: bool,
) -> Result<SnippetOutput> {
    let c = stems.len();
    if c == 0 {
        return Err(Error::NoChannels);
    }
    let n = target.len();
    for s in stems {
        if s.as_ref().len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: s.as_ref().len(),
            });
        }
    }
    if opts.bptt_frames == 0 {
        return Err(Error::InvalidConfig("bptt_frames must be positive".into()));
    }
    opts.spectral.validate()?;
    let min_len = opts.spectral.max_window();
    if n < min_len {
        return Err(Error::SignalTooShort { len: n, needed: min_len });
    }
    let f1 = opts.clock.f1_samples();
    let f2 = opts.clock.f2_samples();
    let groups = opts.head.groups();
    let params = model.params();

    let mut carry = Carry {
        pending: vec![opts.warmup_gain; c],
        hidden: None,
        context: None,
    };
    let mut pred_mix = Vec::with_capacity(n);
    let mut grad_sum: Option<Vec<Option<Vec<f64>>>> = None;
    let mut objective = 0.0;
    let chunks = chunk_frames(n, f2, opts.bptt_frames, min_len);

    for &(k0, k1) in &chunks {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, &groups);
        let graph = model.graph(&bound);
        let mut pending = tape.constant_vec(c, 1, carry.pending.clone());
        let mut hidden = tape.constant(carry.hidden.take().unwrap_or_else(|| Matrix::zeros(c, D_MODEL)));
        let mut context: Option<Var> = carry.context.take().map(|m| tape.constant(m));
        let mut frame_mixes = Vec::with_capacity(k1 - k0);

        for k in k0..k1 {
            let (s, e) = (k * f2, ((k + 1) * f2).min(n));
            let mut x = Vec::with_capacity(c * (e - s));
            for st in stems {
                x.extend_from_slice(&st.as_ref()[s..e]);
            }
            let x = tape.constant_vec(c, e - s, x);
            frame_mixes.push(tape.matmul_at(pending, x));

            if opts.clock.is_refresh(k) || context.is_none() {
                let end = k * f2;
                let windows: Vec<Vec<f64>> = stems
                    .iter()
                    .map(|st| {
                        let mut w = vec![0.0; f1.saturating_sub(end)];
                        w.extend_from_slice(&st.as_ref()[end.saturating_sub(f1)..end]);
                        w
                    })
                    .collect();
                let feats = model.features_batch(&windows)?;
                context = Some(match opts.head {
                    Head::Alm => graph.f1_context(&mut tape, &feats),
                    Head::Dmc => graph.embed(&mut tape, &feats),
                });
            }
            let ctx = context.expect("context set above");
            pending = match opts.head {
                Head::Alm => {
                    let levels = stems
                        .iter()
                        .map(|st| {
                            let mut frame = st.as_ref()[s..e].to_vec();
                            frame.resize(f2, 0.0);
                            rms(&frame)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let r = tape.constant_vec(c, 1, levels);
                    let (g, h) = graph.predict(&mut tape, ctx, r, hidden);
                    hidden = h;
                    g
                }
                Head::Dmc => graph.predict_dmc(&mut tape, ctx),
            };
        }

        let mix = tape.concat_cols(&frame_mixes);
        pred_mix.extend_from_slice(tape.value(mix));
        let (s, e) = (k0 * f2, (k1 * f2).min(n));
        let loss = mrstft_loss_tape(&mut tape, mix, &target[s..e], &opts.spectral)?;
        objective += tape.scalar(loss);
        if with_grads {
            let g = tape.backward(loss)?;
            let sum = grad_sum.get_or_insert_with(|| vec![None; params.len()]);
            for (i, slot) in sum.iter_mut().enumerate() {
                if let Some(gi) = g.get(bound.var(i)) {
                    match slot {
                        Some(acc) => acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b),
                        None => *slot = Some(gi.to_vec()),
                    }
                }
            }
        }
        carry = Carry {
            pending: tape.value(pending).to_vec(),
            hidden: Some(tape.to_matrix(hidden)),
            context: context.map(|v| tape.to_matrix(v)),
        };
    }

    let count = chunks.len() as f64;
    let grads = grad_sum.map(|mut gs| {
        for g in gs.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v /= count);
        }
        gs
    });
    Ok(SnippetOutput {
        pred_mix,
        objective: objective / count,
        grads,
        chunks: chunks.len(),
    })
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Owns the model, optimizer and random stream of one training run.
pub struct Trainer {
    model: GainModel,
    optimizer: AdamW,
    config: TrainConfig,
    rng: ChaCha8Rng,
    epoch: usize,
    history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(model: GainModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(model.params(), config.adamw, config.schedule.lr(0));
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            model,
            optimizer,
            config,
            rng,
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn model(&self) -> &GainModel {
        &self.model
    }

    pub fn into_model(self) -> GainModel {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Index of the next epoch to run.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    fn render_options(&self, sample_rate: u32) -> Result<RenderOptions> {
        Ok(RenderOptions {
            clock: FrameClock::for_mode(self.config.mode, sample_rate)?,
            head: self.config.head,
            bptt_frames: self.config.bptt_frames,
            spectral: self.config.spectral.clone(),
            warmup_gain: self.config.warmup_gain,
        })
    }

    /// Random snippet of `song`, or all of it when shorter than a snippet.
    fn sample_snippet(&mut self, song: &Song) -> (Vec<AudioBuffer>, AudioBuffer) {
        let sr = song.reference.sample_rate();
        let want = (self.config.snippet_seconds * sr as f64).round() as usize;
        if song.len() <= want {
            return (song.stems.clone(), song.reference.clone());
        }
        let start = self.rng.gen_range(0..=song.len() - want);
        let cut = |b: &AudioBuffer| b.slice(start, start + want);
        (song.stems.iter().map(cut).collect(), cut(&song.reference))
    }

    /// One pass over `songs`: a snippet, augmentation, forward, backward and
    /// optimizer step per song. Returns the mean snippet loss.
    pub fn train_epoch(&mut self, songs: &[Song]) -> Result<f64> {
        if songs.is_empty() {
            return Err(Error::InvalidConfig("training set is empty".into()));
        }
        let epoch = self.epoch;
        let lr = self.config.schedule.lr(epoch);
        self.optimizer.set_lr(lr);
        let frozen = epoch < self.config.freeze_embedder_epochs;
        self.model.params_mut().set_group_frozen(ParamGroup::Embedder, frozen);

        let mut total = 0.0;
        for song in songs {
            let (stems, target) = self.sample_snippet(song);
            let stems = match &self.config.bleed {
                Some(b) => apply_bleed_with(&stems, b, &mut self.rng)?.0,
                None => stems,
            };
            let target = match self.config.target_peak_dbfs {
                Some(db) if target.peak() > 0.0 => normalize_peak(&target, db)?,
                _ => target,
            };
            let opts = self.render_options(target.sample_rate())?;
            let stem_samples: Vec<&[f64]> = stems.iter().map(AudioBuffer::samples).collect();
            let out = render_snippet(&self.model, &stem_samples, target.samples(), &opts, true)?;
            let loss = mrstft_loss(&out.pred_mix, target.samples(), &self.config.spectral)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
            }
            total += loss;
            let grads = out.grads.expect("gradients requested");
            self.optimizer.step(self.model.params_mut(), &grads)?;
        }
        let loss = total / songs.len() as f64;
        self.history.push(EpochRecord { epoch, loss, lr });
        self.epoch += 1;
        Ok(loss)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run<F>(&mut self, songs: &[Song], mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&Self, &EpochRecord) -> Result<()>,
    {
        while self.epoch < self.config.epochs {
            self.train_epoch(songs)?;
            let rec = *self.history.last().expect("epoch recorded");
            on_epoch(self, &rec)?;
        }
        Ok(())
    }
}

/// Writes `epoch,loss,lr` rows.
pub fn write_loss_csv<W: std::io::Write>(mut w: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "epoch,loss,lr")?;
    for r in history {
        writeln!(w, "{},{},{}", r.epoch, r.loss, r.lr)?;
    }
    Ok(())
}
