//! The gain predictor: per-channel embedder, RMS conditioning, three
//! channel-axis encoder blocks, a temporal GRU and a nonnegative gain head,
//! plus the mean-context baseline.

mod graph;
mod params;
pub mod weights;

use std::path::Path;
use std::sync::Arc;

pub use graph::ModelGraph;
pub(crate) use graph::MapCache;
pub(crate) use params::Layout;
pub use params::{
    Bound, ModelParams, ParamGroup, ParamTensor, CONV1_CH, CONV2_CH, D_MODEL, EMBED_FEATURES, FF_DIM, HEADS,
    MEL_BINS, MLP_HIDDEN,
};

use crate::autodiff::Tape;
use crate::dsp::{log_mel, FrameClock, LogMelConfig, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Added to the per-frame feature deviation before dividing.
const STD_FLOOR: f64 = 1e-3;

/// F2-rate inputs of one prediction step.
#[derive(Clone, Debug)]
pub struct ChannelBatch {
    /// Cached F1 context (encoder 1 output), `C × 128`.
    pub embeddings: Matrix,
    /// Linear RMS of the current F2 frame per channel.
    pub rms: Vec<f64>,
    /// GRU state, `C × 128`.
    pub hidden: Matrix,
}

/// Parameters plus the fixed geometry they are evaluated at.
pub struct GainModel {
    params: ModelParams,
    layout: Layout,
    maps: MapCache,
    mel: LogMelConfig,
}

impl std::fmt::Debug for GainModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GainModel")
            .field("tensors", &self.params.len())
            .field("frame_len", &self.mel.frame_len)
            .finish()
    }
}

impl Clone for GainModel {
    fn clone(&self) -> Self {
        Self::with_geometry(self.params.clone(), self.mel.sample_rate, self.mel.frame_len)
    }
}

impl GainModel {
    /// Model at the default 16 kHz / 975 ms geometry.
    pub fn new(params: ModelParams) -> Self {
        let clock = FrameClock::multi_rate(DEFAULT_SAMPLE_RATE).expect("default clock");
        Self::with_geometry(params, DEFAULT_SAMPLE_RATE, clock.f1_samples())
    }

    pub fn with_geometry(params: ModelParams, sample_rate: u32, f1_samples: usize) -> Self {
        let (layout, _) = params::build_layout();
        Self {
            params,
            layout,
            maps: MapCache::default(),
            mel: LogMelConfig::new(sample_rate, f1_samples, MEL_BINS),
        }
    }

    pub fn init(seed: u64) -> Self {
        Self::new(ModelParams::init(seed))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(weights::load(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        weights::save(&self.params, path)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn frame_len(&self) -> usize {
        self.mel.frame_len
    }

    pub fn sample_rate(&self) -> u32 {
        self.mel.sample_rate
    }

    pub(crate) fn graph<'a>(&'a self, bound: &'a Bound) -> ModelGraph<'a> {
        ModelGraph {
            layout: &self.layout,
            bound,
            maps: &self.maps,
        }
    }

    /// Runs `f` on a tape where every parameter is a constant.
    fn eval<T>(&self, f: impl FnOnce(&mut Tape, &ModelGraph<'_>) -> T) -> T {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, &[]);
        let g = self.graph(&bound);
        f(&mut tape, &g)
    }

    /// Log-mel features standardized over the whole frame. Standardizing
    /// removes absolute level, which is reinjected through RMS conditioning.
    pub fn features(&self, frame: &[f64]) -> Result<Matrix> {
        let mut m = log_mel(frame, &self.mel)?;
        let n = m.data().len() as f64;
        let mean = m.data().iter().sum::<f64>() / n;
        let var = m.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let denom = var.sqrt() + STD_FLOOR;
        for v in m.data_mut() {
            *v = (*v - mean) / denom;
        }
        Ok(m)
    }

    pub fn features_batch<S: AsRef<[f64]>>(&self, frames: &[S]) -> Result<Vec<Matrix>> {
        if frames.is_empty() {
            return Err(Error::NoChannels);
        }
        frames.iter().map(|f| self.features(f.as_ref())).collect()
    }

    /// `C × 128` embeddings of one F1 frame per channel.
    pub fn embed<S: AsRef<[f64]>>(&self, frames: &[S]) -> Result<Matrix> {
        let feats = self.features_batch(frames)?;
        Ok(self.eval(|t, g| {
            let e = g.embed(t, &feats);
            t.to_matrix(e)
        }))
    }

    /// Embeddings through encoder block 1: the cached F1-rate context.
    pub fn f1_context<S: AsRef<[f64]>>(&self, frames: &[S]) -> Result<Matrix> {
        let feats = self.features_batch(frames)?;
        Ok(self.eval(|t, g| {
            let c = g.f1_context(t, &feats);
            t.to_matrix(c)
        }))
    }

    /// One encoder block, `block_id` in 1..=3.
    pub fn transformer_block(&self, x: &Matrix, block_id: usize) -> Result<Matrix> {
        if !(1..=3).contains(&block_id) {
            return Err(Error::InvalidConfig(format!("encoder block {block_id} does not exist")));
        }
        check_width(x, "encoder input")?;
        Ok(self.eval(|t, g| {
            let v = t.constant(x.clone());
            let y = g.encoder(t, v, block_id - 1);
            t.to_matrix(y)
        }))
    }

    /// Attention sublayer of a block, after the output projection.
    pub fn attention(&self, x: &Matrix, block_id: usize) -> Result<Matrix> {
        if !(1..=3).contains(&block_id) {
            return Err(Error::InvalidConfig(format!("encoder block {block_id} does not exist")));
        }
        check_width(x, "attention input")?;
        Ok(self.eval(|t, g| {
            let v = t.constant(x.clone());
            let block = g.layout.blocks[block_id - 1];
            let heads = g.attention_heads(t, v, &block);
            let w = t.matmul(heads, g.bound.var(block.o.w));
            let y = t.add_row_bias(w, g.bound.var(block.o.b));
            t.to_matrix(y)
        }))
    }

    pub fn condition_rms(&self, embeddings: &Matrix, rms: &[f64]) -> Result<Matrix> {
        check_width(embeddings, "embeddings")?;
        check_channels(embeddings.rows(), rms.len())?;
        Ok(self.eval(|t, g| {
            let e = t.constant(embeddings.clone());
            let r = t.constant_vec(rms.len(), 1, rms.to_vec());
            let y = g.condition_rms(t, e, r);
            t.to_matrix(y)
        }))
    }

    pub fn gru_step(&self, x: &Matrix, h: &Matrix) -> Result<Matrix> {
        check_width(x, "gru input")?;
        check_width(h, "gru state")?;
        check_channels(x.rows(), h.rows())?;
        Ok(self.eval(|t, g| {
            let xv = t.constant(x.clone());
            let hv = t.constant(h.clone());
            let y = g.gru_step(t, xv, hv);
            t.to_matrix(y)
        }))
    }

    /// F2-rate path. Returns per-channel gains and the updated GRU state.
    pub fn predict_gains(&self, batch: &ChannelBatch) -> Result<(Vec<f64>, Matrix)> {
        check_width(&batch.embeddings, "embeddings")?;
        check_width(&batch.hidden, "hidden state")?;
        let c = batch.embeddings.rows();
        check_channels(c, batch.rms.len())?;
        check_channels(c, batch.hidden.rows())?;
        Ok(self.eval(|t, g| {
            let ctx = t.constant(batch.embeddings.clone());
            let rms = t.constant_vec(c, 1, batch.rms.clone());
            let h = t.constant(batch.hidden.clone());
            let (gains, h) = g.predict(t, ctx, rms, h);
            (t.value(gains).to_vec(), t.to_matrix(h))
        }))
    }

    /// Mean-context baseline on raw F1 embeddings. `_rms` is accepted for
    /// interface symmetry; the baseline has no level input.
    pub fn predict_gains_dmc(&self, embeddings: &Matrix) -> Result<Vec<f64>> {
        check_width(embeddings, "embeddings")?;
        if embeddings.rows() == 0 {
            return Err(Error::NoChannels);
        }
        Ok(self.eval(|t, g| {
            let e = t.constant(embeddings.clone());
            let y = g.predict_dmc(t, e);
            t.value(y).to_vec()
        }))
    }
}

fn check_width(m: &Matrix, name: &str) -> Result<()> {
    if m.cols() != D_MODEL {
        return Err(Error::ShapeMismatch {
            name: name.into(),
            expected: vec![m.rows(), D_MODEL],
            actual: vec![m.rows(), m.cols()],
        });
    }
    Ok(())
}

fn check_channels(expected: usize, actual: usize) -> Result<()> {
    if expected == 0 {
        return Err(Error::NoChannels);
    }
    if expected != actual {
        return Err(Error::ChannelMismatch { expected, actual });
    }
    Ok(())
}

/// What the scheduler needs from a gain policy.
pub trait GainPredictor {
    /// F1-rate analysis of one window per channel.
    fn f1_context(&self, windows: &[Vec<f64>]) -> Result<Matrix>;

    /// Gains for the next F2 frame. `state` is the policy's recurrent state,
    /// `None` at stream start.
    fn predict(&self, context: &Matrix, rms: &[f64], state: &mut Option<Matrix>) -> Result<Vec<f64>>;
}

/// The full predictor.
impl GainPredictor for GainModel {
    fn f1_context(&self, windows: &[Vec<f64>]) -> Result<Matrix> {
        GainModel::f1_context(self, windows)
    }

    fn predict(&self, context: &Matrix, rms: &[f64], state: &mut Option<Matrix>) -> Result<Vec<f64>> {
        let hidden = match state.take() {
            Some(h) => h,
            None => Matrix::zeros(context.rows(), D_MODEL),
        };
        let (gains, h) = self.predict_gains(&ChannelBatch {
            embeddings: context.clone(),
            rms: rms.to_vec(),
            hidden,
        })?;
        *state = Some(h);
        Ok(gains)
    }
}

impl<P: GainPredictor + ?Sized> GainPredictor for Arc<P> {
    fn f1_context(&self, windows: &[Vec<f64>]) -> Result<Matrix> {
        (**self).f1_context(windows)
    }

    fn predict(&self, context: &Matrix, rms: &[f64], state: &mut Option<Matrix>) -> Result<Vec<f64>> {
        (**self).predict(context, rms, state)
    }
}

impl<P: GainPredictor + ?Sized> GainPredictor for &P {
    fn f1_context(&self, windows: &[Vec<f64>]) -> Result<Matrix> {
        (**self).f1_context(windows)
    }

    fn predict(&self, context: &Matrix, rms: &[f64], state: &mut Option<Matrix>) -> Result<Vec<f64>> {
        (**self).predict(context, rms, state)
    }
}

/// Mean-context baseline; stateless and refreshed only at F1 rate.
#[derive(Clone, Debug)]
pub struct DmcBaseline(pub Arc<GainModel>);

impl GainPredictor for DmcBaseline {
    fn f1_context(&self, windows: &[Vec<f64>]) -> Result<Matrix> {
        self.0.embed(windows)
    }

    fn predict(&self, context: &Matrix, _rms: &[f64], _state: &mut Option<Matrix>) -> Result<Vec<f64>> {
        self.0.predict_gains_dmc(context)
    }
}

/// Fixed gain on every channel.
#[derive(Clone, Copy, Debug)]
pub struct ConstantGain(pub f64);

impl GainPredictor for ConstantGain {
    fn f1_context(&self, windows: &[Vec<f64>]) -> Result<Matrix> {
        Ok(Matrix::zeros(windows.len(), 0))
    }

    fn predict(&self, context: &Matrix, _rms: &[f64], _state: &mut Option<Matrix>) -> Result<Vec<f64>> {
        Ok(vec![self.0; context.rows()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn noise(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identical_channels_embed_identically() {
        let m = GainModel::init(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = noise(&mut rng, m.frame_len(), 0.3);
        let e = m.embed(&[x.clone(), x]).unwrap();
        assert_eq!(e.shape(), (2, D_MODEL));
        assert_eq!(e.row(0), e.row(1));
    }

    #[test]
    fn silence_embedding_is_fixed() {
        let m = GainModel::init(1);
        let z = vec![0.0; m.frame_len()];
        let a = m.embed(&[z.clone()]).unwrap();
        let b = m.embed(&[z]).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite());
    }

    #[test]
    fn embed_shape_for_every_channel_count() {
        let m = GainModel::init(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in 1..=8 {
            let frames: Vec<_> = (0..c).map(|_| noise(&mut rng, m.frame_len(), 0.5)).collect();
            assert_eq!(m.embed(&frames).unwrap().shape(), (c, D_MODEL));
        }
    }

    #[test]
    fn embed_rejects_wrong_length() {
        let m = GainModel::init(0);
        assert!(m.embed(&[vec![0.0; 100]]).is_err());
    }

    #[test]
    fn embedding_ignores_level() {
        let m = GainModel::init(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = noise(&mut rng, m.frame_len(), 0.1);
        let y: Vec<f64> = x.iter().map(|v| v * 4.0).collect();
        let e = m.embed(&[x, y]).unwrap();
        let diff: f64 = e.row(0).iter().zip(e.row(1)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-2, "{diff}");
    }

    #[test]
    fn single_channel_attention_is_value_projection() {
        let m = GainModel::init(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 1, D_MODEL);
        let got = m.attention(&x, 1).unwrap();
        // softmax over one key is 1, so attention is out(v(x))
        let p = m.params();
        let lin = |x: &[f64], w: &str, b: &str| -> Vec<f64> {
            let wt = p.get(w).unwrap();
            let bt = p.get(b).unwrap();
            let (r, c) = wt.shape();
            (0..c)
                .map(|j| bt.data()[j] + (0..r).map(|i| x[i] * wt.data()[i * c + j]).sum::<f64>())
                .collect()
        };
        let v = lin(x.row(0), "encoder1.attn.v.weight", "encoder1.attn.v.bias");
        let want = lin(&v, "encoder1.attn.out.weight", "encoder1.attn.out.bias");
        for (a, b) in got.row(0).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_rows_stay_equal() {
        let m = GainModel::init(5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let row = random_matrix(&mut rng, 1, D_MODEL);
        let x = Matrix::from_rows(&vec![row.row(0).to_vec(); 4]).unwrap();
        let y = m.transformer_block(&x, 2).unwrap();
        for r in 1..4 {
            assert_eq!(y.row(0), y.row(r));
        }
    }

    #[test]
    fn rms_conditioning() {
        let mut params = ModelParams::init(6);
        params.get_mut("rms.proj.bias").unwrap().data_mut().fill(0.0);
        let m = GainModel::new(params);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = random_matrix(&mut rng, 1, D_MODEL);
        let y = m.condition_rms(&e, &[0.0]).unwrap();
        for (a, b) in e.row(0).iter().zip(y.row(0)) {
            if *a >= 0.0 {
                assert_eq!(a, b);
            } else {
                assert!((b - 0.25 * a).abs() < 1e-15);
            }
        }
        let two = Matrix::from_rows(&[e.row(0).to_vec(), e.row(0).to_vec()]).unwrap();
        let y = m.condition_rms(&two, &[0.1, 0.8]).unwrap();
        assert!(y.row(0) != y.row(1));
        assert!(m.condition_rms(&two, &[0.1]).is_err());
    }

    #[test]
    fn prelu_negative_one() {
        let mut params = ModelParams::init(0);
        params.get_mut("rms.proj.weight").unwrap().data_mut().fill(0.0);
        params.get_mut("rms.act.slope").unwrap().data_mut()[0] = 0.3;
        let m = GainModel::new(params);
        let e = Matrix::filled(1, D_MODEL, -1.0);
        let y = m.condition_rms(&e, &[0.5]).unwrap();
        assert!(y.data().iter().all(|v| (v + 0.3).abs() < 1e-15));
    }

    fn zero_gru() -> GainModel {
        let mut params = ModelParams::init(0);
        for name in ["gru.weight_ih", "gru.bias_ih", "gru.weight_hh", "gru.bias_hh"] {
            params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        GainModel::new(params)
    }

    #[test]
    fn gru_closed_forms() {
        let m = zero_gru();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 3, D_MODEL);
        let h = random_matrix(&mut rng, 3, D_MODEL);
        let y = m.gru_step(&x, &h).unwrap();
        for (a, b) in y.data().iter().zip(h.data()) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
        let m = GainModel::init(8);
        let mut zeroed = m.params().clone();
        for name in ["gru.bias_ih", "gru.bias_hh"] {
            zeroed.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let m = GainModel::new(zeroed);
        let z = Matrix::zeros(2, D_MODEL);
        assert!(m.gru_step(&z, &z).unwrap().data().iter().all(|v| *v == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gru_state_is_bounded(seed in 0u64..1000, scale in 0.1f64..5.0) {
            let m = GainModel::init(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let x = random_matrix(&mut rng, 2, D_MODEL);
            let mut h = random_matrix(&mut rng, 2, D_MODEL);
            h.data_mut().iter_mut().for_each(|v| *v *= scale);
            let bound = h.data().iter().fold(1.0f64, |a, v| a.max(v.abs()));
            let y = m.gru_step(&x, &h).unwrap();
            prop_assert!(y.data().iter().all(|v| v.abs() <= bound));
        }

        #[test]
        fn predict_gains_commutes_with_permutation(seed in 0u64..1000, c in 2usize..=8) {
            let m = GainModel::init(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31));
            let batch = ChannelBatch {
                embeddings: random_matrix(&mut rng, c, D_MODEL),
                rms: (0..c).map(|_| rng.gen_range(0.0..1.0)).collect(),
                hidden: random_matrix(&mut rng, c, D_MODEL),
            };
            let mut perm: Vec<usize> = (0..c).collect();
            perm.rotate_left(1);
            perm.swap(0, c - 1);
            let permuted = ChannelBatch {
                embeddings: batch.embeddings.permute_rows(&perm),
                rms: perm.iter().map(|&i| batch.rms[i]).collect(),
                hidden: batch.hidden.permute_rows(&perm),
            };
            let (g, h) = m.predict_gains(&batch).unwrap();
            let (gp, hp) = m.predict_gains(&permuted).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                prop_assert!((gp[i] - g[p]).abs() <= 1e-6);
            }
            prop_assert!(hp.max_abs_diff(&h.permute_rows(&perm)) <= 1e-6);
            prop_assert!(g.iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn dmc_commutes_with_permutation(seed in 0u64..1000, c in 1usize..=8) {
            let m = GainModel::init(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 17);
            let e = random_matrix(&mut rng, c, D_MODEL);
            let perm: Vec<usize> = (0..c).rev().collect();
            let g = m.predict_gains_dmc(&e).unwrap();
            let gp = m.predict_gains_dmc(&e.permute_rows(&perm)).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                prop_assert!((gp[i] - g[p]).abs() <= 1e-6);
            }
            prop_assert!(g.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn gains_nonnegative_when_head_pushed_negative() {
        let mut params = ModelParams::init(9);
        params.get_mut("gain.out.bias").unwrap().data_mut()[0] = -50.0;
        let m = GainModel::new(params);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = ChannelBatch {
            embeddings: random_matrix(&mut rng, 3, D_MODEL),
            rms: vec![0.1, 0.2, 0.3],
            hidden: Matrix::zeros(3, D_MODEL),
        };
        let (g, _) = m.predict_gains(&batch).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn duplicate_channels_get_identical_gains() {
        let m = GainModel::init(10);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let row = random_matrix(&mut rng, 1, D_MODEL);
        let other = random_matrix(&mut rng, 1, D_MODEL);
        let e = Matrix::from_rows(&[row.row(0).to_vec(), row.row(0).to_vec(), other.row(0).to_vec()]).unwrap();
        let batch = ChannelBatch {
            embeddings: e,
            rms: vec![0.4, 0.4, 0.1],
            hidden: Matrix::zeros(3, D_MODEL),
        };
        let (g, _) = m.predict_gains(&batch).unwrap();
        assert_eq!(g[0], g[1]);
    }

    #[test]
    fn hidden_channel_mismatch_is_error() {
        let m = GainModel::init(0);
        let batch = ChannelBatch {
            embeddings: Matrix::zeros(2, D_MODEL),
            rms: vec![0.0; 2],
            hidden: Matrix::zeros(3, D_MODEL),
        };
        assert!(matches!(m.predict_gains(&batch), Err(Error::ChannelMismatch { .. })));
    }

    #[test]
    fn dmc_single_channel_uses_self_as_mean() {
        let m = GainModel::init(11);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e = random_matrix(&mut rng, 1, D_MODEL);
        let g = m.predict_gains_dmc(&e).unwrap();
        let dup = Matrix::from_rows(&[e.row(0).to_vec(), e.row(0).to_vec()]).unwrap();
        let g2 = m.predict_gains_dmc(&dup).unwrap();
        assert!((g[0] - g2[0]).abs() < 1e-12);
    }

    #[test]
    fn untrained_head_is_near_unity() {
        let m = GainModel::init(12);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let frames: Vec<_> = (0..3).map(|_| noise(&mut rng, m.frame_len(), 0.2)).collect();
        let ctx = m.f1_context(&frames).unwrap();
        let mut state = None;
        let g = GainPredictor::predict(&m, &ctx, &[0.1, 0.1, 0.1], &mut state).unwrap();
        assert!(g.iter().all(|v| (v - 1.0).abs() < 0.5), "{g:?}");
        assert_eq!(state.unwrap().shape(), (3, D_MODEL));
    }
}
