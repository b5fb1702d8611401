use rustfft::num_complex::Complex;

use super::stft::{hann_window, plan_forward};
use super::ms_to_samples;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Additive floor inside the log of mel energies.
pub const LOG_FLOOR: f64 = 1e-6;

/// Log-mel front end of the embedder: 25 ms Hann windows, 10 ms hop,
/// HTK-style triangular filters between 125 Hz and 7.5 kHz.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub window: usize,
    pub hop: usize,
    pub fft: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl LogMelConfig {
    pub fn new(sample_rate: u32, frame_len: usize, mel_bins: usize) -> Self {
        let window = ms_to_samples(25.0, sample_rate);
        Self {
            sample_rate,
            frame_len,
            window,
            hop: ms_to_samples(10.0, sample_rate),
            fft: window.next_power_of_two(),
            mel_bins,
            fmin: 125.0,
            fmax: 7500.0f64.min(sample_rate as f64 / 2.0),
        }
    }

    pub fn time_steps(&self) -> usize {
        if self.frame_len < self.window {
            0
        } else {
            (self.frame_len - self.window) / self.hop + 1
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

/// `(fft/2+1) × mel_bins` weight matrix. The DC bin carries no weight.
pub fn mel_filterbank(cfg: &LogMelConfig) -> Matrix {
    let bins = cfg.fft / 2 + 1;
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let step = (hi - lo) / (cfg.mel_bins + 1) as f64;
    let mut m = Matrix::zeros(bins, cfg.mel_bins);
    for k in 1..bins {
        let mel = hz_to_mel(k as f64 * cfg.sample_rate as f64 / cfg.fft as f64);
        for b in 0..cfg.mel_bins {
            let left = lo + b as f64 * step;
            let centre = left + step;
            let right = centre + step;
            let w = ((mel - left) / step).min((right - mel) / step);
            if w > 0.0 {
                m.set(k, b, w);
            }
        }
    }
    m
}

/// Log-mel energies (`time_steps × mel_bins`) of one F1 frame.
pub fn log_mel(frame: &[f64], cfg: &LogMelConfig) -> Result<Matrix> {
    if frame.len() != cfg.frame_len {
        return Err(Error::LengthMismatch {
            expected: cfg.frame_len,
            actual: frame.len(),
        });
    }
    let steps = cfg.time_steps();
    if steps == 0 {
        return Err(Error::SignalTooShort {
            len: frame.len(),
            needed: cfg.window,
        });
    }
    let bins = cfg.fft / 2 + 1;
    let fb = mel_filterbank(cfg);
    let win = hann_window(cfg.window);
    let plan = plan_forward(cfg.fft);
    let mut scratch = vec![Complex::default(); plan.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); cfg.fft];
    let mut power = vec![0.0; bins];
    let mut out = Matrix::zeros(steps, cfg.mel_bins);
    for t in 0..steps {
        let seg = &frame[t * cfg.hop..t * cfg.hop + cfg.window];
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < cfg.window {
                Complex::new(seg[i] * win[i], 0.0)
            } else {
                Complex::default()
            };
        }
        plan.process_with_scratch(&mut buf, &mut scratch);
        for (p, c) in power.iter_mut().zip(&buf[..bins]) {
            *p = c.norm_sqr();
        }
        let row = out.row_mut(t);
        for (k, &p) in power.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (r, &w) in row.iter_mut().zip(fb.row(k)) {
                *r += p * w;
            }
        }
        for r in row.iter_mut() {
            *r = (*r + LOG_FLOOR).ln();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> LogMelConfig {
        LogMelConfig::new(16_000, 15_600, 64)
    }

    #[test]
    fn framing_arithmetic() {
        let c = cfg();
        assert_eq!((c.window, c.hop, c.fft), (400, 160, 512));
        assert_eq!(c.time_steps(), (15_600 - 400) / 160 + 1);
        assert_eq!(c.time_steps(), 96);
        let m = log_mel(&vec![0.0; 15_600], &c).unwrap();
        assert_eq!(m.shape(), (96, 64));
    }

    #[test]
    fn silence_hits_floor() {
        let m = log_mel(&vec![0.0; 15_600], &cfg()).unwrap();
        assert!(m.data().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(log_mel(&vec![0.0; 15_599], &cfg()).is_err());
    }

    #[test]
    fn doubling_noise_raises_entries_by_at_most_log4() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..15_600).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let a = log_mel(&x, &cfg()).unwrap();
        let b = log_mel(&x2, &cfg()).unwrap();
        let l4 = 4f64.ln();
        for t in 0..a.rows() {
            for k in 0..a.cols() {
                let d = b.get(t, k) - a.get(t, k);
                assert!(d >= 0.0 && d <= l4 + 1e-12);
            }
            // ordering of bins within a time step is preserved
            let mut ia: Vec<usize> = (0..a.cols()).collect();
            let mut ib = ia.clone();
            ia.sort_by(|&i, &j| a.get(t, i).total_cmp(&a.get(t, j)));
            ib.sort_by(|&i, &j| b.get(t, i).total_cmp(&b.get(t, j)));
            assert_eq!(ia, ib);
        }
    }

    #[test]
    fn filterbank_covers_every_band() {
        let fb = mel_filterbank(&cfg());
        for b in 0..fb.cols() {
            let total: f64 = (0..fb.rows()).map(|k| fb.get(k, b)).sum();
            assert!(total > 0.0, "band {b} empty");
        }
        assert!(fb.row(0).iter().all(|&w| w == 0.0));
    }
}
