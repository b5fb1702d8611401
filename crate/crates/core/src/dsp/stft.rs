use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Forward transform of any length, planned once per thread.
pub(crate) fn plan_forward(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

pub(crate) fn plan_inverse(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Resolutions of the multi-resolution spectral distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub window_sizes: Vec<usize>,
    pub hop_fraction: f64,
    pub fft_sizes: Vec<usize>,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            window_sizes: vec![440, 884, 3528],
            hop_fraction: 0.25,
            fft_sizes: vec![512, 1024, 4196],
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_sizes.is_empty() || self.window_sizes.len() != self.fft_sizes.len() {
            return Err(Error::InvalidConfig(
                "window_sizes and fft_sizes must be non-empty and of equal length".into(),
            ));
        }
        if !(self.hop_fraction > 0.0 && self.hop_fraction <= 1.0) {
            return Err(Error::InvalidConfig("hop_fraction must be in (0, 1]".into()));
        }
        for (&w, &f) in self.window_sizes.iter().zip(&self.fft_sizes) {
            if w == 0 || f < w {
                return Err(Error::InvalidConfig(format!(
                    "fft size {f} must be >= window size {w} > 0"
                )));
            }
        }
        Ok(())
    }

    /// `(window, hop, fft)` per resolution.
    pub fn resolutions(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.window_sizes
            .iter()
            .zip(&self.fft_sizes)
            .map(move |(&w, &f)| (w, self.hop_for(w), f))
    }

    pub fn hop_for(&self, window: usize) -> usize {
        ((window as f64 * self.hop_fraction).round() as usize).max(1)
    }

    pub fn max_window(&self) -> usize {
        self.window_sizes.iter().copied().max().unwrap_or(0)
    }
}

pub(crate) fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    (len - window) / hop + 1
}

pub(crate) fn check_stft_args(len: usize, window: usize, hop: usize, fft: usize) -> Result<()> {
    if fft < window || hop == 0 || window == 0 {
        return Err(Error::InvalidConfig(format!(
            "stft needs fft >= window > 0 and hop >= 1 (window {window}, hop {hop}, fft {fft})"
        )));
    }
    if len < window {
        return Err(Error::SignalTooShort { len, needed: window });
    }
    Ok(())
}

/// Complex one-sided spectra of Hann-windowed frames, `frames × (fft/2+1)`.
pub(crate) fn stft_complex(
    signal: &[f64],
    window: usize,
    hop: usize,
    fft: usize,
) -> Result<(usize, usize, Vec<Complex<f64>>)> {
    check_stft_args(signal.len(), window, hop, fft)?;
    let frames = frame_count(signal.len(), window, hop);
    let bins = fft / 2 + 1;
    let win = hann_window(window);
    let plan = plan_forward(fft);
    let mut scratch = vec![Complex::default(); plan.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); fft];
    let mut out = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let seg = &signal[t * hop..t * hop + window];
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < window {
                Complex::new(seg[i] * win[i], 0.0)
            } else {
                Complex::default()
            };
        }
        plan.process_with_scratch(&mut buf, &mut scratch);
        out.extend_from_slice(&buf[..bins]);
    }
    Ok((frames, bins, out))
}

/// Magnitude spectrogram (`frames × (fft/2+1)`) of Hann-windowed frames,
/// zero-padded to `fft` points. Frames start at multiples of `hop`; no
/// centering.
pub fn stft_mag(signal: &[f64], window: usize, hop: usize, fft: usize) -> Result<Matrix> {
    let (frames, bins, spec) = stft_complex(signal, window, hop, fft)?;
    Matrix::from_vec(frames, bins, spec.iter().map(|c| c.norm()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Direct DFT magnitude of one Hann-windowed frame.
    fn dft_frame_mag(frame: &[f64], fft: usize) -> Vec<f64> {
        let w = hann_window(frame.len());
        (0..=fft / 2)
            .map(|k| {
                let mut re = 0.0;
                let mut im = 0.0;
                for (n, (&x, &wn)) in frame.iter().zip(&w).enumerate() {
                    let ang = -2.0 * PI * (k * n) as f64 / fft as f64;
                    re += x * wn * ang.cos();
                    im += x * wn * ang.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let s = stft_mag(&vec![0.0; 2000], 440, 110, 512).unwrap();
        assert_eq!(s.shape(), (15, 257));
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_magnitude_equals_window_value() {
        let window = 440;
        for pos in [window / 2, 37, 300] {
            let mut x = vec![0.0; window];
            x[pos] = 1.0;
            let s = stft_mag(&x, window, 110, 512).unwrap();
            let oracle = dft_frame_mag(&x, 512);
            let w = hann_window(window)[pos];
            for k in 0..s.cols() {
                assert!((oracle[k] - w).abs() < 1e-12);
                assert!((s.get(0, k) - w).abs() < 1e-9, "bin {k}");
            }
        }
        // Hann peak is exactly one
        let mut x = vec![0.0; 440];
        x[220] = 1.0;
        let s = stft_mag(&x, 440, 110, 512).unwrap();
        assert!(s.row(0).iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn bin_centred_sine_matches_hann_kernel() {
        let n = 256;
        let k0 = 17;
        let amp = 0.8;
        let x: Vec<f64> = (0..n)
            .map(|i| amp * (2.0 * PI * (k0 * i) as f64 / n as f64).sin())
            .collect();
        let s = stft_mag(&x, n, 64, n).unwrap();
        for k in 0..s.cols() {
            let expected = if k == k0 {
                amp * n as f64 / 4.0
            } else if k + 1 == k0 || k == k0 + 1 {
                amp * n as f64 / 8.0
            } else {
                0.0
            };
            assert!((s.get(0, k) - expected).abs() < 1e-6, "bin {k}");
        }
    }

    #[test]
    fn non_power_of_two_fft_matches_direct_dft() {
        let x: Vec<f64> = (0..3528).map(|i| ((i * 7919) % 113) as f64 / 113.0 - 0.5).collect();
        let s = stft_mag(&x, 3528, 882, 4196).unwrap();
        assert_eq!(s.cols(), 2099);
        let oracle = dft_frame_mag(&x, 4196);
        for k in (0..s.cols()).step_by(97) {
            assert!((s.get(0, k) - oracle[k]).abs() < 1e-8 * oracle[k].max(1.0));
        }
    }

    #[test]
    fn short_signal_rejected() {
        assert!(matches!(
            stft_mag(&[0.0; 100], 440, 110, 512),
            Err(Error::SignalTooShort { .. })
        ));
        assert!(stft_mag(&[0.0; 600], 440, 110, 256).is_err());
    }

    #[test]
    fn magnitude_scales_with_gain() {
        let x: Vec<f64> = (0..1200).map(|i| ((i * 31) % 17) as f64 / 17.0 - 0.4).collect();
        let c = -2.5;
        let xc: Vec<f64> = x.iter().map(|v| v * c).collect();
        let a = stft_mag(&x, 440, 110, 512).unwrap();
        let b = stft_mag(&xc, 440, 110, 512).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((v - c.abs() * u).abs() <= 1e-6 * (c.abs() * u).max(1e-12));
        }
    }

    #[test]
    fn default_config_is_valid() {
        let c = SpectralConfig::default();
        c.validate().unwrap();
        let r: Vec<_> = c.resolutions().collect();
        assert_eq!(r, vec![(440, 110, 512), (884, 221, 1024), (3528, 882, 4196)]);
    }
}
