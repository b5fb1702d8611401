//! Multi-resolution STFT distance: spectral convergence plus mean absolute
//! log-magnitude difference, averaged over resolutions.

use crate::autodiff::{Tape, Var};
use crate::dsp::{stft_mag, SpectralConfig};
use crate::error::{Error, Result};

/// Added inside the log-magnitude term.
pub const LOG_EPS: f64 = 1e-7;
/// Added to the target norm so silent targets give a finite distance.
pub const NORM_EPS: f64 = 1e-7;

fn check_lengths(pred: usize, target: usize, cfg: &SpectralConfig) -> Result<()> {
    cfg.validate()?;
    if pred != target {
        return Err(Error::LengthMismatch {
            expected: target,
            actual: pred,
        });
    }
    if target < cfg.max_window() {
        return Err(Error::SignalTooShort {
            len: target,
            needed: cfg.max_window(),
        });
    }
    Ok(())
}

fn frobenius(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-resolution `(spectral convergence, log magnitude)` terms.
pub fn mrstft_terms(pred: &[f64], target: &[f64], cfg: &SpectralConfig) -> Result<Vec<(f64, f64)>> {
    check_lengths(pred.len(), target.len(), cfg)?;
    cfg.resolutions()
        .map(|(w, hop, fft)| {
            let p = stft_mag(pred, w, hop, fft)?;
            let y = stft_mag(target, w, hop, fft)?;
            let diff = frobenius(p.data().iter().zip(y.data()).map(|(a, b)| a - b));
            let sc = if diff == 0.0 {
                0.0
            } else {
                diff / (frobenius(y.data().iter().copied()) + NORM_EPS)
            };
            let lm = p
                .data()
                .iter()
                .zip(y.data())
                .map(|(a, b)| ((a + LOG_EPS).ln() - (b + LOG_EPS).ln()).abs())
                .sum::<f64>()
                / p.data().len() as f64;
            Ok((sc, lm))
        })
        .collect()
}

/// Distance of `pred` from `target`; zero for identical signals.
pub fn mrstft_loss(pred: &[f64], target: &[f64], cfg: &SpectralConfig) -> Result<f64> {
    let terms = mrstft_terms(pred, target, cfg)?;
    Ok(terms.iter().map(|(sc, lm)| sc + lm).sum::<f64>() / terms.len() as f64)
}

/// The same distance recorded on a tape; `pred` is a `1×N` node and the
/// target is a constant.
pub fn mrstft_loss_tape(tape: &mut Tape, pred: Var, target: &[f64], cfg: &SpectralConfig) -> Result<Var> {
    let (rows, n) = tape.shape(pred);
    if rows != 1 {
        return Err(Error::InvalidConfig("loss input must be a single row".into()));
    }
    check_lengths(n, target.len(), cfg)?;
    let mut total: Option<Var> = None;
    let count = cfg.window_sizes.len() as f64;
    for (w, hop, fft) in cfg.resolutions() {
        let y = stft_mag(target, w, hop, fft)?;
        let y_norm = frobenius(y.data().iter().copied());
        let log_y: Vec<f64> = y.data().iter().map(|v| (v + LOG_EPS).ln()).collect();
        let (fr, bins) = y.shape();
        let p = tape.stft_mag(pred, w, hop, fft)?;
        let yc = tape.constant(y);
        let d = tape.sub(p, yc);
        let sc = tape.norm(d);
        let sc = tape.scale(sc, 1.0 / (y_norm + NORM_EPS));
        let lp = tape.add_scalar(p, LOG_EPS);
        let lp = tape.ln(lp);
        let ly = tape.constant_vec(fr, bins, log_y);
        let ld = tape.sub(lp, ly);
        let ld = tape.abs(ld);
        let lm = tape.mean_all(ld);
        let term = tape.add(sc, lm);
        total = Some(match total {
            Some(t) => tape.add(t, term),
            None => term,
        });
    }
    let total = total.expect("validated config has a resolution");
    Ok(tape.scale(total, 1.0 / count))
}
