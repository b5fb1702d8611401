//! Finite-difference probes shared by the gradient checks.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use livemix::dsp::{FrameClock, SpectralConfig};
use livemix::model::{GainModel, ParamGroup};
use livemix::training::{render_snippet, Head, RenderOptions};

pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-7;

pub fn agrees(analytic: f64, fd: f64) -> bool {
    let abs = (analytic - fd).abs();
    abs <= ABS_TOL || abs / analytic.abs().max(fd.abs()) <= REL_TOL
}

pub struct Probe {
    pub tensor: String,
    pub analytic: f64,
    pub fd: f64,
    /// Central difference at the fine step, filled in for disagreeing probes.
    pub fd_fine: Option<f64>,
}

impl Probe {
    pub fn agrees(&self) -> bool {
        agrees(self.analytic, self.fd)
    }

    pub fn rel_error(&self) -> f64 {
        (self.analytic - self.fd).abs() / self.analytic.abs().max(self.fd.abs()).max(f64::MIN_POSITIVE)
    }
}

/// Seeded weights with jittered biases. Zero biases map the all-padding
/// first window to a zero embedding, and layer norm at zero variance is a
/// degenerate point for any finite step.
pub fn generic_model(seed: u64) -> GainModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = GainModel::init(seed);
    for t in model.params_mut().tensors_mut() {
        if t.name().ends_with("bias") {
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        }
    }
    model
}

/// Two channels, three 50 ms frames, one F1 refresh per frame.
fn snippet() -> (Vec<Vec<f64>>, Vec<f64>, FrameClock, SpectralConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let clock = FrameClock::new(975.0, 50.0, 1, 16000).unwrap();
    let n = 3 * clock.f2_samples();
    let stems: Vec<Vec<f64>> = (0..2)
        .map(|c| {
            let f = 200.0 + 150.0 * c as f64;
            (0..n)
                .map(|i| 0.3 * (2.0 * PI * f * i as f64 / 16000.0).sin() + rng.gen_range(-0.1..0.1))
                .collect()
        })
        .collect();
    // a quiet target keeps every log-magnitude difference on one side of its kink
    let target = (0..n).map(|i| 0.01 * (stems[0][i] + stems[1][i])).collect();
    // the 3528-sample window exceeds the 2400-sample snippet
    let spectral = SpectralConfig {
        window_sizes: vec![440, 884],
        hop_fraction: 0.25,
        fft_sizes: vec![512, 1024],
    };
    (stems, target, clock, spectral)
}

/// Probes every tensor of every trainable group: the two largest analytic
/// entries, two random entries and one random unit direction.
pub fn probe_all(model: &mut GainModel, h: f64, fine_h: Option<f64>, seed: u64) -> Result<Vec<Probe>, String> {
    let (stems, target, clock, spectral) = snippet();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::new();
    for head in [Head::Alm, Head::Dmc] {
        let opts = RenderOptions {
            clock,
            head,
            bptt_frames: 50,
            spectral: spectral.clone(),
            warmup_gain: 1.0,
        };
        let groups: &[ParamGroup] = match head {
            Head::Alm => &[ParamGroup::Embedder, ParamGroup::Alm],
            Head::Dmc => &[ParamGroup::Dmc],
        };
        let out = render_snippet(model, &stems, &target, &opts, true).map_err(|e| e.to_string())?;
        let grads = out.grads.ok_or("no gradients")?;
        for i in 0..model.params().len() {
            let t = model.params().tensor(i);
            if !groups.contains(&t.group()) {
                continue;
            }
            let name = t.name().to_string();
            let len = t.len();
            let g = grads[i].clone().ok_or_else(|| format!("no gradient for {name}"))?;
            let central = |model: &mut GainModel, dir: &[(usize, f64)], h: f64| -> Result<f64, String> {
                let mut eval = |scale: f64| {
                    let data = model.params_mut().tensors_mut()[i].data_mut();
                    let saved: Vec<f64> = dir.iter().map(|&(j, _)| data[j]).collect();
                    for &(j, d) in dir {
                        data[j] += scale * d;
                    }
                    let r = render_snippet(model, &stems, &target, &opts, false).map(|o| o.objective);
                    let data = model.params_mut().tensors_mut()[i].data_mut();
                    for (&(j, _), s) in dir.iter().zip(saved) {
                        data[j] = s;
                    }
                    r.map_err(|e| e.to_string())
                };
                Ok((eval(h)? - eval(-h)?) / (2.0 * h))
            };
            let mut order: Vec<usize> = (0..len).collect();
            order.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
            let mut dirs: Vec<Vec<(usize, f64)>> = order.iter().take(2).map(|&j| vec![(j, 1.0)]).collect();
            for _ in 0..2 {
                dirs.push(vec![(rng.gen_range(0..len), 1.0)]);
            }
            let d: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            dirs.push(d.iter().enumerate().map(|(j, v)| (j, v / norm)).collect());
            for dir in dirs {
                let analytic: f64 = dir.iter().map(|&(j, d)| g[j] * d).sum();
                let fd = central(model, &dir, h)?;
                let fd_fine = match fine_h {
                    Some(fh) if !agrees(analytic, fd) => Some(central(model, &dir, fh)?),
                    _ => None,
                };
                probes.push(Probe {
                    tensor: name.clone(),
                    analytic,
                    fd,
                    fd_fine,
                });
            }
        }
    }
    Ok(probes)
}

/// Sets every PReLU slope to one, which makes those activations linear.
pub fn linearize_prelu(model: &mut GainModel) {
    for t in model.params_mut().tensors_mut() {
        if t.name().ends_with("slope") {
            t.data_mut().iter_mut().for_each(|v| *v = 1.0);
        }
    }
}
