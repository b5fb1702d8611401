//! Objective comparison of gain policies against a session's reference mix.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dsp::{FrameClock, RateMode, SpectralConfig};
use crate::error::{Error, Result};
use crate::model::{ConstantGain, DmcBaseline, GainModel, GainPredictor};
use crate::scheduler::{run_offline, GainTimeline, StreamConfig};
use crate::session::MultitrackSession;
use crate::training::mrstft_loss;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "alm-mr")]
    AlmMr,
    #[serde(rename = "alm-sr")]
    AlmSr,
    #[serde(rename = "dmc")]
    Dmc,
    /// Unity gain on every channel.
    #[serde(rename = "raw")]
    Raw,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::AlmMr, Policy::AlmSr, Policy::Dmc, Policy::Raw];

    pub fn name(self) -> &'static str {
        match self {
            Policy::AlmMr => "alm-mr",
            Policy::AlmSr => "alm-sr",
            Policy::Dmc => "dmc",
            Policy::Raw => "raw",
        }
    }

    pub fn needs_weights(self) -> bool {
        self != Policy::Raw
    }

    /// The framing each policy runs under. The baseline uses the
    /// multi-rate clock so its gains change only at F1 refreshes.
    pub fn mode(self) -> RateMode {
        match self {
            Policy::AlmSr => RateMode::Sr,
            _ => RateMode::Mr,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown policy {s:?}")))
    }
}

/// Parses a comma-separated policy list such as `alm-mr,raw`.
pub fn parse_policies(list: &str) -> Result<Vec<Policy>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub policy: Policy,
    pub mode: RateMode,
    pub stft_distance: f64,
    /// Samples with magnitude above 1.0.
    pub clipped_samples: usize,
    pub mean_gains: Vec<f64>,
    /// Largest gain change between consecutive frames on any channel.
    pub max_gain_step: f64,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub channels: Vec<String>,
    pub sample_rate: u32,
    pub samples: usize,
    pub policies: Vec<PolicyReport>,
}

impl EvalReport {
    pub fn get(&self, policy: Policy) -> Option<&PolicyReport> {
        self.policies.iter().find(|p| p.policy == policy)
    }

    /// One row per policy and channel.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "policy,mode,channel,mean_gain,stft_distance,clipped_samples,max_gain_step,frames")?;
        for p in &self.policies {
            for (name, g) in self.channels.iter().zip(&p.mean_gains) {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    p.policy, p.mode, name, g, p.stft_distance, p.clipped_samples, p.max_gain_step, p.frames
                )?;
            }
        }
        Ok(())
    }
}

fn score(
    session: &MultitrackSession,
    policy: Policy,
    predictor: &dyn GainPredictor,
    spectral: &SpectralConfig,
    stream: &StreamConfig,
) -> Result<(PolicyReport, GainTimeline)> {
    let reference = session.reference_mix.as_ref().ok_or(Error::MissingReference)?;
    let clock = FrameClock::for_mode(policy.mode(), session.sample_rate)?;
    let (mix, timeline) = run_offline(&session.buffers(), &clock, predictor, stream)?;
    let report = PolicyReport {
        policy,
        mode: policy.mode(),
        stft_distance: mrstft_loss(mix.samples(), reference.samples(), spectral)?,
        clipped_samples: mix.samples().iter().filter(|s| s.abs() > 1.0).count(),
        mean_gains: (0..timeline.channels()).map(|c| timeline.mean_gain(c)).collect(),
        max_gain_step: timeline.max_step(),
        frames: timeline.frames(),
    };
    Ok((report, timeline))
}

/// Runs every policy over the session and scores the rendered mixes.
/// `model` may be `None` only when every policy is `raw`.
pub fn evaluate(
    session: &MultitrackSession,
    model: Option<Arc<GainModel>>,
    policies: &[Policy],
    spectral: &SpectralConfig,
) -> Result<EvalReport> {
    evaluate_with_timelines(session, model, policies, spectral).map(|(r, _)| r)
}

/// [`evaluate`] that also returns each policy's gain timeline.
pub fn evaluate_with_timelines(
    session: &MultitrackSession,
    model: Option<Arc<GainModel>>,
    policies: &[Policy],
    spectral: &SpectralConfig,
) -> Result<(EvalReport, Vec<GainTimeline>)> {
    if session.reference_mix.is_none() {
        return Err(Error::MissingReference);
    }
    let stream = StreamConfig::default();
    let mut reports = Vec::with_capacity(policies.len());
    let mut timelines = Vec::with_capacity(policies.len());
    for &policy in policies {
        let weights = || {
            model
                .clone()
                .ok_or_else(|| Error::InvalidConfig(format!("policy {policy} needs model weights")))
        };
        let (r, t) = match policy {
            Policy::AlmMr | Policy::AlmSr => score(session, policy, &weights()?, spectral, &stream)?,
            Policy::Dmc => score(session, policy, &DmcBaseline(weights()?), spectral, &stream)?,
            Policy::Raw => score(session, policy, &ConstantGain(1.0), spectral, &stream)?,
        };
        reports.push(r);
        timelines.push(t);
    }
    Ok((
        EvalReport {
            channels: session.channels.iter().map(|c| c.name.clone()).collect(),
            sample_rate: session.sample_rate,
            samples: session.len(),
            policies: reports,
        },
        timelines,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_synth, SynthSpec};

    fn unity_session(secs: f64) -> MultitrackSession {
        let mut spec = SynthSpec::attenuate_second(secs);
        spec.channels[1].target_gain = 1.0;
        gen_synth(&spec, 5).unwrap()
    }

    #[test]
    fn raw_on_unity_target_is_exact() {
        let s = unity_session(1.5);
        let r = evaluate(&s, None, &[Policy::Raw], &SpectralConfig::default()).unwrap();
        let p = r.get(Policy::Raw).unwrap();
        assert_eq!(p.stft_distance, 0.0);
        assert_eq!(p.clipped_samples, 0);
        assert_eq!(p.mean_gains, vec![1.0, 1.0]);
        assert_eq!(p.max_gain_step, 0.0);
    }

    #[test]
    fn raw_on_attenuated_target_is_positive() {
        let s = gen_synth(&SynthSpec::attenuate_second(1.5), 5).unwrap();
        let r = evaluate(&s, None, &[Policy::Raw], &SpectralConfig::default()).unwrap();
        assert!(r.policies[0].stft_distance > 0.0);
    }

    #[test]
    fn missing_reference() {
        let mut s = unity_session(1.0);
        s.reference_mix = None;
        assert!(matches!(
            evaluate(&s, None, &[Policy::Raw], &SpectralConfig::default()),
            Err(Error::MissingReference)
        ));
    }

    #[test]
    fn model_policies_need_weights() {
        let s = unity_session(1.0);
        assert!(evaluate(&s, None, &[Policy::Dmc], &SpectralConfig::default()).is_err());
    }

    #[test]
    fn mr_timeline_is_longer_than_sr() {
        let s = unity_session(3.9);
        let model = Arc::new(GainModel::init(1));
        let r = evaluate(&s, Some(model), &[Policy::AlmMr, Policy::AlmSr, Policy::Dmc], &SpectralConfig::default())
            .unwrap();
        let mr = r.get(Policy::AlmMr).unwrap().frames;
        let sr = r.get(Policy::AlmSr).unwrap().frames;
        // 62400 samples: 78 frames of 800 against 4 of 15600
        assert_eq!((mr, sr), (78, 4));
        assert!((mr as f64 / sr as f64 - 19.5).abs() < 1e-12);
        for p in &r.policies {
            assert!(p.stft_distance.is_finite());
            assert!(p.mean_gains.iter().all(|g| *g >= 0.0));
        }
    }

    #[test]
    fn parse_list() {
        assert_eq!(parse_policies("alm-mr, raw").unwrap(), vec![Policy::AlmMr, Policy::Raw]);
        assert!(parse_policies("alm-mr,loud").is_err());
    }

    #[test]
    fn csv_has_one_row_per_policy_channel() {
        let s = unity_session(1.0);
        let r = evaluate(&s, None, &[Policy::Raw], &SpectralConfig::default()).unwrap();
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 3);
    }
}
