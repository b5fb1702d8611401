//! Zero-latency multitrack gain mixing.
//!
//! Audio flows through a two-rate pipeline: long F1 frames feed a channel
//! embedder and a cross-channel transformer, short F2 frames drive level
//! conditioning, temporal state and gain prediction. Gains predicted from
//! frame `k` are applied to frame `k + 1`, so rendering adds no latency.

pub mod autodiff;
pub mod bleedsim;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod scheduler;
pub mod session;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod wav;

pub use error::{Error, Result};
