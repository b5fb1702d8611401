//! C ABI for the livemix engine.
//!
//! Handles are opaque. Every fallible call returns an [`LmStatus`]; on
//! failure a description is kept per thread and can be copied out with
//! [`lm_last_error_message`]. Models are immutable once loaded and may be
//! shared by any number of streams, each driven from one thread at a time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use livemix::dsp::{FrameClock, RateMode};
use livemix::model::{DmcBaseline, GainModel, GainPredictor};
use livemix::scheduler::{StreamConfig, StreamState};
use livemix::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    MissingFile = 3,
    Io = 4,
    BadFormat = 5,
    ShapeMismatch = 6,
    Finished = 7,
    Internal = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LmMode {
    /// 975 ms embedding frames refreshed every 300 ms, 50 ms control frames.
    MultiRate = 0,
    /// 975 ms frames for both.
    SingleRate = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LmHead {
    Alm = 0,
    Dmc = 1,
}

/// Trained weights.
pub struct LmModel {
    inner: Arc<GainModel>,
}

/// One live mixing stream.
pub struct LmStream {
    state: StreamState,
    predictor: Box<dyn GainPredictor + Send + Sync>,
    channels: usize,
    scratch: Vec<Vec<f64>>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> LmStatus {
    match e {
        Error::MissingFile(_) => LmStatus::MissingFile,
        Error::Io { .. } => LmStatus::Io,
        Error::UnsupportedFormat { .. } | Error::WeightFormat(_) | Error::Json(_) | Error::Wav(_) => {
            LmStatus::BadFormat
        }
        Error::LengthMismatch { .. } | Error::ChannelMismatch { .. } | Error::ShapeMismatch { .. } => {
            LmStatus::ShapeMismatch
        }
        e if e.is_input_error() => LmStatus::InvalidArgument,
        _ => LmStatus::Internal,
    }
}

fn guard<F>(f: F) -> LmStatus
where
    F: FnOnce() -> Result<(), (LmStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside livemix");
            LmStatus::Panic
        }
    }
}

fn fail(e: Error) -> (LmStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (LmStatus, String) {
    (LmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (LmStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| (LmStatus::InvalidArgument, "path is not valid UTF-8".to_string()))
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating if needed. Returns the full message
/// length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates a model with seeded random weights.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn lm_model_init(seed: u64, out: *mut *mut LmModel) -> LmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = Box::new(LmModel {
            inner: Arc::new(GainModel::init(seed)),
        });
        *out = Box::into_raw(m);
        Ok(())
    })
}

/// Loads weights written by `lm_model_save` or the `livemix` tool.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lm_model_load(path: *const c_char, out: *mut *mut LmModel) -> LmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let model = GainModel::load(&path).map_err(fail)?;
        *out = Box::into_raw(Box::new(LmModel { inner: Arc::new(model) }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lm_model_save(model: *const LmModel, path: *const c_char) -> LmStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let path = path_arg(path)?;
        model.inner.save(&path).map_err(fail)
    })
}

/// Releases a model. Streams created from it stay valid.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lm_model_free(model: *mut LmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Opens a stream mixing `channels` inputs at 16 kHz.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lm_stream_new(
    model: *const LmModel,
    mode: LmMode,
    head: LmHead,
    channels: usize,
    out: *mut *mut LmStream,
) -> LmStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if channels == 0 {
            return Err((LmStatus::InvalidArgument, "channel count must be positive".into()));
        }
        let mode = match mode {
            LmMode::MultiRate => RateMode::Mr,
            LmMode::SingleRate => RateMode::Sr,
        };
        let clock = FrameClock::for_mode(mode, model.inner.sample_rate()).map_err(fail)?;
        let state = StreamState::new(clock, StreamConfig::default()).map_err(fail)?;
        let predictor: Box<dyn GainPredictor + Send + Sync> = match head {
            LmHead::Alm => Box::new(Arc::clone(&model.inner)),
            LmHead::Dmc => Box::new(DmcBaseline(Arc::clone(&model.inner))),
        };
        *out = Box::into_raw(Box::new(LmStream {
            state,
            predictor,
            channels,
            scratch: vec![Vec::new(); channels],
        }));
        Ok(())
    })
}

/// Samples per channel the stream expects in each call.
///
/// # Safety
/// `stream` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lm_stream_frame_len(stream: *const LmStream) -> usize {
    stream.as_ref().map_or(0, |s| s.state.clock().f2_samples())
}

/// Index of the frame the next `lm_stream_process` call renders.
///
/// # Safety
/// `stream` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lm_stream_frame_index(stream: *const LmStream) -> usize {
    stream.as_ref().map_or(0, |s| s.state.next_f2_index())
}

/// Mixes one frame. `input` holds `channels * frame_len` samples, channel
/// after channel. `frame_len` equals `lm_stream_frame_len` except for a
/// final shorter frame, after which the stream is finished. `mix` receives
/// `frame_len` samples. `gains`, if not null, receives the `channels`
/// gains applied to this frame.
///
/// # Safety
/// All buffers must be valid for the lengths above.
#[no_mangle]
pub unsafe extern "C" fn lm_stream_process(
    stream: *mut LmStream,
    input: *const f32,
    frame_len: usize,
    mix: *mut f32,
    gains: *mut f32,
) -> LmStatus {
    guard(|| {
        let s = stream.as_mut().ok_or_else(|| null("stream"))?;
        if input.is_null() {
            return Err(null("input"));
        }
        if mix.is_null() {
            return Err(null("mix"));
        }
        if s.state.is_finished() {
            return Err((LmStatus::Finished, "stream already received its final frame".into()));
        }
        let expected = s.state.clock().f2_samples();
        if frame_len == 0 || frame_len > expected {
            return Err((
                LmStatus::InvalidArgument,
                format!("frame length {frame_len}, expected 1..={expected}"),
            ));
        }
        let input = std::slice::from_raw_parts(input, s.channels * frame_len);
        for (c, buf) in s.scratch.iter_mut().enumerate() {
            buf.clear();
            buf.extend(input[c * frame_len..(c + 1) * frame_len].iter().map(|&x| f64::from(x)));
        }
        let out = s.state.step(&s.scratch, &*s.predictor).map_err(fail)?;
        let mix = std::slice::from_raw_parts_mut(mix, frame_len);
        for (m, &v) in mix.iter_mut().zip(&out.mix) {
            *m = v as f32;
        }
        if !gains.is_null() {
            let gains = std::slice::from_raw_parts_mut(gains, s.channels);
            for (g, &v) in gains.iter_mut().zip(&out.applied) {
                *g = v as f32;
            }
        }
        Ok(())
    })
}

/// Rewinds the stream to its initial state.
///
/// # Safety
/// `stream` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lm_stream_reset(stream: *mut LmStream) -> LmStatus {
    guard(|| {
        let s = stream.as_mut().ok_or_else(|| null("stream"))?;
        s.state.reset();
        Ok(())
    })
}

/// # Safety
/// `stream` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lm_stream_free(stream: *mut LmStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
