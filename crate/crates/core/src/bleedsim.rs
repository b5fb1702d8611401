//! Microphone bleed simulation with shoebox image-source room responses.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::dsp::stft::{plan_forward, plan_inverse};
use crate::dsp::{db_to_gain, AudioBuffer};
use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Taps of the fractional-delay interpolator.
pub const SINC_TAPS: usize = 81;

/// Shoebox room with one source and one microphone per channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    /// `(Lx, Ly, Lz)` in meters.
    pub dimensions: Point,
    /// Absorption shared by all six walls.
    pub absorption: f64,
    pub max_image_order: usize,
    pub speed_of_sound: f64,
    pub sources: Vec<Point>,
    pub mics: Vec<Point>,
}

impl RoomSpec {
    pub fn new(dimensions: Point, absorption: f64, max_image_order: usize) -> Self {
        Self {
            dimensions,
            absorption,
            max_image_order,
            speed_of_sound: 343.0,
            sources: Vec::new(),
            mics: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidGeometry(format!("room dimensions {:?}", self.dimensions)));
        }
        if !(0.0..=1.0).contains(&self.absorption) {
            return Err(Error::InvalidGeometry(format!("absorption {} outside [0, 1]", self.absorption)));
        }
        if !(self.speed_of_sound > 0.0 && self.speed_of_sound.is_finite()) {
            return Err(Error::InvalidGeometry(format!("speed of sound {}", self.speed_of_sound)));
        }
        for p in self.sources.iter().chain(&self.mics) {
            self.check_inside(p)?;
        }
        Ok(())
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.iter().zip(&self.dimensions).all(|(x, l)| *x > 0.0 && x < l)
    }

    fn check_inside(&self, p: &Point) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::InvalidGeometry(format!("point {p:?} not strictly inside room {:?}", self.dimensions)))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageSource {
    pub position: Point,
    pub reflections: usize,
}

/// Mirror images of `source` with at most `order` wall reflections.
///
/// Along each axis, image index `i` sits at `i·L + s` for even `i` and
/// `(i+1)·L − s` for odd `i`, after `|i|` reflections.
pub fn image_sources(room: &RoomSpec, source: &Point, order: usize) -> Result<Vec<ImageSource>> {
    room.check_inside(source)?;
    let k = order as i64;
    let mut out = Vec::new();
    for ix in -k..=k {
        for iy in -(k - ix.abs())..=(k - ix.abs()) {
            let rest = k - ix.abs() - iy.abs();
            for iz in -rest..=rest {
                let idx = [ix, iy, iz];
                let mut position = [0.0; 3];
                for a in 0..3 {
                    let (i, l, s) = (idx[a], room.dimensions[a], source[a]);
                    position[a] = if i % 2 == 0 {
                        i as f64 * l + s
                    } else {
                        (i + 1) as f64 * l - s
                    };
                }
                out.push(ImageSource {
                    position,
                    reflections: (ix.abs() + iy.abs() + iz.abs()) as usize,
                });
            }
        }
    }
    Ok(out)
}

fn distance(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Hann-windowed sinc kernel value at offset `t` from the arrival time.
fn kernel(t: f64, half: f64) -> f64 {
    if t.abs() > half {
        0.0
    } else {
        sinc(t) * 0.5 * (1.0 + (PI * t / (half + 1.0)).cos())
    }
}

/// Impulse response from `source` to `mic`. Taps that would fall before
/// time zero are dropped.
pub fn rir(room: &RoomSpec, source: &Point, mic: &Point, sample_rate: u32) -> Result<AudioBuffer> {
    room.validate()?;
    room.check_inside(mic)?;
    if distance(source, mic) == 0.0 {
        return Err(Error::InvalidGeometry("source and microphone coincide".into()));
    }
    let half = (SINC_TAPS / 2) as i64;
    let sr = sample_rate as f64;
    let arrivals: Vec<(f64, f64)> = image_sources(room, source, room.max_image_order)?
        .into_iter()
        .filter_map(|img| {
            let d = distance(&img.position, mic);
            let amp = (1.0 - room.absorption).powi(img.reflections as i32) / (4.0 * PI * d);
            (amp != 0.0).then_some((d / room.speed_of_sound * sr, amp))
        })
        .collect();
    let len = arrivals
        .iter()
        .map(|(tau, _)| tau.round() as i64 + half + 1)
        .max()
        .unwrap_or(1)
        .max(1) as usize;
    let mut h = vec![0.0; len];
    for (tau, amp) in arrivals {
        let centre = tau.round() as i64;
        for n in (centre - half).max(0)..=centre + half {
            h[n as usize] += amp * kernel(n as f64 - tau, half as f64);
        }
    }
    AudioBuffer::new(h, sample_rate)
}

fn next_fft_len(n: usize) -> usize {
    n.next_power_of_two()
}

fn spectrum(x: &[f64], n: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    plan_forward(n).process(&mut buf);
    buf
}

/// Linear convolution truncated to `x.len()` samples.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let n = next_fft_len(x.len() + h.len() - 1);
    let xs = spectrum(x, n);
    let mut ys = spectrum(h, n);
    for (y, a) in ys.iter_mut().zip(&xs) {
        *y *= a;
    }
    plan_inverse(n).process(&mut ys);
    ys[..x.len()].iter().map(|c| c.re / n as f64).collect()
}

/// Randomization ranges for [`apply_bleed`]. Ranges are `[min, max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BleedConfig {
    pub room_size_m: [f64; 2],
    pub absorption: [f64; 2],
    pub image_order: [usize; 2],
    /// Distance from each microphone to its own source.
    pub own_distance_m: [f64; 2],
    /// Minimum distance between sources, and between a microphone and any
    /// foreign source.
    pub min_spacing_m: f64,
    /// Clearance kept between any point and the walls.
    pub wall_margin_m: f64,
    pub pre_level_db: [f64; 2],
    pub post_level_db: [f64; 2],
    pub speed_of_sound: f64,
    pub seed: u64,
}

impl Default for BleedConfig {
    fn default() -> Self {
        Self {
            room_size_m: [4.0, 20.0],
            absorption: [0.2, 0.9],
            image_order: [2, 6],
            own_distance_m: [0.2, 0.5],
            min_spacing_m: 1.0,
            wall_margin_m: 0.5,
            pre_level_db: [-12.0, 12.0],
            post_level_db: [-12.0, 12.0],
            speed_of_sound: 343.0,
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::InvalidConfig(format!("{name} range {r:?}")));
    }
    Ok(())
}

impl BleedConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("room size", self.room_size_m)?;
        check_range("absorption", self.absorption)?;
        check_range("own distance", self.own_distance_m)?;
        check_range("pre-bleed level", self.pre_level_db)?;
        check_range("post-bleed level", self.post_level_db)?;
        if self.image_order[0] > self.image_order[1] {
            return Err(Error::InvalidConfig(format!("image order range {:?}", self.image_order)));
        }
        if self.absorption[0] < 0.0 || self.absorption[1] > 1.0 {
            return Err(Error::InvalidConfig("absorption must lie in [0, 1]".into()));
        }
        if !(self.min_spacing_m > 0.0) || self.own_distance_m[0] <= 0.0 {
            return Err(Error::InvalidConfig("spacings must be positive".into()));
        }
        if self.wall_margin_m < 0.0 || self.room_size_m[0] <= 2.0 * self.wall_margin_m {
            return Err(Error::InvalidConfig("rooms too small for the wall margin".into()));
        }
        Ok(())
    }
}

/// Every drawn parameter of one bleed simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleedMetadata {
    pub room: RoomSpec,
    pub pre_gains: Vec<f64>,
    pub post_gains: Vec<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

fn place(rng: &mut ChaCha8Rng, dims: &Point, margin: f64) -> Point {
    [0, 1, 2].map(|a| rng.gen_range(margin..dims[a] - margin))
}

/// Places `n` sources and their microphones; `None` if the room is too
/// crowded for the spacing constraints.
fn draw_geometry(rng: &mut ChaCha8Rng, dims: &Point, n: usize, cfg: &BleedConfig) -> Option<(Vec<Point>, Vec<Point>)> {
    let m = cfg.wall_margin_m;
    let inside = |p: &Point| p.iter().zip(dims).all(|(x, l)| *x >= m && *x <= l - m);
    let mut sources: Vec<Point> = Vec::with_capacity(n);
    for _ in 0..n {
        let p = (0..200)
            .map(|_| place(rng, dims, m))
            .find(|p| sources.iter().all(|s| distance(s, p) >= cfg.min_spacing_m))?;
        sources.push(p);
    }
    let mut mics = Vec::with_capacity(n);
    for (c, s) in sources.iter().enumerate() {
        let mic = (0..200)
            .map(|_| {
                let d = uniform(rng, cfg.own_distance_m);
                let z: f64 = rng.gen_range(-1.0..1.0);
                let phi = rng.gen_range(0.0..2.0 * PI);
                let r = (1.0 - z * z).sqrt();
                [s[0] + d * r * phi.cos(), s[1] + d * r * phi.sin(), s[2] + d * z]
            })
            .find(|p| {
                inside(p)
                    && sources
                        .iter()
                        .enumerate()
                        .all(|(o, q)| o == c || distance(q, p) >= cfg.min_spacing_m)
            })?;
        mics.push(mic);
    }
    Some((sources, mics))
}

/// Draws a room with `channels` sources and microphones.
pub fn draw_room(channels: usize, cfg: &BleedConfig, rng: &mut ChaCha8Rng) -> Result<RoomSpec> {
    cfg.validate()?;
    for _ in 0..100 {
        let dims = [0, 1, 2].map(|_| uniform(rng, cfg.room_size_m));
        let absorption = uniform(rng, cfg.absorption);
        let order = rng.gen_range(cfg.image_order[0]..=cfg.image_order[1]);
        if let Some((sources, mics)) = draw_geometry(rng, &dims, channels, cfg) {
            return Ok(RoomSpec {
                dimensions: dims,
                absorption,
                max_image_order: order,
                speed_of_sound: cfg.speed_of_sound,
                sources,
                mics,
            });
        }
    }
    Err(Error::InvalidConfig(format!(
        "cannot place {channels} sources with {} m spacing in the configured rooms",
        cfg.min_spacing_m
    )))
}

/// Per-channel gain `10^(u/20)` with `u` uniform in `range_db`.
pub fn randomize_levels_with(
    stems: &[AudioBuffer],
    range_db: [f64; 2],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<AudioBuffer>, Vec<f64>)> {
    check_range("level", range_db)?;
    let gains: Vec<f64> = stems.iter().map(|_| db_to_gain(uniform(rng, range_db))).collect();
    let scaled = stems.iter().zip(&gains).map(|(s, g)| s.scaled(*g)).collect();
    Ok((scaled, gains))
}

pub fn randomize_levels(stems: &[AudioBuffer], range_db: [f64; 2], seed: u64) -> Result<(Vec<AudioBuffer>, Vec<f64>)> {
    randomize_levels_with(stems, range_db, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn check_stems(stems: &[AudioBuffer]) -> Result<(usize, u32)> {
    let first = stems.first().ok_or(Error::NoChannels)?;
    for s in stems {
        if s.len() != first.len() {
            return Err(Error::LengthMismatch {
                expected: first.len(),
                actual: s.len(),
            });
        }
        if s.sample_rate() != first.sample_rate() {
            return Err(Error::InvalidConfig("stems have different sample rates".into()));
        }
    }
    Ok((first.len(), first.sample_rate()))
}

/// Mic signals for a fixed room: channel `c` is `Σ_s stem_s ∗ rir(s → mic_c)`.
pub fn render_room(stems: &[AudioBuffer], room: &RoomSpec) -> Result<Vec<AudioBuffer>> {
    let (len, sr) = check_stems(stems)?;
    if room.sources.len() != stems.len() || room.mics.len() != stems.len() {
        return Err(Error::ChannelMismatch {
            expected: stems.len(),
            actual: room.sources.len().min(room.mics.len()),
        });
    }
    room.validate()?;
    let rirs = room
        .mics
        .iter()
        .map(|mic| room.sources.iter().map(|s| rir(room, s, mic, sr)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let longest = rirs.iter().flatten().map(AudioBuffer::len).max().unwrap_or(1);
    let n = next_fft_len(len + longest - 1);
    let spectra: Vec<_> = stems.iter().map(|s| spectrum(s.samples(), n)).collect();
    let inverse = plan_inverse(n);
    rirs.iter()
        .map(|row| {
            let mut acc = vec![Complex::new(0.0, 0.0); n];
            for (h, xs) in row.iter().zip(&spectra) {
                let hs = spectrum(h.samples(), n);
                for ((a, x), y) in acc.iter_mut().zip(xs).zip(hs) {
                    *a += x * y;
                }
            }
            inverse.process(&mut acc);
            AudioBuffer::new(acc[..len].iter().map(|c| c.re / n as f64).collect(), sr)
        })
        .collect()
}

/// Draws a room and levels from `cfg` and simulates bleed.
pub fn apply_bleed_with(
    stems: &[AudioBuffer],
    cfg: &BleedConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<AudioBuffer>, BleedMetadata)> {
    check_stems(stems)?;
    let room = draw_room(stems.len(), cfg, rng)?;
    let (pre, pre_gains) = randomize_levels_with(stems, cfg.pre_level_db, rng)?;
    let bled = render_room(&pre, &room)?;
    let (post, post_gains) = randomize_levels_with(&bled, cfg.post_level_db, rng)?;
    Ok((
        post,
        BleedMetadata {
            room,
            pre_gains,
            post_gains,
        },
    ))
}

/// [`apply_bleed_with`] seeded from `cfg.seed`.
pub fn apply_bleed(stems: &[AudioBuffer], cfg: &BleedConfig) -> Result<(Vec<AudioBuffer>, BleedMetadata)> {
    apply_bleed_with(stems, cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}
