//! Synthetic stand-ins for infant-cry recordings and background noise.
//!
//! Clean signals are harmonic tone complexes with a 400–600 Hz
//! fundamental, per-burst pitch glides and a rhythmic burst/pause envelope.
//! Noises come in four families: white, pink, babble-like (several
//! band-limited noise streams under slow random envelopes) and
//! amplitude-modulated tones.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::math;

pub const F0_MIN_HZ: f64 = 400.0;
pub const F0_MAX_HZ: f64 = 600.0;
const HARMONICS: usize = 8;
const CLEAN_PEAK: f64 = 0.5;
const NOISE_RMS: f64 = 0.1;
/// Recording floor under the cry, so pauses are not digital silence.
const FLOOR_RMS: f64 = 1e-3;

fn samples(duration_s: f64, sample_rate: u32) -> Result<usize> {
    let n = libm::round(duration_s * sample_rate as f64);
    if !(n >= 1.0) || sample_rate == 0 {
        return Err(Error::Config(format!("duration {duration_s} s at {sample_rate} Hz")));
    }
    Ok(n as usize)
}

/// Raised-cosine burst envelope: attack and release of `ramp` samples.
fn burst_envelope(i: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    let x = if i < ramp {
        i as f64 / ramp as f64
    } else if i >= len - ramp {
        (len - 1 - i) as f64 / ramp as f64
    } else {
        1.0
    };
    0.5 - 0.5 * math::cos(PI * x)
}

/// Cry-like clean signal: bursts of 0.3–0.9 s separated by 0.1–0.3 s
/// pauses, each with its own fundamental in 400–600 Hz and a rise-fall
/// glide of up to ±15%, with decaying harmonics, over a faint white
/// recording floor.
pub fn cry(duration_s: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    let n = samples(duration_s, sample_rate)?;
    let sr = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (1..=HARMONICS)
        .map(|k| rng.gen_range(0.5..1.0) / k as f64)
        .collect();
    let mut out = vec![0.0; n];
    let mut pos = (rng.gen_range(0.0..0.15) * sr) as usize;
    while pos < n {
        let len = ((rng.gen_range(0.3..0.9) * sr) as usize).min(n - pos);
        let f0 = rng.gen_range(F0_MIN_HZ..F0_MAX_HZ);
        let glide = rng.gen_range(-0.15..0.15);
        let vibrato = rng.gen_range(4.0..8.0);
        let gain = rng.gen_range(0.6..1.0);
        let mut phase = 0.0;
        for i in 0..len {
            let u = i as f64 / len.max(2) as f64;
            // Rise then fall over the burst, plus a light vibrato.
            let f = f0 * (1.0 + glide * math::sin(PI * u)) * (1.0 + 0.02 * math::sin(2.0 * PI * vibrato * i as f64 / sr));
            phase += 2.0 * PI * f / sr;
            let mut v = 0.0;
            for (k, w) in weights.iter().enumerate() {
                if f * (k + 1) as f64 >= sr / 2.0 {
                    break;
                }
                v += w * math::sin((k + 1) as f64 * phase);
            }
            out[pos + i] += gain * burst_envelope(i, len, (0.03 * sr) as usize) * v;
        }
        pos += len + (rng.gen_range(0.1..0.3) * sr) as usize;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::Silent("synthetic cry"));
    }
    // Uniform on ±a has RMS a/√3.
    let a = FLOOR_RMS * math::sqrt(3.0);
    out.iter_mut()
        .for_each(|v| *v = *v * CLEAN_PEAK / peak + rng.gen_range(-a..a));
    Waveform::new(out, sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    Babble,
    AmTone,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble, NoiseKind::AmTone];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Babble => "babble",
            NoiseKind::AmTone => "am_tone",
        }
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown noise type `{s}`")))
    }
}

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Kellet's economy pink filter on white noise.
fn pink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    (0..n)
        .map(|_| {
            let w = rng.gen_range(-1.0..1.0);
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect()
}

/// Two-pole resonator centred on `freq` with bandwidth `bw` (Hz).
fn resonate(x: &[f64], freq: f64, bw: f64, sr: f64) -> Vec<f64> {
    let r = math::exp(-PI * bw / sr);
    let a1 = 2.0 * r * math::cos(2.0 * PI * freq / sr);
    let a2 = -r * r;
    let (mut y1, mut y2) = (0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = (1.0 - r) * v + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

/// Slowly varying positive envelope: smoothed random steps at `rate_hz`.
fn syllable_envelope(rng: &mut ChaCha8Rng, n: usize, rate_hz: f64, sr: f64) -> Vec<f64> {
    let step = ((sr / rate_hz) as usize).max(1);
    let knots: Vec<f64> = (0..n / step + 2).map(|_| rng.gen_range(0.0..1.0)).collect();
    (0..n)
        .map(|i| {
            let k = i / step;
            let u = (i % step) as f64 / step as f64;
            let s = 0.5 - 0.5 * math::cos(PI * u);
            knots[k] * (1.0 - s) + knots[k + 1] * s
        })
        .collect()
}

fn babble(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for _ in 0..6 {
        let src = white(rng, n);
        let formant = rng.gen_range(300.0..2500.0);
        let voiced = resonate(&src, formant, rng.gen_range(80.0..250.0), sr);
        let rate = rng.gen_range(3.0..6.0);
        let env = syllable_envelope(rng, n, rate, sr);
        for ((o, v), e) in out.iter_mut().zip(&voiced).zip(&env) {
            *o += v * e;
        }
    }
    out
}

fn am_tone(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let carrier = rng.gen_range(100.0..1500.0);
    let rate = rng.gen_range(2.0..8.0);
    let depth = rng.gen_range(0.5..0.9);
    let partials = [(1.0, 1.0), (2.0, 0.5), (3.0, 0.25)];
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let m = 1.0 + depth * math::sin(2.0 * PI * rate * t);
            let tone: f64 = partials
                .iter()
                .map(|&(k, a)| a * math::sin(2.0 * PI * k * carrier * t))
                .sum();
            m * tone
        })
        .collect()
}

/// Noise of the given family at a fixed RMS.
pub fn noise(kind: NoiseKind, duration_s: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    let n = samples(duration_s, sample_rate)?;
    let sr = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = match kind {
        NoiseKind::White => white(&mut rng, n),
        NoiseKind::Pink => pink(&mut rng, n),
        NoiseKind::Babble => babble(&mut rng, n, sr),
        NoiseKind::AmTone => am_tone(&mut rng, n, sr),
    };
    let rms = math::sqrt(x.iter().map(|v| v * v).sum::<f64>() / n as f64);
    if rms == 0.0 {
        return Err(Error::Silent("synthetic noise"));
    }
    x.iter_mut().for_each(|v| *v *= NOISE_RMS / rms);
    Waveform::new(x, sample_rate)
}

/// Family of the `index`-th generated noise file: cycles through
/// [`NoiseKind::ALL`].
pub fn noise_kind_for(index: usize) -> NoiseKind {
    NoiseKind::ALL[index % NoiseKind::ALL.len()]
}
