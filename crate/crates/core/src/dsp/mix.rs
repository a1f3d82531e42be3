use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Waveform;
use crate::error::{Error, Result};
use crate::math;

/// A clean signal corrupted by gain-adjusted noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub noisy: Waveform,
    /// Exactly the noise component of `noisy`.
    pub scaled_noise: Waveform,
    pub gain: f64,
    /// Offset into the noise recording where the segment starts.
    pub offset: usize,
}

/// Mix `clean` with a segment of `noise` so that
/// `10·log10(P_clean / P_scaled_noise) = snr_db` over the whole utterance.
///
/// A longer noise recording is cropped at an offset drawn from `seed`; a
/// shorter one is tiled.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64, seed: u64) -> Result<Mixture> {
    if clean.sample_rate() != noise.sample_rate() {
        return Err(Error::SampleRate(clean.sample_rate(), noise.sample_rate()));
    }
    if !snr_db.is_finite() {
        return Err(Error::NonFinite("snr_db"));
    }
    let p_clean = clean.power();
    if p_clean == 0.0 {
        return Err(Error::Silent("clean"));
    }
    let n = clean.len();
    let src = noise.samples();
    let offset = if src.len() > n {
        ChaCha8Rng::seed_from_u64(seed).gen_range(0..=src.len() - n)
    } else {
        0
    };
    let segment: Vec<f64> = (0..n).map(|i| src[(offset + i) % src.len()]).collect();
    let p_noise = segment.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if p_noise == 0.0 {
        return Err(Error::Silent("noise"));
    }
    let gain = math::sqrt(p_clean / (p_noise * math::powf(10.0, snr_db / 10.0)));
    let scaled: Vec<f64> = segment.iter().map(|v| v * gain).collect();
    let noisy: Vec<f64> = clean.samples().iter().zip(&scaled).map(|(c, s)| c + s).collect();
    Ok(Mixture {
        noisy: Waveform::new(noisy, clean.sample_rate())?,
        scaled_noise: Waveform::new(scaled, clean.sample_rate())?,
        gain,
        offset,
    })
}

/// `10·log10(P_signal / P_noise)` over whole signals.
pub fn snr_db(signal: &Waveform, noise: &Waveform) -> f64 {
    math::db(signal.power() / noise.power())
}
