//! Waveforms, STFT analysis/synthesis, log-power-spectrum features,
//! feature normalization and SNR-controlled mixing.

mod features;
mod fft;
mod mix;
mod stft;

use alloc::vec::Vec;

pub use features::{
    fit_norm_stats, lps, lps_to_magnitude, reconstruct, LpsFrames, NormStats, FLOOR_EPS, STD_FLOOR,
};
pub use fft::FftPlan;
pub use mix::{mix_at_snr, snr_db, Mixture};
pub use stft::{istft, stft, ComplexSpectrogram, StftConfig, WindowKind};

use crate::error::{Error, Result};
use crate::math;

/// Canonical sample rate of the pipeline.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio with nominal amplitude range `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Empty("waveform"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("waveform"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean square amplitude.
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        math::sqrt(self.power())
    }

    /// First `len` samples (or all of them if shorter).
    pub fn truncated(&self, len: usize) -> Self {
        Self {
            samples: self.samples[..len.min(self.samples.len())].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}
