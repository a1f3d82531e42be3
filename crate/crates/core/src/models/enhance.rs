use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::forward::forward;
use super::params::ModelParams;
use super::train::{EpochStats, TrainConfig};
use crate::dsp::{lps, reconstruct, stft, LpsFrames, NormStats, StftConfig, Waveform};
use crate::error::{shape_err, Error, Result};
use crate::tap::AttentionTrace;

/// Current checkpoint layout version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// What produced a set of parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub train_config: Option<TrainConfig>,
    pub epochs_completed: usize,
    pub history: Vec<EpochStats>,
}

/// A trained model with everything needed to enhance audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub stft: StftConfig,
    pub norm: NormStats,
    pub params: ModelParams,
    pub record: TrainingRecord,
}

/// Output of [`Checkpoint::enhance`].
#[derive(Debug, Clone, PartialEq)]
pub struct Enhancement {
    pub enhanced: Waveform,
    /// Noise estimate for two-head models.
    pub noise: Option<Waveform>,
    /// `(TAP_E, TAP_N)` attention traces for attention models.
    pub traces: Option<(AttentionTrace, AttentionTrace)>,
    pub noisy_lps: LpsFrames,
    pub enhanced_lps: LpsFrames,
    pub noise_lps: Option<LpsFrames>,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, stft: StftConfig, norm: NormStats, params: ModelParams, record: TrainingRecord) -> Result<Self> {
        if norm.bins() != config.input_dim || stft.fft_bins() != config.input_dim || config.output_dim != config.input_dim {
            return Err(shape_err(
                "checkpoint",
                format!(
                    "stats for {} bins, STFT with {} bins, model {}→{}",
                    norm.bins(),
                    stft.fft_bins(),
                    config.input_dim,
                    config.output_dim
                ),
            ));
        }
        let named = params.iter().map(|(n, a)| (n.into(), a.clone())).collect();
        ModelParams::from_blocks(&config, named)?;
        Ok(Self {
            version: CHECKPOINT_VERSION,
            config,
            stft,
            norm,
            params,
            record,
        })
    }

    /// STFT → LPS → normalize → forward → de-normalize → resynthesize each
    /// head with the noisy phase.
    pub fn enhance(&self, noisy: &Waveform) -> Result<Enhancement> {
        let spec = stft(noisy, &self.stft)?;
        let noisy_lps = lps(&spec);
        let input = self.norm.apply(&noisy_lps)?;
        let out = forward(&self.params, &self.config, input.array())?;
        let enhanced_lps = self.norm.invert(&LpsFrames::new(out.enhanced)?)?;
        let enhanced = reconstruct(&enhanced_lps, &spec)?;
        let (noise, noise_lps) = match out.noise {
            Some(n) => {
                let l = self.norm.invert(&LpsFrames::new(n)?)?;
                (Some(reconstruct(&l, &spec)?), Some(l))
            }
            None => (None, None),
        };
        Ok(Enhancement {
            enhanced,
            noise,
            traces: out.traces,
            noisy_lps,
            enhanced_lps,
            noise_lps,
        })
    }

    /// Attention traces only; fails for models without attention.
    pub fn attention(&self, noisy: &Waveform) -> Result<(AttentionTrace, AttentionTrace)> {
        self.enhance(noisy)?
            .traces
            .ok_or(Error::NoAttention(self.config.architecture.name()))
    }
}

impl crate::metrics::Enhancer for Checkpoint {
    fn enhance(&self, noisy: &Waveform) -> Result<Waveform> {
        Checkpoint::enhance(self, noisy).map(|e| e.enhanced)
    }
}
