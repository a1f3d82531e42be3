use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::forward::forward_nodes;
use super::params::ModelParams;
use crate::autodiff::{Array, NodeId, Tape};
use crate::dsp::{lps, mix_at_snr, stft, LpsFrames, NormStats, StftConfig, Waveform};
use crate::error::{shape_err, Error, Result};
use crate::math;

/// Learning rate reading `10e-5` literally.
pub const LR_LITERAL: f64 = 1e-4;
/// The alternative reading, `1e-5`.
pub const LR_ALTERNATE: f64 = 1e-5;
/// Step size for the desk-scale networks over a 200-epoch budget. With about
/// five optimizer steps per epoch, the smaller presets leave the loss far
/// from converged.
pub const LR_DESK: f64 = 3e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rho: f64,
    pub epsilon: f64,
    /// Share of utterances held out for validation loss.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: LR_LITERAL,
            batch_size: 32,
            epochs: 300,
            rho: 0.9,
            epsilon: 1e-8,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.batch_size > 0
            && self.rho > 0.0
            && self.rho < 1.0
            && self.epsilon > 0.0
            && (0.0..1.0).contains(&self.validation_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training settings {self:?}")))
        }
    }
}

/// `mean((enh − clean)²) + mean((noise_est − noise_target)²)`; the second
/// term is dropped for single-head models.
pub fn loss(enhanced: &Array, clean: &Array, noise: Option<(&Array, &Array)>) -> Result<f64> {
    let mse = |a: &Array, b: &Array| -> Result<f64> {
        if a.shape() != b.shape() {
            return Err(shape_err("loss", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        Ok(s / a.numel() as f64)
    };
    let mut l = mse(enhanced, clean)?;
    if let Some((est, target)) = noise {
        l += mse(est, target)?;
    }
    Ok(l)
}

/// Running mean of squared gradients per block.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub v: Vec<Array>,
}

impl RmsProp {
    pub fn new(params: &[Array]) -> Self {
        Self {
            v: params.iter().map(|p| Array::zeros(p.shape())).collect(),
        }
    }

    /// `v ← ρv + (1−ρ)g²`, `θ ← θ − lr·g/(√v + ε)`. Nothing is modified if
    /// any gradient is non-finite.
    pub fn step(&mut self, params: &mut [Array], grads: &[Array], cfg: &TrainConfig) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.v.len() {
            return Err(shape_err(
                "rmsprop",
                format!("{} params, {} grads, {} states", params.len(), grads.len(), self.v.len()),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(shape_err("rmsprop", format!("{:?} vs {:?}", p.shape(), g.shape())));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite("gradient"));
            }
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.v) {
            for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = cfg.rho * *vi + (1.0 - cfg.rho) * gi * gi;
                *pi -= cfg.learning_rate * gi / (math::sqrt(*vi) + cfg.epsilon);
            }
        }
        Ok(())
    }
}

/// One training utterance in normalized feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Array,
    pub clean: Array,
    pub noise: Array,
}

/// Unnormalized features of one mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFeatures {
    pub noisy: LpsFrames,
    pub clean: LpsFrames,
    pub noise: LpsFrames,
}

impl MixtureFeatures {
    /// Mix `clean` with `noise` at `snr_db` and take LPS of the mixture and
    /// of both targets.
    pub fn from_pair(clean: &Waveform, noise: &Waveform, snr_db: f64, seed: u64, cfg: &StftConfig) -> Result<Self> {
        let m = mix_at_snr(clean, noise, snr_db, seed)?;
        Ok(Self {
            noisy: lps(&stft(&m.noisy, cfg)?),
            clean: lps(&stft(clean, cfg)?),
            noise: lps(&stft(&m.scaled_noise, cfg)?),
        })
    }

    /// Normalize input and both targets with the same stats.
    pub fn normalize(&self, stats: &NormStats) -> Result<Example> {
        Ok(Example {
            input: stats.apply(&self.noisy)?.into_array(),
            clean: stats.apply(&self.clean)?.into_array(),
            noise: stats.apply(&self.noise)?.into_array(),
        })
    }
}

fn loss_node<'a>(tape: &mut Tape<'a>, config: &ModelConfig, ids: &[NodeId], ex: &'a Example) -> Result<NodeId> {
    let x = tape.constant_ref(&ex.input);
    let out = forward_nodes(tape, config, ids, x)?;
    let clean = tape.constant_ref(&ex.clean);
    let mut l = tape.mse(out.enhanced, clean)?;
    if let Some(n) = out.noise {
        let target = tape.constant_ref(&ex.noise);
        let ln = tape.mse(n, target)?;
        l = tape.add(l, ln)?;
    }
    Ok(l)
}

/// Loss and parameter gradients for one utterance.
pub fn utterance_gradients(params: &ModelParams, config: &ModelConfig, ex: &Example) -> Result<(f64, Vec<Array>)> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.blocks().iter().map(|b| tape.param(b)).collect();
    let l = loss_node(&mut tape, config, &ids, ex)?;
    let value = tape.value(l).data()[0];
    let mut grads = tape.backward(l)?;
    let g = ids
        .iter()
        .map(|&id| grads.take(id).expect("every parameter is a trainable leaf"))
        .collect();
    Ok((value, g))
}

/// Loss for one utterance without gradients.
pub fn utterance_loss(params: &ModelParams, config: &ModelConfig, ex: &Example) -> Result<f64> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.blocks().iter().map(|b| tape.constant_ref(b)).collect();
    let l = loss_node(&mut tape, config, &ids, ex)?;
    Ok(tape.value(l).data()[0])
}

pub type GradientJob<'a> = dyn Fn(usize) -> Result<(f64, Vec<Array>)> + Sync + 'a;
pub type LossJob<'a> = dyn Fn(usize) -> Result<f64> + Sync + 'a;

/// Evaluates independent per-utterance jobs. Results must come back in job
/// order; the caller reduces them sequentially, so any executor yields
/// bit-identical training.
pub trait BatchExecutor: Sync {
    fn gradients(&self, jobs: usize, job: &GradientJob<'_>) -> Vec<Result<(f64, Vec<Array>)>>;
    fn losses(&self, jobs: usize, job: &LossJob<'_>) -> Vec<Result<f64>>;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl BatchExecutor for Sequential {
    fn gradients(&self, jobs: usize, job: &GradientJob<'_>) -> Vec<Result<(f64, Vec<Array>)>> {
        (0..jobs).map(job).collect()
    }

    fn losses(&self, jobs: usize, job: &LossJob<'_>) -> Vec<Result<f64>> {
        (0..jobs).map(job).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over training utterances, each measured before the
    /// update its batch contributed to.
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    /// Indices (into the example slice) held out for validation.
    pub validation: Vec<usize>,
}

/// Seeded split: `(train, validation)` index lists.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (fraction * n as f64) as usize;
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Minibatch RMSprop over utterances. Per-utterance gradients are averaged
/// over each batch; `observer` sees every finished epoch.
pub fn train(
    config: &ModelConfig,
    mut params: ModelParams,
    examples: &[Example],
    cfg: &TrainConfig,
    executor: &dyn BatchExecutor,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let (mut order, validation) = split_indices(examples.len(), cfg.validation_fraction, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut opt = RmsProp::new(params.blocks());
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let p = &params;
            let job = |i: usize| utterance_gradients(p, config, &examples[batch[i]]);
            let results = executor.gradients(batch.len(), &job);
            let mut sum: Option<Vec<Array>> = None;
            for r in results {
                let (l, g) = r?;
                if !l.is_finite() {
                    return Err(Error::NonFinite("training loss"));
                }
                total += l;
                match &mut sum {
                    None => sum = Some(g),
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
                }
            }
            let mut grads = sum.expect("batches are non-empty");
            let k = 1.0 / batch.len() as f64;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= k);
            }
            opt.step(params.blocks_mut(), &grads, cfg)?;
        }
        let validation_loss = if validation.is_empty() {
            None
        } else {
            let p = &params;
            let job = |i: usize| utterance_loss(p, config, &examples[validation[i]]);
            let mut s = 0.0;
            for r in executor.losses(validation.len(), &job) {
                s += r?;
            }
            Some(s / validation.len() as f64)
        };
        let stats = EpochStats {
            epoch,
            train_loss: total / order.len() as f64,
            validation_loss,
        };
        observer(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome {
        params,
        history,
        validation,
    })
}
