//! Compute core for TAP-CRNN acoustic signal enhancement.
//!
//! Everything between a waveform and an enhanced waveform lives here and
//! runs without `std`: STFT analysis/synthesis and log-power-spectrum
//! features ([`dsp`]), a define-by-run reverse-mode autodiff engine
//! ([`autodiff`]), convolutional/recurrent/dense layers ([`layers`]),
//! temporal attentive pooling ([`tap`]), model assembly, training and
//! enhancement ([`models`]), and separation/enhancement metrics
//! ([`metrics`]).
//!
//! File formats, the CLI and batch evaluation over manifests live in the
//! `tapcrnn` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod dsp;
mod error;
pub mod layers;
mod math;
pub mod metrics;
pub mod models;
pub mod synth;
pub mod tap;

pub use error::{Error, Result};
