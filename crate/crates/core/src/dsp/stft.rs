use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::FftPlan;
use super::Waveform;
use crate::error::{shape_err, Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// `0.5 − 0.5·cos(2πn/N)`, the DFT-even Hann window.
    PeriodicHann,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::PeriodicHann => (0..len)
                .map(|n| 0.5 - 0.5 * math::cos(2.0 * PI * n as f64 / len as f64))
                .collect(),
        }
    }
}

/// Analysis geometry. Construct through [`StftConfig::new`], which checks
/// the constant-overlap-add condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    frame_len: usize,
    hop: usize,
    window: WindowKind,
}

impl Default for StftConfig {
    /// 512-sample periodic Hann frames at 50% overlap: 257 bins.
    fn default() -> Self {
        Self {
            frame_len: 512,
            hop: 256,
            window: WindowKind::PeriodicHann,
        }
    }
}

const COLA_TOLERANCE: f64 = 1e-10;

impl StftConfig {
    pub fn new(frame_len: usize, hop: usize, window: WindowKind) -> Result<Self> {
        if !frame_len.is_power_of_two() || frame_len < 2 {
            return Err(Error::Config(format!("frame length {frame_len} is not a power of two")));
        }
        if hop == 0 || hop > frame_len {
            return Err(Error::Config(format!("hop {hop} outside 1..={frame_len}")));
        }
        let w = window.coefficients(frame_len);
        let sums: Vec<f64> = (0..hop)
            .map(|n| w.iter().skip(n).step_by(hop).sum())
            .collect();
        let (lo, hi) = sums
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        if hi - lo > COLA_TOLERANCE {
            return Err(Error::Config(format!(
                "{window:?} with frame {frame_len} / hop {hop} violates constant overlap-add (spread {})",
                hi - lo
            )));
        }
        Ok(Self { frame_len, hop, window })
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> WindowKind {
        self.window
    }

    pub fn fft_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.frame_len).then(|| 1 + (len - self.frame_len) / self.hop)
    }

    /// Samples synthesized from `frames` frames.
    pub fn synthesis_len(&self, frames: usize) -> usize {
        (frames.saturating_sub(1)) * self.hop + self.frame_len
    }
}

/// Frame-by-bin complex STFT, row-major `frames × bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    frames: usize,
    data: Vec<Complex64>,
    config: StftConfig,
    sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn new(
        frames: usize,
        data: Vec<Complex64>,
        config: StftConfig,
        sample_rate: u32,
    ) -> Result<Self> {
        if frames == 0 || data.len() != frames * config.fft_bins() {
            return Err(shape_err(
                "spectrogram",
                format!("{} values for {frames} frames of {} bins", data.len(), config.fft_bins()),
            ));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram"));
        }
        Ok(Self {
            frames,
            data,
            config,
            sample_rate,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.config.fft_bins()
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        let f = self.bins();
        &self.data[t * f..(t + 1) * f]
    }

    pub fn get(&self, t: usize, f: usize) -> Complex64 {
        self.data[t * self.bins() + f]
    }
}

/// Windowed short-time Fourier transform keeping bins `0..=frame_len/2`.
pub fn stft(waveform: &Waveform, config: &StftConfig) -> Result<ComplexSpectrogram> {
    let x = waveform.samples();
    let n = config.frame_len();
    let frames = config.frame_count(x.len()).ok_or(Error::TooShort {
        len: x.len(),
        frame_len: n,
    })?;
    let window = config.window().coefficients(n);
    let plan = FftPlan::new(n);
    let bins = config.fft_bins();
    let mut data = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        let start = t * config.hop();
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(x[start + i] * window[i], 0.0);
        }
        plan.forward(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    ComplexSpectrogram::new(frames, data, *config, waveform.sample_rate())
}

/// Smallest summed squared window over one hop period: the normalizer's
/// value where frames fully overlap.
fn steady_state_norm(window: &[f64], hop: usize) -> f64 {
    (0..hop)
        .map(|n| window.iter().skip(n).step_by(hop).map(|w| w * w).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Weighted overlap-add synthesis normalized by the summed squared window.
///
/// The normalizer is floored at its steady-state minimum. That leaves the
/// fully overlapped interior exact and only touches the outer half-frames,
/// where dividing by a lone `w²` would amplify a modified spectrum by `1/w`.
pub fn istft(spec: &ComplexSpectrogram) -> Result<Waveform> {
    let cfg = spec.config();
    let n = cfg.frame_len();
    let bins = cfg.fft_bins();
    let window = cfg.window().coefficients(n);
    let plan = FftPlan::new(n);
    let len = cfg.synthesis_len(spec.frames());
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..spec.frames() {
        let frame = spec.frame(t);
        buf[..bins].copy_from_slice(frame);
        for k in 1..n - bins + 1 {
            buf[n - k] = frame[k].conj();
        }
        plan.inverse(&mut buf);
        let start = t * cfg.hop();
        for i in 0..n {
            out[start + i] += buf[i].re * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    let floor = steady_state_norm(&window, cfg.hop());
    for (o, w) in out.iter_mut().zip(&norm) {
        *o /= w.max(floor);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("istft"));
    }
    Waveform::new(out, spec.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_wave(rng: &mut ChaCha8Rng, len: usize) -> Waveform {
        Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 16_000).unwrap()
    }

    #[test]
    fn default_geometry_has_257_bins() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.fft_bins(), 257);
        assert_eq!(StftConfig::new(512, 256, WindowKind::PeriodicHann).unwrap(), cfg);
    }

    #[test]
    fn rejects_non_cola_and_bad_sizes() {
        assert!(StftConfig::new(512, 200, WindowKind::PeriodicHann).is_err());
        assert!(StftConfig::new(500, 250, WindowKind::PeriodicHann).is_err());
        assert!(StftConfig::new(512, 0, WindowKind::PeriodicHann).is_err());
        assert!(StftConfig::new(512, 128, WindowKind::PeriodicHann).is_ok());
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let w = Waveform::new(vec![0.0; 1024], 16_000).unwrap();
        let s = stft(&w, &StftConfig::default()).unwrap();
        assert_eq!((s.frames(), s.bins()), (3, 257));
        assert!(s.data().iter().all(|c| c.norm() == 0.0));
        let back = istft(&s).unwrap();
        assert!(back.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_signal_is_rejected() {
        let w = Waveform::new(vec![0.1; 511], 16_000).unwrap();
        assert!(matches!(stft(&w, &StftConfig::default()), Err(Error::TooShort { .. })));
    }

    #[test]
    fn cosine_at_bin_centre_stays_within_one_bin() {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..2048)
            .map(|n| math::cos(2.0 * PI * 16.0 * n as f64 / 512.0))
            .collect();
        let s = stft(&Waveform::new(x.clone(), 16_000).unwrap(), &cfg).unwrap();
        let window = cfg.window().coefficients(512);
        for t in 0..s.frames() {
            let frame = s.frame(t);
            let peak = frame[16].norm();
            for (k, c) in frame.iter().enumerate() {
                if !(15..=17).contains(&k) {
                    assert!(c.norm() < 1e-10 * peak, "bin {k}: {}", c.norm());
                }
            }
            // Direct DFT of the first windowed frame at the peak bins.
            if t == 0 {
                for k in 15..=17 {
                    let mut want = Complex64::new(0.0, 0.0);
                    for (i, w) in window.iter().enumerate() {
                        let a = -2.0 * PI * (k * i) as f64 / 512.0;
                        want += Complex64::new(math::cos(a), math::sin(a)) * (x[i] * w);
                    }
                    assert!((frame[k] - want).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn round_trip_on_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = StftConfig::default();
        let w = random_wave(&mut rng, 8192);
        let back = istft(&stft(&w, &cfg).unwrap()).unwrap();
        assert_eq!(back.len(), 8192);
        let err = (cfg.hop()..8192 - cfg.hop())
            .map(|i| (back.samples()[i] - w.samples()[i]).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn single_frame_divides_by_floored_squared_window() {
        let cfg = StftConfig::new(16, 8, WindowKind::PeriodicHann).unwrap();
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let s = stft(&Waveform::new(x.clone(), 8000).unwrap(), &cfg).unwrap();
        let y = istft(&s).unwrap();
        let w = cfg.window().coefficients(16);
        // Hann² at 50% overlap sums to 0.5 + 0.5·cos²(·): at least 0.5.
        let floor = steady_state_norm(&w, 8);
        assert!((floor - 0.5).abs() < 1e-12);
        for i in 0..16 {
            let want = x[i] * w[i] * w[i] / (w[i] * w[i]).max(floor);
            assert!((y.samples()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn modified_spectra_stay_bounded_at_the_edges() {
        // A spectrum no signal produces: every frame an impulse at n = 1.
        let cfg = StftConfig::new(16, 8, WindowKind::PeriodicHann).unwrap();
        let frames = 3;
        let bins = cfg.fft_bins();
        let data = (0..frames * bins)
            .map(|i| Complex64::from_polar(1.0, -2.0 * PI * (i % bins) as f64 / 16.0))
            .collect();
        let y = istft(&ComplexSpectrogram::new(frames, data, cfg, 8000).unwrap()).unwrap();
        let w = cfg.window().coefficients(16);
        // Unfloored this would be 1/w[1] ≈ 26.
        assert!((y.samples()[1] - w[1] / 0.5).abs() < 1e-12);
        assert!(y.samples().iter().all(|v| v.abs() <= 2.0));
    }
}
