use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::stft::{istft, ComplexSpectrogram};
use super::Waveform;
use crate::autodiff::Array;
use crate::error::{shape_err, Error, Result};
use crate::math;

/// Lower bound applied to `|X|²` before the logarithm.
pub const FLOOR_EPS: f64 = 1e-12;
/// Lower bound on per-bin standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Log-power-spectrum frames, `frames × bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpsFrames(Array);

impl LpsFrames {
    pub fn new(values: Array) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(shape_err("lps", format!("expected T×F, got {:?}", values.shape())));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("lps"));
        }
        Ok(Self(values))
    }

    pub fn frames(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn array(&self) -> &Array {
        &self.0
    }

    pub fn into_array(self) -> Array {
        self.0
    }

    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.0.at(t, f)
    }
}

/// `ln(max(|X|², FLOOR_EPS))` per entry.
pub fn lps(spec: &ComplexSpectrogram) -> LpsFrames {
    let data = spec
        .data()
        .iter()
        .map(|c| math::ln(c.norm_sqr().max(FLOOR_EPS)))
        .collect();
    LpsFrames(Array::matrix(spec.frames(), spec.bins(), data).expect("spectrogram shape is valid"))
}

/// `exp(lps / 2)`, the magnitude whose LPS is the input.
pub fn lps_to_magnitude(lps: &LpsFrames) -> Array {
    lps.0.map(|v| math::exp(v / 2.0))
}

/// Magnitudes from `enhanced` combined with the phase of `noisy`, then
/// inverted by overlap-add.
pub fn reconstruct(enhanced: &LpsFrames, noisy: &ComplexSpectrogram) -> Result<Waveform> {
    if enhanced.frames() != noisy.frames() || enhanced.bins() != noisy.bins() {
        return Err(shape_err(
            "reconstruct",
            format!(
                "enhanced {}×{} vs noisy {}×{}",
                enhanced.frames(),
                enhanced.bins(),
                noisy.frames(),
                noisy.bins()
            ),
        ));
    }
    let mag = lps_to_magnitude(enhanced);
    let data = mag
        .data()
        .iter()
        .zip(noisy.data())
        .map(|(&m, x)| Complex64::from_polar(m, x.arg()))
        .collect();
    let spec = ComplexSpectrogram::new(noisy.frames(), data, *noisy.config(), noisy.sample_rate())?;
    istft(&spec)
}

/// Per-bin mean and standard deviation of training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn bins(&self) -> usize {
        self.mean.len()
    }

    /// Stats that leave features unchanged.
    pub fn identity(bins: usize) -> Self {
        Self {
            mean: vec![0.0; bins],
            std: vec![1.0; bins],
        }
    }

    fn check(&self, lps: &LpsFrames) -> Result<()> {
        if lps.bins() != self.bins() {
            return Err(shape_err(
                "norm",
                format!("{} bins vs stats for {}", lps.bins(), self.bins()),
            ));
        }
        Ok(())
    }

    /// `(x − mean) / std` per bin.
    pub fn apply(&self, lps: &LpsFrames) -> Result<LpsFrames> {
        self.check(lps)?;
        let f = self.bins();
        let mut out = lps.0.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[i % f]) / self.std[i % f];
        }
        LpsFrames::new(out)
    }

    /// `x · std + mean` per bin.
    pub fn invert(&self, lps: &LpsFrames) -> Result<LpsFrames> {
        self.check(lps)?;
        let f = self.bins();
        let mut out = lps.0.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * self.std[i % f] + self.mean[i % f];
        }
        LpsFrames::new(out)
    }
}

/// Population mean/std per bin, pooled over every frame of every utterance.
pub fn fit_norm_stats<'a, I>(set: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a LpsFrames>,
    I::IntoIter: Clone,
{
    let iter = set.into_iter();
    let first = iter.clone().next().ok_or(Error::Empty("training feature set"))?;
    let f = first.bins();
    let mut sum = vec![0.0; f];
    let mut count = 0usize;
    for lps in iter.clone() {
        if lps.bins() != f {
            return Err(shape_err("fit_norm_stats", format!("{} vs {f} bins", lps.bins())));
        }
        for row in lps.0.data().chunks(f) {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
        count += lps.frames();
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; f];
    for lps in iter {
        for row in lps.0.data().chunks(f) {
            for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    let std = sq
        .iter()
        .map(|s| math::sqrt(s / count as f64).max(STD_FLOOR))
        .collect();
    Ok(NormStats { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, StftConfig};
    use core::f64::consts::E;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec_with_magnitude(m: f64) -> ComplexSpectrogram {
        let cfg = StftConfig::default();
        ComplexSpectrogram::new(2, vec![Complex64::new(0.0, m); 2 * 257], cfg, 16_000).unwrap()
    }

    #[test]
    fn lps_examples() {
        assert!(lps(&spec_with_magnitude(1.0)).array().data().iter().all(|&v| v == 0.0));
        assert!(lps(&spec_with_magnitude(E))
            .array()
            .data()
            .iter()
            .all(|&v| (v - 2.0).abs() < 1e-15));
        let floor = lps(&spec_with_magnitude(0.0));
        assert!(floor.array().data().iter().all(|&v| v == math::ln(FLOOR_EPS)));
        assert!((math::ln(FLOOR_EPS) + 27.631).abs() < 1e-3);
    }

    #[test]
    fn magnitude_examples() {
        let l = LpsFrames::new(Array::row(vec![0.0, 2.0]).unwrap()).unwrap();
        let m = lps_to_magnitude(&l);
        assert_eq!(m.data()[0], 1.0);
        assert!((m.data()[1] - E).abs() < 1e-15);
    }

    #[test]
    fn reconstruct_recovers_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Waveform::new((0..4096).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16_000).unwrap();
        let s = stft(&x, &StftConfig::default()).unwrap();
        let y = reconstruct(&lps(&s), &s).unwrap();
        for i in 256..4096 - 256 {
            assert!((x.samples()[i] - y.samples()[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn reconstruct_from_floor_is_near_silent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Waveform::new((0..4096).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16_000).unwrap();
        let s = stft(&x, &StftConfig::default()).unwrap();
        let floor = LpsFrames::new(Array::full(&[s.frames(), 257], math::ln(FLOOR_EPS))).unwrap();
        let y = reconstruct(&floor, &s).unwrap();
        assert!(y.rms() < 1e-5, "{}", y.rms());
    }

    #[test]
    fn reconstruct_shape_mismatch() {
        let s = spec_with_magnitude(1.0);
        let l = LpsFrames::new(Array::zeros(&[3, 257])).unwrap();
        assert!(matches!(reconstruct(&l, &s), Err(Error::Shape { .. })));
    }

    #[test]
    fn norm_examples() {
        let constant = LpsFrames::new(Array::full(&[4, 3], 5.0)).unwrap();
        let st = fit_norm_stats([&constant]).unwrap();
        assert_eq!(st.mean, vec![5.0; 3]);
        assert_eq!(st.std, vec![STD_FLOOR; 3]);
        assert!(st.apply(&constant).unwrap().array().data().iter().all(|&v| v == 0.0));

        let two = LpsFrames::new(Array::matrix(2, 1, vec![1.0, 3.0]).unwrap()).unwrap();
        let st = fit_norm_stats([&two]).unwrap();
        assert_eq!((st.mean[0], st.std[0]), (2.0, 1.0));
        assert_eq!(st.apply(&two).unwrap().array().data(), &[-1.0, 1.0]);

        let empty: [&LpsFrames; 0] = [];
        assert_eq!(fit_norm_stats(empty), Err(Error::Empty("training feature set")));
    }

    #[test]
    fn norm_inverse_and_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let set: Vec<LpsFrames> = (0..3)
            .map(|k| {
                let t = 5 + k;
                LpsFrames::new(
                    Array::matrix(t, 4, (0..t * 4).map(|_| rng.gen_range(-20.0..5.0)).collect()).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let st = fit_norm_stats(&set).unwrap();
        let normed: Vec<LpsFrames> = set.iter().map(|l| st.apply(l).unwrap()).collect();
        for (l, n) in set.iter().zip(&normed) {
            assert!(st.invert(n).unwrap().array().max_abs_diff(l.array()) < 1e-12);
        }
        let pooled = fit_norm_stats(&normed).unwrap();
        for f in 0..4 {
            assert!(pooled.mean[f].abs() < 1e-9);
            assert!((pooled.std[f] - 1.0).abs() < 1e-9);
        }
    }
}
