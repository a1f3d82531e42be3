//! Segmental SNR and BSS-eval (SDR/SIR/SAR), per-utterance evaluation and
//! report aggregation.
//!
//! BSS-eval here is the time-invariant variant: the estimate is projected
//! onto `span{clean}` and `span{clean, noise}` with no distortion filter.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{shape_err, Error, Result};
use crate::math;

/// Magnitude of the dB value reported for a vanishing denominator; all
/// BSS ratios are clamped to `±RATIO_CAP_DB`.
pub const RATIO_CAP_DB: f64 = 100.0;
/// Segments whose reference energy is below this are skipped.
pub const SILENCE_ENERGY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsnrConfig {
    pub segment_ms: f64,
    pub floor_db: f64,
    pub ceil_db: f64,
}

impl Default for SsnrConfig {
    fn default() -> Self {
        Self {
            segment_ms: 16.0,
            floor_db: -10.0,
            ceil_db: 35.0,
        }
    }
}

/// Mean over non-overlapping segments of the clamped per-segment SNR
/// `10·log10(Σref² / Σ(ref − est)²)`. A trailing partial segment counts
/// as a segment.
pub fn ssnr(reference: &[f64], estimate: &[f64], sample_rate: u32, cfg: &SsnrConfig) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(shape_err(
            "ssnr",
            format!("reference {} vs estimate {} samples", reference.len(), estimate.len()),
        ));
    }
    let seg = ((sample_rate as f64 * cfg.segment_ms / 1000.0) as usize).max(1);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (r, e) in reference.chunks(seg).zip(estimate.chunks(seg)) {
        let sig: f64 = r.iter().map(|v| v * v).sum();
        if sig < SILENCE_ENERGY {
            continue;
        }
        let err: f64 = r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
        let db = if err == 0.0 { cfg.ceil_db } else { math::db(sig / err) };
        sum += db.clamp(cfg.floor_db, cfg.ceil_db);
        count += 1;
    }
    if count == 0 {
        return Err(Error::AllSilent);
    }
    Ok(sum / count as f64)
}

/// Orthogonal split of an estimate: `estimate = s_target + e_interf + e_artif`.
#[derive(Debug, Clone, PartialEq)]
pub struct BssDecomposition {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BssEval {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
    pub decomposition: BssDecomposition,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn energy(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `10·log10(num/den)` clamped to `±RATIO_CAP_DB`; `+RATIO_CAP_DB` when
/// `den` is zero.
pub fn capped_ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return RATIO_CAP_DB;
    }
    if num <= 0.0 {
        return -RATIO_CAP_DB;
    }
    math::db(num / den).clamp(-RATIO_CAP_DB, RATIO_CAP_DB)
}

/// Relative size below which the noise reference's component orthogonal
/// to the clean reference counts as zero.
const COLLINEAR_TOL: f64 = 1e-10;

/// SDR, SIR and SAR of `estimate` against a clean and a noise reference.
pub fn bss_eval(clean: &[f64], noise: &[f64], estimate: &[f64]) -> Result<BssEval> {
    if clean.len() != noise.len() || clean.len() != estimate.len() {
        return Err(shape_err(
            "bss_eval",
            format!("lengths {} / {} / {}", clean.len(), noise.len(), estimate.len()),
        ));
    }
    let cc = energy(clean);
    let nn = energy(noise);
    if cc == 0.0 || nn == 0.0 {
        return Err(Error::Collinear);
    }
    // Gram–Schmidt basis of span{clean, noise}.
    let c_norm = math::sqrt(cc);
    let e1: Vec<f64> = clean.iter().map(|v| v / c_norm).collect();
    let k = dot(noise, &e1);
    let mut e2: Vec<f64> = noise.iter().zip(&e1).map(|(n, u)| n - k * u).collect();
    let rr = energy(&e2);
    if rr <= COLLINEAR_TOL * nn {
        return Err(Error::Collinear);
    }
    let r_norm = math::sqrt(rr);
    e2.iter_mut().for_each(|v| *v /= r_norm);

    let a1 = dot(estimate, &e1);
    let a2 = dot(estimate, &e2);
    let s_target: Vec<f64> = e1.iter().map(|u| a1 * u).collect();
    let e_interf: Vec<f64> = e2.iter().map(|u| a2 * u).collect();
    let e_artif: Vec<f64> = estimate
        .iter()
        .zip(&s_target)
        .zip(&e_interf)
        .map(|((x, s), i)| x - s - i)
        .collect();

    let s = energy(&s_target);
    let i = energy(&e_interf);
    let a = energy(&e_artif);
    let distortion: f64 = e_interf.iter().zip(&e_artif).map(|(x, y)| (x + y) * (x + y)).sum();
    let signal: f64 = s_target.iter().zip(&e_interf).map(|(x, y)| (x + y) * (x + y)).sum();
    Ok(BssEval {
        sdr: capped_ratio_db(s, distortion),
        sir: capped_ratio_db(s, i),
        sar: capped_ratio_db(signal, a),
        decomposition: BssDecomposition {
            s_target,
            e_interf,
            e_artif,
        },
    })
}

/// Produces an estimate of the clean signal from a noisy one.
pub trait Enhancer {
    fn enhance(&self, noisy: &Waveform) -> Result<Waveform>;
}

/// Metric values of one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
    pub ssnr: f64,
}

/// Score `estimate` against the clean signal and the noise actually added
/// to it. All three are trimmed to their common length first.
pub fn score(clean: &Waveform, scaled_noise: &Waveform, estimate: &Waveform) -> Result<Scores> {
    let n = clean.len().min(scaled_noise.len()).min(estimate.len());
    let (c, v, e) = (&clean.samples()[..n], &scaled_noise.samples()[..n], &estimate.samples()[..n]);
    let b = bss_eval(c, v, e)?;
    let s = ssnr(c, e, clean.sample_rate(), &SsnrConfig::default())?;
    Ok(Scores {
        sdr: b.sdr,
        sir: b.sir,
        sar: b.sar,
        ssnr: s,
    })
}

/// One evaluated utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub noise_type: String,
    pub snr_db: f64,
    pub scores: Scores,
}

/// An utterance that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFailure {
    pub id: String,
    pub reason: String,
}

/// Mean scores for one `(noise_type, snr_db)` condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub noise_type: String,
    pub snr_db: f64,
    pub n_utts: usize,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    /// Per-utterance detail in evaluation order.
    pub rows: Vec<EvalRow>,
    pub failures: Vec<EvalFailure>,
}

fn snr_key(snr: f64) -> i64 {
    libm::round(snr * 1e6) as i64
}

impl EvalReport {
    /// Means per condition, ordered by noise type name then SNR.
    pub fn conditions(&self) -> Vec<ConditionRow> {
        let mut groups: BTreeMap<(String, i64), Vec<&EvalRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.noise_type.clone(), snr_key(r.snr_db))).or_default().push(r);
        }
        groups
            .into_values()
            .map(|rows| {
                let n = rows.len() as f64;
                let mean = |f: fn(&Scores) -> f64| rows.iter().map(|r| f(&r.scores)).sum::<f64>() / n;
                ConditionRow {
                    noise_type: rows[0].noise_type.clone(),
                    snr_db: rows[0].snr_db,
                    n_utts: rows.len(),
                    scores: Scores {
                        sdr: mean(|s| s.sdr),
                        sir: mean(|s| s.sir),
                        sar: mean(|s| s.sar),
                        ssnr: mean(|s| s.ssnr),
                    },
                }
            })
            .collect()
    }

    /// Mean of each metric over every utterance.
    pub fn overall(&self) -> Option<Scores> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        let mean = |f: fn(&Scores) -> f64| self.rows.iter().map(|r| f(&r.scores)).sum::<f64>() / n;
        Some(Scores {
            sdr: mean(|s| s.sdr),
            sir: mean(|s| s.sir),
            sar: mean(|s| s.sar),
            ssnr: mean(|s| s.ssnr),
        })
    }
}

/// A test mixture held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct TestItem {
    pub id: String,
    pub noise_type: String,
    pub snr_db: f64,
    pub clean: Waveform,
    pub noisy: Waveform,
    pub scaled_noise: Waveform,
}

/// Enhance and score every item. Failures are recorded per item and do
/// not stop the batch.
pub fn evaluate_items(enhancer: &dyn Enhancer, items: &[TestItem]) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut report = EvalReport::default();
    for item in items {
        match enhancer.enhance(&item.noisy).and_then(|e| score(&item.clean, &item.scaled_noise, &e)) {
            Ok(scores) => report.rows.push(EvalRow {
                id: item.id.clone(),
                noise_type: item.noise_type.clone(),
                snr_db: item.snr_db,
                scores,
            }),
            Err(e) => report.failures.push(EvalFailure {
                id: item.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Text,
    Csv,
}

pub const CSV_HEADER: &str = "noise_type,snr_db,n_utts,sdr,sir,sar,ssnr";

fn snr_label(snr: f64) -> String {
    if snr == libm::round(snr) {
        format!("{}dB", snr as i64)
    } else {
        format!("{snr}dB")
    }
}

/// Render condition rows: CSV (lossless) or one text table per noise type
/// with columns `SDR SIR SAR SSNR`.
pub fn render_report(rows: &[ConditionRow], format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for r in rows {
                let s = &r.scores;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.noise_type, r.snr_db, r.n_utts, s.sdr, s.sir, s.sar, s.ssnr
                );
            }
        }
        ReportFormat::Text => {
            let mut by_type: BTreeMap<&str, Vec<&ConditionRow>> = BTreeMap::new();
            for r in rows {
                by_type.entry(&r.noise_type).or_default().push(r);
            }
            for (i, (name, mut group)) in by_type.into_iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                group.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
                let _ = writeln!(out, "Noise: {name}");
                let _ = writeln!(out, "{:<8}{:>9}{:>9}{:>9}{:>9}", "SNR", "SDR", "SIR", "SAR", "SSNR");
                for r in group {
                    let s = &r.scores;
                    let _ = writeln!(
                        out,
                        "{:<8}{:>9.3}{:>9.3}{:>9.3}{:>9.3}",
                        snr_label(r.snr_db),
                        s.sdr,
                        s.sir,
                        s.sar,
                        s.ssnr
                    );
                }
            }
        }
    }
    out
}

/// Parse the CSV produced by [`render_report`].
pub fn parse_report_csv(text: &str) -> Result<Vec<ConditionRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => return Err(Error::Config(format!("unexpected report header {other:?}"))),
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Config(format!("report line {}: {} fields", n + 2, fields.len())));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("report line {}: bad number `{}`", n + 2, fields[i])))
        };
        let n_utts = fields[2]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("report line {}: bad count `{}`", n + 2, fields[2])))?;
        rows.push(ConditionRow {
            noise_type: fields[0].to_string(),
            snr_db: num(1)?,
            n_utts,
            scores: Scores {
                sdr: num(3)?,
                sir: num(4)?,
                sar: num(5)?,
                ssnr: num(6)?,
            },
        });
    }
    Ok(rows)
}
