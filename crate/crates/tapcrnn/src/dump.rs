//! CSV renderings of attention traces, spectrograms, loss histories and
//! per-utterance scores.

use std::fmt::Write;

use tapcrnn_core::dsp::LpsFrames;
use tapcrnn_core::metrics::{EvalFailure, EvalRow};
use tapcrnn_core::models::EpochStats;
use tapcrnn_core::tap::AttentionTrace;

/// One row per frame: `frame,alpha_enh,beta_enh,alpha_noise,beta_noise`.
pub fn attention_csv(enh: &AttentionTrace, noise: &AttentionTrace) -> String {
    let mut out = String::from("frame,alpha_enh,beta_enh,alpha_noise,beta_noise\n");
    for t in 0..enh.alpha.len() {
        let _ = writeln!(out, "{t},{},{},{},{}", enh.alpha[t], enh.beta[t], noise.alpha[t], noise.beta[t]);
    }
    out
}

/// One row per frame, one column per frequency bin.
pub fn lps_csv(lps: &LpsFrames) -> String {
    let mut out = String::from("frame");
    for f in 0..lps.bins() {
        let _ = write!(out, ",bin{f}");
    }
    out.push('\n');
    for t in 0..lps.frames() {
        let _ = write!(out, "{t}");
        for v in lps.array().row_slice(t) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// `epoch,train_loss,validation_loss`; the last column is empty without a
/// validation set.
pub fn loss_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,validation_loss\n");
    for s in history {
        let v = s.validation_loss.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{v}", s.epoch, s.train_loss);
    }
    out
}

/// Per-utterance scores with the utterance id first; failed rows carry
/// their reason and empty scores.
pub fn details_csv(rows: &[EvalRow], failures: &[EvalFailure]) -> String {
    let mut out = String::from("id,noise_type,snr_db,sdr,sir,sar,ssnr,error\n");
    for r in rows {
        let s = &r.scores;
        let _ = writeln!(out, "{},{},{},{},{},{},{},", r.id, r.noise_type, r.snr_db, s.sdr, s.sir, s.sar, s.ssnr);
    }
    for f in failures {
        let reason = f.reason.replace(['"', '\n'], "'");
        let _ = writeln!(out, "{},,,,,,,\"{reason}\"", f.id);
    }
    out
}
