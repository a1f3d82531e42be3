//! Manifest-driven training and evaluation. Mixtures are regenerated on the
//! fly from each record's files, SNR and mixing seed.

use std::collections::BTreeMap;
use std::path::PathBuf;

use tapcrnn_core::dsp::{fit_norm_stats, mix_at_snr, StftConfig, Waveform};
use tapcrnn_core::metrics::{evaluate_items, EvalFailure, EvalReport, TestItem};
use tapcrnn_core::models::{
    split_indices, train, Checkpoint, EpochStats, ModelConfig, ModelParams, MixtureFeatures, TrainConfig,
    TrainingRecord,
};
use tapcrnn_core::Error as CoreError;

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Record, Split};
use crate::parallel::Pool;
use crate::wav::read_wav;

/// Every distinct audio file of `records`, read once. Unreadable files map
/// to their error message.
fn load_audio(records: &[&Record], pool: &Pool) -> BTreeMap<PathBuf, std::result::Result<Waveform, String>> {
    let mut paths: Vec<&PathBuf> = records.iter().flat_map(|r| [&r.clean_path, &r.noise_path]).collect();
    paths.sort();
    paths.dedup();
    let loaded = pool.map(paths.len(), |i| read_wav(paths[i]).map_err(|e| e.to_string()));
    paths.into_iter().cloned().zip(loaded).collect()
}

fn mix_features(record: &Record, clean: &Waveform, noise: &Waveform, stft: &StftConfig) -> Result<MixtureFeatures> {
    Ok(MixtureFeatures::from_pair(clean, noise, record.snr_db, record.mix_seed, stft)?)
}

/// Train on the manifest's `train` records. Normalization statistics are
/// fitted on the utterances that remain after the validation hold-out.
pub fn train_from_manifest(
    manifest: &DatasetManifest,
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    stft: &StftConfig,
    pool: &Pool,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<Checkpoint> {
    config.validate()?;
    train_cfg.validate()?;
    let records = manifest.split(Split::Train);
    if records.is_empty() {
        return Err(CoreError::Empty("training records in manifest").into());
    }
    let audio = load_audio(&records, pool);
    let get = |p: &PathBuf| -> Result<&Waveform> {
        audio[p].as_ref().map_err(|e| Error::Format { path: p.clone(), detail: e.clone() })
    };
    let features = pool.map(records.len(), |i| {
        let r = records[i];
        mix_features(r, get(&r.clean_path)?, get(&r.noise_path)?, stft)
    });
    let features = features.into_iter().collect::<Result<Vec<_>>>()?;
    let (train_idx, _) = split_indices(features.len(), train_cfg.validation_fraction, train_cfg.seed);
    let fit_on = if train_idx.is_empty() { (0..features.len()).collect() } else { train_idx };
    let norm = fit_norm_stats(fit_on.iter().map(|&i| &features[i].noisy).collect::<Vec<_>>())?;
    let examples = features.iter().map(|f| f.normalize(&norm)).collect::<tapcrnn_core::Result<Vec<_>>>()?;
    let params = ModelParams::build(config)?;
    let outcome = train(config, params, &examples, train_cfg, pool, observer)?;
    let record = TrainingRecord {
        train_config: Some(*train_cfg),
        epochs_completed: outcome.history.len(),
        history: outcome.history,
    };
    Ok(Checkpoint::new(config.clone(), *stft, norm, outcome.params, record)?)
}

/// Enhance and score every `test` record. Unreadable files and failed
/// utterances become row-level failures; rows keep manifest order.
pub fn evaluate_batch(ck: &Checkpoint, manifest: &DatasetManifest, pool: &Pool) -> Result<EvalReport> {
    let records = manifest.split(Split::Test);
    if records.is_empty() {
        return Err(CoreError::Empty("test records in manifest").into());
    }
    let audio = load_audio(&records, pool);
    let parts = pool.map(records.len(), |i| -> std::result::Result<EvalReport, String> {
        let r = records[i];
        let clean = audio[&r.clean_path].as_ref().map_err(Clone::clone)?;
        let noise = audio[&r.noise_path].as_ref().map_err(Clone::clone)?;
        let m = mix_at_snr(clean, noise, r.snr_db, r.mix_seed).map_err(|e| e.to_string())?;
        let item = TestItem {
            id: r.id.clone(),
            noise_type: r.noise_type.clone(),
            snr_db: r.snr_db,
            clean: clean.clone(),
            noisy: m.noisy,
            scaled_noise: m.scaled_noise,
        };
        evaluate_items(ck, std::slice::from_ref(&item)).map_err(|e| e.to_string())
    });
    let mut report = EvalReport::default();
    for (r, part) in records.iter().zip(parts) {
        match part {
            Ok(p) => {
                report.rows.extend(p.rows);
                report.failures.extend(p.failures);
            }
            Err(reason) => report.failures.push(EvalFailure { id: r.id.clone(), reason }),
        }
    }
    Ok(report)
}
