//! The `tapcrnn` command line.
//!
//! Every subcommand parses its flags into an all-optional argument struct,
//! fills gaps from the `--config` TOML file (flags take precedence), and
//! resolves the result into a concrete settings struct. The settings are
//! what a run manifest records and what `replay` re-executes.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tapcrnn_core::dsp::{StftConfig, WindowKind};
use tapcrnn_core::metrics::{render_report, ConditionRow, ReportFormat};
use tapcrnn_core::models::{Architecture, Checkpoint, ModelConfig, TrainConfig, LR_DESK, LR_LITERAL};
use tapcrnn_core::synth::{cry, noise, noise_kind_for};

use crate::checkpoint::{self, Provenance};
use crate::dump;
use crate::error::{exit, Error, Result};
use crate::fsutil::{read_text, write_atomic};
use crate::manifest::{noise_type_of, DatasetManifest, Record, RunManifest, SnrList, Split, DATASET_VERSION};
use crate::parallel::{worker_count, Pool, WORKERS_ENV};
use crate::pipeline::{evaluate_batch, train_from_manifest};
use crate::wav::{read_wav, write_wav};

#[derive(Debug, Parser)]
#[command(name = "tapcrnn", version, about = "Acoustic signal enhancement with temporal attentive pooling CRNNs")]
pub struct Cli {
    /// TOML file supplying values for flags not given on the command line.
    /// Keys are flag names, either at top level or under a table named
    /// after the subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for per-utterance parallelism.
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic cry-like clean signals and noise recordings.
    SynthData(SynthDataArgs),
    /// Write a dataset manifest pairing every clean file, noise file and SNR.
    Mix(MixArgs),
    /// Train a model on the manifest's training records.
    Train(TrainArgs),
    /// Enhance one WAV file.
    Enhance(EnhanceArgs),
    /// Score a checkpoint on the manifest's test records.
    Evaluate(EvaluateArgs),
    /// Train and evaluate several architectures under identical settings.
    Compare(CompareArgs),
    /// Re-run a command from its run manifest.
    Replay(ReplayArgs),
}

/// Model and feature scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-size networks on 257-bin features.
    Paper,
    /// Reduced networks that train in minutes on one core.
    Desk,
    /// 17-bin features and minimal networks, for smoke tests.
    Tiny,
}

impl Preset {
    pub fn model(self, arch: Architecture, seed: u64) -> ModelConfig {
        match self {
            Preset::Paper => ModelConfig::paper(arch, seed),
            Preset::Desk => ModelConfig::desk(arch, seed),
            Preset::Tiny => ModelConfig::tiny(arch, seed),
        }
    }

    /// Learning rate used when `--lr` is not given.
    pub fn default_lr(self) -> f64 {
        match self {
            Preset::Paper => LR_LITERAL,
            Preset::Desk => LR_DESK,
            Preset::Tiny => 1e-2,
        }
    }

    pub fn stft(self) -> StftConfig {
        match self {
            Preset::Paper | Preset::Desk => StftConfig::default(),
            Preset::Tiny => StftConfig::new(32, 16, WindowKind::PeriodicHann).expect("32/16 Hann satisfies COLA"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FormatArg {
    Text,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => ReportFormat::Text,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

fn missing(flag: &str) -> Error {
    Error::Usage(format!("missing required --{flag}"))
}

// ----- synth-data -----

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct SynthDataArgs {
    /// Output directory; files go to `clean/` and `noise/` inside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of clean signals [default: 8].
    #[arg(long)]
    pub n_clean: Option<usize>,
    /// Number of noise signals, cycling white, pink, babble, am_tone [default: 3].
    #[arg(long)]
    pub n_noise: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Length of every file in seconds [default: 2].
    #[arg(long)]
    pub duration_s: Option<f64>,
    /// [default: 16000]
    #[arg(long)]
    pub sample_rate: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDataSettings {
    pub out: PathBuf,
    pub n_clean: usize,
    pub n_noise: usize,
    pub seed: u64,
    pub duration_s: f64,
    pub sample_rate: u32,
}

impl SynthDataArgs {
    fn resolve(self) -> Result<SynthDataSettings> {
        Ok(SynthDataSettings {
            out: self.out.ok_or_else(|| missing("out"))?,
            n_clean: self.n_clean.unwrap_or(8),
            n_noise: self.n_noise.unwrap_or(3),
            seed: self.seed.unwrap_or(0),
            duration_s: self.duration_s.unwrap_or(2.0),
            sample_rate: self.sample_rate.unwrap_or(16_000),
        })
    }
}

/// Independent seed streams: adding noise files never changes clean ones.
fn seed_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn synth_data(s: &SynthDataSettings) -> Result<Vec<PathBuf>> {
    if !(s.duration_s > 0.0) {
        return Err(Error::Usage(format!("--duration-s must be positive, got {}", s.duration_s)));
    }
    let mut artifacts = Vec::new();
    let mut clean_seeds = seed_stream(s.seed, 0);
    for i in 0..s.n_clean {
        let path = s.out.join("clean").join(format!("cry_{i:03}.wav"));
        write_audio(&cry(s.duration_s, s.sample_rate, clean_seeds.next_u64())?, &path)?;
        artifacts.push(path);
    }
    let mut noise_seeds = seed_stream(s.seed, 1);
    for j in 0..s.n_noise {
        let kind = noise_kind_for(j);
        let path = s.out.join("noise").join(format!("{}_{j:03}.wav", kind.name()));
        write_audio(&noise(kind, s.duration_s, s.sample_rate, noise_seeds.next_u64())?, &path)?;
        artifacts.push(path);
    }
    Ok(artifacts)
}

fn write_audio(w: &tapcrnn_core::dsp::Waveform, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_wav(w, path)
}

// ----- mix -----

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct MixArgs {
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
    /// Directory of clean WAV files.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Directory of noise WAV files; a file's noise type is its name
    /// without a trailing `_<number>`.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    /// Comma-separated SNRs in dB [default: -5,0,5].
    #[arg(long, allow_hyphen_values = true)]
    pub snrs: Option<SnrList>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Split assigned to every record [default: train].
    #[arg(long)]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSettings {
    pub manifest_out: PathBuf,
    pub clean: PathBuf,
    pub noise: PathBuf,
    pub snrs: SnrList,
    pub seed: u64,
    pub split: Split,
}

impl MixArgs {
    fn resolve(self) -> Result<MixSettings> {
        Ok(MixSettings {
            manifest_out: self.manifest_out.ok_or_else(|| missing("manifest-out"))?,
            clean: self.clean.ok_or_else(|| missing("clean"))?,
            noise: self.noise.ok_or_else(|| missing("noise"))?,
            snrs: self.snrs.unwrap_or_else(|| SnrList(vec![-5.0, 0.0, 5.0])),
            seed: self.seed.unwrap_or(0),
            split: self.split.unwrap_or(Split::Train),
        })
    }
}

/// Sorted absolute paths of the `.wav` files in `dir`.
fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
            files.push(fs::canonicalize(&p).map_err(|e| Error::io(&p, e))?);
        }
    }
    if files.is_empty() {
        return Err(Error::format(dir, "no .wav files"));
    }
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn mix_manifest(s: &MixSettings) -> Result<DatasetManifest> {
    if s.snrs.0.is_empty() {
        return Err(Error::Usage("empty SNR list".into()));
    }
    let clean = wav_files(&s.clean)?;
    let noise = wav_files(&s.noise)?;
    let mut seeds = ChaCha8Rng::seed_from_u64(s.seed);
    let mut records = Vec::with_capacity(clean.len() * noise.len() * s.snrs.0.len());
    for c in &clean {
        for n in &noise {
            for &snr in &s.snrs.0 {
                records.push(Record {
                    id: format!("{}+{}@{snr}dB", stem(c), stem(n)),
                    clean_path: c.clone(),
                    noise_path: n.clone(),
                    noise_type: noise_type_of(n),
                    snr_db: snr,
                    split: s.split,
                    mix_seed: seeds.next_u64(),
                });
            }
        }
    }
    Ok(DatasetManifest { version: DATASET_VERSION, seed: s.seed, records })
}

// ----- train -----

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct TrainArgs {
    /// One of dnn, cnn, rnn, crnn, tap_crnn.
    #[arg(long)]
    pub arch: Option<Architecture>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Checkpoint path; the loss history goes to `<out>.loss.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// [default: desk]
    #[arg(long)]
    pub preset: Option<Preset>,
    /// [default: 300]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 1e-4 paper, 3e-3 desk, 1e-2 tiny]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Utterances per batch [default: 32].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Share of training records held out for validation loss [default: 0.1].
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub arch: Architecture,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub preset: Preset,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl TrainArgs {
    fn resolve(self) -> Result<TrainSettings> {
        let d = TrainConfig::default();
        let preset = self.preset.unwrap_or(Preset::Desk);
        Ok(TrainSettings {
            arch: self.arch.ok_or_else(|| missing("arch"))?,
            manifest: self.manifest.ok_or_else(|| missing("manifest"))?,
            out: self.out.ok_or_else(|| missing("out"))?,
            preset,
            epochs: self.epochs.unwrap_or(d.epochs),
            lr: self.lr.unwrap_or(preset.default_lr()),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            validation_fraction: self.validation_fraction.unwrap_or(d.validation_fraction),
            seed: self.seed.unwrap_or(0),
        })
    }
}

impl TrainSettings {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            validation_fraction: self.validation_fraction,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

fn loss_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".loss.csv");
    PathBuf::from(s)
}

fn progress(label: &str, epochs: usize) -> impl FnMut(&tapcrnn_core::models::EpochStats) + '_ {
    move |s| {
        let val = s.validation_loss.map(|v| format!(" val {v:.4}")).unwrap_or_default();
        eprintln!("{label} epoch {}/{epochs} train {:.4}{val}", s.epoch + 1, s.train_loss);
    }
}

/// Sample rate shared by every file of the manifest's training split.
fn training_sample_rate(m: &DatasetManifest) -> Option<u32> {
    let r = m.split(Split::Train).into_iter().next()?;
    hound::WavReader::open(&r.clean_path).ok().map(|w| w.spec().sample_rate)
}

fn train_one(
    arch: Architecture,
    s: &TrainSettings,
    manifest: &DatasetManifest,
    pool: &Pool,
    out: &Path,
) -> Result<(Checkpoint, Vec<PathBuf>)> {
    let config = s.preset.model(arch, s.seed);
    let mut observer = progress(arch.name(), s.epochs);
    let ck = train_from_manifest(manifest, &config, &s.train_config(), &s.preset.stft(), pool, &mut observer)?;
    let provenance = Provenance {
        dataset_manifest: Some(fs::canonicalize(&s.manifest).map_err(|e| Error::io(&s.manifest, e))?),
        sample_rate: training_sample_rate(manifest),
    };
    checkpoint::save(&ck, &provenance, out)?;
    let losses = loss_path(out);
    write_atomic(&losses, dump::loss_csv(&ck.record.history).as_bytes())?;
    Ok((ck, vec![out.to_path_buf(), losses]))
}

pub fn train_cmd(s: &TrainSettings, pool: &Pool) -> Result<Vec<PathBuf>> {
    let manifest = DatasetManifest::load(&s.manifest)?;
    train_one(s.arch, s, &manifest, pool, &s.out).map(|(_, a)| a)
}

// ----- enhance -----

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct EnhanceArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Noise estimate of two-head models.
    #[arg(long)]
    pub noise_out: Option<PathBuf>,
    /// Per-frame attention weights of both heads.
    #[arg(long)]
    pub dump_attention: Option<PathBuf>,
    /// Directory for noisy/enhanced/noise LPS CSVs.
    #[arg(long)]
    pub dump_spectrograms: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceSettings {
    pub ckpt: PathBuf,
    pub input: PathBuf,
    pub out: PathBuf,
    pub noise_out: Option<PathBuf>,
    pub dump_attention: Option<PathBuf>,
    pub dump_spectrograms: Option<PathBuf>,
}

impl EnhanceArgs {
    fn resolve(self) -> Result<EnhanceSettings> {
        Ok(EnhanceSettings {
            ckpt: self.ckpt.ok_or_else(|| missing("ckpt"))?,
            input: self.input.ok_or_else(|| missing("in"))?,
            out: self.out.ok_or_else(|| missing("out"))?,
            noise_out: self.noise_out,
            dump_attention: self.dump_attention,
            dump_spectrograms: self.dump_spectrograms,
        })
    }
}

pub fn enhance_cmd(s: &EnhanceSettings) -> Result<Vec<PathBuf>> {
    let (ck, header) = checkpoint::load(&s.ckpt)?;
    let noisy = read_wav(&s.input)?;
    if let Some(rate) = header.provenance.sample_rate {
        if rate != noisy.sample_rate() {
            return Err(tapcrnn_core::Error::SampleRate(noisy.sample_rate(), rate).into());
        }
    }
    let arch = ck.config.architecture;
    if s.dump_attention.is_some() && arch != Architecture::TapCrnn {
        return Err(tapcrnn_core::Error::NoAttention(arch.name()).into());
    }
    if s.noise_out.is_some() && arch.heads() < 2 {
        return Err(Error::Usage(format!("architecture {arch} has no noise head")));
    }
    let e = ck.enhance(&noisy)?;
    let mut artifacts = vec![s.out.clone()];
    write_audio(&e.enhanced, &s.out)?;
    if let (Some(path), Some(n)) = (&s.noise_out, &e.noise) {
        write_audio(n, path)?;
        artifacts.push(path.clone());
    }
    if let (Some(path), Some((te, tn))) = (&s.dump_attention, &e.traces) {
        write_atomic(path, dump::attention_csv(te, tn).as_bytes())?;
        artifacts.push(path.clone());
    }
    if let Some(dir) = &s.dump_spectrograms {
        let mut out = vec![("noisy_lps.csv", &e.noisy_lps), ("enhanced_lps.csv", &e.enhanced_lps)];
        if let Some(n) = &e.noise_lps {
            out.push(("noise_lps.csv", n));
        }
        for (name, lps) in out {
            let path = dir.join(name);
            write_atomic(&path, dump::lps_csv(lps).as_bytes())?;
            artifacts.push(path);
        }
    }
    Ok(artifacts)
}

// ----- evaluate -----

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Report path; per-utterance scores go to `<report-out>.details.csv`.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    /// [default: text]
    #[arg(long)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateSettings {
    pub ckpt: PathBuf,
    pub manifest: PathBuf,
    pub report_out: PathBuf,
    pub format: FormatArg,
}

impl EvaluateArgs {
    fn resolve(self) -> Result<EvaluateSettings> {
        Ok(EvaluateSettings {
            ckpt: self.ckpt.ok_or_else(|| missing("ckpt"))?,
            manifest: self.manifest.ok_or_else(|| missing("manifest"))?,
            report_out: self.report_out.ok_or_else(|| missing("report-out"))?,
            format: self.format.unwrap_or(FormatArg::Text),
        })
    }
}

fn details_path(report: &Path) -> PathBuf {
    let mut s = report.as_os_str().to_owned();
    s.push(".details.csv");
    PathBuf::from(s)
}

/// Artifacts written, and whether any row failed.
pub struct EvalOutcome {
    pub artifacts: Vec<PathBuf>,
    pub conditions: Vec<ConditionRow>,
    pub failures: usize,
}

fn evaluate_to(ck: &Checkpoint, manifest: &DatasetManifest, report_out: &Path, format: FormatArg, pool: &Pool) -> Result<EvalOutcome> {
    let report = evaluate_batch(ck, manifest, pool)?;
    let conditions = report.conditions();
    write_atomic(report_out, render_report(&conditions, format.into()).as_bytes())?;
    let details = details_path(report_out);
    write_atomic(&details, dump::details_csv(&report.rows, &report.failures).as_bytes())?;
    for f in &report.failures {
        eprintln!("failed: {}: {}", f.id, f.reason);
    }
    Ok(EvalOutcome { artifacts: vec![report_out.to_path_buf(), details], conditions, failures: report.failures.len() })
}

pub fn evaluate_cmd(s: &EvaluateSettings, pool: &Pool) -> Result<EvalOutcome> {
    let (ck, _) = checkpoint::load(&s.ckpt)?;
    let manifest = DatasetManifest::load(&s.manifest)?;
    let out = evaluate_to(&ck, &manifest, &s.report_out, s.format, pool)?;
    print!("{}", render_report(&out.conditions, ReportFormat::Text));
    Ok(out)
}

// ----- compare -----

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct CompareArgs {
    /// Comma-separated architectures, or `all` [default: all].
    #[arg(long)]
    pub archs: Option<String>,
    /// Manifest with both train and test records.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// [default: 300]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// [default: desk]
    #[arg(long)]
    pub preset: Option<Preset>,
    /// [default: 1e-4 paper, 3e-3 desk, 1e-2 tiny]
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSettings {
    pub archs: Vec<Architecture>,
    pub out: PathBuf,
    pub train: TrainSettings,
}

pub fn parse_archs(list: &str) -> Result<Vec<Architecture>> {
    if list.trim() == "all" {
        return Ok(Architecture::ALL.to_vec());
    }
    let archs = list
        .split(',')
        .map(|a| a.trim().parse::<Architecture>().map_err(|e| Error::Usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    if archs.is_empty() {
        return Err(Error::Usage("empty architecture list".into()));
    }
    Ok(archs)
}

impl CompareArgs {
    fn resolve(self) -> Result<CompareSettings> {
        let out = self.out.ok_or_else(|| missing("out"))?;
        let archs = parse_archs(self.archs.as_deref().unwrap_or("all"))?;
        let train = TrainArgs {
            arch: Some(archs[0]),
            manifest: self.manifest,
            out: Some(out.clone()),
            preset: self.preset,
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            validation_fraction: None,
            seed: self.seed,
        }
        .resolve()?;
        Ok(CompareSettings { archs, out, train })
    }
}

pub const COMPARE_HEADER: &str = "arch,noise_type,snr_db,n_utts,sdr,sir,sar,ssnr";

pub fn compare_cmd(s: &CompareSettings, pool: &Pool) -> Result<EvalOutcome> {
    let manifest = DatasetManifest::load(&s.train.manifest)?;
    let mut artifacts = Vec::new();
    let mut failures = 0;
    let mut combined = format!("{COMPARE_HEADER}\n");
    let mut summary = String::new();
    for &arch in &s.archs {
        let ckpt = s.out.join(format!("{}.ckpt", arch.name()));
        let (ck, written) = train_one(arch, &s.train, &manifest, pool, &ckpt)?;
        artifacts.extend(written);
        let report = s.out.join(format!("{}.report.csv", arch.name()));
        let eval = evaluate_to(&ck, &manifest, &report, FormatArg::Csv, pool)?;
        artifacts.extend(eval.artifacts);
        failures += eval.failures;
        for r in &eval.conditions {
            let c = &r.scores;
            combined.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                arch.name(),
                r.noise_type,
                r.snr_db,
                r.n_utts,
                c.sdr,
                c.sir,
                c.sar,
                c.ssnr
            ));
        }
        summary.push_str(&format!("{arch}\n{}\n", render_report(&eval.conditions, ReportFormat::Text)));
    }
    let path = s.out.join("compare.csv");
    write_atomic(&path, combined.as_bytes())?;
    artifacts.push(path);
    print!("{summary}");
    Ok(EvalOutcome { artifacts, conditions: Vec::new(), failures })
}

// ----- replay -----

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// A `.run.json` file written next to an artifact.
    pub run_manifest: PathBuf,
}

// ----- dispatch -----

/// A fully resolved command.
#[derive(Debug, Clone, PartialEq)]
pub enum Resolved {
    SynthData(SynthDataSettings),
    Mix(MixSettings),
    Train(TrainSettings),
    Enhance(EnhanceSettings),
    Evaluate(EvaluateSettings),
    Compare(CompareSettings),
}

impl Resolved {
    pub fn name(&self) -> &'static str {
        match self {
            Resolved::SynthData(_) => "synth-data",
            Resolved::Mix(_) => "mix",
            Resolved::Train(_) => "train",
            Resolved::Enhance(_) => "enhance",
            Resolved::Evaluate(_) => "evaluate",
            Resolved::Compare(_) => "compare",
        }
    }

    fn settings_json(&self) -> serde_json::Value {
        let v = match self {
            Resolved::SynthData(s) => serde_json::to_value(s),
            Resolved::Mix(s) => serde_json::to_value(s),
            Resolved::Train(s) => serde_json::to_value(s),
            Resolved::Enhance(s) => serde_json::to_value(s),
            Resolved::Evaluate(s) => serde_json::to_value(s),
            Resolved::Compare(s) => serde_json::to_value(s),
        };
        v.expect("settings serialize")
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Resolved::SynthData(s) => Some(s.seed),
            Resolved::Mix(s) => Some(s.seed),
            Resolved::Train(s) => Some(s.seed),
            Resolved::Compare(s) => Some(s.train.seed),
            Resolved::Enhance(_) | Resolved::Evaluate(_) => None,
        }
    }

    pub fn from_run_manifest(m: &RunManifest, path: &Path) -> Result<Self> {
        fn de<T: DeserializeOwned>(v: &serde_json::Value, path: &Path) -> Result<T> {
            serde_json::from_value(v.clone()).map_err(|e| Error::format(path, format!("bad recorded settings: {e}")))
        }
        let v = &m.config;
        Ok(match m.command.as_str() {
            "synth-data" => Resolved::SynthData(de(v, path)?),
            "mix" => Resolved::Mix(de(v, path)?),
            "train" => Resolved::Train(de(v, path)?),
            "enhance" => Resolved::Enhance(de(v, path)?),
            "evaluate" => Resolved::Evaluate(de(v, path)?),
            "compare" => Resolved::Compare(de(v, path)?),
            other => return Err(Error::format(path, format!("unknown command `{other}`"))),
        })
    }
}

/// Values for the flags of `command` from a TOML file: a table named after
/// the command if present, otherwise the top level.
fn config_values(path: &Path, command: &str) -> Result<serde_json::Map<String, serde_json::Value>> {
    let text = read_text(path)?;
    let table: toml::Table = text.parse().map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
    let section = match table.get(command) {
        Some(toml::Value::Table(t)) => t.clone(),
        _ => table,
    };
    let json = serde_json::to_value(section).expect("TOML values map to JSON");
    let mut out = serde_json::Map::new();
    if let serde_json::Value::Object(map) = json {
        for (k, v) in map {
            if !matches!(v, serde_json::Value::Object(_)) {
                out.insert(k.replace('_', "-"), v);
            }
        }
    }
    Ok(out)
}

/// Fill the unset fields of `args` from the config file.
fn merge<T: Serialize + DeserializeOwned>(args: T, config: Option<&Path>, command: &str) -> Result<T> {
    let Some(path) = config else { return Ok(args) };
    let mut value = serde_json::to_value(&args).expect("argument structs serialize");
    let map = value.as_object_mut().expect("argument structs are maps");
    for (k, v) in config_values(path, command)? {
        match map.get(&k) {
            None => return Err(Error::Usage(format!("{}: unknown key `{k}` for {command}", path.display()))),
            Some(serde_json::Value::Null) => {
                map.insert(k, v);
            }
            Some(_) => {}
        }
    }
    serde_json::from_value(value).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
}

pub fn resolve(command: Command, config: Option<&Path>) -> Result<Resolved> {
    Ok(match command {
        Command::SynthData(a) => Resolved::SynthData(merge(a, config, "synth-data")?.resolve()?),
        Command::Mix(a) => Resolved::Mix(merge(a, config, "mix")?.resolve()?),
        Command::Train(a) => Resolved::Train(merge(a, config, "train")?.resolve()?),
        Command::Enhance(a) => Resolved::Enhance(merge(a, config, "enhance")?.resolve()?),
        Command::Evaluate(a) => Resolved::Evaluate(merge(a, config, "evaluate")?.resolve()?),
        Command::Compare(a) => Resolved::Compare(merge(a, config, "compare")?.resolve()?),
        Command::Replay(_) => unreachable!("replay is resolved from its manifest"),
    })
}

/// Run a resolved command, then write its run manifest next to every
/// artifact. Returns the process exit code.
pub fn execute(cmd: &Resolved, workers: usize) -> Result<i32> {
    let start = Instant::now();
    let pool = Pool::new(workers)?;
    let (artifacts, code) = match cmd {
        Resolved::SynthData(s) => (synth_data(s)?, exit::SUCCESS),
        Resolved::Mix(s) => {
            mix_manifest(s)?.save(&s.manifest_out)?;
            (vec![s.manifest_out.clone()], exit::SUCCESS)
        }
        Resolved::Train(s) => (train_cmd(s, &pool)?, exit::SUCCESS),
        Resolved::Enhance(s) => (enhance_cmd(s)?, exit::SUCCESS),
        Resolved::Evaluate(s) => {
            let o = evaluate_cmd(s, &pool)?;
            (o.artifacts, if o.failures > 0 { exit::PARTIAL } else { exit::SUCCESS })
        }
        Resolved::Compare(s) => {
            let o = compare_cmd(s, &pool)?;
            (o.artifacts, if o.failures > 0 { exit::PARTIAL } else { exit::SUCCESS })
        }
    };
    let run = RunManifest {
        command: cmd.name().to_string(),
        config: cmd.settings_json(),
        seed: cmd.seed(),
        cwd: std::env::current_dir().map_err(|e| Error::io(Path::new("."), e))?,
        artifacts,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    run.write_siblings()?;
    Ok(code)
}

fn replay(path: &Path, workers: usize) -> Result<i32> {
    let m = RunManifest::load(path)?;
    let cmd = Resolved::from_run_manifest(&m, path)?;
    std::env::set_current_dir(&m.cwd).map_err(|e| Error::io(&m.cwd, e))?;
    execute(&cmd, workers)
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
        }
    };
    let result = worker_count(cli.workers).and_then(|workers| match cli.command {
        Command::Replay(r) => replay(&r.run_manifest, workers),
        command => resolve(command, cli.config.as_deref()).and_then(|cmd| execute(&cmd, workers)),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
