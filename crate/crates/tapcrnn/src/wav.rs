//! Mono WAV IO. Reading accepts 16-bit PCM or 32-bit float with any channel
//! count (channels are averaged); writing always produces 16-bit PCM mono
//! with hard clipping to `[-1, 1]`.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use tapcrnn_core::dsp::Waveform;

use crate::error::{Error, Result};

const PCM_SCALE: f64 = 32768.0;

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let wav = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut reader = WavReader::open(path).map_err(wav)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / PCM_SCALE))
            .collect::<Result<_, _>>()
            .map_err(wav)?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(wav)?,
        (format, bits) => {
            return Err(Error::format(path, format!("unsupported codec: {bits}-bit {format:?}")));
        }
    };
    if interleaved.is_empty() {
        return Err(Error::format(path, "no audio samples"));
    }
    if interleaved.len() % channels != 0 {
        return Err(Error::format(path, "truncated final frame"));
    }
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(mono, spec.sample_rate).map_err(|e| Error::format(path, e.to_string()))
}

/// Nearest 16-bit code after clipping to `[-1, 1]`.
pub fn quantize(sample: f64) -> i16 {
    (sample.clamp(-1.0, 1.0) * PCM_SCALE).round().clamp(-PCM_SCALE, PCM_SCALE - 1.0) as i16
}

pub fn write_wav(waveform: &Waveform, path: &Path) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wav = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut writer = WavWriter::create(path, spec).map_err(wav)?;
    for &s in waveform.samples() {
        writer.write_sample(quantize(s)).map_err(wav)?;
    }
    writer.finalize().map_err(wav)
}
