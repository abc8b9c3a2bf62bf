//! 16-bit PCM mono WAV.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{FormatError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    /// Samples in `[-1, 1)`, `pcm / 32768`.
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(FormatError::Unsupported {
            what: "wav channel count",
            detail: format!("{} channels; convert to mono first", spec.channels),
        });
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(FormatError::Unsupported {
            what: "wav sample format",
            detail: format!(
                "{:?} {}-bit; expected 16-bit PCM",
                spec.sample_format, spec.bits_per_sample
            ),
        });
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Waveform {
        samples,
        sample_rate: spec.sample_rate,
    })
}

pub fn to_pcm(v: f64) -> i16 {
    (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in &wave.samples {
        writer.write_sample(to_pcm(s))?;
    }
    writer.finalize()?;
    Ok(())
}
