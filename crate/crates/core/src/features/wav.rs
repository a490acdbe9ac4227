use std::path::Path;

use super::{Utterance, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Reads a mono 16-bit PCM WAV at 16 kHz. Other layouts are rejected rather than converted.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Utterance> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate { found: spec.sample_rate, expected: SAMPLE_RATE });
    }
    if spec.channels != 1 {
        return Err(Error::AudioFormat(format!("{}: {} channels, expected mono", path.display(), spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::AudioFormat(format!("{}: expected 16-bit PCM", path.display())));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<Result<Vec<_>, _>>()?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Utterance::new(id, samples, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, utt: &Utterance) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: utt.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
    for &s in utt.samples() {
        writer.write_sample((s * 32767.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    writer.finalize()?;
    Ok(())
}
