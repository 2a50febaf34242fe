//! WAV input/output. The whole pipeline runs at a fixed 16 kHz mono —
//! resampling is out of scope, so anything else is rejected up front.

use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Reads a 16-bit PCM WAV at 16 kHz; stereo is averaged down to mono.
/// Samples come back as f64 in [-1, 1].
pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::InvalidInput(format!("cannot open wav {}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::InvalidInput(format!(
            "{}: expected {SAMPLE_RATE} Hz audio, got {} Hz (resampling is not supported)",
            path.display(),
            spec.sample_rate
        )));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::InvalidInput(format!(
            "{}: expected 16-bit integer PCM, got {}-bit {:?}",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::InvalidInput(format!(
            "{}: zero channels",
            path.display()
        )));
    }
    let raw: Vec<i16> = reader
        .samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let frames = raw.len() / channels;
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let sum: f64 = raw[f * channels..(f + 1) * channels]
            .iter()
            .map(|&s| s as f64 / 32768.0)
            .sum();
        out.push(sum / channels as f64);
    }
    Ok(out)
}

/// Writes mono 16-bit PCM at 16 kHz; samples are clipped to [-1, 1].
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => io,
        other => std::io::Error::other(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::write(path)(to_io(e)))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::write(path)(to_io(e)))?;
    }
    writer.finalize().map_err(|e| Error::write(path)(to_io(e)))
}
