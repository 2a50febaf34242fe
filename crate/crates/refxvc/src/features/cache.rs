//! Binary per-utterance feature cache records.
//!
//! Mel record: magic `RXVCMEL1`, then u32 T, u32 80, then T×80 f32 values
//! (little-endian, row-major). F0 record: magic `RXVCF0_1`, u32 T, T f32 F0
//! values in Hz, then T voicing bytes (0/1). Values are stored at f32
//! precision — the cache is a transport format, not the numerics' home.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::mel::MelSpectrogram;
use super::pitch::PitchContour;
use crate::error::{Error, Result};

pub const MEL_MAGIC: &[u8; 8] = b"RXVCMEL1";
pub const F0_MAGIC: &[u8; 8] = b"RXVCF0_1";

pub fn write_mel_cache(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(Error::write(path))?;
    let mut buf = Vec::with_capacity(16 + mel.frames.len() * 4);
    buf.extend_from_slice(MEL_MAGIC);
    buf.extend_from_slice(&(mel.t() as u32).to_le_bytes());
    buf.extend_from_slice(&(mel.n_mels() as u32).to_le_bytes());
    for &v in mel.frames.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    f.write_all(&buf).map_err(Error::write(path))
}

pub fn read_mel_cache(path: &Path) -> Result<MelSpectrogram> {
    let mut f = std::fs::File::open(path)?;
    let mut data = Vec::new();
    f.read_to_end(&mut data)?;
    let mut r = Cursor::new(&data, path);
    r.expect_magic(MEL_MAGIC)?;
    let t = r.u32()? as usize;
    let n_mels = r.u32()? as usize;
    if n_mels != 80 {
        return Err(Error::Parse(format!(
            "{}: expected 80 mel bands, got {n_mels}",
            path.display()
        )));
    }
    let mut frames = Array2::zeros((t, n_mels));
    for i in 0..t {
        for j in 0..n_mels {
            frames[[i, j]] = r.f32()? as f64;
        }
    }
    r.expect_eof()?;
    Ok(MelSpectrogram { frames })
}

pub fn write_f0_cache(path: &Path, contour: &PitchContour) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(Error::write(path))?;
    let mut buf = Vec::with_capacity(12 + contour.len() * 5);
    buf.extend_from_slice(F0_MAGIC);
    buf.extend_from_slice(&(contour.len() as u32).to_le_bytes());
    for &v in &contour.f0_hz {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &v in &contour.voiced {
        buf.push(v as u8);
    }
    f.write_all(&buf).map_err(Error::write(path))
}

pub fn read_f0_cache(path: &Path) -> Result<PitchContour> {
    let mut f = std::fs::File::open(path)?;
    let mut data = Vec::new();
    f.read_to_end(&mut data)?;
    let mut r = Cursor::new(&data, path);
    r.expect_magic(F0_MAGIC)?;
    let t = r.u32()? as usize;
    let mut f0_hz = Vec::with_capacity(t);
    for _ in 0..t {
        f0_hz.push(r.f32()? as f64);
    }
    let mut voiced = Vec::with_capacity(t);
    for _ in 0..t {
        voiced.push(match r.u8()? {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Parse(format!(
                    "{}: bad voicing byte {other}",
                    path.display()
                )))
            }
        });
    }
    r.expect_eof()?;
    Ok(PitchContour { f0_hz, voiced })
}

/// Tiny checked reader over a byte slice; all cache/checkpoint parsing goes
/// through it so truncation is always a clean parse error.
pub(crate) struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(data: &'a [u8], path: &Path) -> Self {
        Self {
            data,
            pos: 0,
            path: path.display().to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Parse(format!(
                "{}: truncated at byte {}",
                self.path, self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        let got = self.take(8)?;
        if got != magic {
            return Err(Error::Parse(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.path,
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub(crate) fn expect_eof(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Parse(format!(
                "{}: {} trailing bytes",
                self.path,
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}
