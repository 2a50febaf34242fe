//! F0 extraction and per-utterance pitch normalization.
//!
//! Extraction is normalized autocorrelation over the same centered 64 ms /
//! 20 ms frames the mel front end uses, searching 50–600 Hz, with parabolic
//! peak interpolation. A frame is voiced when the autocorrelation peak
//! reaches 0.3 and the frame RMS reaches 1e-4. Normalization is a z-score of
//! log-F0 over the voiced frames only ("per-sentence" normalization), so the
//! decoder sees a speaker-range-free contour.

use super::stft::{raw_frames, N_FFT, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

pub const F0_MIN_HZ: f64 = 50.0;
pub const F0_MAX_HZ: f64 = 600.0;
pub const VOICING_THRESHOLD: f64 = 0.3;
pub const MIN_FRAME_RMS: f64 = 1e-4;
/// Lower clamp on the population std of voiced log-F0.
pub const STD_EPS: f64 = 1e-8;

/// Raw F0 track: Hz values with voicing flags, one per 20 ms frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchContour {
    /// F0 in Hz; exactly 0 where unvoiced.
    pub f0_hz: Vec<f64>,
    pub voiced: Vec<bool>,
}

/// Z-scored log-F0; zeros where unvoiced.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPitch {
    pub values: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl PitchContour {
    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }
}

impl NormalizedPitch {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Extracts F0 per frame; output length equals the mel frame count of the
/// same waveform.
pub fn extract_f0(waveform: &[f64]) -> Result<PitchContour> {
    if waveform.is_empty() {
        return Err(Error::InvalidInput("empty waveform".into()));
    }
    let frames = raw_frames(waveform);
    let min_lag = (SAMPLE_RATE_HZ / F0_MAX_HZ).ceil() as usize; // 27
    let max_lag = (SAMPLE_RATE_HZ / F0_MIN_HZ).floor() as usize; // 320
    let t = frames.nrows();
    let mut f0_hz = vec![0.0; t];
    let mut voiced = vec![false; t];
    for i in 0..t {
        let frame = frames.row(i);
        let frame = frame.as_slice().expect("row-major frame");
        let rms = (frame.iter().map(|x| x * x).sum::<f64>() / N_FFT as f64).sqrt();
        if rms < MIN_FRAME_RMS {
            continue;
        }
        let r = normalized_autocorr(frame, min_lag, max_lag);
        let Some(best) = pick_peak_lag(&r) else {
            continue;
        };
        if r[best] < VOICING_THRESHOLD {
            continue;
        }
        let lag = min_lag + best;
        let refined = refine_lag(&r, best, lag);
        f0_hz[i] = (SAMPLE_RATE_HZ / refined).clamp(F0_MIN_HZ, F0_MAX_HZ);
        voiced[i] = true;
    }
    Ok(PitchContour { f0_hz, voiced })
}

/// Normalized autocorrelation r(L) for L in [min_lag, max_lag], each value
/// in [-1, 1].
fn normalized_autocorr(frame: &[f64], min_lag: usize, max_lag: usize) -> Vec<f64> {
    let n = frame.len();
    let mut out = Vec::with_capacity(max_lag - min_lag + 1);
    for lag in min_lag..=max_lag {
        let m = n - lag;
        let mut dot = 0.0;
        let mut e0 = 0.0;
        let mut e1 = 0.0;
        for i in 0..m {
            dot += frame[i] * frame[i + lag];
            e0 += frame[i] * frame[i];
            e1 += frame[i + lag] * frame[i + lag];
        }
        let denom = (e0 * e1).sqrt();
        out.push(if denom > 0.0 { dot / denom } else { 0.0 });
    }
    out
}

/// Picks the smallest local-maximum lag whose value is within 0.01 of the
/// global maximum. Preferring the smallest strong lag avoids halving errors
/// (a perfectly periodic signal also peaks at 2×, 3×, ... the true period).
fn pick_peak_lag(r: &[f64]) -> Option<usize> {
    let global = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !global.is_finite() {
        return None;
    }
    let is_local_max = |i: usize| {
        let left_ok = i == 0 || r[i] >= r[i - 1];
        let right_ok = i + 1 == r.len() || r[i] >= r[i + 1];
        left_ok && right_ok
    };
    (0..r.len()).find(|&i| is_local_max(i) && r[i] >= global - 0.01)
}

/// Parabolic interpolation around the peak for sub-sample lag precision.
fn refine_lag(r: &[f64], idx: usize, lag: usize) -> f64 {
    if idx == 0 || idx + 1 >= r.len() {
        return lag as f64;
    }
    let (a, b, c) = (r[idx - 1], r[idx], r[idx + 1]);
    let denom = a - 2.0 * b + c;
    if denom.abs() < 1e-12 {
        return lag as f64;
    }
    let delta = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
    lag as f64 + delta
}

/// Z-scores log-F0 over the voiced frames (population std, clamped at
/// [`STD_EPS`]); unvoiced frames map to 0.
pub fn normalize_pitch(contour: &PitchContour) -> NormalizedPitch {
    let logs: Vec<f64> = contour
        .f0_hz
        .iter()
        .zip(&contour.voiced)
        .filter(|(_, &v)| v)
        .map(|(&f, _)| f.ln())
        .collect();
    if logs.is_empty() {
        return NormalizedPitch {
            values: vec![0.0; contour.len()],
            voiced: contour.voiced.clone(),
        };
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_EPS);
    let values = contour
        .f0_hz
        .iter()
        .zip(&contour.voiced)
        .map(|(&f, &v)| if v { (f.ln() - mean) / std } else { 0.0 })
        .collect();
    NormalizedPitch {
        values,
        voiced: contour.voiced.clone(),
    }
}
