//! Shared short-time analysis plumbing: framing, Hann window, FFT power
//! spectra, the mel filterbank, and the inverse STFT used by the vocoder.
//!
//! Framing convention (fixed across the whole crate): 64 ms windows
//! (1024 samples), 20 ms hop (320 samples), signal zero-padded by half a
//! window on both sides so frame `t` is centered on sample `t * hop`. That
//! yields `T = floor(n / hop) + 1` frames for an `n`-sample signal.

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

pub const N_FFT: usize = 1024;
pub const HOP: usize = 320;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const N_MELS: usize = 80;
pub const FMIN_HZ: f64 = 0.0;
pub const FMAX_HZ: f64 = 8000.0;
pub const SAMPLE_RATE_HZ: f64 = 16_000.0;

/// Frames produced for an `n`-sample signal under the centered convention.
pub fn num_frames(n_samples: usize) -> usize {
    n_samples / HOP + 1
}

/// Periodic Hann window of length [`N_FFT`].
pub fn hann_window() -> Vec<f64> {
    (0..N_FFT)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / N_FFT as f64).cos()))
        .collect()
}

fn pad_center(waveform: &[f64]) -> Vec<f64> {
    let half = N_FFT / 2;
    let mut padded = vec![0.0; waveform.len() + N_FFT];
    padded[half..half + waveform.len()].copy_from_slice(waveform);
    padded
}

/// Centered frames of raw (un-windowed) samples, one row per hop.
/// Pitch analysis uses these directly; spectral analysis windows them first.
pub fn raw_frames(waveform: &[f64]) -> Array2<f64> {
    let padded = pad_center(waveform);
    let t = num_frames(waveform.len());
    let mut out = Array2::zeros((t, N_FFT));
    for i in 0..t {
        let start = i * HOP;
        for (j, v) in padded[start..start + N_FFT].iter().enumerate() {
            out[[i, j]] = *v;
        }
    }
    out
}

/// Complex STFT, `[T, N_BINS]` (one-sided spectrum).
pub fn stft(waveform: &[f64]) -> Vec<Vec<Complex<f64>>> {
    let window = hann_window();
    let padded = pad_center(waveform);
    let t = num_frames(waveform.len());
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(N_FFT);
    let mut out = Vec::with_capacity(t);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    for i in 0..t {
        let start = i * HOP;
        for j in 0..N_FFT {
            buf[j] = Complex::new(padded[start + j] * window[j], 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..N_BINS].to_vec());
    }
    out
}

/// Windowed power spectrogram `|FFT|²`, `[T, N_BINS]`.
pub fn power_spectrogram(waveform: &[f64]) -> Array2<f64> {
    let spec = stft(waveform);
    let mut out = Array2::zeros((spec.len(), N_BINS));
    for (i, frame) in spec.iter().enumerate() {
        for (j, c) in frame.iter().enumerate() {
            out[[i, j]] = c.norm_sqr();
        }
    }
    out
}

/// Inverse STFT via windowed overlap-add with squared-window normalization.
/// `spec` is a one-sided spectrum per frame; output has `out_len` samples
/// (the center padding is stripped).
pub fn istft(spec: &[Vec<Complex<f64>>], out_len: usize) -> Vec<f64> {
    let window = hann_window();
    let t = spec.len();
    let padded_len = (t.saturating_sub(1)) * HOP + N_FFT;
    let mut acc = vec![0.0; padded_len];
    let mut norm = vec![0.0; padded_len];
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(N_FFT);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    for (i, frame) in spec.iter().enumerate() {
        debug_assert_eq!(frame.len(), N_BINS);
        buf[..N_BINS].copy_from_slice(frame);
        // rebuild the redundant half of the spectrum by conjugate symmetry
        for k in N_BINS..N_FFT {
            buf[k] = frame[N_FFT - k].conj();
        }
        ifft.process(&mut buf);
        let start = i * HOP;
        for j in 0..N_FFT {
            let sample = buf[j].re / N_FFT as f64;
            acc[start + j] += sample * window[j];
            norm[start + j] += window[j] * window[j];
        }
    }
    let half = N_FFT / 2;
    (0..out_len)
        .map(|i| {
            let idx = half + i;
            if idx < acc.len() && norm[idx] > 1e-9 {
                acc[idx] / norm[idx]
            } else {
                0.0
            }
        })
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank (HTK-style mel scale, unnormalized triangles)
/// spanning [`FMIN_HZ`, `FMAX_HZ`] with [`N_MELS`] bands over [`N_BINS`]
/// linear bins.
pub struct MelFilterbank {
    /// `[N_MELS, N_BINS]` filter weights.
    pub weights: Array2<f64>,
    /// Per-band `(lower, center, upper)` edge frequencies in Hz.
    pub band_edges_hz: Vec<(f64, f64, f64)>,
}

impl MelFilterbank {
    pub fn new() -> Self {
        let mel_lo = hz_to_mel(FMIN_HZ);
        let mel_hi = hz_to_mel(FMAX_HZ);
        // N_MELS triangles need N_MELS + 2 edge points
        let edges_hz: Vec<f64> = (0..N_MELS + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (N_MELS + 1) as f64))
            .collect();
        let bin_hz = SAMPLE_RATE_HZ / N_FFT as f64;
        let mut weights = Array2::zeros((N_MELS, N_BINS));
        let mut band_edges_hz = Vec::with_capacity(N_MELS);
        for m in 0..N_MELS {
            let (lo, center, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
            band_edges_hz.push((lo, center, hi));
            for k in 0..N_BINS {
                let f = k as f64 * bin_hz;
                let w = if f >= lo && f <= center && center > lo {
                    (f - lo) / (center - lo)
                } else if f > center && f <= hi && hi > center {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
                weights[[m, k]] = w;
            }
        }
        Self {
            weights,
            band_edges_hz,
        }
    }
}

impl Default for MelFilterbank {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_formula() {
        assert_eq!(num_frames(16_000), 51);
        assert_eq!(num_frames(320), 2);
        assert_eq!(num_frames(319), 1);
        assert_eq!(num_frames(1), 1);
    }

    #[test]
    fn filterbank_edges_are_monotone_and_span_the_band() {
        let fb = MelFilterbank::new();
        assert_eq!(fb.band_edges_hz.len(), N_MELS);
        let mut prev_center = -1.0;
        for &(lo, center, hi) in &fb.band_edges_hz {
            assert!(lo < center && center < hi);
            assert!(center > prev_center);
            prev_center = center;
        }
        assert!(fb.band_edges_hz[0].0.abs() < 1e-9);
        assert!((fb.band_edges_hz[N_MELS - 1].2 - FMAX_HZ).abs() < 1e-6);
    }

    #[test]
    fn istft_inverts_stft_of_a_tone() {
        let n = 4 * HOP + 7;
        let wave: Vec<f64> = (0..n)
            .map(|i| 0.3 * (2.0 * std::f64::consts::PI * 500.0 * i as f64 / SAMPLE_RATE_HZ).sin())
            .collect();
        let spec = stft(&wave);
        let back = istft(&spec, n);
        assert_eq!(back.len(), n);
        // interior samples (away from the pad boundary ramp) reconstruct
        for i in N_FFT..n - N_FFT {
            assert!(
                (wave[i] - back[i]).abs() < 1e-8,
                "sample {i}: {} vs {}",
                wave[i],
                back[i]
            );
        }
    }
}
