//! Griffin-Lim vocoder: turns a log-mel spectrogram back into audio without
//! any learned weights, so conversions are audible out of the box. The mel →
//! linear-spectrum step uses the filterbank's pseudo-inverse; phase is
//! recovered by iterating STFT magnitude replacement from an all-zero phase
//! start, which keeps the whole path deterministic.

use nalgebra::DMatrix;
use ndarray::Array2;
use rustfft::num_complex::Complex;

use crate::features::stft::{istft, stft, MelFilterbank, HOP, N_BINS, N_MELS};
use crate::features::MelSpectrogram;

/// Least-norm linear-power estimate `P = M · pinv(Wᵀ)` for mel power `M`
/// (`[T, 80]`) and filterbank `W` (`[80, 513]`), clamped to be non-negative.
fn mel_power_to_linear(mel_power: &Array2<f64>) -> Array2<f64> {
    let fb = MelFilterbank::new();
    let w = DMatrix::from_fn(N_MELS, N_BINS, |r, c| fb.weights[[r, c]]);
    let pinv = w
        .svd(true, true)
        .pseudo_inverse(1e-10)
        .expect("SVD of the fixed mel filterbank always converges");
    let t = mel_power.nrows();
    let mut linear = Array2::zeros((t, N_BINS));
    for i in 0..t {
        for k in 0..N_BINS {
            let mut acc = 0.0;
            for m in 0..N_MELS {
                // pinv is [513, 80]; (M · pinv(W)ᵀ)[i, k] = Σ_m M[i,m]·pinv[k,m]
                acc += mel_power[[i, m]] * pinv[(k, m)];
            }
            linear[[i, k]] = acc.max(0.0);
        }
    }
    linear
}

/// Reconstructs a waveform from a log-mel spectrogram.
///
/// The output has `(T − 1) · 320` samples (the shortest signal producing `T`
/// centered frames), clipped to `[−1, 1]`. `n_iters = 0` skips phase
/// refinement and returns the zero-phase reconstruction directly.
pub fn mel_to_waveform(mel: &MelSpectrogram, n_iters: usize) -> Vec<f64> {
    assert_eq!(mel.n_mels(), N_MELS, "mel spectrogram must have 80 bands");
    let t = mel.t();
    assert!(t > 0, "mel spectrogram must have at least one frame");
    let mel_power = mel.frames.mapv(f64::exp);
    let magnitude = mel_power_to_linear(&mel_power).mapv(f64::sqrt);
    let out_len = (t - 1) * HOP;

    // zero-phase start: spectrum = magnitude on the real axis
    let mut spec: Vec<Vec<Complex<f64>>> = (0..t)
        .map(|i| {
            (0..N_BINS)
                .map(|k| Complex::new(magnitude[[i, k]], 0.0))
                .collect()
        })
        .collect();
    for _ in 0..n_iters {
        let wave = istft(&spec, out_len);
        let reproj = stft(&wave);
        debug_assert_eq!(reproj.len(), t);
        for (i, (frame, re_frame)) in spec.iter_mut().zip(&reproj).enumerate() {
            for (k, slot) in frame.iter_mut().enumerate() {
                let c = re_frame[k];
                let norm = c.norm();
                let phase = if norm > 0.0 {
                    c / norm
                } else {
                    Complex::new(1.0, 0.0)
                };
                *slot = magnitude[[i, k]] * phase;
            }
        }
    }
    let mut wave = istft(&spec, out_len);
    for s in &mut wave {
        *s = s.clamp(-1.0, 1.0);
    }
    wave
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::compute_mel;
    use crate::features::mel::log_floor;
    use crate::features::stft::{hz_to_mel, FMAX_HZ, FMIN_HZ, SAMPLE_RATE_HZ};
    use rustfft::FftPlanner;

    /// Dominant frequency of a waveform via one big FFT.
    fn dominant_hz(wave: &[f64]) -> f64 {
        let n = wave.len().next_power_of_two();
        let mut buf: Vec<Complex<f64>> = wave
            .iter()
            .map(|&s| Complex::new(s, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(n)
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let peak = (1..n / 2)
            .max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap())
            .unwrap();
        peak as f64 * SAMPLE_RATE_HZ / n as f64
    }

    #[test]
    fn sine_round_trip_lands_within_one_mel_band() {
        let wave: Vec<f64> = (0..16_000)
            .map(|i| 0.4 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin())
            .collect();
        let mel = compute_mel(&wave).unwrap();
        let rec = mel_to_waveform(&mel, 60);
        assert_eq!(rec.len(), (mel.t() - 1) * HOP);
        let peak = dominant_hz(&rec);
        let band = (hz_to_mel(FMAX_HZ) - hz_to_mel(FMIN_HZ)) / (N_MELS + 1) as f64;
        let err = (hz_to_mel(peak) - hz_to_mel(440.0)).abs();
        assert!(
            err <= band,
            "peak {peak:.1} Hz is {err:.2} mel from 440 Hz (band width {band:.2})"
        );
    }

    #[test]
    fn all_floor_mel_is_near_silence() {
        let mel = MelSpectrogram {
            frames: Array2::from_elem((20, N_MELS), log_floor()),
        };
        let wave = mel_to_waveform(&mel, 30);
        assert_eq!(wave.len(), 19 * HOP);
        let rms = (wave.iter().map(|s| s * s).sum::<f64>() / wave.len() as f64).sqrt();
        assert!(rms < 1e-3, "floor mel reconstructed with RMS {rms}");
    }

    #[test]
    fn zero_iterations_still_produces_correct_length() {
        let wave: Vec<f64> = (0..8000)
            .map(|i| 0.3 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / 16_000.0).sin())
            .collect();
        let mel = compute_mel(&wave).unwrap();
        let rec = mel_to_waveform(&mel, 0);
        assert_eq!(rec.len(), (mel.t() - 1) * HOP);
        assert!(rec.iter().all(|s| s.is_finite() && (-1.0..=1.0).contains(s)));
    }

    #[test]
    fn reconstruction_is_deterministic() {
        let wave: Vec<f64> = (0..6400)
            .map(|i| {
                let t = i as f64 / 16_000.0;
                0.3 * (2.0 * std::f64::consts::PI * 330.0 * t).sin()
                    + 0.1 * (2.0 * std::f64::consts::PI * 990.0 * t).sin()
            })
            .collect();
        let mel = compute_mel(&wave).unwrap();
        let a = mel_to_waveform(&mel, 15);
        let b = mel_to_waveform(&mel, 15);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
