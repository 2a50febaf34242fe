//! Log-mel spectrogram extraction.
//!
//! 80 triangular mel bands over 0–8000 Hz applied to the windowed power
//! spectrum, natural log with the power floored at 1e-5 so silence maps to a
//! finite constant.

use ndarray::Array2;

use super::stft::{self, MelFilterbank, N_MELS};
use crate::error::{Error, Result};

/// Power values below this are clamped before the log.
pub const POWER_FLOOR: f64 = 1e-5;

/// The mel value silence maps to: `ln(POWER_FLOOR)`.
pub fn log_floor() -> f64 {
    POWER_FLOOR.ln()
}

/// Log-mel energies, one row per 20 ms frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// `[T, 80]`, natural-log mel power, floored at `ln(1e-5)`.
    pub frames: Array2<f64>,
}

impl MelSpectrogram {
    pub fn t(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }
}

/// Computes the log-mel spectrogram of a 16 kHz waveform.
///
/// `T = floor(len / 320) + 1` with centered frames; every output value is
/// ≥ [`log_floor`].
pub fn compute_mel(waveform: &[f64]) -> Result<MelSpectrogram> {
    if waveform.is_empty() {
        return Err(Error::InvalidInput("empty waveform".into()));
    }
    if let Some(pos) = waveform.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite sample at index {pos}"
        )));
    }
    let power = stft::power_spectrogram(waveform);
    let fb = MelFilterbank::new();
    let mut mel: Array2<f64> = power.dot(&fb.weights.t());
    mel.mapv_inplace(|p| p.max(POWER_FLOOR).ln());
    debug_assert_eq!(mel.ncols(), N_MELS);
    Ok(MelSpectrogram { frames: mel })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::stft::{hz_to_mel, mel_to_hz, HOP};

    #[test]
    fn one_second_gives_51_frames() {
        let wave = vec![0.01; 16_000];
        let mel = compute_mel(&wave).unwrap();
        assert_eq!(mel.t(), 51);
        assert_eq!(mel.n_mels(), 80);
    }

    #[test]
    fn silence_hits_the_floor_everywhere() {
        let mel = compute_mel(&vec![0.0; 4800]).unwrap();
        let floor = log_floor();
        assert!(mel.frames.iter().all(|&v| (v - floor).abs() < 1e-12));
    }

    #[test]
    fn empty_and_non_finite_inputs_are_rejected() {
        assert!(matches!(compute_mel(&[]), Err(Error::InvalidInput(_))));
        assert!(matches!(
            compute_mel(&[0.0, f64::NAN, 0.0]),
            Err(Error::InvalidInput(_))
        ));
    }

    /// A 440 Hz tone's strongest mel band must be the band containing
    /// 440 Hz. Band edges are recomputed here from the mel-scale formula
    /// rather than taken from the filterbank under test.
    #[test]
    fn sine_energy_lands_in_the_correct_band() {
        let wave: Vec<f64> = (0..8000)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin())
            .collect();
        let mel = compute_mel(&wave).unwrap();
        let mean = mel.frames.sum_axis(ndarray::Axis(0)) / mel.t() as f64;
        let argmax = mean
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;

        // independent edge computation: 82 points uniform in mel between
        // 0 and 8000 Hz; band m spans points (m, m+2)
        let lo_hz = |m: usize| mel_to_hz(hz_to_mel(8000.0) * m as f64 / 81.0);
        let hi_hz = |m: usize| mel_to_hz(hz_to_mel(8000.0) * (m + 2) as f64 / 81.0);
        assert!(
            lo_hz(argmax) <= 440.0 && 440.0 <= hi_hz(argmax),
            "band {argmax} spans [{:.1}, {:.1}] Hz which misses 440 Hz",
            lo_hz(argmax),
            hi_hz(argmax)
        );
    }

    /// Prepending whole-hop silence shifts the content frames and fills the
    /// gap with floor frames, except for the handful of frames whose 64 ms
    /// window straddles the silence/content boundary.
    #[test]
    fn prepended_silence_shifts_frames() {
        let wave: Vec<f64> = (0..3200)
            .map(|i| 0.4 * (2.0 * std::f64::consts::PI * 330.0 * i as f64 / 16000.0).sin())
            .collect();
        let base = compute_mel(&wave).unwrap();
        let k = 5; // prepend k hops of silence
        let mut padded = vec![0.0; k * HOP];
        padded.extend_from_slice(&wave);
        let shifted = compute_mel(&padded).unwrap();
        assert_eq!(shifted.t(), base.t() + k);

        // windows reach ±512 samples around the frame center, i.e. one full
        // hop on either side can straddle the boundary
        let straddle = 512 / HOP + 1;
        let floor = log_floor();
        for t in 0..k.saturating_sub(straddle) {
            assert!(
                shifted
                    .frames
                    .row(t)
                    .iter()
                    .all(|&v| (v - floor).abs() < 1e-12),
                "frame {t} should be pure silence"
            );
        }
        for t in straddle..base.t() - straddle {
            let a = shifted.frames.row(t + k);
            let b = base.frames.row(t);
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x, y, "content frame {t} not bit-identical after shift");
            }
        }
    }
}
