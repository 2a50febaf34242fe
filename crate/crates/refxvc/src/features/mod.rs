//! Audio-to-representation front end: log-mel spectrograms, discrete content
//! tokens, and normalized pitch — everything the network consumes.
//!
//! All three representations are frame-aligned: an `n`-sample 16 kHz
//! waveform yields `floor(n/320) + 1` frames in each.

pub mod cache;
pub mod mel;
pub mod pitch;
pub mod stft;
pub mod tokens;

pub use cache::{read_f0_cache, read_mel_cache, write_f0_cache, write_mel_cache};
pub use mel::{compute_mel, log_floor, MelSpectrogram};
pub use pitch::{extract_f0, normalize_pitch, NormalizedPitch, PitchContour};
pub use tokens::{
    fit_tokenizer, load_external_tokens, load_tokenizer, save_tokenizer, tokenize, write_tokens,
    TokenSequence, Tokenizer,
};

#[cfg(test)]
mod tests {
    use super::*;

    /// The three representations of one utterance always have the same
    /// frame count.
    #[test]
    fn representations_are_frame_aligned() {
        for n in [320, 999, 16_000, 4_321] {
            let wave: Vec<f64> = (0..n)
                .map(|i| 0.4 * (2.0 * std::f64::consts::PI * 150.0 * i as f64 / 16000.0).sin())
                .collect();
            let mel = compute_mel(&wave).unwrap();
            let f0 = extract_f0(&wave).unwrap();
            let norm = normalize_pitch(&f0);
            assert_eq!(mel.t(), f0.len());
            assert_eq!(mel.t(), norm.len());
            assert_eq!(mel.t(), n / 320 + 1);
        }
    }
}
