//! Bundled synthetic corpus: two "speakers" (distinct fundamental ranges and
//! formant placements) × four short utterances each, generated from a seed so
//! every test and demo runs without external data. Utterances alternate
//! harmonic vowel segments (with gliding F0) and quiet noise consonants, so
//! pitch tracking sees both voiced and unvoiced frames.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{write_wav, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::manifest::{Manifest, UtteranceRecord};

/// Speaking-voice bases: frequencies low enough that several harmonics fit
/// under the 8 kHz mel ceiling, far enough apart to separate embeddings.
const SPEAKERS: [(&str, &str, f64, f64); 2] = [
    // (speaker_id, language, base F0 Hz, formant scale)
    ("spk_a", "en", 140.0, 1.0),
    ("spk_b", "xx", 260.0, 1.25),
];
const UTTERANCES_PER_SPEAKER: usize = 4;

/// Rough vowel formant targets (Hz) whose harmonics get boosted.
const VOWELS: [[f64; 2]; 4] = [
    [700.0, 1200.0],  // a
    [300.0, 2300.0],  // i
    [350.0, 800.0],   // u
    [450.0, 900.0],   // o
];

/// One vowel segment: harmonics of a gliding F0, each weighted by its
/// proximity to the vowel's two formants.
fn vowel_segment(
    out: &mut Vec<f64>,
    n: usize,
    f0_start: f64,
    f0_end: f64,
    formants: [f64; 2],
    formant_scale: f64,
) {
    let sr = f64::from(SAMPLE_RATE);
    let mut phases = [0.0f64; 12];
    for i in 0..n {
        let frac = i as f64 / n as f64;
        let f0 = f0_start + (f0_end - f0_start) * frac;
        // attack/release so segment joins don't click
        let env = (frac * 20.0).min(1.0).min((1.0 - frac) * 20.0).max(0.0);
        let mut s = 0.0;
        for (k, phase) in phases.iter_mut().enumerate() {
            let h = (k + 1) as f64;
            let freq = f0 * h;
            if freq > 7500.0 {
                break;
            }
            let mut w = 1.0 / h;
            for f in formants {
                let d = (freq - f * formant_scale) / 400.0;
                w += 1.2 * (-d * d).exp();
            }
            *phase += 2.0 * std::f64::consts::PI * freq / sr;
            s += w * phase.sin();
        }
        out.push(0.22 * env * s / 3.0);
    }
}

/// One unvoiced "consonant": quiet wideband noise.
fn noise_segment(out: &mut Vec<f64>, n: usize, rng: &mut ChaCha8Rng) {
    for _ in 0..n {
        out.push(0.02 * rng.random_range(-1.0..1.0));
    }
}

fn synthesize_utterance(rng: &mut ChaCha8Rng, base_f0: f64, formant_scale: f64) -> Vec<f64> {
    let sr = f64::from(SAMPLE_RATE);
    let total = (sr * rng.random_range(0.75..0.9)) as usize;
    let mut wave = Vec::with_capacity(total);
    // start/end direction of the utterance-wide F0 glide, within ±8%
    let glide: f64 = rng.random_range(-0.08..0.08);
    let f0_start = base_f0 * (1.0 - glide);
    let f0_end = base_f0 * (1.0 + glide);
    let mut vowel_idx = rng.random_range(0..VOWELS.len());
    while wave.len() < total {
        let done = wave.len() as f64 / total as f64;
        let remaining = total - wave.len();
        let vowel_len = ((sr * rng.random_range(0.12..0.2)) as usize).min(remaining);
        let seg_f0_a = f0_start + (f0_end - f0_start) * done;
        let seg_f0_b = f0_start
            + (f0_end - f0_start) * ((wave.len() + vowel_len) as f64 / total as f64);
        vowel_segment(
            &mut wave,
            vowel_len,
            seg_f0_a,
            seg_f0_b,
            VOWELS[vowel_idx],
            formant_scale,
        );
        vowel_idx = (vowel_idx + 1 + rng.random_range(0..2)) % VOWELS.len();
        let remaining = total - wave.len();
        if remaining == 0 {
            break;
        }
        let noise_len = ((sr * 0.03) as usize).min(remaining);
        noise_segment(&mut wave, noise_len, rng);
    }
    wave
}

/// Generates the 8-utterance corpus under `dir`: one wav per utterance plus
/// `manifest.tsv` referencing them relatively. Returns the parsed manifest.
pub fn generate_corpus(dir: &Path, seed: u64) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(Error::write(dir))?;
    let mut records = Vec::new();
    for (s, &(speaker, language, base_f0, formant_scale)) in SPEAKERS.iter().enumerate() {
        for u in 0..UTTERANCES_PER_SPEAKER {
            let utterance_id = format!("{speaker}_{u:02}");
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ ((s as u64) << 32) ^ (u as u64 + 1));
            let wave = synthesize_utterance(&mut rng, base_f0, formant_scale);
            let file = format!("{utterance_id}.wav");
            write_wav(&dir.join(&file), &wave)?;
            records.push(UtteranceRecord {
                utterance_id,
                speaker_id: speaker.to_string(),
                language: language.to_string(),
                audio_path: file.into(),
            });
        }
    }
    let manifest = Manifest { records };
    std::fs::write(dir.join("manifest.tsv"), manifest.to_text())
        .map_err(Error::write(&dir.join("manifest.tsv")))?;
    Manifest::from_file(&dir.join("manifest.tsv"))
}
