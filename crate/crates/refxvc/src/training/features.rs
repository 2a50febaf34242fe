//! In-memory training features: every utterance's mel, token, and pitch
//! representations, indexed by utterance id and grouped by speaker. Toy
//! corpora are small enough that precomputing everything up front keeps the
//! training loop free of I/O.

use std::collections::BTreeMap;

use crate::audio::read_wav;
use crate::error::{Error, Result};
use crate::features::{
    compute_mel, extract_f0, normalize_pitch, tokenize, MelSpectrogram, NormalizedPitch,
    TokenSequence, Tokenizer,
};
use crate::manifest::Manifest;
use crate::model::N_MELS;

/// Frame-aligned representations of one utterance.
#[derive(Debug, Clone)]
pub struct UtteranceFeatures {
    pub utterance_id: String,
    pub speaker_id: String,
    pub language: String,
    pub mel: MelSpectrogram,
    pub tokens: TokenSequence,
    pub pitch: NormalizedPitch,
}

impl UtteranceFeatures {
    pub fn t(&self) -> usize {
        self.mel.t()
    }
}

#[derive(Debug, Clone)]
pub struct FeatureStore {
    items: BTreeMap<String, UtteranceFeatures>,
    speakers: BTreeMap<String, Vec<String>>,
}

impl FeatureStore {
    /// Extracts features for every manifest record: wav → mel → tokens and
    /// pitch. Fails on the first unreadable file, naming it.
    pub fn build(manifest: &Manifest, tokenizer: &Tokenizer) -> Result<Self> {
        let mut items = Vec::with_capacity(manifest.records.len());
        for record in &manifest.records {
            let wave = read_wav(&record.audio_path)?;
            let mel = compute_mel(&wave)?;
            let tokens = tokenize(&mel, tokenizer);
            let pitch = normalize_pitch(&extract_f0(&wave)?);
            items.push(UtteranceFeatures {
                utterance_id: record.utterance_id.clone(),
                speaker_id: record.speaker_id.clone(),
                language: record.language.clone(),
                mel,
                tokens,
                pitch,
            });
        }
        Self::from_items(items)
    }

    /// Builds a store from already-extracted features, checking alignment.
    pub fn from_items(items: Vec<UtteranceFeatures>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidInput("no utterances".into()));
        }
        let mut map = BTreeMap::new();
        let mut speakers: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for item in items {
            let id = item.utterance_id.clone();
            let t = item.mel.t();
            if item.mel.n_mels() != N_MELS {
                return Err(Error::InvalidInput(format!(
                    "utterance `{id}`: mel has {} channels, expected {N_MELS}",
                    item.mel.n_mels()
                )));
            }
            if item.tokens.len() != t || item.pitch.len() != t {
                return Err(Error::InvalidInput(format!(
                    "utterance `{id}`: mel/token/pitch lengths differ ({t}/{}/{})",
                    item.tokens.len(),
                    item.pitch.len()
                )));
            }
            speakers
                .entry(item.speaker_id.clone())
                .or_default()
                .push(id.clone());
            if map.insert(id.clone(), item).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate utterance id `{id}`"
                )));
            }
        }
        for ids in speakers.values_mut() {
            ids.sort();
        }
        Ok(Self {
            items: map,
            speakers,
        })
    }

    pub fn get(&self, utterance_id: &str) -> Result<&UtteranceFeatures> {
        self.items.get(utterance_id).ok_or_else(|| {
            Error::InvalidInput(format!("unknown utterance id `{utterance_id}`"))
        })
    }

    /// All utterance ids in sorted order.
    pub fn utterance_ids(&self) -> Vec<String> {
        self.items.keys().cloned().collect()
    }

    /// Sorted utterance ids of one speaker (empty for unknown speakers).
    pub fn speaker_utterances(&self, speaker_id: &str) -> &[String] {
        self.speakers
            .get(speaker_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn speaker_ids(&self) -> Vec<String> {
        self.speakers.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &UtteranceFeatures> {
        self.items.values()
    }
}

/// Deterministic signal-derived features for one synthetic utterance —
/// shared by tests that need a store without audio files on disk.
#[cfg(test)]
pub fn synthetic_item(
    utterance_id: &str,
    speaker_id: &str,
    f0_hz: f64,
    n_samples: usize,
    tokenizer: &Tokenizer,
) -> UtteranceFeatures {
    let wave: Vec<f64> = (0..n_samples)
        .map(|i| 0.4 * (2.0 * std::f64::consts::PI * f0_hz * i as f64 / 16_000.0).sin())
        .collect();
    let mel = compute_mel(&wave).unwrap();
    let tokens = tokenize(&mel, tokenizer);
    let pitch = normalize_pitch(&extract_f0(&wave).unwrap());
    UtteranceFeatures {
        utterance_id: utterance_id.to_string(),
        speaker_id: speaker_id.to_string(),
        language: "en".to_string(),
        mel,
        tokens,
        pitch,
    }
}
