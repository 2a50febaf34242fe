//! Dataset manifest: a tab-separated text file listing one utterance per
//! line. A required header names the four columns; audio paths are taken
//! relative to the manifest file's directory unless absolute.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::training::RefMode;

pub const MANIFEST_HEADER: &str = "utterance_id\tspeaker_id\tlanguage\taudio_path";

/// One manifest entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub language: String,
    pub audio_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<UtteranceRecord>,
}

impl Manifest {
    /// Reads and validates a manifest file. Relative audio paths are
    /// resolved against the manifest's parent directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base)
    }

    pub fn from_text(text: &str, base_dir: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim_end() == MANIFEST_HEADER => {}
            Some((_, header)) => {
                return Err(Error::Parse(format!(
                    "line 1: expected header `{MANIFEST_HEADER}`, got `{header}`"
                )))
            }
            None => return Err(Error::Parse("empty manifest".into())),
        }
        let mut records = Vec::new();
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, raw) in lines {
            let line_no = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Parse(format!(
                    "line {line_no}: expected 4 tab-separated fields, got {}",
                    fields.len()
                )));
            }
            let (id, speaker, language, audio) = (
                fields[0].trim(),
                fields[1].trim(),
                fields[2].trim(),
                fields[3].trim(),
            );
            if id.is_empty() || speaker.is_empty() || language.is_empty() || audio.is_empty() {
                return Err(Error::Parse(format!("line {line_no}: empty field")));
            }
            if let Some(first) = seen.insert(id, line_no) {
                return Err(Error::Parse(format!(
                    "line {line_no}: duplicate utterance id `{id}` (first on line {first})"
                )));
            }
            let audio_path = if Path::new(audio).is_absolute() {
                PathBuf::from(audio)
            } else {
                base_dir.join(audio)
            };
            records.push(UtteranceRecord {
                utterance_id: id.to_string(),
                speaker_id: speaker.to_string(),
                language: language.to_string(),
                audio_path,
            });
        }
        if records.is_empty() {
            return Err(Error::Parse("manifest has no records".into()));
        }
        Ok(Self { records })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.utterance_id,
                r.speaker_id,
                r.language,
                r.audio_path.display()
            ));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(Error::from)
    }

    pub fn get(&self, utterance_id: &str) -> Option<&UtteranceRecord> {
        self.records
            .iter()
            .find(|r| r.utterance_id == utterance_id)
    }

    /// Utterance ids grouped by speaker, both levels sorted.
    pub fn by_speaker(&self) -> BTreeMap<String, Vec<String>> {
        let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in &self.records {
            map.entry(r.speaker_id.clone())
                .or_default()
                .push(r.utterance_id.clone());
        }
        for ids in map.values_mut() {
            ids.sort();
        }
        map
    }

    /// Checks that every speaker has enough utterances for reference
    /// sampling: `n_refs + 1` when the source is excluded from the
    /// reference pool, `n_refs` when it may be included.
    pub fn validate_for_training(&self, n_refs: usize, mode: RefMode) -> Result<()> {
        let need = match mode {
            RefMode::SourceExcluded => n_refs + 1,
            RefMode::SourceIncluded => n_refs,
        };
        for (speaker, ids) in self.by_speaker() {
            if ids.len() < need {
                return Err(Error::InvalidInput(format!(
                    "speaker `{speaker}` has {} utterances but {mode} sampling with {n_refs} \
                     references needs at least {need}",
                    ids.len()
                )));
            }
        }
        Ok(())
    }
}
