//! Reference sampling for multi-reference training. `SourceExcluded` keeps
//! the source utterance out of the reference set so the pronunciation
//! matcher cannot degenerate into copying its own frames; `SourceIncluded`
//! forces the source into slot 0 (the diagnostic setting).

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefMode {
    SourceExcluded,
    SourceIncluded,
}

impl RefMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RefMode::SourceExcluded => "source_excluded",
            RefMode::SourceIncluded => "source_included",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "source_excluded" => Ok(RefMode::SourceExcluded),
            "source_included" => Ok(RefMode::SourceIncluded),
            other => Err(Error::Parse(format!(
                "unknown ref_mode `{other}` (expected source_excluded or source_included)"
            ))),
        }
    }
}

impl std::fmt::Display for RefMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Draws `k` distinct elements uniformly via a partial Fisher–Yates pass.
fn draw_distinct(pool: &mut Vec<String>, k: usize, rng: &mut impl Rng) -> Vec<String> {
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool[..k].to_vec()
}

/// Picks `n` reference utterance ids for `source_id` from its speaker's
/// utterances. Order of `utterances` matters only through the rng draws.
pub fn sample_references(
    utterances: &[String],
    source_id: &str,
    n: usize,
    mode: RefMode,
    rng: &mut impl Rng,
) -> Result<Vec<String>> {
    let mut others: Vec<String> = utterances
        .iter()
        .filter(|u| u.as_str() != source_id)
        .cloned()
        .collect();
    match mode {
        RefMode::SourceExcluded => {
            if others.len() < n {
                return Err(Error::InsufficientReferences(format!(
                    "need {n} references besides `{source_id}`, speaker has {}",
                    others.len()
                )));
            }
            Ok(draw_distinct(&mut others, n, rng))
        }
        RefMode::SourceIncluded => {
            if utterances.len() < n {
                return Err(Error::InsufficientReferences(format!(
                    "need {n} total utterances including `{source_id}`, speaker has {}",
                    utterances.len()
                )));
            }
            let mut refs = vec![source_id.to_string()];
            refs.extend(draw_distinct(&mut others, n - 1, rng));
            Ok(refs)
        }
    }
}
