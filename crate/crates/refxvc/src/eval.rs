//! Objective evaluation: speaker-embedding-space statistics (how tightly
//! each speaker's utterance embeddings cluster, and how far apart the
//! clusters sit), F0-contour comparison between source and converted audio,
//! and a labeled embedding dump for external 2-D projection tools.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::features::extract_f0;

/// Norms below this are treated as zero when normalizing / computing cosine.
const NORM_EPS: f64 = 1e-8;

/// Embedding-space summary. `ratio` is the headline number: > 1 means the
/// clusters are farther apart than they are wide.
#[derive(Debug, Clone)]
pub struct EmbeddingSpaceReport {
    /// Per-speaker centroid: mean of the speaker's L2-normalized embeddings.
    pub centroids: BTreeMap<String, Array1<f64>>,
    /// Mean over speakers of the mean cosine distance to the own centroid.
    pub intra: f64,
    /// Mean cosine distance over all centroid pairs.
    pub inter: f64,
    /// `inter / max(intra, 1e-8)`.
    pub ratio: f64,
}

/// `1 − cos(a, b)`, with zero-norm inputs treated as orthogonal.
pub fn cosine_distance(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na < NORM_EPS || nb < NORM_EPS {
        return 1.0;
    }
    1.0 - a.dot(b) / (na * nb)
}

/// Computes intra/inter-speaker statistics over utterance-level speaker
/// embeddings, keyed by speaker id.
///
/// Centroids average the *normalized* embeddings, so the whole report is
/// invariant under positive per-embedding scaling.
pub fn embedding_space_stats(
    embeddings: &BTreeMap<String, Vec<Array1<f64>>>,
) -> Result<EmbeddingSpaceReport> {
    if embeddings.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "embedding-space statistics need at least 2 speakers, got {}",
            embeddings.len()
        )));
    }
    for (speaker, embs) in embeddings {
        if embs.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "speaker {speaker} has {} embedding(s), need at least 2",
                embs.len()
            )));
        }
    }

    let normalize = |v: &Array1<f64>| -> Array1<f64> {
        let n = v.dot(v).sqrt();
        if n < NORM_EPS {
            v.clone()
        } else {
            v / n
        }
    };

    let mut centroids = BTreeMap::new();
    let mut intra_sum = 0.0;
    for (speaker, embs) in embeddings {
        let dim = embs[0].len();
        let mut centroid = Array1::zeros(dim);
        for e in embs {
            if e.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "speaker {speaker} mixes embedding dims {dim} and {}",
                    e.len()
                )));
            }
            centroid = centroid + normalize(e);
        }
        centroid /= embs.len() as f64;
        let mean_dist = embs
            .iter()
            .map(|e| cosine_distance(e, &centroid))
            .sum::<f64>()
            / embs.len() as f64;
        intra_sum += mean_dist;
        centroids.insert(speaker.clone(), centroid);
    }
    let intra = intra_sum / embeddings.len() as f64;

    let list: Vec<&Array1<f64>> = centroids.values().collect();
    let mut inter_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..list.len() {
        for j in i + 1..list.len() {
            inter_sum += cosine_distance(list[i], list[j]);
            pairs += 1;
        }
    }
    let inter = inter_sum / pairs as f64;

    Ok(EmbeddingSpaceReport {
        centroids,
        intra,
        inter,
        ratio: inter / intra.max(NORM_EPS),
    })
}

/// Prosody comparison between a source utterance and its conversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Comparison {
    /// Pearson correlation of F0 (Hz) over frames voiced in both signals.
    pub pearson_r: f64,
    /// Jointly-voiced frames / source-voiced frames (after truncating both
    /// contours to the shorter).
    pub voiced_overlap: f64,
}

/// Extracts F0 from both waveforms, truncates the contours to the shorter,
/// and correlates the jointly-voiced frames.
pub fn compare_f0(source_audio: &[f64], converted_audio: &[f64]) -> Result<F0Comparison> {
    let src = extract_f0(source_audio)?;
    let cnv = extract_f0(converted_audio)?;
    let t = src.voiced.len().min(cnv.voiced.len());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut source_voiced = 0usize;
    for i in 0..t {
        if src.voiced[i] {
            source_voiced += 1;
            if cnv.voiced[i] {
                xs.push(src.f0_hz[i]);
                ys.push(cnv.f0_hz[i]);
            }
        }
    }
    if xs.len() < 5 {
        return Err(Error::InsufficientVoicedFrames(xs.len()));
    }
    let voiced_overlap = xs.len() as f64 / source_voiced as f64;
    Ok(F0Comparison {
        pearson_r: pearson(&xs, &ys),
        voiced_overlap,
    })
}

/// Pearson correlation; identical inputs short-circuit to 1 so a perfectly
/// reproduced constant contour doesn't become 0/0.
fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    if xs == ys {
        return 1.0;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    cov / (vx.sqrt() * vy.sqrt()).max(NORM_EPS)
}

/// One utterance-level embedding with its labels, ready for projection.
#[derive(Debug, Clone)]
pub struct LabeledEmbedding {
    pub speaker_id: String,
    pub language: String,
    pub embedding: Array1<f64>,
}

/// Writes embeddings as `speaker_id<TAB>language<TAB>v0 v1 v2 ...`, one
/// line per utterance, for external 2-D projection (t-SNE, UMAP, ...).
pub fn dump_projection_inputs(embeddings: &[LabeledEmbedding], path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in embeddings {
        write!(out, "{}\t{}\t", e.speaker_id, e.language).expect("string write");
        let mut first = true;
        for v in &e.embedding {
            if !first {
                out.push(' ');
            }
            write!(out, "{v:.6e}").expect("string write");
            first = false;
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(Error::write(path))
}
