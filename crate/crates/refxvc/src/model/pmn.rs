//! Pronunciation matching: single-head cross-attention from source content
//! hiddens (queries) onto a bank of reference content hiddens (keys), with
//! the references' frame-level speaker embeddings as values. Produces a
//! time-varying timbre track that is then fused with the utterance-level
//! speaker vector by broadcast addition.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use refxvc_nn::{xavier_uniform, NodeId, ParamNodes, ParamStore, Tape};

use super::{pnode, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::model::timbre::SpeakerEmbedding;
use crate::model::content::ContentHidden;

/// References concatenated along time: content hiddens as attention keys,
/// local speaker embeddings as values, `boundaries[i]` = start row of
/// reference `i` within the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBank {
    pub h_r: Array2<f64>,
    pub s_l: Array2<f64>,
    pub boundaries: Vec<usize>,
}

impl ReferenceBank {
    pub fn t_bank(&self) -> usize {
        self.h_r.nrows()
    }

    pub fn n_refs(&self) -> usize {
        self.boundaries.len()
    }
}

/// Cross-attention output: `f` is the per-frame timbre track, `fused` the
/// track after adding the global speaker vector (equal to `f` until
/// [`fuse_speaker`] runs), `attn` the row-stochastic alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct FineGrainedTimbre {
    pub f: Array2<f64>,
    pub fused: Array2<f64>,
    pub attn: Array2<f64>,
}

/// Parsed alignment dump (see [`export_attention`]).
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentDump {
    pub t_s: usize,
    pub t_bank: usize,
    pub boundaries: Vec<usize>,
    pub weights: Array2<f64>,
}

pub(crate) fn register(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) {
    // bias-free query/key projections; values pass through untouched
    store.register(
        "pmn.wq",
        xavier_uniform(rng, cfg.content_hidden, cfg.content_hidden),
    );
    store.register(
        "pmn.wk",
        xavier_uniform(rng, cfg.content_hidden, cfg.content_hidden),
    );
}

/// Graph-level attention: returns `(f, attn)` given source hiddens and the
/// bank's key/value nodes.
pub(crate) fn forward(
    tape: &mut Tape,
    store: &ParamStore,
    nodes: &mut ParamNodes,
    cfg: &ModelConfig,
    h_s: NodeId,
    h_r: NodeId,
    s_l: NodeId,
) -> (NodeId, NodeId) {
    let wq = pnode(tape, store, nodes, "pmn.wq");
    let wk = pnode(tape, store, nodes, "pmn.wk");
    let q = tape.matmul(h_s, wq);
    let k = tape.matmul(h_r, wk);
    let scores = tape.matmul_abt(q, k);
    let scaled = tape.scale(scores, 1.0 / (cfg.content_hidden as f64).sqrt());
    let attn = tape.softmax_rows(scaled);
    let f = tape.matmul(attn, s_l);
    (f, attn)
}

/// Concatenates references along time in list order, recording each
/// reference's start row.
pub fn build_reference_bank(refs: &[(ContentHidden, SpeakerEmbedding)]) -> Result<ReferenceBank> {
    if refs.is_empty() {
        return Err(Error::InvalidInput("reference list is empty".into()));
    }
    let mut boundaries = Vec::with_capacity(refs.len());
    let mut t_bank = 0usize;
    for (i, (h, emb)) in refs.iter().enumerate() {
        if h.h.nrows() != emb.local.nrows() {
            return Err(Error::InvalidInput(format!(
                "reference {i}: content has {} frames but local embedding has {}",
                h.h.nrows(),
                emb.local.nrows()
            )));
        }
        boundaries.push(t_bank);
        t_bank += h.h.nrows();
    }
    let n_hidden = refs[0].0.h.ncols();
    let n_spk = refs[0].1.local.ncols();
    let mut h_r = Array2::zeros((t_bank, n_hidden));
    let mut s_l = Array2::zeros((t_bank, n_spk));
    for ((h, emb), &start) in refs.iter().zip(&boundaries) {
        let t = h.h.nrows();
        h_r.slice_mut(ndarray::s![start..start + t, ..]).assign(&h.h);
        s_l.slice_mut(ndarray::s![start..start + t, ..])
            .assign(&emb.local);
    }
    Ok(ReferenceBank {
        h_r,
        s_l,
        boundaries,
    })
}

/// Attends source content over the reference bank, yielding a per-frame
/// timbre track aligned with the source.
pub fn match_pronunciation(
    h_s: &ContentHidden,
    bank: &ReferenceBank,
    model: &Model,
) -> Result<FineGrainedTimbre> {
    if bank.t_bank() == 0 {
        return Err(Error::InvalidInput("reference bank is empty".into()));
    }
    if h_s.h.ncols() != model.cfg.content_hidden || bank.h_r.ncols() != model.cfg.content_hidden {
        return Err(Error::InvalidInput(format!(
            "content hidden width mismatch: source {}, bank {}, expected {}",
            h_s.h.ncols(),
            bank.h_r.ncols(),
            model.cfg.content_hidden
        )));
    }
    let mut tape = Tape::new();
    let mut nodes = ParamNodes::new(&model.gen);
    let h_s_node = tape.constant(h_s.h.clone());
    let h_r_node = tape.constant(bank.h_r.clone());
    let s_l_node = tape.constant(bank.s_l.clone());
    let (f, attn) = forward(
        &mut tape,
        &model.gen,
        &mut nodes,
        &model.cfg,
        h_s_node,
        h_r_node,
        s_l_node,
    );
    let f = tape.value(f).clone();
    Ok(FineGrainedTimbre {
        fused: f.clone(),
        f,
        attn: tape.value(attn).clone(),
    })
}

/// Adds the utterance-level speaker vector to every frame of the timbre
/// track. The caller stores the result back into `fine.fused`.
pub fn fuse_speaker(fine: &FineGrainedTimbre, s_g: &Array1<f64>) -> Result<Array2<f64>> {
    if fine.f.ncols() != s_g.len() {
        return Err(Error::InvalidInput(format!(
            "speaker dim mismatch: track {}, global {}",
            fine.f.ncols(),
            s_g.len()
        )));
    }
    Ok(&fine.f + &s_g.view().insert_axis(Axis(0)))
}

/// Writes the alignment as text: header `RXVCATT1 <T_s> <T_bank> <n_refs>
/// <starts...>` then one line of weights per source frame, six significant
/// digits each.
pub fn export_attention(
    fine: &FineGrainedTimbre,
    boundaries: &[usize],
    path: &Path,
) -> Result<()> {
    let (t_s, t_bank) = fine.attn.dim();
    let mut out = format!("RXVCATT1 {t_s} {t_bank} {}", boundaries.len());
    for b in boundaries {
        write!(out, " {b}").expect("string write");
    }
    out.push('\n');
    for row in fine.attn.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            write!(out, "{v:.5e}").expect("string write");
            first = false;
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(Error::write(path))
}

/// Reads an alignment dump back; errors carry 1-based line numbers.
pub fn parse_alignment_dump(path: &Path) -> Result<AlignmentDump> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse("line 1: empty alignment dump".into()))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("RXVCATT1") {
        return Err(Error::Parse("line 1: expected RXVCATT1 header".into()));
    }
    let mut next_usize = |what: &str| -> Result<usize> {
        fields
            .next()
            .ok_or_else(|| Error::Parse(format!("line 1: missing {what}")))?
            .parse()
            .map_err(|_| Error::Parse(format!("line 1: bad {what}")))
    };
    let t_s = next_usize("T_s")?;
    let t_bank = next_usize("T_bank")?;
    let n_refs = next_usize("n_refs")?;
    let mut boundaries = Vec::with_capacity(n_refs);
    for i in 0..n_refs {
        boundaries.push(next_usize(&format!("boundary {i}"))?);
    }
    if fields.next().is_some() {
        return Err(Error::Parse("line 1: trailing fields after boundaries".into()));
    }
    let mut weights = Array2::zeros((t_s, t_bank));
    for row in 0..t_s {
        let (idx, line) = lines.next().ok_or_else(|| {
            Error::Parse(format!("line {}: expected {t_s} weight rows", row + 2))
        })?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse()
                    .map_err(|_| Error::Parse(format!("line {}: bad weight '{tok}'", idx + 1)))
            })
            .collect::<Result<_>>()?;
        if vals.len() != t_bank {
            return Err(Error::Parse(format!(
                "line {}: expected {t_bank} weights, found {}",
                idx + 1,
                vals.len()
            )));
        }
        for (col, v) in vals.into_iter().enumerate() {
            weights[[row, col]] = v;
        }
    }
    if let Some((idx, line)) = lines.next() {
        if !line.trim().is_empty() {
            return Err(Error::Parse(format!("line {}: trailing content", idx + 1)));
        }
    }
    Ok(AlignmentDump {
        t_s,
        t_bank,
        boundaries,
        weights,
    })
}
