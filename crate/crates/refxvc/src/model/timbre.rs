//! Timbre encoder: a 3-layer bidirectional LSTM over the reference mel,
//! projected to the speaker embedding width. The per-frame projections are
//! the local embedding S_L; their temporal mean is the global embedding S_G,
//! which makes `S_G = mean(S_L)` an exact, testable relation.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use refxvc_nn::{xavier_uniform, zeros, NodeId, ParamNodes, ParamStore, Tape};

use super::{linear_fwd, pnode, register_linear, Model, ModelConfig, N_MELS};
use crate::error::{Error, Result};
use crate::features::MelSpectrogram;

/// Global (utterance-level) and local (frame-level) speaker embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    /// `[speaker_dim]` — temporal mean of `local`.
    pub global: Array1<f64>,
    /// `[T, speaker_dim]`.
    pub local: Array2<f64>,
}

pub(crate) fn register(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) {
    let h = cfg.speaker_dim / 2;
    for l in 0..cfg.lstm_layers {
        let n_in = if l == 0 { N_MELS } else { cfg.speaker_dim };
        for dir in ["fw", "bw"] {
            store.register(
                &format!("timbre.l{l}.{dir}.w_ih"),
                xavier_uniform(rng, n_in, 4 * h),
            );
            store.register(
                &format!("timbre.l{l}.{dir}.w_hh"),
                xavier_uniform(rng, h, 4 * h),
            );
            store.register(&format!("timbre.l{l}.{dir}.b"), zeros(1, 4 * h));
        }
    }
    register_linear(store, rng, "timbre.proj", cfg.speaker_dim, cfg.speaker_dim);
}

/// One LSTM direction over the whole sequence; returns `[T, h]` hidden
/// states in forward-time order.
fn run_direction(
    tape: &mut Tape,
    store: &ParamStore,
    nodes: &mut ParamNodes,
    x: NodeId,
    prefix: &str,
    h: usize,
    reverse: bool,
) -> NodeId {
    let t = tape.shape(x).0;
    let w_ih = pnode(tape, store, nodes, &format!("{prefix}.w_ih"));
    let w_hh = pnode(tape, store, nodes, &format!("{prefix}.w_hh"));
    let b = pnode(tape, store, nodes, &format!("{prefix}.b"));
    let xg = tape.matmul(x, w_ih); // [T, 4h]; bias is applied inside the cell
    let mut state = tape.constant(Array2::zeros((1, 2 * h)));
    let mut states = Vec::with_capacity(t);
    let steps: Vec<usize> = if reverse {
        (0..t).rev().collect()
    } else {
        (0..t).collect()
    };
    for i in steps {
        let row = tape.slice_rows(xg, i, i + 1);
        state = tape.lstm_cell(row, state, w_hh, b);
        states.push(state);
    }
    if reverse {
        states.reverse();
    }
    let hc = tape.concat_rows(&states); // [T, 2h] = h ‖ c per row
    tape.slice_cols(hc, 0, h)
}

/// Graph-level forward: mel node `[T, 80]` → `(S_L [T, D], S_G [1, D])`.
pub(crate) fn forward(
    tape: &mut Tape,
    store: &ParamStore,
    nodes: &mut ParamNodes,
    cfg: &ModelConfig,
    mel: NodeId,
) -> (NodeId, NodeId) {
    let h = cfg.speaker_dim / 2;
    let mut x = mel;
    for l in 0..cfg.lstm_layers {
        let fw = run_direction(tape, store, nodes, x, &format!("timbre.l{l}.fw"), h, false);
        let bw = run_direction(tape, store, nodes, x, &format!("timbre.l{l}.bw"), h, true);
        x = tape.concat_cols(&[fw, bw]);
    }
    let sl = linear_fwd(tape, store, nodes, x, "timbre.proj");
    let sg = tape.mean_rows(sl);
    (sl, sg)
}

/// Encodes a reference mel into its speaker embeddings.
pub fn encode_timbre(mel: &MelSpectrogram, model: &Model) -> Result<SpeakerEmbedding> {
    if mel.t() == 0 {
        return Err(Error::InvalidInput("empty mel (T = 0)".into()));
    }
    if mel.n_mels() != N_MELS {
        return Err(Error::InvalidInput(format!(
            "expected {N_MELS} mel bands, got {}",
            mel.n_mels()
        )));
    }
    let mut tape = Tape::new();
    let mut nodes = ParamNodes::new(&model.gen);
    let m = tape.constant(mel.frames.clone());
    let (sl, sg) = forward(&mut tape, &model.gen, &mut nodes, &model.cfg, m);
    Ok(SpeakerEmbedding {
        global: tape.value(sg).row(0).to_owned(),
        local: tape.value(sl).clone(),
    })
}
