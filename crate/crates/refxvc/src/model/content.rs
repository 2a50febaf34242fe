//! Content encoder: token embedding followed by feed-forward Transformer
//! layers whose self-attention carries learned relative-position key biases
//! (offsets clipped to ±max_rel_offset). There is no absolute position
//! input, so the encoding is a pure function of the token sequence.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use refxvc_nn::{xavier_uniform, zeros, NodeId, ParamNodes, ParamStore, Tape};

use super::{layer_norm_fwd, linear_fwd, pnode, register_layer_norm, register_linear, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::features::TokenSequence;

/// Hidden content representation, `[T, content_hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentHidden {
    pub h: Array2<f64>,
}

pub(crate) fn register(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) {
    store.register(
        "content.embed",
        xavier_uniform(rng, cfg.vocab_size, cfg.content_hidden),
    );
    for l in 0..cfg.content_layers {
        for name in ["wq", "wk", "wv", "wo"] {
            register_linear(
                store,
                rng,
                &format!("content.l{l}.{name}"),
                cfg.content_hidden,
                cfg.content_hidden,
            );
        }
        for head in 0..cfg.content_heads {
            // per-offset key bias table; starts flat (zeros)
            store.register(
                &format!("content.l{l}.h{head}.relpos"),
                zeros(1, 2 * cfg.max_rel_offset + 1),
            );
        }
        register_layer_norm(store, &format!("content.l{l}.ln1"), cfg.content_hidden);
        register_layer_norm(store, &format!("content.l{l}.ln2"), cfg.content_hidden);
        register_linear(
            store,
            rng,
            &format!("content.l{l}.ff1"),
            cfg.content_hidden,
            cfg.content_ff_inner,
        );
        register_linear(
            store,
            rng,
            &format!("content.l{l}.ff2"),
            cfg.content_ff_inner,
            cfg.content_hidden,
        );
    }
}

/// Graph-level forward: tokens → `[T, hidden]`. When `attn_probe` is given,
/// every layer/head attention matrix node is appended to it (test hook).
pub(crate) fn forward(
    tape: &mut Tape,
    store: &ParamStore,
    nodes: &mut ParamNodes,
    cfg: &ModelConfig,
    tokens: &[u32],
    mut attn_probe: Option<&mut Vec<NodeId>>,
) -> NodeId {
    debug_assert!(!tokens.is_empty());
    let t = tokens.len();
    let dh = cfg.content_hidden / cfg.content_heads;
    let idx: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let embed = pnode(tape, store, nodes, "content.embed");
    let mut x = tape.gather_rows(embed, &idx);

    for l in 0..cfg.content_layers {
        let q = linear_fwd(tape, store, nodes, x, &format!("content.l{l}.wq"));
        let k = linear_fwd(tape, store, nodes, x, &format!("content.l{l}.wk"));
        let v = linear_fwd(tape, store, nodes, x, &format!("content.l{l}.wv"));
        let mut heads = Vec::with_capacity(cfg.content_heads);
        for head in 0..cfg.content_heads {
            let (c0, c1) = (head * dh, (head + 1) * dh);
            let qh = tape.slice_cols(q, c0, c1);
            let kh = tape.slice_cols(k, c0, c1);
            let vh = tape.slice_cols(v, c0, c1);
            let scores = tape.matmul_abt(qh, kh);
            let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let table = pnode(tape, store, nodes, &format!("content.l{l}.h{head}.relpos"));
            let bias = tape.rel_pos_bias(table, t);
            let logits = tape.add(scaled, bias);
            let attn = tape.softmax_rows(logits);
            if let Some(probe) = attn_probe.as_deref_mut() {
                probe.push(attn);
            }
            heads.push(tape.matmul(attn, vh));
        }
        let concat = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)
        };
        let o = linear_fwd(tape, store, nodes, concat, &format!("content.l{l}.wo"));
        let res = tape.add(x, o);
        x = layer_norm_fwd(tape, store, nodes, res, &format!("content.l{l}.ln1"));

        let f1 = linear_fwd(tape, store, nodes, x, &format!("content.l{l}.ff1"));
        let a = tape.relu(f1);
        let f2 = linear_fwd(tape, store, nodes, a, &format!("content.l{l}.ff2"));
        let res2 = tape.add(x, f2);
        x = layer_norm_fwd(tape, store, nodes, res2, &format!("content.l{l}.ln2"));
    }
    x
}

/// Encodes a token sequence into hidden content vectors.
pub fn encode_content(tokens: &TokenSequence, model: &Model) -> Result<ContentHidden> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("empty token sequence".into()));
    }
    for (i, &t) in tokens.tokens.iter().enumerate() {
        if t as usize >= model.cfg.vocab_size {
            return Err(Error::Range(format!(
                "token {t} at position {i} ≥ vocab size {}",
                model.cfg.vocab_size
            )));
        }
    }
    let mut tape = Tape::new();
    let mut nodes = ParamNodes::new(&model.gen);
    let h = forward(
        &mut tape,
        &model.gen,
        &mut nodes,
        &model.cfg,
        &tokens.tokens,
        None,
    );
    Ok(ContentHidden {
        h: tape.value(h).clone(),
    })
}
