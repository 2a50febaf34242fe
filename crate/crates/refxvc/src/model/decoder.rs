//! Mel decoder: per-frame conditioning (content ‖ fused timbre ‖ pitch
//! embedding → linear), a stride-4 downsampling convolution into a gated
//! dilated residual stack (the posterior encoder), a second shorter stack,
//! and a stride-4 transposed convolution back up to one mel row per input
//! frame. Padding to a multiple of 4 is internal; outputs are trimmed.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use refxvc_nn::{NodeId, ParamNodes, ParamStore, Tape};

use super::{
    layer_norm_fwd, linear_fwd, register_layer_norm, register_linear, Model, ModelConfig, N_MELS,
    STRIDE,
};
use crate::error::{Error, Result};
use crate::features::{MelSpectrogram, NormalizedPitch};
use crate::model::content::ContentHidden;

/// Latent frame count after stride-4 downsampling with right padding.
pub fn latent_len(t_s: usize) -> usize {
    t_s.div_ceil(STRIDE)
}

pub(crate) fn register(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) {
    let c = cfg.decoder_channels;
    register_linear(store, rng, "dec.pitch", 2, cfg.pitch_embed_dim);
    register_linear(
        store,
        rng,
        "dec.cond",
        cfg.content_hidden + cfg.speaker_dim + cfg.pitch_embed_dim,
        c,
    );
    register_linear(store, rng, "dec.down", STRIDE * c, c);
    register_layer_norm(store, "dec.down_ln", c);
    for i in 0..cfg.posterior_layers {
        register_wavenet_layer(store, rng, &format!("dec.post.l{i}"), cfg, i + 1 < cfg.posterior_layers);
    }
    for i in 0..cfg.decoder_layers {
        register_wavenet_layer(store, rng, &format!("dec.out.l{i}"), cfg, i + 1 < cfg.decoder_layers);
    }
    register_linear(store, rng, "dec.up", c, STRIDE * c);
    register_layer_norm(store, "dec.up_ln", c);
    register_linear(store, rng, "dec.final", c, N_MELS);
}

fn register_wavenet_layer(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    cfg: &ModelConfig,
    has_res: bool,
) {
    let c = cfg.decoder_channels;
    register_linear(store, rng, &format!("{prefix}.conv"), cfg.kernel_size * c, 2 * c);
    if has_res {
        // the last layer feeds only the skip sum; its residual would be dead
        register_linear(store, rng, &format!("{prefix}.res"), c, c);
    }
    register_linear(store, rng, &format!("{prefix}.skip"), c, c);
}

/// Gated dilated residual stack; dilations cycle 1, 2, 4, 8. The stack
/// output is the sum of per-layer skip projections.
fn wavenet_stack(
    tape: &mut Tape,
    store: &ParamStore,
    nodes: &mut ParamNodes,
    cfg: &ModelConfig,
    x: NodeId,
    prefix: &str,
    n_layers: usize,
) -> NodeId {
    let c = cfg.decoder_channels;
    let mut x = x;
    let mut skip_sum: Option<NodeId> = None;
    for i in 0..n_layers {
        let dilation = 1 << (i % 4);
        let cols = tape.im2col_1d(x, cfg.kernel_size, dilation);
        let pre = linear_fwd(tape, store, nodes, cols, &format!("{prefix}.l{i}.conv"));
        let a = tape.slice_cols(pre, 0, c);
        let b = tape.slice_cols(pre, c, 2 * c);
        let ta = tape.tanh(a);
        let sb = tape.sigmoid(b);
        let gated = tape.mul(ta, sb);
        if i + 1 < n_layers {
            let res = linear_fwd(tape, store, nodes, gated, &format!("{prefix}.l{i}.res"));
            x = tape.add(x, res);
        }
        let skip = linear_fwd(tape, store, nodes, gated, &format!("{prefix}.l{i}.skip"));
        skip_sum = Some(match skip_sum {
            Some(s) => tape.add(s, skip),
            None => skip,
        });
    }
    skip_sum.expect("stack has at least one layer")
}

/// Builds the `[T × 2]` pitch input (normalized value, voiced flag).
pub(crate) fn pitch_input_matrix(pitch: &NormalizedPitch) -> Array2<f64> {
    let t = pitch.values.len();
    let mut m = Array2::zeros((t, 2));
    for i in 0..t {
        m[[i, 0]] = pitch.values[i];
        m[[i, 1]] = f64::from(pitch.voiced[i]);
    }
    m
}

/// Graph-level forward producing `[T_s × 80]` log-mel rows. `pitch_in` is a
/// `[T_s × 2]` node (see [`pitch_input_matrix`]).
pub(crate) fn forward(
    tape: &mut Tape,
    store: &ParamStore,
    nodes: &mut ParamNodes,
    cfg: &ModelConfig,
    h_s: NodeId,
    fused: NodeId,
    pitch_in: NodeId,
    t_s: usize,
) -> NodeId {
    let c = cfg.decoder_channels;
    let t_pad = latent_len(t_s) * STRIDE;

    let pitch_emb = linear_fwd(tape, store, nodes, pitch_in, "dec.pitch");
    let cat = tape.concat_cols(&[h_s, fused, pitch_emb]);
    let cond = linear_fwd(tape, store, nodes, cat, "dec.cond");
    let padded = if t_pad == t_s {
        cond
    } else {
        tape.pad_rows(cond, 0, t_pad - t_s)
    };

    // stride-4 kernel-4 convolution as reshape + linear (windows don't overlap)
    let grouped = tape.reshape(padded, t_pad / STRIDE, STRIDE * c);
    let down = linear_fwd(tape, store, nodes, grouped, "dec.down");
    let down = tape.relu(down);
    let down = layer_norm_fwd(tape, store, nodes, down, "dec.down_ln");

    let latent = wavenet_stack(tape, store, nodes, cfg, down, "dec.post", cfg.posterior_layers);
    let decoded = wavenet_stack(tape, store, nodes, cfg, latent, "dec.out", cfg.decoder_layers);

    // stride-4 transposed convolution as linear + reshape
    let up = linear_fwd(tape, store, nodes, decoded, "dec.up");
    let up = tape.reshape(up, t_pad, c);
    let up = tape.relu(up);
    let up = layer_norm_fwd(tape, store, nodes, up, "dec.up_ln");

    let mel = linear_fwd(tape, store, nodes, up, "dec.final");
    if t_pad == t_s {
        mel
    } else {
        tape.slice_rows(mel, 0, t_s)
    }
}

/// Decodes content + fused timbre + normalized pitch into a mel spectrogram
/// with exactly as many frames as the source.
pub fn decode(
    h_s: &ContentHidden,
    fused: &Array2<f64>,
    pitch: &NormalizedPitch,
    model: &Model,
) -> Result<MelSpectrogram> {
    let t_s = h_s.h.nrows();
    if t_s == 0 {
        return Err(Error::InvalidInput("empty content input".into()));
    }
    if fused.nrows() != t_s || pitch.values.len() != t_s {
        return Err(Error::InvalidInput(format!(
            "frame count mismatch: content {t_s}, fused timbre {}, pitch {}",
            fused.nrows(),
            pitch.values.len()
        )));
    }
    if h_s.h.ncols() != model.cfg.content_hidden || fused.ncols() != model.cfg.speaker_dim {
        return Err(Error::InvalidInput(format!(
            "width mismatch: content {}, fused {}",
            h_s.h.ncols(),
            fused.ncols()
        )));
    }
    let mut tape = Tape::new();
    let mut nodes = ParamNodes::new(&model.gen);
    let h_s_node = tape.constant(h_s.h.clone());
    let fused_node = tape.constant(fused.clone());
    let pitch_node = tape.constant(pitch_input_matrix(pitch));
    let mel = forward(
        &mut tape,
        &model.gen,
        &mut nodes,
        &model.cfg,
        h_s_node,
        fused_node,
        pitch_node,
        t_s,
    );
    Ok(MelSpectrogram {
        frames: tape.value(mel).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tiny() -> ModelConfig {
        ModelConfig::tiny()
    }

    fn random_inputs(
        rng: &mut impl Rng,
        cfg: &ModelConfig,
        t: usize,
    ) -> (ContentHidden, Array2<f64>, NormalizedPitch) {
        let h_s = ContentHidden {
            h: Array2::from_shape_fn((t, cfg.content_hidden), |_| rng.random_range(-1.0..1.0)),
        };
        let fused = Array2::from_shape_fn((t, cfg.speaker_dim), |_| rng.random_range(-1.0..1.0));
        let pitch = NormalizedPitch {
            values: (0..t).map(|_| rng.random_range(-2.0..2.0)).collect(),
            voiced: (0..t).map(|i| i % 3 != 0).collect(),
        };
        (h_s, fused, pitch)
    }

    #[test]
    fn latent_length_is_ceil_t_over_four() {
        assert_eq!(latent_len(50), 13);
        assert_eq!(latent_len(4), 1);
        assert_eq!(latent_len(1), 1);
        assert_eq!(latent_len(256), 64);
        assert_eq!(latent_len(257), 65);
    }

    #[test]
    fn output_has_one_mel_row_per_input_frame() {
        let model = Model::new(ModelConfig::toy(), 20).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for t in [50usize, 4] {
            let (h_s, fused, pitch) = random_inputs(&mut rng, &model.cfg, t);
            let mel = decode(&h_s, &fused, &pitch, &model).unwrap();
            assert_eq!(mel.t(), t);
            assert_eq!(mel.n_mels(), N_MELS);
        }
    }

    #[test]
    fn length_contract_holds_for_every_frame_count_up_to_257() {
        let model = Model::new(tiny(), 21).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for t in 1..=257usize {
            let (h_s, fused, pitch) = random_inputs(&mut rng, &model.cfg, t);
            let mel = decode(&h_s, &fused, &pitch, &model).unwrap();
            assert_eq!(mel.t(), t, "frame count mismatch at T_s = {t}");
            assert_eq!(mel.n_mels(), N_MELS);
        }
    }

    #[test]
    fn decoding_is_bitwise_deterministic() {
        let model = Model::new(ModelConfig::toy(), 22).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let (h_s, fused, pitch) = random_inputs(&mut rng, &model.cfg, 37);
        let a = decode(&h_s, &fused, &pitch, &model).unwrap();
        let b = decode(&h_s, &fused, &pitch, &model).unwrap();
        assert_eq!(a.frames, b.frames);
    }

    #[test]
    fn frame_count_mismatch_is_rejected() {
        let model = Model::new(ModelConfig::toy(), 23).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (h_s, fused, mut pitch) = random_inputs(&mut rng, &model.cfg, 12);
        pitch.values.pop();
        pitch.voiced.pop();
        assert!(matches!(
            decode(&h_s, &fused, &pitch, &model),
            Err(Error::InvalidInput(_))
        ));
    }

    /// Perturbing one input frame may only move output frames within the
    /// stack's receptive field. Kernel 5 at dilations 1,2,4,8 gives a ±2d
    /// halo per layer: 12 layers sum to ±90 latent cells, i.e. ±360 frames
    /// plus stride rounding.
    #[test]
    fn perturbation_stays_inside_the_receptive_field() {
        let model = Model::new(tiny(), 24).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let t = 1024usize;
        let (h_s, fused, pitch) = random_inputs(&mut rng, &model.cfg, t);
        let base = decode(&h_s, &fused, &pitch, &model).unwrap();

        let mut h_bumped = h_s.clone();
        for c in 0..model.cfg.content_hidden {
            h_bumped.h[[512, c]] += 1.0;
        }
        let bumped = decode(&h_bumped, &fused, &pitch, &model).unwrap();

        // latent cell 128 ± 90 → output rows [4·38, 4·218+3] = [152, 875]
        for row in (0..=150).chain(877..t) {
            for c in 0..N_MELS {
                assert_eq!(
                    base.frames[[row, c]],
                    bumped.frames[[row, c]],
                    "row {row} outside the receptive field moved"
                );
            }
        }
        let moved = (0..N_MELS).any(|c| base.frames[[512, c]] != bumped.frames[[512, c]]);
        assert!(moved, "perturbed frame did not change its own output");
    }

    #[test]
    fn mae_gradient_reaches_conditioning_stacks_and_pitch_embedding() {
        let model = Model::new(tiny(), 25).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let t = 11usize;
        let (h_s, fused, pitch) = random_inputs(&mut rng, &model.cfg, t);

        let mut tape = Tape::new();
        let mut nodes = ParamNodes::new(&model.gen);
        let h_s_node = tape.constant(h_s.h);
        let fused_node = tape.constant(fused);
        let pitch_node = tape.constant(pitch_input_matrix(&pitch));
        let mel = forward(
            &mut tape,
            &model.gen,
            &mut nodes,
            &model.cfg,
            h_s_node,
            fused_node,
            pitch_node,
            t,
        );
        let target = tape.constant(Array2::from_shape_fn((t, N_MELS), |_| {
            rng.random_range(-1.0..1.0)
        }));
        let diff = tape.sub(mel, target);
        let abs = tape.abs(diff);
        let mae = tape.mean_all(abs);
        tape.backward(mae);

        let grads = nodes.collect_grads(&tape, &model.gen);
        for (i, (name, _)) in model.gen.iter().enumerate() {
            if !name.starts_with("dec.") {
                continue;
            }
            assert!(
                grads[i].iter().any(|&v| v != 0.0),
                "no gradient reached {name}"
            );
        }
    }
}
