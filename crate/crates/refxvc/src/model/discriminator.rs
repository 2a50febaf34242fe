//! Window discriminator ensemble: three small 2-D convolutional critics that
//! score random mel windows of 32, 64, and 128 frames. Each critic is three
//! stride-2 convolutions (instance normalization on the latter two, leaky
//! ReLU, dropout while training) into a single linear score. Windows longer
//! than the input are skipped, not padded.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use refxvc_nn::{conv2d_out_dims, NodeId, ParamNodes, ParamStore, Tape};

use super::{linear_fwd, register_linear, Model, ModelConfig, LN_EPS, N_MELS};
use crate::error::{Error, Result};
use crate::features::MelSpectrogram;

/// Frame counts of the three scoring windows, ascending.
pub const WINDOW_LENGTHS: [usize; 3] = [32, 64, 128];

const CONV_KERNEL: usize = 3;
const CONV_STRIDE: usize = 2;
const CONV_PAD: usize = 1;
pub(crate) const CONV_LAYERS: usize = 3;
const LEAKY_SLOPE: f64 = 0.2;
const DROPOUT_P: f64 = 0.1;

/// Spatial dims of each critic layer's output for a given window length.
pub(crate) fn layer_dims(window: usize) -> [(usize, usize); CONV_LAYERS] {
    let mut dims = [(0, 0); CONV_LAYERS];
    let (mut h, mut w) = (window, N_MELS);
    for d in &mut dims {
        (h, w) = conv2d_out_dims(h, w, CONV_KERNEL, CONV_STRIDE, CONV_PAD);
        *d = (h, w);
    }
    dims
}

/// Shapes of the dropout masks a training pass must supply, one per conv
/// layer, matching that layer's post-activation map.
pub(crate) fn dropout_mask_shapes(window: usize, cfg: &ModelConfig) -> [(usize, usize); CONV_LAYERS] {
    layer_dims(window).map(|(h, w)| (h * w, cfg.disc_channels))
}

/// Draws pre-scaled dropout keep-masks for one critic pass: each entry is 0
/// with probability 0.1, else 1/0.9, so the kept activations stay unbiased.
pub(crate) fn draw_dropout_masks(
    rng: &mut impl Rng,
    window: usize,
    cfg: &ModelConfig,
) -> [Array2<f64>; CONV_LAYERS] {
    dropout_mask_shapes(window, cfg).map(|(rows, cols)| {
        Array2::from_shape_fn((rows, cols), |_| {
            if rng.random::<f64>() < DROPOUT_P {
                0.0
            } else {
                1.0 / (1.0 - DROPOUT_P)
            }
        })
    })
}

pub(crate) fn register(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) {
    let c = cfg.disc_channels;
    for w in WINDOW_LENGTHS {
        let prefix = format!("disc.w{w}");
        for (i, in_ch) in [1, c, c].into_iter().enumerate() {
            register_linear(
                store,
                rng,
                &format!("{prefix}.l{i}"),
                CONV_KERNEL * CONV_KERNEL * in_ch,
                c,
            );
        }
        let (h3, w3) = layer_dims(w)[CONV_LAYERS - 1];
        register_linear(store, rng, &format!("{prefix}.out"), h3 * w3 * c, 1);
    }
}

/// Graph-level critic over one `[window × 80]` mel slice. `dropout_masks`
/// (pre-scaled keep masks, shapes per [`dropout_mask_shapes`]) are applied
/// after each activation when given; inference passes `None`.
pub(crate) fn score_window_graph(
    tape: &mut Tape,
    store: &ParamStore,
    nodes: &mut ParamNodes,
    cfg: &ModelConfig,
    mel_window: NodeId,
    window: usize,
    dropout_masks: Option<&[Array2<f64>; CONV_LAYERS]>,
) -> NodeId {
    let c = cfg.disc_channels;
    let prefix = format!("disc.w{window}");
    // one-channel image: row y*80+x of the map is mel[y, x]
    let mut x = tape.reshape(mel_window, window * N_MELS, 1);
    let (mut h, mut w) = (window, N_MELS);
    for i in 0..CONV_LAYERS {
        let cols = tape.im2col_2d(x, h, w, CONV_KERNEL, CONV_STRIDE, CONV_PAD);
        x = linear_fwd(tape, store, nodes, cols, &format!("{prefix}.l{i}"));
        (h, w) = conv2d_out_dims(h, w, CONV_KERNEL, CONV_STRIDE, CONV_PAD);
        if i > 0 {
            // per-channel normalization over spatial positions, no affine
            x = tape.col_norm(x, LN_EPS);
        }
        x = tape.leaky_relu(x, LEAKY_SLOPE);
        if let Some(masks) = dropout_masks {
            x = tape.mul_mask(x, masks[i].clone());
        }
    }
    let flat = tape.reshape(x, 1, h * w * c);
    linear_fwd(tape, store, nodes, flat, &format!("{prefix}.out"))
}

/// Uniform window start in `[0, t − w]`, or `None` when the window doesn't
/// fit. All window sampling in the crate funnels through here.
pub(crate) fn draw_window_start(rng: &mut impl Rng, t: usize, w: usize) -> Option<usize> {
    if w > t {
        None
    } else {
        Some(rng.random_range(0..=t - w))
    }
}

/// Scores one random window per discriminator that fits in `mel`; returns
/// `(window_len, score)` pairs in ascending window order. Dropout is
/// inactive here — this is the inference/evaluation view.
pub fn discriminate(
    mel: &MelSpectrogram,
    model: &Model,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, f64)>> {
    let t = mel.t();
    if t == 0 {
        return Err(Error::InvalidInput("empty mel input".into()));
    }
    let mut scores = Vec::new();
    for w in WINDOW_LENGTHS {
        let Some(start) = draw_window_start(rng, t, w) else {
            continue;
        };
        let mut tape = Tape::new();
        let mut nodes = ParamNodes::new(&model.disc);
        let slice = mel.frames.slice(ndarray::s![start..start + w, ..]).to_owned();
        let win = tape.constant(slice);
        let score = score_window_graph(
            &mut tape,
            &model.disc,
            &mut nodes,
            &model.cfg,
            win,
            w,
            None,
        );
        scores.push((w, tape.value(score)[[0, 0]]));
    }
    Ok(scores)
}
