//! The network: timbre encoder, content encoder, pronunciation-matching
//! cross-attention, decoder, and the window discriminators.
//!
//! Parameters live in two stores — `gen` (everything the generator-side loss
//! trains) and `disc` (the discriminators) — so the two optimizers never
//! touch each other's weights. Forward passes are free functions that build
//! onto a caller-supplied tape; the public operations wrap them with a fresh
//! tape and plain-matrix outputs.

pub mod content;
pub mod decoder;
pub mod discriminator;
pub mod pmn;
pub mod timbre;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use refxvc_nn::{xavier_uniform, zeros, NodeId, ParamNodes, ParamStore, Tape};

use crate::error::{Error, Result};

pub use content::{encode_content, ContentHidden};
pub use decoder::decode;
pub use discriminator::discriminate;
pub use pmn::{
    build_reference_bank, export_attention, fuse_speaker, match_pronunciation,
    parse_alignment_dump, AlignmentDump, FineGrainedTimbre, ReferenceBank,
};
pub use timbre::{encode_timbre, SpeakerEmbedding};

pub const N_MELS: usize = 80;
/// Temporal down/upsampling factor of the decoder.
pub const STRIDE: usize = 4;
pub(crate) const LN_EPS: f64 = 1e-5;

/// Structural sizes of the network. [`ModelConfig::paper`] is the full-scale
/// configuration; [`ModelConfig::toy`] shrinks the widths for the bundled
/// synthetic corpus while keeping every shape relation intact.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Content encoder (and PMN projection) width.
    pub content_hidden: usize,
    pub content_layers: usize,
    pub content_heads: usize,
    pub content_ff_inner: usize,
    /// Relative-position offsets are clipped to ±this.
    pub max_rel_offset: usize,
    /// Speaker embedding width (bi-LSTM: half per direction).
    pub speaker_dim: usize,
    pub lstm_layers: usize,
    /// Content token vocabulary size K.
    pub vocab_size: usize,
    pub pitch_embed_dim: usize,
    /// WaveNet channel width in the decoder.
    pub decoder_channels: usize,
    pub posterior_layers: usize,
    pub decoder_layers: usize,
    /// Dilated-conv kernel size in the WaveNet stacks (odd).
    pub kernel_size: usize,
    pub disc_channels: usize,
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            content_hidden: 192,
            content_layers: 4,
            content_heads: 2,
            content_ff_inner: 768,
            max_rel_offset: 64,
            speaker_dim: 256,
            lstm_layers: 3,
            vocab_size: 100,
            pitch_embed_dim: 16,
            decoder_channels: 192,
            posterior_layers: 8,
            decoder_layers: 4,
            kernel_size: 5,
            disc_channels: 32,
        }
    }

    pub fn toy() -> Self {
        Self {
            content_hidden: 64,
            content_ff_inner: 256,
            speaker_dim: 64,
            vocab_size: 16,
            decoder_channels: 64,
            ..Self::paper()
        }
    }

    /// Minimal widths for fast test sweeps; same depths and kernel as the
    /// real presets, so receptive-field and shape arithmetic is unchanged.
    #[cfg(test)]
    pub(crate) fn tiny() -> Self {
        Self {
            content_hidden: 8,
            content_layers: 1,
            content_heads: 1,
            content_ff_inner: 16,
            max_rel_offset: 4,
            speaker_dim: 8,
            lstm_layers: 1,
            vocab_size: 4,
            pitch_embed_dim: 16,
            decoder_channels: 16,
            posterior_layers: 8,
            decoder_layers: 4,
            kernel_size: 5,
            disc_channels: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.speaker_dim == 0 || self.speaker_dim % 2 != 0 {
            return bad(format!("speaker_dim must be even, got {}", self.speaker_dim));
        }
        if self.content_heads == 0 || self.content_hidden % self.content_heads != 0 {
            return bad(format!(
                "content_heads ({}) must divide content_hidden ({})",
                self.content_heads, self.content_hidden
            ));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return bad(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            ));
        }
        if self.vocab_size < 2 {
            return bad(format!("vocab_size must be ≥ 2, got {}", self.vocab_size));
        }
        for (name, v) in [
            ("content_hidden", self.content_hidden),
            ("content_layers", self.content_layers),
            ("content_ff_inner", self.content_ff_inner),
            ("max_rel_offset", self.max_rel_offset),
            ("lstm_layers", self.lstm_layers),
            ("pitch_embed_dim", self.pitch_embed_dim),
            ("decoder_channels", self.decoder_channels),
            ("posterior_layers", self.posterior_layers),
            ("decoder_layers", self.decoder_layers),
            ("disc_channels", self.disc_channels),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

/// The full parameter set plus its configuration.
#[derive(Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    /// Generator-side parameters: timbre + content encoders, PMN, decoder.
    pub gen: ParamStore,
    /// Discriminator parameters, optimized separately.
    pub disc: ParamStore,
}

impl Model {
    /// Fresh model with seeded Xavier-uniform weights (biases and
    /// relative-position tables start at zero, norm gains at one).
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen = ParamStore::new();
        timbre::register(&mut gen, &cfg, &mut rng);
        content::register(&mut gen, &cfg, &mut rng);
        pmn::register(&mut gen, &cfg, &mut rng);
        decoder::register(&mut gen, &cfg, &mut rng);
        let mut disc = ParamStore::new();
        discriminator::register(&mut disc, &cfg, &mut rng);
        Ok(Self { cfg, gen, disc })
    }
}

/// Fetches (inserting once per tape) the node for a named parameter.
/// Panics on unknown names — parameter layouts are fixed at registration.
pub(crate) fn pnode(
    tape: &mut Tape,
    store: &ParamStore,
    nodes: &mut ParamNodes,
    name: &str,
) -> NodeId {
    let id = store
        .id(name)
        .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
    nodes.node(tape, store, id)
}

pub(crate) fn register_linear(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    n_in: usize,
    n_out: usize,
) {
    store.register(&format!("{name}.w"), xavier_uniform(rng, n_in, n_out));
    store.register(&format!("{name}.b"), zeros(1, n_out));
}

/// `y = x·W + b`.
pub(crate) fn linear_fwd(
    tape: &mut Tape,
    store: &ParamStore,
    nodes: &mut ParamNodes,
    x: NodeId,
    name: &str,
) -> NodeId {
    let w = pnode(tape, store, nodes, &format!("{name}.w"));
    let b = pnode(tape, store, nodes, &format!("{name}.b"));
    let xw = tape.matmul(x, w);
    tape.add_row(xw, b)
}

pub(crate) fn register_layer_norm(store: &mut ParamStore, name: &str, dim: usize) {
    store.register(&format!("{name}.g"), Array2::ones((1, dim)));
    store.register(&format!("{name}.b"), zeros(1, dim));
}

/// Per-frame layer norm with learned gain/shift.
pub(crate) fn layer_norm_fwd(
    tape: &mut Tape,
    store: &ParamStore,
    nodes: &mut ParamNodes,
    x: NodeId,
    name: &str,
) -> NodeId {
    let g = pnode(tape, store, nodes, &format!("{name}.g"));
    let b = pnode(tape, store, nodes, &format!("{name}.b"));
    let n = tape.row_norm(x, LN_EPS);
    let scaled = tape.mul_row(n, g);
    tape.add_row(scaled, b)
}
