//! Training: losses, reference sampling, the learning-rate schedule, the
//! train step (one discriminator update, then one generator update), feature
//! preparation, checkpointing, and the outer loop.
//!
//! Reproducibility contract: every random choice an item experiences —
//! its references, window positions, dropout masks — comes from a private
//! stream keyed by `(seed, step, utterance_id)`, so the surrounding batch
//! never perturbs an item's draws and identical items draw identically.

pub mod checkpoint;
pub mod features;
pub mod loss;
pub mod sampler;
pub mod schedule;
pub mod step;
pub mod trainer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use features::{FeatureStore, UtteranceFeatures};
pub use loss::speaker_similarity_loss;
pub use sampler::{sample_references, RefMode};
pub use schedule::noam_lr;
pub use step::{train_step, LossReport};
pub use trainer::{run_training, LOG_FILE, LOG_HEADER};

/// Optimization and sampling settings. [`TrainConfig::paper`] holds the
/// full-scale defaults; [`TrainConfig::toy`] shortens warmup and run length
/// for the bundled synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// References sampled per batch item (N).
    pub n_refs: usize,
    pub ref_mode: RefMode,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Peak learning rate, reached at `warmup_steps`.
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub lambda_adv: f64,
    pub lambda_ss: f64,
    pub seed: u64,
    /// Total optimization steps for a run.
    pub steps: u64,
    pub checkpoint_every: u64,
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            batch_size: 16,
            n_refs: 3,
            ref_mode: RefMode::SourceExcluded,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-8,
            base_lr: 0.002,
            warmup_steps: 4000,
            lambda_adv: 1.0,
            lambda_ss: 1.0,
            seed: 0,
            steps: 100_000,
            checkpoint_every: 1000,
        }
    }

    /// Desk-scale run for the bundled 8-utterance corpus: shorter warmup
    /// and a batch that doesn't dwarf the corpus.
    pub fn toy() -> Self {
        Self {
            batch_size: 4,
            warmup_steps: 200,
            steps: 2000,
            checkpoint_every: 500,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be positive".into()));
        }
        if self.n_refs == 0 {
            return Err(Error::InvalidInput("n_refs must be ≥ 1".into()));
        }
        if self.lambda_adv < 0.0 || self.lambda_ss < 0.0 {
            return Err(Error::InvalidInput("loss weights must be ≥ 0".into()));
        }
        if self.warmup_steps == 0 {
            return Err(Error::InvalidInput("warmup_steps must be ≥ 1".into()));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::InvalidInput("base_lr must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidInput("steps must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Private rng stream for one batch item at one step. FNV-1a over the
/// ingredients keeps the mapping stable across platforms.
pub(crate) fn item_stream(seed: u64, step: u64, utterance_id: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let eat = |h: &mut u64, bytes: &[u8]| {
        for &b in bytes {
            *h ^= u64::from(b);
            *h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(&mut h, &seed.to_le_bytes());
    eat(&mut h, &step.to_le_bytes());
    eat(&mut h, utterance_id.as_bytes());
    ChaCha8Rng::seed_from_u64(h)
}

/// Stream that picks which utterances form the batch at one step (separate
/// key space from the per-item streams).
pub(crate) fn batch_stream(seed: u64, step: u64) -> ChaCha8Rng {
    item_stream(seed ^ 0x9e37_79b9_7f4a_7c15, step, "")
}
