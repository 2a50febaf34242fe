//! The training loop: draws batches, runs steps, writes the tab-separated
//! log, and saves periodic checkpoints. Everything is keyed off the absolute
//! step number, so a resumed run continues bit-for-bit where it left off.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;

use refxvc_nn::Adam;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::features::Tokenizer;
use crate::model::Model;
use crate::training::checkpoint::{save_checkpoint, Checkpoint};
use crate::training::features::FeatureStore;
use crate::training::step::{train_step, LossReport};
use crate::training::batch_stream;

pub const LOG_FILE: &str = "train_log.tsv";
pub const LOG_HEADER: &str = "step\tmae\tadv_g\tadv_d\tl_ss\tlr";
const LOG_FLUSH_EVERY: u64 = 10;

impl Checkpoint {
    /// Fresh training state at step 0: seeded parameters, zeroed optimizer
    /// moments. The tokenizer must match the configured vocabulary.
    pub fn init(config: Config, tokenizer: Tokenizer) -> Result<Self> {
        config.validate()?;
        if tokenizer.vocab_size() != config.model.vocab_size {
            return Err(Error::InvalidInput(format!(
                "tokenizer has {} centroids but the model expects vocab_size {}",
                tokenizer.vocab_size(),
                config.model.vocab_size
            )));
        }
        let model = Model::new(config.model.clone(), config.train.seed)?;
        let t = &config.train;
        let opt_g = Adam::new(&model.gen, t.adam_beta1, t.adam_beta2, t.adam_eps);
        let opt_d = Adam::new(&model.disc, t.adam_beta1, t.adam_beta2, t.adam_eps);
        Ok(Self {
            step: 0,
            config,
            model,
            opt_g,
            opt_d,
            tokenizer,
        })
    }
}

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(format!("checkpoint_{step:06}.ckpt"))
}

pub fn final_checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join("checkpoint_final.ckpt")
}

/// Trains from `state.step + 1` through `state.config.train.steps`, mutating
/// `state` in place. Writes `train_log.tsv` (one line per step, flushed
/// every 10), a checkpoint every `checkpoint_every` steps, and a final
/// checkpoint. Returns the reports of the steps run by this call.
pub fn run_training(
    state: &mut Checkpoint,
    features: &FeatureStore,
    out_dir: &Path,
) -> Result<Vec<LossReport>> {
    std::fs::create_dir_all(out_dir).map_err(Error::write(out_dir))?;
    let log_path = out_dir.join(LOG_FILE);
    let file = std::fs::File::create(&log_path).map_err(Error::write(&log_path))?;
    let mut log = std::io::BufWriter::new(file);
    writeln!(log, "{LOG_HEADER}").map_err(Error::write(&log_path))?;

    let ids = features.utterance_ids();
    let cfg = state.config.train.clone();
    let total = cfg.steps;
    let mut reports = Vec::new();
    for step in (state.step + 1)..=total {
        // uniform with replacement so utterance frequency is independent of
        // corpus size vs batch size
        let mut rng = batch_stream(cfg.seed, step);
        let batch: Vec<String> = (0..cfg.batch_size)
            .map(|_| ids[rng.random_range(0..ids.len())].clone())
            .collect();
        let report = train_step(
            &mut state.model,
            &mut state.opt_g,
            &mut state.opt_d,
            features,
            &batch,
            &cfg,
            step,
        )?;
        state.step = step;
        writeln!(
            log,
            "{}\t{}\t{}\t{}\t{}\t{}",
            report.step, report.mae, report.adv_g, report.adv_d, report.l_ss, report.lr
        )
        .map_err(Error::write(&log_path))?;
        if step % LOG_FLUSH_EVERY == 0 {
            log.flush().map_err(Error::write(&log_path))?;
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            save_checkpoint(&checkpoint_path(out_dir, step), state)?;
        }
        reports.push(report);
    }
    log.flush().map_err(Error::write(&log_path))?;
    save_checkpoint(&final_checkpoint_path(out_dir), state)?;
    Ok(reports)
}
