//! Command-line entry points: corpus generation, tokenizer fitting,
//! training, conversion, and evaluation. Every command exits 0 on success
//! and nonzero with a one-line `error: ...` diagnostic on any failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array1;

use refxvc::audio::read_wav;
use refxvc::config::Config;
use refxvc::corpus::generate_corpus;
use refxvc::eval::{compare_f0, dump_projection_inputs, embedding_space_stats, LabeledEmbedding};
use refxvc::features::{
    compute_mel, fit_tokenizer, load_tokenizer, save_tokenizer, tokenize, write_tokens,
    MelSpectrogram, TokenSequence, Tokenizer,
};
use refxvc::inference::{convert, convert_waveforms, ConversionRequest, DEFAULT_GRIFFIN_LIM_ITERS};
use refxvc::manifest::Manifest;
use refxvc::model::{encode_timbre, export_attention};
use refxvc::training::{load_checkpoint, run_training, Checkpoint};
use refxvc::Result;

#[derive(Parser)]
#[command(name = "refxvc", version, about = "Cross-lingual voice conversion workflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config selection shared by commands that start from scratch.
#[derive(Args)]
struct ConfigArgs {
    /// Config file (line-oriented `key = value`, `#` comments)
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset
    #[arg(long, value_parser = ["paper", "toy"])]
    preset: Option<String>,
    /// Override the config's RNG seed
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => Config::from_file(path)?,
            (None, Some(name)) => Config::preset(name)?,
            (None, None) => Config::paper(),
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the bundled synthetic corpus (2 speakers × 4 utterances)
    GenCorpus {
        /// Directory for the wav files and manifest.tsv
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit the frame tokenizer on a corpus and write token files
    Tokenize {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for tokenizer.bin and tokens.txt
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model, writing checkpoints and train_log.tsv
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Run directory for logs and checkpoints
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint (its embedded config wins)
        #[arg(long, conflicts_with_all = ["config", "preset", "seed"])]
        checkpoint: Option<PathBuf>,
        /// Reuse a tokenizer fitted by `tokenize` instead of refitting
        #[arg(long)]
        tokenizer: Option<PathBuf>,
    },
    /// Convert one utterance into a target voice
    Convert {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Source utterance (content and prosody to keep)
        #[arg(long)]
        source: PathBuf,
        /// Target-speaker enrollment utterance(s)
        #[arg(long = "reference", required = true)]
        references: Vec<PathBuf>,
        /// Output wav path
        #[arg(long)]
        out: PathBuf,
        /// Griffin-Lim phase-reconstruction iterations
        #[arg(long, default_value_t = DEFAULT_GRIFFIN_LIM_ITERS)]
        iters: usize,
    },
    /// Objective evaluation reports
    Eval {
        #[command(subcommand)]
        what: EvalCommand,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Speaker-embedding-space statistics over a corpus
    Embeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Also dump labeled embeddings for external 2-D projection
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// F0-contour correlation between a source and its conversion
    F0 {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        converted: PathBuf,
    },
    /// Export the pronunciation-matching attention alignment
    Attention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long = "reference", required = true)]
        references: Vec<PathBuf>,
        /// Alignment dump path (RXVCATT1 text format)
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus { out, seed } => cmd_gen_corpus(&out, seed),
        Command::Tokenize {
            config,
            manifest,
            out,
        } => cmd_tokenize(&config.resolve()?, &manifest, &out),
        Command::Train {
            config,
            manifest,
            out,
            checkpoint,
            tokenizer,
        } => cmd_train(&config, &manifest, &out, checkpoint, tokenizer),
        Command::Convert {
            checkpoint,
            source,
            references,
            out,
            iters,
        } => cmd_convert(checkpoint, source, references, out, iters),
        Command::Eval { what } => match what {
            EvalCommand::Embeddings {
                checkpoint,
                manifest,
                out,
            } => cmd_eval_embeddings(&checkpoint, &manifest, out.as_deref()),
            EvalCommand::F0 { source, converted } => cmd_eval_f0(&source, &converted),
            EvalCommand::Attention {
                checkpoint,
                source,
                references,
                out,
            } => cmd_eval_attention(&checkpoint, &source, &references, &out),
        },
    }
}

fn cmd_gen_corpus(out: &Path, seed: u64) -> Result<()> {
    let manifest = generate_corpus(out, seed)?;
    println!(
        "wrote {} utterances across {} speakers to {}",
        manifest.records.len(),
        manifest.by_speaker().len(),
        out.display()
    );
    Ok(())
}

/// Mels for every manifest record, in manifest order.
fn corpus_mels(manifest: &Manifest) -> Result<Vec<(String, MelSpectrogram)>> {
    manifest
        .records
        .iter()
        .map(|r| Ok((r.utterance_id.clone(), compute_mel(&read_wav(&r.audio_path)?)?)))
        .collect()
}

fn fit_corpus_tokenizer(manifest: &Manifest, cfg: &Config) -> Result<Tokenizer> {
    let mels = corpus_mels(manifest)?;
    let refs: Vec<&MelSpectrogram> = mels.iter().map(|(_, m)| m).collect();
    fit_tokenizer(&refs, cfg.model.vocab_size, cfg.train.seed)
}

fn cmd_tokenize(cfg: &Config, manifest_path: &Path, out: &Path) -> Result<()> {
    let manifest = Manifest::from_file(manifest_path)?;
    let mels = corpus_mels(&manifest)?;
    let refs: Vec<&MelSpectrogram> = mels.iter().map(|(_, m)| m).collect();
    let tok = fit_tokenizer(&refs, cfg.model.vocab_size, cfg.train.seed)?;
    std::fs::create_dir_all(out)?;
    save_tokenizer(&out.join("tokenizer.bin"), &tok)?;
    let entries: BTreeMap<String, TokenSequence> = mels
        .iter()
        .map(|(id, mel)| (id.clone(), tokenize(mel, &tok)))
        .collect();
    write_tokens(&out.join("tokens.txt"), &entries)?;
    let frames: usize = mels.iter().map(|(_, m)| m.t()).sum();
    println!(
        "fitted {} centroids over {} utterances ({frames} frames); wrote {}",
        tok.vocab_size(),
        mels.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(
    config: &ConfigArgs,
    manifest_path: &Path,
    out: &Path,
    resume: Option<PathBuf>,
    tokenizer: Option<PathBuf>,
) -> Result<()> {
    let manifest = Manifest::from_file(manifest_path)?;
    let validate = |cfg: &Config| {
        manifest.validate_for_training(cfg.train.n_refs, cfg.train.ref_mode)
    };
    let mut state = match resume {
        Some(path) => {
            let state = load_checkpoint(&path)?;
            validate(&state.config)?;
            println!("resuming from {} at step {}", path.display(), state.step);
            state
        }
        None => {
            let cfg = config.resolve()?;
            validate(&cfg)?;
            let tok = match tokenizer {
                Some(path) => load_tokenizer(&path)?,
                None => fit_corpus_tokenizer(&manifest, &cfg)?,
            };
            Checkpoint::init(cfg, tok)?
        }
    };
    let features = refxvc::training::FeatureStore::build(&manifest, &state.tokenizer)?;
    let reports = run_training(&mut state, &features, out)?;
    match reports.last() {
        Some(last) => println!(
            "trained to step {} (mae {}); wrote {}",
            last.step,
            last.mae,
            out.display()
        ),
        None => println!(
            "nothing to do: checkpoint already at step {} of {}",
            state.step, state.config.train.steps
        ),
    }
    Ok(())
}

fn cmd_convert(
    checkpoint: PathBuf,
    source: PathBuf,
    references: Vec<PathBuf>,
    out: PathBuf,
    iters: usize,
) -> Result<()> {
    let req = ConversionRequest {
        source_audio_path: source,
        reference_audio_paths: references,
        checkpoint_path: checkpoint,
        output_path: out,
        n_griffin_lim_iters: iters,
    };
    let conversion = convert(&req)?;
    println!(
        "wrote {} ({} frames, {} samples)",
        req.output_path.display(),
        conversion.mel_hat.t(),
        conversion.waveform.len()
    );
    Ok(())
}

/// Utterance-level speaker embedding for every manifest record.
fn corpus_embeddings(ckpt: &Checkpoint, manifest: &Manifest) -> Result<Vec<LabeledEmbedding>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let mel = compute_mel(&read_wav(&r.audio_path)?)?;
            let emb = encode_timbre(&mel, &ckpt.model)?;
            Ok(LabeledEmbedding {
                speaker_id: r.speaker_id.clone(),
                language: r.language.clone(),
                embedding: emb.global,
            })
        })
        .collect()
}

fn cmd_eval_embeddings(
    checkpoint: &Path,
    manifest_path: &Path,
    dump: Option<&Path>,
) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let manifest = Manifest::from_file(manifest_path)?;
    let labeled = corpus_embeddings(&ckpt, &manifest)?;
    let mut by_speaker: BTreeMap<String, Vec<Array1<f64>>> = BTreeMap::new();
    for e in &labeled {
        by_speaker
            .entry(e.speaker_id.clone())
            .or_default()
            .push(e.embedding.clone());
    }
    let report = embedding_space_stats(&by_speaker)?;
    let speakers: Vec<&str> = report.centroids.keys().map(String::as_str).collect();
    println!("speakers\t{}", speakers.join(","));
    println!("intra\t{}", report.intra);
    println!("inter\t{}", report.inter);
    println!("ratio\t{}", report.ratio);
    if let Some(path) = dump {
        dump_projection_inputs(&labeled, path)?;
        println!("wrote projection inputs to {}", path.display());
    }
    Ok(())
}

fn cmd_eval_f0(source: &Path, converted: &Path) -> Result<()> {
    let cmp = compare_f0(&read_wav(source)?, &read_wav(converted)?)?;
    println!("pearson_r\t{}", cmp.pearson_r);
    println!("voiced_overlap\t{}", cmp.voiced_overlap);
    Ok(())
}

fn cmd_eval_attention(
    checkpoint: &Path,
    source: &Path,
    references: &[PathBuf],
    out: &Path,
) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let source_wave = read_wav(source)?;
    let refs = references
        .iter()
        .map(|p| read_wav(p))
        .collect::<Result<Vec<_>>>()?;
    let trace = convert_waveforms(&ckpt, &source_wave, &refs)?;
    export_attention(&trace.fine, &trace.boundaries, out)?;
    let attn = &trace.fine.attn;
    let t_bank = attn.ncols();
    for (i, &start) in trace.boundaries.iter().enumerate() {
        let end = trace
            .boundaries
            .get(i + 1)
            .copied()
            .unwrap_or(t_bank);
        // total attention mass landing on this reference, per source frame
        let mass = attn
            .slice(ndarray::s![.., start..end])
            .sum()
            / attn.nrows() as f64;
        println!("reference {i}\tframes {start}..{end}\tmass {mass}");
    }
    println!("wrote alignment to {}", out.display());
    Ok(())
}
