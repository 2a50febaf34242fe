//! End-to-end conversion: load a checkpoint, run the source utterance and
//! reference utterances through the generator, and synthesize audio with the
//! Griffin-Lim vocoder. Conversion is a pure read of the loaded parameters,
//! so the same request always produces the same output.

use std::path::PathBuf;

use ndarray::Array1;

use crate::audio::{read_wav, write_wav};
use crate::error::{Error, Result};
use crate::features::{compute_mel, extract_f0, normalize_pitch, tokenize, MelSpectrogram};
use crate::model::{
    build_reference_bank, decode, encode_content, encode_timbre, fuse_speaker,
    match_pronunciation, FineGrainedTimbre,
};
use crate::training::{load_checkpoint, Checkpoint};
use crate::vocoder::mel_to_waveform;

/// Phase-reconstruction iterations used when the caller doesn't specify.
pub const DEFAULT_GRIFFIN_LIM_ITERS: usize = 60;

/// One conversion job: which utterance to convert, which voice to convert
/// it into, and where the result goes.
#[derive(Debug, Clone)]
pub struct ConversionRequest {
    pub source_audio_path: PathBuf,
    /// Enrollment utterances of the target speaker; any count ≥ 1.
    pub reference_audio_paths: Vec<PathBuf>,
    pub checkpoint_path: PathBuf,
    pub output_path: PathBuf,
    pub n_griffin_lim_iters: usize,
}

/// Converted mel plus the vocoded waveform that was written to disk.
#[derive(Debug, Clone)]
pub struct Conversion {
    pub mel_hat: MelSpectrogram,
    pub waveform: Vec<f64>,
}

/// Converted mel plus the attention alignment, for callers that want to
/// inspect or dump how source frames matched the references.
#[derive(Debug, Clone)]
pub struct ConversionTrace {
    pub mel_hat: MelSpectrogram,
    pub fine: FineGrainedTimbre,
    /// Start row of each reference inside the attention bank.
    pub boundaries: Vec<usize>,
}

/// Core conversion on in-memory audio against a loaded checkpoint.
///
/// Source content and pitch are kept; per-frame timbre comes from attending
/// over the references' frames, and the utterance-level speaker vector is
/// the mean of the references' global embeddings. The output mel has
/// exactly the source's frame count.
pub fn convert_waveforms(
    ckpt: &Checkpoint,
    source: &[f64],
    references: &[Vec<f64>],
) -> Result<ConversionTrace> {
    if references.is_empty() {
        return Err(Error::InvalidInput(
            "conversion needs at least one reference utterance".into(),
        ));
    }
    if let Some(i) = references.iter().position(|r| r.is_empty()) {
        return Err(Error::InvalidInput(format!(
            "reference {i} is zero-length"
        )));
    }
    let model = &ckpt.model;
    let source_mel = compute_mel(source)?;
    let h_s = encode_content(&tokenize(&source_mel, &ckpt.tokenizer), model)?;

    let mut bank_inputs = Vec::with_capacity(references.len());
    let mut s_g_sum: Option<Array1<f64>> = None;
    for reference in references {
        let mel_r = compute_mel(reference)?;
        let emb = encode_timbre(&mel_r, model)?;
        let h_r = encode_content(&tokenize(&mel_r, &ckpt.tokenizer), model)?;
        s_g_sum = Some(match s_g_sum {
            Some(sum) => sum + &emb.global,
            None => emb.global.clone(),
        });
        bank_inputs.push((h_r, emb));
    }
    let s_g = s_g_sum.expect("non-empty references") / references.len() as f64;

    let bank = build_reference_bank(&bank_inputs)?;
    let mut fine = match_pronunciation(&h_s, &bank, model)?;
    fine.fused = fuse_speaker(&fine, &s_g)?;
    let pitch = normalize_pitch(&extract_f0(source)?);
    let mel_hat = decode(&h_s, &fine.fused, &pitch, model)?;
    Ok(ConversionTrace {
        mel_hat,
        fine,
        boundaries: bank.boundaries,
    })
}

/// File-level conversion: loads the checkpoint and the audio, converts, and
/// writes a 16 kHz wav to `output_path`.
pub fn convert(req: &ConversionRequest) -> Result<Conversion> {
    let ckpt = load_checkpoint(&req.checkpoint_path)?;
    let source = read_wav(&req.source_audio_path)?;
    let references = req
        .reference_audio_paths
        .iter()
        .map(|p| read_wav(p))
        .collect::<Result<Vec<_>>>()?;
    let trace = convert_waveforms(&ckpt, &source, &references)?;
    let waveform = mel_to_waveform(&trace.mel_hat, req.n_griffin_lim_iters);
    write_wav(&req.output_path, &waveform)?;
    Ok(Conversion {
        mel_hat: trace.mel_hat,
        waveform,
    })
}
