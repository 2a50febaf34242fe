//! Checkpoint container: one binary file holding the step counter, the
//! config (as canonical text), every parameter of both stores, both Adam
//! states, and the tokenizer centroids. All floats are stored as raw f64
//! little-endian bits, so save → load is bitwise exact.

use std::path::Path;

use ndarray::Array2;

use refxvc_nn::{Adam, ParamStore};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::features::cache::Cursor;
use crate::features::Tokenizer;
use crate::model::{Model, N_MELS};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RXVCCKP1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Complete training state; loading one resumes a run exactly.
#[derive(Debug)]
pub struct Checkpoint {
    pub step: u64,
    pub config: Config,
    pub model: Model,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub tokenizer: Tokenizer,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn put_matrix(buf: &mut Vec<u8>, m: &Array2<f64>) {
    put_u32(buf, m.nrows() as u32);
    put_u32(buf, m.ncols() as u32);
    for &v in m.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_store(buf: &mut Vec<u8>, store: &ParamStore) {
    put_u32(buf, store.len() as u32);
    for (name, value) in store.iter() {
        put_str(buf, name);
        put_matrix(buf, value);
    }
}

fn put_adam(buf: &mut Vec<u8>, opt: &Adam) {
    put_u64(buf, opt.t());
    let (m, v) = opt.moments();
    put_u32(buf, m.len() as u32);
    for (mi, vi) in m.iter().zip(v) {
        put_matrix(buf, mi);
        put_matrix(buf, vi);
    }
}

fn read_matrix(r: &mut Cursor) -> Result<Array2<f64>> {
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let mut m = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            m[[i, j]] = r.f64()?;
        }
    }
    Ok(m)
}

fn read_str(r: &mut Cursor) -> Result<String> {
    let len = r.u32()? as usize;
    let bytes = r.bytes(len)?;
    String::from_utf8(bytes.to_vec())
        .map_err(|_| Error::Parse("checkpoint: non-UTF-8 string".into()))
}

/// Overwrites `store`'s values from the stream; names and shapes must match
/// the store registered from the checkpoint's own config, otherwise the file
/// belongs to a different layout.
fn load_into_store(r: &mut Cursor, store: &mut ParamStore, which: &str) -> Result<()> {
    let n = r.u32()? as usize;
    if n != store.len() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "{which} store has {n} parameters, expected {}",
            store.len()
        )));
    }
    for idx in 0..n {
        let name = read_str(r)?;
        let value = read_matrix(r)?;
        let id = refxvc_nn::ParamId(idx);
        if store.name(id) != name {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{which} parameter {idx} is `{name}`, expected `{}`",
                store.name(id)
            )));
        }
        if store.value(id).raw_dim() != value.raw_dim() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{which} parameter `{name}` has stored shape {:?}, expected {:?}",
                value.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = value;
    }
    Ok(())
}

fn load_adam(r: &mut Cursor, store: &ParamStore, cfg: &Config) -> Result<Adam> {
    let t = r.u64()?;
    let n = r.u32()? as usize;
    if n != store.len() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "optimizer state has {n} slots, expected {}",
            store.len()
        )));
    }
    let mut m = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        m.push(read_matrix(r)?);
        v.push(read_matrix(r)?);
    }
    let mut opt = Adam::new(
        store,
        cfg.train.adam_beta1,
        cfg.train.adam_beta2,
        cfg.train.adam_eps,
    );
    opt.restore(m, v, t);
    Ok(opt)
}

pub fn save_checkpoint(path: &Path, state: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    put_u64(&mut buf, state.step);
    put_str(&mut buf, &state.config.to_text());
    put_store(&mut buf, &state.model.gen);
    put_store(&mut buf, &state.model.disc);
    put_adam(&mut buf, &state.opt_g);
    put_adam(&mut buf, &state.opt_d);
    put_matrix(&mut buf, &state.tokenizer.centroids);
    std::fs::write(path, buf).map_err(Error::write(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let data = std::fs::read(path).map_err(|e| {
        Error::IncompatibleCheckpoint(format!("{}: {e}", path.display()))
    })?;
    let mut r = Cursor::new(&data, path);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::IncompatibleCheckpoint(format!(
            "{}: version {version}, this build reads version {CHECKPOINT_VERSION}",
            path.display()
        )));
    }
    let step = r.u64()?;
    let config = Config::from_text(&read_str(&mut r)?)?;
    // Register parameters from the config, then overwrite every value.
    let mut model = Model::new(config.model.clone(), 0)?;
    load_into_store(&mut r, &mut model.gen, "generator")?;
    load_into_store(&mut r, &mut model.disc, "discriminator")?;
    let opt_g = load_adam(&mut r, &model.gen, &config)?;
    let opt_d = load_adam(&mut r, &model.disc, &config)?;
    let centroids = read_matrix(&mut r)?;
    if centroids.ncols() != N_MELS || centroids.nrows() != config.model.vocab_size {
        return Err(Error::IncompatibleCheckpoint(format!(
            "{}: tokenizer of shape {:?}, expected [{}, {N_MELS}]",
            path.display(),
            centroids.shape(),
            config.model.vocab_size
        )));
    }
    r.expect_eof()?;
    Ok(Checkpoint {
        step,
        config,
        model,
        opt_g,
        opt_d,
        tokenizer: Tokenizer { centroids },
    })
}
