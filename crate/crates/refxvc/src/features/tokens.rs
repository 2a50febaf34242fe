//! Discrete content tokens.
//!
//! Stand-in for a pretrained SSL quantizer: seeded k-means over mel frames
//! (k-means++ init, ≤ 100 Lloyd iterations, movement tolerance 1e-6), one
//! token per 20 ms frame. A plain-text token file format lets externally
//! produced token sequences replace the built-in quantizer.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mel::MelSpectrogram;
use crate::error::{Error, Result};

pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

/// One discrete token per mel frame, each in `[0, vocab_size)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    pub vocab_size: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Fitted frame quantizer: k centroids in mel space.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    /// `[K, 80]`.
    pub centroids: Array2<f64>,
}

impl Tokenizer {
    pub fn vocab_size(&self) -> usize {
        self.centroids.nrows()
    }
}

/// Fits k-means over all frames of all provided mels. Deterministic for a
/// given seed: k-means++ initialization from a seeded generator, then Lloyd
/// iterations until centroids move less than [`KMEANS_TOL`] (squared L2) or
/// [`KMEANS_MAX_ITERS`] is hit. Empty clusters keep their previous centroid.
pub fn fit_tokenizer(mels: &[&MelSpectrogram], k: usize, seed: u64) -> Result<Tokenizer> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("k must be ≥ 2, got {k}")));
    }
    let total: usize = mels.iter().map(|m| m.t()).sum();
    if total < k {
        return Err(Error::DegenerateCorpus(format!(
            "{total} frames total but k = {k}"
        )));
    }
    let dim = 80;
    let mut frames = Array2::zeros((total, dim));
    let mut row = 0;
    for mel in mels {
        for r in mel.frames.rows() {
            frames.row_mut(row).assign(&r);
            row += 1;
        }
    }
    if count_distinct_rows(&frames) < k {
        return Err(Error::DegenerateCorpus(format!(
            "fewer than {k} distinct frames in the corpus"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(&frames, k, &mut rng);
    let mut assignment = vec![0usize; total];
    for _ in 0..KMEANS_MAX_ITERS {
        // assign
        for (i, f) in frames.rows().into_iter().enumerate() {
            let f = f.as_slice().expect("row-major");
            assignment[i] = nearest_centroid(f, &centroids);
        }
        // update
        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (i, &a) in assignment.iter().enumerate() {
            let mut dst = sums.row_mut(a);
            dst += &frames.row(i);
            counts[a] += 1;
        }
        let mut moved: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue; // keep the previous centroid
            }
            let new = sums.row(c).mapv(|v| v / counts[c] as f64);
            let d2 = centroids
                .row(c)
                .iter()
                .zip(new.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            moved = moved.max(d2);
            centroids.row_mut(c).assign(&new);
        }
        if moved < KMEANS_TOL {
            break;
        }
    }
    Ok(Tokenizer { centroids })
}

fn count_distinct_rows(frames: &Array2<f64>) -> usize {
    let mut rows: Vec<Vec<u64>> = frames
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort_unstable();
    rows.dedup();
    rows.len()
}

/// k-means++ seeding: first centroid uniform, then each next frame drawn
/// with probability proportional to its squared distance from the nearest
/// chosen centroid.
fn kmeans_pp_init(frames: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = frames.nrows();
    let dim = frames.ncols();
    let mut centroids = Array2::zeros((k, dim));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&frames.row(first));

    let mut d2: Vec<f64> = frames
        .rows()
        .into_iter()
        .map(|f| sq_dist(f.as_slice().unwrap(), centroids.row(0).as_slice().unwrap()))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            // all remaining frames coincide with chosen centroids
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&frames.row(pick));
        for (i, f) in frames.rows().into_iter().enumerate() {
            let d = sq_dist(f.as_slice().unwrap(), centroids.row(c).as_slice().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid by squared Euclidean distance; ties break
/// to the lowest index (strict `<` keeps the first minimum).
fn nearest_centroid(frame: &[f64], centroids: &Array2<f64>) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(frame, c.as_slice().unwrap());
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Quantizes every frame of `mel` to its nearest centroid.
pub fn tokenize(mel: &MelSpectrogram, tok: &Tokenizer) -> TokenSequence {
    let tokens = mel
        .frames
        .rows()
        .into_iter()
        .map(|f| nearest_centroid(f.as_slice().expect("row-major"), &tok.centroids) as u32)
        .collect();
    TokenSequence {
        tokens,
        vocab_size: tok.vocab_size(),
    }
}

/// Magic prefix of the binary tokenizer file.
pub const TOKENIZER_MAGIC: &[u8; 8] = b"RXVCTOK1";

/// Saves the fitted centroids: magic, u32 K, u32 80, K×80 f64 little-endian.
/// Full f64 precision so save → load reproduces every nearest-centroid
/// decision bit-for-bit.
pub fn save_tokenizer(path: &Path, tok: &Tokenizer) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + tok.centroids.len() * 8);
    buf.extend_from_slice(TOKENIZER_MAGIC);
    buf.extend_from_slice(&(tok.centroids.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(tok.centroids.ncols() as u32).to_le_bytes());
    for &v in tok.centroids.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(Error::write(path))
}

/// Loads a tokenizer saved by [`save_tokenizer`].
pub fn load_tokenizer(path: &Path) -> Result<Tokenizer> {
    let data = std::fs::read(path)?;
    let mut r = super::cache::Cursor::new(&data, path);
    r.expect_magic(TOKENIZER_MAGIC)?;
    let k = r.u32()? as usize;
    let n_mels = r.u32()? as usize;
    if n_mels != 80 {
        return Err(Error::Parse(format!(
            "{}: expected 80-wide centroids, got {n_mels}",
            path.display()
        )));
    }
    let mut centroids = Array2::zeros((k, n_mels));
    for i in 0..k {
        for j in 0..n_mels {
            centroids[[i, j]] = r.f64()?;
        }
    }
    r.expect_eof()?;
    Ok(Tokenizer { centroids })
}

/// Writes token sequences: one line per utterance,
/// `<utterance_id> <K> <t0> <t1> ...`.
pub fn write_tokens(path: &Path, entries: &BTreeMap<String, TokenSequence>) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(Error::write(path))?;
    for (id, seq) in entries {
        let mut line = format!("{id} {}", seq.vocab_size);
        for t in &seq.tokens {
            line.push(' ');
            line.push_str(&t.to_string());
        }
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(Error::write(path))?;
    }
    Ok(())
}

/// Parses a token file (the write_tokens format). Any malformed line is a
/// parse error carrying its 1-based line number; a token ≥ the line's
/// declared vocab size is a range error.
pub fn load_external_tokens(path: &Path) -> Result<BTreeMap<String, TokenSequence>> {
    let f = std::fs::File::open(path)?;
    let mut out = BTreeMap::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts
            .next()
            .ok_or_else(|| Error::Parse(format!("{}: line {lineno}: empty record", path.display())))?;
        let k: usize = parts
            .next()
            .ok_or_else(|| {
                Error::Parse(format!(
                    "{}: line {lineno}: missing vocab size",
                    path.display()
                ))
            })?
            .parse()
            .map_err(|e| {
                Error::Parse(format!(
                    "{}: line {lineno}: bad vocab size ({e})",
                    path.display()
                ))
            })?;
        let mut tokens = Vec::new();
        for tok in parts {
            let t: u32 = tok.parse().map_err(|e| {
                Error::Parse(format!(
                    "{}: line {lineno}: bad token `{tok}` ({e})",
                    path.display()
                ))
            })?;
            if t as usize >= k {
                return Err(Error::Range(format!(
                    "{}: line {lineno}: token {t} ≥ vocab size {k}",
                    path.display()
                )));
            }
            tokens.push(t);
        }
        if out
            .insert(id.to_string(), TokenSequence { tokens, vocab_size: k })
            .is_some()
        {
            return Err(Error::Parse(format!(
                "{}: line {lineno}: duplicate utterance id `{id}`",
                path.display()
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn mel_from(frames: Array2<f64>) -> MelSpectrogram {
        MelSpectrogram { frames }
    }

    /// Two tight, well-separated clusters: k-means must recover the split
    /// exactly, matching a brute-force nearest-centroid assignment.
    #[test]
    fn two_cluster_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 60;
        let mut frames = Array2::zeros((n, 80));
        for i in 0..n {
            let center = if i % 2 == 0 { -4.0 } else { 4.0 };
            for j in 0..80 {
                frames[[i, j]] = center + rng.random_range(-0.2..0.2);
            }
        }
        let mel = mel_from(frames.clone());
        let tok = fit_tokenizer(&[&mel], 2, 9).unwrap();
        let seq = tokenize(&mel, &tok);
        for i in 0..n {
            let want = nearest_centroid(frames.row(i).as_slice().unwrap(), &tok.centroids) as u32;
            assert_eq!(seq.tokens[i], want);
        }
        // the two parities must land in different clusters
        assert_ne!(seq.tokens[0], seq.tokens[1]);
        for i in 2..n {
            assert_eq!(seq.tokens[i], seq.tokens[i % 2]);
        }
    }

    #[test]
    fn frame_equal_to_centroid_gets_its_token() {
        let mut centroids = Array2::zeros((5, 80));
        for i in 0..5 {
            centroids.row_mut(i).fill(i as f64 * 2.0);
        }
        let tok = Tokenizer { centroids };
        let mut frames = Array2::zeros((1, 80));
        frames.row_mut(0).fill(6.0); // exactly centroid 3
        let seq = tokenize(&mel_from(frames), &tok);
        assert_eq!(seq.tokens, vec![3]);
    }

    /// A frame exactly halfway between two centroids takes the lower index.
    /// Values are chosen so both squared distances are exactly representable
    /// and equal.
    #[test]
    fn equidistant_tie_breaks_low() {
        let mut centroids = Array2::zeros((5, 80));
        centroids.row_mut(1).fill(1.0);
        centroids.row_mut(4).fill(3.0);
        // rows 0, 2, 3 stay at 0
        let tok = Tokenizer { centroids };
        let mut frames = Array2::zeros((1, 80));
        frames.row_mut(0).fill(2.0); // distance² = 80 to both row 1 and row 4
        let seq = tokenize(&mel_from(frames), &tok);
        assert_eq!(seq.tokens, vec![1]);
    }

    #[test]
    fn tokenize_matches_exhaustive_search_on_random_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frames = Array2::from_shape_fn((1000, 80), |_| rng.random_range(-3.0..3.0));
        let mel = mel_from(frames.clone());
        let tok = fit_tokenizer(&[&mel], 16, 5).unwrap();
        let seq = tokenize(&mel, &tok);
        for i in 0..1000 {
            let f = frames.row(i);
            let f = f.as_slice().unwrap();
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, row) in tok.centroids.rows().into_iter().enumerate() {
                let d: f64 = f
                    .iter()
                    .zip(row.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assert_eq!(seq.tokens[i] as usize, best, "frame {i}");
        }
    }

    #[test]
    fn fit_is_deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frames = Array2::from_shape_fn((300, 80), |_| rng.random_range(-1.0..1.0));
        let mel = mel_from(frames);
        let a = fit_tokenizer(&[&mel], 8, 77).unwrap();
        let b = fit_tokenizer(&[&mel], 8, 77).unwrap();
        assert_eq!(a.centroids, b.centroids);
        let c = fit_tokenizer(&[&mel], 8, 78).unwrap();
        assert_ne!(a.centroids, c.centroids);
    }

    #[test]
    fn degenerate_corpora_are_rejected() {
        let mel = mel_from(Array2::zeros((50, 80)));
        // 50 identical frames: fewer distinct frames than k
        assert!(matches!(
            fit_tokenizer(&[&mel], 4, 0),
            Err(Error::DegenerateCorpus(_))
        ));
        let tiny = mel_from(Array2::zeros((1, 80)));
        assert!(matches!(
            fit_tokenizer(&[&tiny], 4, 0),
            Err(Error::DegenerateCorpus(_))
        ));
        assert!(matches!(
            fit_tokenizer(&[&mel], 1, 0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn token_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.txt");
        let mut entries = BTreeMap::new();
        entries.insert(
            "utt_a".to_string(),
            TokenSequence {
                tokens: vec![0, 3, 15, 3],
                vocab_size: 16,
            },
        );
        entries.insert(
            "utt_b".to_string(),
            TokenSequence {
                tokens: vec![],
                vocab_size: 16,
            },
        );
        write_tokens(&path, &entries).unwrap();
        let back = load_external_tokens(&path).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn malformed_token_lines_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.txt");
        std::fs::write(&path, "good 4 0 1 2\nbad 4 zero\n").unwrap();
        let err = load_external_tokens(&path).unwrap_err();
        match err {
            Error::Parse(msg) => assert!(msg.contains("line 2"), "message: {msg}"),
            other => panic!("expected Parse, got {other}"),
        }

        std::fs::write(&path, "oob 4 0 4\n").unwrap();
        let err = load_external_tokens(&path).unwrap_err();
        match err {
            Error::Range(msg) => {
                assert!(msg.contains("token 4"), "message: {msg}");
                assert!(msg.contains("line 1"), "message: {msg}");
            }
            other => panic!("expected Range, got {other}"),
        }
    }

    #[test]
    fn tokenizer_file_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tok.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mel = mel_from(Array2::from_shape_fn((30, 80), |_| {
            rng.random_range(-3.0..3.0)
        }));
        let tok = fit_tokenizer(&[&mel], 4, 3).unwrap();
        save_tokenizer(&path, &tok).unwrap();
        let back = load_tokenizer(&path).unwrap();
        assert!(tok
            .centroids
            .iter()
            .zip(back.centroids.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        let err = load_tokenizer(&dir.path().join("missing.bin")).unwrap_err();
        assert!(matches!(err, Error::Io(_)), "{err}");
    }
}
