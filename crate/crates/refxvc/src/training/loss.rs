//! Speaker-similarity loss: the sum over unordered embedding pairs of the
//! cosine embedding loss `1 − cos(a, b)`, pulling all global embeddings of
//! one speaker's references toward each other.

use ndarray::Array1;
use refxvc_nn::{NodeId, Tape};

use crate::error::{Error, Result};

/// Norm floor; vectors shorter than this are treated as having this norm
/// (and reported, since a zero speaker embedding means something is wrong).
pub(crate) const NORM_EPS: f64 = 1e-8;

/// Sum over pairs `i < j` of `1 − cos(e_i, e_j)`. Identical embeddings give
/// 0; each orthogonal pair contributes 1.
pub fn speaker_similarity_loss(embeddings: &[Array1<f64>]) -> Result<f64> {
    if embeddings.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "speaker similarity needs ≥ 2 embeddings, got {}",
            embeddings.len()
        )));
    }
    let norms: Vec<f64> = embeddings
        .iter()
        .map(|e| {
            let n = e.dot(e).sqrt();
            if n < NORM_EPS {
                tracing::warn!(norm = n, "near-zero speaker embedding in similarity loss");
                NORM_EPS
            } else {
                n
            }
        })
        .collect();
    let mut total = 0.0;
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            let cos = embeddings[i].dot(&embeddings[j]) / (norms[i] * norms[j]);
            total += 1.0 - cos;
        }
    }
    Ok(total)
}

/// Graph version over `[1 × D]` embedding nodes, used inside the train step
/// so the loss backpropagates into the timbre encoder. The norm guard sits
/// inside the square root (as ε²) to keep the backward pass finite even for
/// a degenerate zero embedding.
pub(crate) fn l_ss_graph(tape: &mut Tape, embeddings: &[NodeId]) -> NodeId {
    debug_assert!(embeddings.len() >= 2);
    let norms: Vec<NodeId> = embeddings
        .iter()
        .map(|&e| {
            let sq = tape.mul(e, e);
            let sum = tape.sum_all(sq);
            let guarded = tape.max_const(sum, NORM_EPS * NORM_EPS);
            tape.sqrt(guarded)
        })
        .collect();
    let mut total: Option<NodeId> = None;
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            let prod = tape.mul(embeddings[i], embeddings[j]);
            let dot = tape.sum_all(prod);
            let nn = tape.mul(norms[i], norms[j]);
            let cos = tape.div(dot, nn);
            let neg = tape.scale(cos, -1.0);
            let cel = tape.add_const(neg, 1.0);
            total = Some(match total {
                Some(t) => tape.add(t, cel),
                None => cel,
            });
        }
    }
    total.expect("at least one pair")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vec_of(values: &[f64]) -> Array1<f64> {
        Array1::from_vec(values.to_vec())
    }

    #[test]
    fn identical_embeddings_cost_nothing() {
        let e = vec_of(&[0.3, -1.2, 0.7]);
        let loss = speaker_similarity_loss(&[e.clone(), e.clone(), e]).unwrap();
        assert!(loss.abs() < 1e-12, "loss = {loss}");
    }

    #[test]
    fn orthogonal_pair_costs_one() {
        let a = vec_of(&[1.0, 0.0]);
        let b = vec_of(&[0.0, 2.0]);
        let loss = speaker_similarity_loss(&[a, b]).unwrap();
        assert!((loss - 1.0).abs() < 1e-12, "loss = {loss}");
    }

    /// Four mutually orthogonal embeddings: every one of the 4·3/2 = 6 pairs
    /// contributes exactly 1, so the total counts the pairs.
    #[test]
    fn mutually_orthogonal_set_counts_its_pairs() {
        let es: Vec<Array1<f64>> = (0..4)
            .map(|i| Array1::from_shape_fn(4, |j| f64::from(i == j) * (1.0 + i as f64)))
            .collect();
        let loss = speaker_similarity_loss(&es).unwrap();
        assert!((loss - 6.0).abs() < 1e-12, "loss = {loss}");
    }

    #[test]
    fn matches_brute_force_pairwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let es: Vec<Array1<f64>> = (0..5)
            .map(|_| Array1::from_shape_fn(16, |_| rng.random_range(-1.0..1.0)))
            .collect();
        let loss = speaker_similarity_loss(&es).unwrap();
        let mut brute = 0.0;
        let mut pairs = 0;
        for i in 0..es.len() {
            for j in 0..es.len() {
                if i < j {
                    let cos = es[i].dot(&es[j])
                        / (es[i].dot(&es[i]).sqrt() * es[j].dot(&es[j]).sqrt());
                    brute += 1.0 - cos;
                    pairs += 1;
                }
            }
        }
        assert_eq!(pairs, 5 * 4 / 2);
        assert!((loss - brute).abs() < 1e-12);
    }

    #[test]
    fn invariant_under_positive_scaling_and_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut es: Vec<Array1<f64>> = (0..4)
            .map(|_| Array1::from_shape_fn(8, |_| rng.random_range(-1.0..1.0)))
            .collect();
        let base = speaker_similarity_loss(&es).unwrap();

        let mut scaled = es.clone();
        scaled[2] = &scaled[2] * 37.5;
        let loss = speaker_similarity_loss(&scaled).unwrap();
        assert!((loss - base).abs() < 1e-6, "scaling changed {base} → {loss}");

        es.rotate_left(2);
        es.swap(0, 1);
        let loss = speaker_similarity_loss(&es).unwrap();
        assert!((loss - base).abs() < 1e-6, "permutation changed {base} → {loss}");
    }

    /// A zero embedding is clamped, not fatal: its dot products vanish, so
    /// each of its pairs costs exactly 1.
    #[test]
    fn zero_embedding_is_clamped_to_unit_cost_pairs() {
        let a = vec_of(&[0.0, 0.0, 0.0]);
        let b = vec_of(&[1.0, 2.0, 3.0]);
        let loss = speaker_similarity_loss(&[a, b]).unwrap();
        assert!(loss.is_finite());
        assert!((loss - 1.0).abs() < 1e-12, "loss = {loss}");
    }

    #[test]
    fn fewer_than_two_embeddings_is_rejected() {
        assert!(matches!(
            speaker_similarity_loss(&[vec_of(&[1.0])]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            speaker_similarity_loss(&[]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn graph_version_agrees_with_the_value_version() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let es: Vec<Array1<f64>> = (0..3)
            .map(|_| Array1::from_shape_fn(6, |_| rng.random_range(-1.0..1.0)))
            .collect();
        let value = speaker_similarity_loss(&es).unwrap();

        let mut tape = Tape::new();
        let nodes: Vec<NodeId> = es
            .iter()
            .map(|e| tape.var(e.clone().insert_axis(ndarray::Axis(0))))
            .collect();
        let loss = l_ss_graph(&mut tape, &nodes);
        assert!((tape.value(loss)[[0, 0]] - value).abs() < 1e-12);

        // and its gradient matches finite differences on one embedding
        let es2 = es.clone();
        let err = refxvc_nn::check_gradient(
            &es[0].clone().insert_axis(ndarray::Axis(0)).to_owned(),
            1e-6,
            move |tape, e0| {
                let mut nodes = vec![e0];
                for e in &es2[1..] {
                    let n = tape.constant(Array2::from_shape_fn((1, e.len()), |(_, j)| e[j]));
                    nodes.push(n);
                }
                l_ss_graph(tape, &nodes)
            },
        );
        assert!(err < 1e-6, "gradient error {err}");
    }
}
