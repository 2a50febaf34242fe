use ndarray::Array2;

use crate::tape::{NodeId, Tape};

/// Largest relative error between analytic and numeric gradients, with a
/// floor on the denominator so near-zero gradients compare absolutely.
pub fn max_rel_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    assert_eq!(analytic.raw_dim(), numeric.raw_dim());
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Central-difference gradient check.
///
/// `build` constructs the computation on a fresh tape: it receives the node
/// for the parameter under test and must return a scalar loss node. The check
/// runs backward once for the analytic gradient, then rebuilds the graph
/// twice per parameter element for the numeric one. Returns the max relative
/// error so callers can assert their own tolerance.
pub fn check_gradient<F>(param: &Array2<f64>, eps: f64, build: F) -> f64
where
    F: Fn(&mut Tape, NodeId) -> NodeId,
{
    let mut tape = Tape::new();
    let p = tape.var(param.clone());
    let loss = build(&mut tape, p);
    tape.backward(loss);
    let analytic = tape
        .grad(p)
        .expect("parameter under test received no gradient")
        .clone();

    let mut numeric = Array2::zeros(param.raw_dim());
    let eval = |perturbed: Array2<f64>| -> f64 {
        let mut t = Tape::new();
        let p = t.var(perturbed);
        let l = build(&mut t, p);
        t.scalar(l)
    };
    for idx in 0..param.len() {
        let (r, c) = (idx / param.ncols(), idx % param.ncols());
        let mut plus = param.clone();
        plus[[r, c]] += eps;
        let mut minus = param.clone();
        minus[[r, c]] -= eps;
        numeric[[r, c]] = (eval(plus) - eval(minus)) / (2.0 * eps);
    }
    max_rel_error(&analytic, &numeric)
}
