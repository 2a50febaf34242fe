//! Central-difference gradient checks for every differentiable op on the
//! tape. Each test builds a small graph ending in a scalar and compares the
//! analytic gradient against a numeric one. These are the safety net under
//! the whole model: if an op's backward pass is wrong, it fails here, not as
//! a mysterious training plateau.

use ndarray::{Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refxvc_nn::{check_gradient, Tape};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    // Box-Muller keeps values away from relu/abs kinks more often than
    // uniform noise near zero would.
    Array2::from_shape_fn((r, c), |_| {
        let u1: f64 = rng.random_range(1e-9..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * 0.7
    })
}

/// Reduce any matrix to a scalar through a value-weighted sum so the root
/// gradient is non-uniform.
fn spiky_sum(t: &mut Tape, x: refxvc_nn::NodeId) -> refxvc_nn::NodeId {
    let (r, c) = t.shape(x);
    let w = Array2::from_shape_fn((r, c), |(i, j)| 0.3 + ((i * 7 + j * 3) % 5) as f64 * 0.25);
    let weights = t.constant(w);
    let prod = t.mul(x, weights);
    t.sum_all(prod)
}

#[test]
fn grad_matmul_left_and_right() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = randn(&mut rng, 3, 4);
    let b = randn(&mut rng, 4, 5);
    let err_a = check_gradient(&a, EPS, |t, p| {
        let bb = t.constant(b.clone());
        let y = t.matmul(p, bb);
        spiky_sum(t, y)
    });
    let err_b = check_gradient(&b, EPS, |t, p| {
        let aa = t.constant(a.clone());
        let y = t.matmul(aa, p);
        spiky_sum(t, y)
    });
    assert!(err_a < TOL, "matmul lhs rel err {err_a}");
    assert!(err_b < TOL, "matmul rhs rel err {err_b}");
}

#[test]
fn grad_matmul_abt() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = randn(&mut rng, 3, 4);
    let b = randn(&mut rng, 6, 4);
    let err_a = check_gradient(&a, EPS, |t, p| {
        let bb = t.constant(b.clone());
        let y = t.matmul_abt(p, bb);
        spiky_sum(t, y)
    });
    let err_b = check_gradient(&b, EPS, |t, p| {
        let aa = t.constant(a.clone());
        let y = t.matmul_abt(aa, p);
        spiky_sum(t, y)
    });
    assert!(err_a < TOL, "matmul_abt lhs rel err {err_a}");
    assert!(err_b < TOL, "matmul_abt rhs rel err {err_b}");
}

#[test]
fn grad_elementwise_binary() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = randn(&mut rng, 4, 3);
    let mut b = randn(&mut rng, 4, 3);
    // keep divisor away from zero
    b.mapv_inplace(|x| if x.abs() < 0.3 { 0.3 + x.abs() } else { x });

    for (name, op) in [
        ("add", 0usize),
        ("sub", 1),
        ("mul", 2),
        ("div", 3),
    ] {
        let err_a = check_gradient(&a, EPS, |t, p| {
            let bb = t.constant(b.clone());
            let y = match op {
                0 => t.add(p, bb),
                1 => t.sub(p, bb),
                2 => t.mul(p, bb),
                _ => t.div(p, bb),
            };
            spiky_sum(t, y)
        });
        let err_b = check_gradient(&b, EPS, |t, p| {
            let aa = t.constant(a.clone());
            let y = match op {
                0 => t.add(aa, p),
                1 => t.sub(aa, p),
                2 => t.mul(aa, p),
                _ => t.div(aa, p),
            };
            spiky_sum(t, y)
        });
        assert!(err_a < TOL, "{name} lhs rel err {err_a}");
        assert!(err_b < TOL, "{name} rhs rel err {err_b}");
    }
}

#[test]
fn grad_row_broadcasts() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = randn(&mut rng, 5, 4);
    let row = randn(&mut rng, 1, 4);

    let err = check_gradient(&x, EPS, |t, p| {
        let r = t.constant(row.clone());
        let y = t.add_row(p, r);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "add_row main rel err {err}");
    let err = check_gradient(&row, EPS, |t, p| {
        let xx = t.constant(x.clone());
        let y = t.add_row(xx, p);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "add_row row rel err {err}");

    let err = check_gradient(&x, EPS, |t, p| {
        let r = t.constant(row.clone());
        let y = t.mul_row(p, r);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "mul_row main rel err {err}");
    let err = check_gradient(&row, EPS, |t, p| {
        let xx = t.constant(x.clone());
        let y = t.mul_row(xx, p);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "mul_row row rel err {err}");
}

#[test]
fn grad_unary_smooth() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = randn(&mut rng, 4, 5);
    type Builder = fn(&mut Tape, refxvc_nn::NodeId) -> refxvc_nn::NodeId;
    let cases: &[(&str, Builder)] = &[
        ("tanh", |t, p| t.tanh(p)),
        ("sigmoid", |t, p| t.sigmoid(p)),
        ("exp", |t, p| t.exp(p)),
        ("scale", |t, p| t.scale(p, -1.7)),
        ("add_const", |t, p| t.add_const(p, 2.5)),
        ("softmax", |t, p| t.softmax_rows(p)),
    ];
    for (name, f) in cases {
        let err = check_gradient(&x, EPS, |t, p| {
            let y = f(t, p);
            spiky_sum(t, y)
        });
        assert!(err < TOL, "{name} rel err {err}");
    }
}

#[test]
fn grad_unary_kinked() {
    // Offset values away from the kinks so finite differences are valid.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut x = randn(&mut rng, 4, 5);
    x.mapv_inplace(|v| if v.abs() < 0.05 { v + 0.2 } else { v });

    let err = check_gradient(&x, EPS, |t, p| {
        let y = t.relu(p);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "relu rel err {err}");

    let err = check_gradient(&x, EPS, |t, p| {
        let y = t.leaky_relu(p, 0.2);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "leaky_relu rel err {err}");

    let err = check_gradient(&x, EPS, |t, p| {
        let y = t.abs(p);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "abs rel err {err}");

    let err = check_gradient(&x, EPS, |t, p| {
        let y = t.max_const(p, -0.1);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "max_const rel err {err}");
}

#[test]
fn grad_sqrt_positive_domain() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = randn(&mut rng, 3, 4).mapv(|v| v.abs() + 0.5);
    let err = check_gradient(&x, EPS, |t, p| {
        let y = t.sqrt(p);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "sqrt rel err {err}");
}

#[test]
fn grad_norms() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = randn(&mut rng, 5, 7);
    let err = check_gradient(&x, EPS, |t, p| {
        let y = t.row_norm(p, 1e-5);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "row_norm rel err {err}");
    let err = check_gradient(&x, EPS, |t, p| {
        let y = t.col_norm(p, 1e-5);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "col_norm rel err {err}");
}

#[test]
fn grad_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = randn(&mut rng, 4, 6);
    let err = check_gradient(&x, EPS, |t, p| t.sum_all(p));
    assert!(err < TOL, "sum_all rel err {err}");
    let err = check_gradient(&x, EPS, |t, p| t.mean_all(p));
    assert!(err < TOL, "mean_all rel err {err}");
    let err = check_gradient(&x, EPS, |t, p| {
        let y = t.mean_rows(p);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "mean_rows rel err {err}");
}

#[test]
fn grad_shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = randn(&mut rng, 6, 4);

    let err = check_gradient(&x, EPS, |t, p| {
        let other = t.constant(Array2::ones((2, 4)));
        let y = t.concat_rows(&[other, p, other]);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "concat_rows rel err {err}");

    let err = check_gradient(&x, EPS, |t, p| {
        let other = t.constant(Array2::ones((6, 3)));
        let y = t.concat_cols(&[p, other, p]);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "concat_cols rel err {err}");

    let err = check_gradient(&x, EPS, |t, p| {
        let y = t.slice_rows(p, 1, 5);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "slice_rows rel err {err}");

    let err = check_gradient(&x, EPS, |t, p| {
        let y = t.slice_cols(p, 1, 3);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "slice_cols rel err {err}");

    let err = check_gradient(&x, EPS, |t, p| {
        let y = t.reshape(p, 4, 6);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "reshape rel err {err}");

    let err = check_gradient(&x, EPS, |t, p| {
        let y = t.pad_rows(p, 2, 3);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "pad_rows rel err {err}");

    let err = check_gradient(&x, EPS, |t, p| {
        let y = t.gather_rows(p, &[0, 5, 2, 2, 2, 1]);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "gather_rows rel err {err}");
}

#[test]
fn grad_mul_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = randn(&mut rng, 4, 4);
    let mask = Array2::from_shape_fn((4, 4), |(i, j)| ((i + j) % 3) as f64 * 0.5);
    let err = check_gradient(&x, EPS, |t, p| {
        let y = t.mul_mask(p, mask.clone());
        spiky_sum(t, y)
    });
    assert!(err < TOL, "mul_mask rel err {err}");
}

#[test]
fn grad_im2col_1d() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = randn(&mut rng, 9, 3);
    for dilation in [1usize, 2, 4] {
        let err = check_gradient(&x, EPS, |t, p| {
            let y = t.im2col_1d(p, 5, dilation);
            spiky_sum(t, y)
        });
        assert!(err < TOL, "im2col_1d d={dilation} rel err {err}");
    }
}

#[test]
fn grad_im2col_2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (h, w, c) = (5, 4, 2);
    let x = randn(&mut rng, h * w, c);
    let err = check_gradient(&x, EPS, |t, p| {
        let y = t.im2col_2d(p, h, w, 3, 2, 1);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "im2col_2d rel err {err}");
}

#[test]
fn grad_rel_pos_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let table = randn(&mut rng, 1, 7); // m = 3
    let err = check_gradient(&table, EPS, |t, p| {
        let y = t.rel_pos_bias(p, 6); // t > m exercises clipping
        spiky_sum(t, y)
    });
    assert!(err < TOL, "rel_pos_bias rel err {err}");
}

#[test]
fn grad_lstm_cell_all_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let hsize = 3;
    let xg = randn(&mut rng, 1, 4 * hsize);
    let prev = randn(&mut rng, 1, 2 * hsize);
    let w_hh = randn(&mut rng, hsize, 4 * hsize);
    let b = randn(&mut rng, 1, 4 * hsize);

    let err = check_gradient(&xg, EPS, |t, p| {
        let pr = t.constant(prev.clone());
        let w = t.constant(w_hh.clone());
        let bb = t.constant(b.clone());
        let y = t.lstm_cell(p, pr, w, bb);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "lstm xg rel err {err}");

    let err = check_gradient(&prev, EPS, |t, p| {
        let x = t.constant(xg.clone());
        let w = t.constant(w_hh.clone());
        let bb = t.constant(b.clone());
        let y = t.lstm_cell(x, p, w, bb);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "lstm prev rel err {err}");

    let err = check_gradient(&w_hh, EPS, |t, p| {
        let x = t.constant(xg.clone());
        let pr = t.constant(prev.clone());
        let bb = t.constant(b.clone());
        let y = t.lstm_cell(x, pr, p, bb);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "lstm w_hh rel err {err}");

    let err = check_gradient(&b, EPS, |t, p| {
        let x = t.constant(xg.clone());
        let pr = t.constant(prev.clone());
        let w = t.constant(w_hh.clone());
        let y = t.lstm_cell(x, pr, w, p);
        spiky_sum(t, y)
    });
    assert!(err < TOL, "lstm bias rel err {err}");
}

#[test]
fn grad_chained_lstm_steps() {
    // Two chained cells: gradient must flow through the recurrent state.
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let hsize = 2;
    let xg0 = randn(&mut rng, 1, 4 * hsize);
    let xg1 = randn(&mut rng, 1, 4 * hsize);
    let w_hh = randn(&mut rng, hsize, 4 * hsize);
    let b = randn(&mut rng, 1, 4 * hsize);

    let err = check_gradient(&w_hh, EPS, |t, p| {
        let x0 = t.constant(xg0.clone());
        let x1 = t.constant(xg1.clone());
        let bb = t.constant(b.clone());
        let init = t.constant(Array2::zeros((1, 2 * hsize)));
        let s0 = t.lstm_cell(x0, init, p, bb);
        let s1 = t.lstm_cell(x1, s0, p, bb);
        spiky_sum(t, s1)
    });
    assert!(err < TOL, "chained lstm w_hh rel err {err}");
}

#[test]
fn grad_composite_attention_block() {
    // A miniature of the real attention pattern: softmax(Q·Kᵀ/√d)·V with Q
    // derived from the parameter; checks interactions between ops.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let wq = randn(&mut rng, 4, 4);
    let x = randn(&mut rng, 5, 4);
    let k = randn(&mut rng, 7, 4);
    let v = randn(&mut rng, 7, 3);
    let err = check_gradient(&wq, EPS, |t, p| {
        let xx = t.constant(x.clone());
        let kk = t.constant(k.clone());
        let vv = t.constant(v.clone());
        let q = t.matmul(xx, p);
        let scores = t.matmul_abt(q, kk);
        let scaled = t.scale(scores, 1.0 / (4.0f64).sqrt());
        let attn = t.softmax_rows(scaled);
        let out = t.matmul(attn, vv);
        spiky_sum(t, out)
    });
    assert!(err < 1e-3, "attention composite rel err {err}");
    // the release bar is 1e-3; in practice f64 central differences land
    // far below it
    assert!(err < TOL, "attention composite rel err {err}");
}
