//! Minimal reverse-mode automatic differentiation on `ndarray` matrices.
//!
//! Everything is an `Array2<f64>`: scalars are `[1, 1]`, row vectors `[1, C]`,
//! and sequences `[T, C]` (time down the rows). A [`Tape`] records each
//! operation as it is built; [`Tape::backward`] then walks the recording in
//! reverse to accumulate gradients. The op set is deliberately small — just
//! what the voice-conversion model needs — and every op has a central-difference
//! gradient check in the test suite.
//!
//! Design constraints that shaped this crate:
//! - bitwise run-to-run determinism (single-threaded, fixed iteration order,
//!   no hash-ordered loops anywhere near the numerics);
//! - f64 throughout so finite-difference checks are meaningful;
//! - convolutions lower to `im2col` + matmul rather than bespoke kernels.

mod adam;
mod gradcheck;
mod init;
mod params;
mod tape;

pub use adam::Adam;
pub use gradcheck::{check_gradient, max_rel_error};
pub use init::{xavier_uniform, zeros};
pub use params::{ParamId, ParamNodes, ParamStore};
pub use tape::{conv2d_out_dims, NodeId, Tape};
