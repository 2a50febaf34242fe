use ndarray::Array2;
use rand::Rng;

/// Xavier/Glorot uniform init: `U(-√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out)))`.
/// Elements are drawn in row-major order, so a given rng state always yields
/// the same matrix.
pub fn xavier_uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

pub fn zeros(rows: usize, cols: usize) -> Array2<f64> {
    Array2::zeros((rows, cols))
}
