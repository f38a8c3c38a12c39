//! Fixtures shared by the benchmarks.

use phytnet::Tensor;

/// Deterministic pseudo-random tensor in `[-0.5, 0.5)`.
pub fn patterned(shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |i| {
        ((i.wrapping_mul(2_654_435_761) >> 7) % 1000) as f32 / 1000.0 - 0.5
    })
}

/// Points of the unit cube with a smooth response.
pub fn gp_data(n: usize, dims: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..dims)
                .map(|d| ((i * 7 + d * 13) % 31) as f64 / 31.0)
                .collect()
        })
        .collect();
    let ys = xs
        .iter()
        .map(|x| x.iter().map(|v| (3.0 * v).sin()).sum())
        .collect();
    (xs, ys)
}
