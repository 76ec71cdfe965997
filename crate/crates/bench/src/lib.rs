//! Seeded fixtures shared by the criterion benchmarks in `benches/`.

use ndarray::Array2;
use rand::Rng;

use labgan::{rng, AlignedSeries, SeriesLayout};

/// `n` series with values uniform on [-1, 1].
pub fn uniform_series(n: usize, layout: SeriesLayout, seed: u64) -> Vec<AlignedSeries> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|i| {
            let values = (0..layout.len()).map(|_| r.random_range(-1.0..=1.0)).collect();
            AlignedSeries::new(format!("b{i}"), values, layout).expect("values are in range")
        })
        .collect()
}

/// Points scattered around `k` well-separated centres in `dim` dimensions.
pub fn blobs(n: usize, dim: usize, k: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::seeded(seed);
    Array2::from_shape_fn((n, dim), |(i, j)| {
        let centre = if j == i % k { 4.0 } else { 0.0 };
        centre + r.random_range(-0.5..0.5)
    })
}

/// Random symmetric matrix.
pub fn symmetric(n: usize, seed: u64) -> Array2<f64> {
    let a = blobs(n, n, 1, seed);
    (&a + &a.t()) * 0.5
}
