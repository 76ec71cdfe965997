use ndarray::{Array2, ArrayView2};

use super::jacobi::jacobi_eigen;
use super::kmeans::kmeans;
use super::ClusterAssignment;
use crate::error::{Error, Result};
use crate::preprocess::quantile_sorted;
use crate::stratify::tsne::squared_distances;

pub const KMEANS_RESTARTS: usize = 10;

/// RBF affinity `exp(−d² / 2σ²)` with σ the median pairwise distance and a
/// zero diagonal. Returns the affinity and σ.
pub fn rbf_affinity(points: ArrayView2<f64>) -> Result<(Array2<f64>, f64)> {
    let n = points.nrows();
    let sq = squared_distances(points);
    let mut dists: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| sq[[i, j]].sqrt())
        .collect();
    if dists.is_empty() {
        return Err(Error::InsufficientPoints { found: n, required: 2 });
    }
    dists.sort_by(f64::total_cmp);
    let sigma = quantile_sorted(&dists, 0.5);
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::DegenerateGeometry(
            "median pairwise distance is zero".into(),
        ));
    }
    let affinity = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            (-sq[[i, j]] / (2.0 * sigma * sigma)).exp()
        }
    });
    Ok((affinity, sigma))
}

/// `I − D^{-1/2} A D^{-1/2}`.
pub fn normalized_laplacian(affinity: &Array2<f64>) -> Result<Array2<f64>> {
    let n = affinity.nrows();
    let degree: Vec<f64> = affinity.rows().into_iter().map(|r| r.sum()).collect();
    if let Some(i) = degree.iter().position(|&d| d <= f64::MIN_POSITIVE) {
        return Err(Error::DegenerateGeometry(format!(
            "point {i} has no affinity to any other point"
        )));
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        let identity = if i == j { 1.0 } else { 0.0 };
        // symmetric by construction; the product order keeps it bit-exact
        identity - affinity[[i, j]] * (inv_sqrt[i] * inv_sqrt[j])
    }))
}

/// Labels renumbered by first appearance so equal partitions compare equal.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SpectralFit {
    pub assignment: ClusterAssignment,
    pub sigma: f64,
    /// All Laplacian eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
}

/// Spectral clustering of `points` into `k` groups.
pub fn spectral_cluster(points: ArrayView2<f64>, k: usize, seed: u64) -> Result<SpectralFit> {
    let n = points.nrows();
    if k == 0 || n < k {
        return Err(Error::InsufficientPoints { found: n, required: k.max(1) });
    }
    if n == 1 {
        return Ok(SpectralFit {
            assignment: ClusterAssignment::new(vec![0], 1)?,
            sigma: 0.0,
            eigenvalues: vec![0.0],
        });
    }
    let (affinity, sigma) = rbf_affinity(points)?;
    let laplacian = normalized_laplacian(&affinity)?;
    let eig = jacobi_eigen(&laplacian)?;

    let mut embedded = Array2::from_shape_fn((n, k), |(i, j)| eig.vectors[[i, j]]);
    for mut row in embedded.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    let fit = kmeans(embedded.view(), k, KMEANS_RESTARTS, seed)?;
    Ok(SpectralFit {
        assignment: ClusterAssignment::new(canonical_labels(&fit.labels), k)?,
        sigma,
        eigenvalues: eig.values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::stratify::adjusted_rand_index;
    use rand_distr::{Distribution, Normal};

    fn planar_blobs(per: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let centres = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0)];
        let mut r = rng::seeded(seed);
        let noise = Normal::new(0.0, 0.7).unwrap();
        let n = per * centres.len();
        let x = Array2::from_shape_fn((n, 2), |(i, d)| {
            let c = centres[i / per];
            (if d == 0 { c.0 } else { c.1 }) + noise.sample(&mut r)
        });
        (x, (0..n).map(|i| i / per).collect())
    }

    #[test]
    fn recovers_four_blobs() {
        let (x, truth) = planar_blobs(20, 3);
        let fit = spectral_cluster(x.view(), 4, 1).unwrap();
        let ari = adjusted_rand_index(&truth, &fit.assignment.labels).unwrap();
        assert!(ari >= 0.9, "ARI {ari}");
    }

    #[test]
    fn laplacian_spectrum_bounds() {
        let (x, _) = planar_blobs(10, 5);
        let (a, _) = rbf_affinity(x.view()).unwrap();
        let eig = jacobi_eigen(&normalized_laplacian(&a).unwrap()).unwrap();
        assert!(eig.values.iter().all(|&l| (-1e-8..=2.0 + 1e-8).contains(&l)));
        assert!(eig.values[0].abs() < 1e-8, "{}", eig.values[0]);
    }

    #[test]
    fn k_equal_n_gives_singletons() {
        let (x, _) = planar_blobs(2, 7);
        let fit = spectral_cluster(x.view(), 8, 0).unwrap();
        let mut labels = fit.assignment.labels.clone();
        labels.sort_unstable();
        assert_eq!(labels, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_per_seed() {
        let (x, _) = planar_blobs(15, 9);
        let a = spectral_cluster(x.view(), 4, 4).unwrap();
        let b = spectral_cluster(x.view(), 4, 4).unwrap();
        assert_eq!(a.assignment, b.assignment);
    }

    #[test]
    fn duplicate_points_are_degenerate() {
        let x = Array2::from_elem((6, 2), 1.5);
        assert!(matches!(spectral_cluster(x.view(), 2, 0), Err(Error::DegenerateGeometry(_))));
    }
}
