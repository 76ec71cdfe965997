//! Cyclic Jacobi eigendecomposition of dense symmetric matrices.

use ndarray::Array2;

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigenvalues in ascending order with matching eigenvector columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Column `j` is the unit eigenvector of `values[j]`.
    pub vectors: Array2<f64>,
}

pub fn jacobi_eigen(matrix: &Array2<f64>) -> Result<SymmetricEigen> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "eigensolver needs a square matrix, got {:?}",
            matrix.dim()
        )));
    }
    let scale = matrix.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !scale.is_finite() {
        return Err(Error::Validation("matrix is not finite".into()));
    }
    for i in 0..n {
        for j in 0..i {
            if (matrix[[i, j]] - matrix[[j, i]]).abs() > 1e-12 * scale.max(1.0) {
                return Err(Error::Validation("matrix is not symmetric".into()));
            }
        }
    }

    // row-major working copies
    let mut a: Vec<f64> = matrix.iter().copied().collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let tol = 1e-13 * scale;

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= tol || n < 2 {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::EPSILON * 1e-3 * scale {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| v[r * n + order[c]]);
    Ok(SymmetricEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;
    use rand::Rng as _;

    fn random_symmetric(n: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::seeded(seed);
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let x: f64 = r.random_range(-1.0..1.0);
                m[[i, j]] = x;
                m[[j, i]] = x;
            }
        }
        m
    }

    #[test]
    fn reconstructs_random_symmetric_matrices() {
        for seed in 0..10 {
            let m = random_symmetric(20, seed);
            let eig = jacobi_eigen(&m).unwrap();
            let lambda = Array2::from_diag(&ndarray::Array1::from(eig.values.clone()));
            let recon = eig.vectors.dot(&lambda).dot(&eig.vectors.t());
            let frob = (&recon - &m).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(frob < 1e-8, "seed {seed}: {frob}");
            let orth = eig.vectors.t().dot(&eig.vectors) - Array2::<f64>::eye(20);
            assert!(orth.iter().all(|x| x.abs() < 1e-10));
            assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn known_two_by_two() {
        let eig = jacobi_eigen(&array![[2.0, 1.0], [1.0, 2.0]]).unwrap();
        assert!((eig.values[0] - 1.0).abs() < 1e-14);
        assert!((eig.values[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal_input_untouched() {
        let eig = jacobi_eigen(&array![[3.0, 0.0], [0.0, -1.0]]).unwrap();
        assert_eq!(eig.values, vec![-1.0, 3.0]);
    }

    #[test]
    fn rejects_asymmetric() {
        assert!(jacobi_eigen(&array![[1.0, 2.0], [0.0, 1.0]]).is_err());
        assert!(jacobi_eigen(&Array2::zeros((2, 3))).is_err());
    }
}
