use ndarray::{Array2, ArrayView2};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_seeds(x: ArrayView2<f64>, k: usize, rng: &mut rng::Rng) -> Result<Array2<f64>> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&x.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateGeometry(format!(
                "only {c} distinct points for {k} clusters"
            )));
        }
        let mut target = rng.random_range(0.0..total);
        let mut pick = n - 1;
        for (i, &d) in nearest.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        // rounding can walk past the end onto an already chosen point
        if nearest[pick] == 0.0 {
            pick = nearest
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .expect("non-empty");
        }
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(pick)));
        }
    }
    Ok(centroids)
}

fn lloyd(x: ArrayView2<f64>, mut centroids: Array2<f64>) -> KMeansFit {
    let (n, k) = (x.nrows(), centroids.nrows());
    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (best, d) = (0..k)
                .map(|c| (c, sq_dist(x.row(i), centroids.row(c))))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .expect("k > 0");
            dists[i] = d;
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for i in 0..n {
            sums.row_mut(labels[i]).scaled_add(1.0, &x.row(i));
            counts[labels[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                // move an empty centroid onto the worst-fit point
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("non-empty");
                centroids.row_mut(c).assign(&x.row(far));
                dists[far] = 0.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = (0..n)
        .map(|i| sq_dist(x.row(i), centroids.row(labels[i])))
        .sum();
    KMeansFit {
        labels,
        centroids,
        inertia,
    }
}

/// k-means with k-means++ seeding; the restart with the lowest inertia
/// wins. Restart `r` draws from substream `r` of `seed`.
pub fn kmeans(x: ArrayView2<f64>, k: usize, restarts: usize, seed: u64) -> Result<KMeansFit> {
    let n = x.nrows();
    if k == 0 || n < k {
        return Err(Error::InsufficientPoints { found: n, required: k.max(1) });
    }
    let mut best: Option<KMeansFit> = None;
    for r in 0..restarts.max(1) {
        let mut rng = rng::substream(seed, r as u64);
        let fit = lloyd(x, plus_plus_seeds(x, k, &mut rng)?);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}
