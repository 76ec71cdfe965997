//! Exact t-SNE.
//!
//! Affinities use a per-point Gaussian bandwidth bisected (in log precision)
//! to a target perplexity; the low-dimensional kernel is Student-t with one
//! degree of freedom. Optimization is gradient descent with momentum,
//! per-coordinate gains and early exaggeration.

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub init_sd: f64,
    /// Iterations between recorded KL divergences.
    pub kl_every: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            init_sd: 1e-4,
            kl_every: 50,
        }
    }
}

const BISECTION_STEPS: usize = 50;
const LN_PRECISION_RANGE: (f64, f64) = (-50.0, 50.0);
const MIN_PROB: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct TsneResult {
    /// `n × 2`
    pub points: Array2<f64>,
    /// `(iteration, KL(P‖Q))` with the unexaggerated P, every `kl_every`
    /// iterations and after the last one.
    pub kl_history: Vec<(usize, f64)>,
    /// Perplexity reached by each point's bandwidth search.
    pub perplexities: Vec<f64>,
    pub effective_perplexity: f64,
}

impl TsneResult {
    pub fn final_kl(&self) -> f64 {
        self.kl_history.last().map_or(f64::NAN, |&(_, kl)| kl)
    }
}

pub(crate) fn squared_distances(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    x.row(i)
                        .iter()
                        .zip(x.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum()
                })
                .collect()
        })
        .collect();
    Array2::from_shape_fn((n, n), |(i, j)| rows[i][j])
}

/// Conditional probabilities of row `i` at log-precision `ln_beta`, and
/// their Shannon entropy (nats).
fn row_affinities(dist: &[f64], i: usize, ln_beta: f64, min_dist: f64) -> (Vec<f64>, f64) {
    let beta = ln_beta.exp();
    let mut p: Vec<f64> = dist
        .iter()
        .enumerate()
        .map(|(j, &d)| if j == i { 0.0 } else { (-(d - min_dist) * beta).exp() })
        .collect();
    let sum: f64 = p.iter().sum();
    let mut weighted = 0.0;
    for (j, v) in p.iter_mut().enumerate() {
        *v /= sum;
        if j != i {
            weighted += *v * (dist[j] - min_dist);
        }
    }
    // H = ln Σ exp(−β d′) + β Σ p d′
    (p, sum.ln() + beta * weighted)
}

/// Bisects each point's precision so its conditional distribution has the
/// target perplexity. Returns row-conditional P and the reached perplexities.
pub fn conditional_affinities(sq_dist: &Array2<f64>, perplexity: f64) -> (Array2<f64>, Vec<f64>) {
    let n = sq_dist.nrows();
    let target = perplexity.ln();
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let dist: Vec<f64> = sq_dist.row(i).to_vec();
            let min_dist = dist
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &d)| d)
                .fold(f64::INFINITY, f64::min);
            let (mut lo, mut hi) = LN_PRECISION_RANGE;
            let mut mid = 0.0;
            for _ in 0..BISECTION_STEPS {
                mid = 0.5 * (lo + hi);
                let (_, h) = row_affinities(&dist, i, mid, min_dist);
                // entropy decreases as precision grows
                if h > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let (p, h) = row_affinities(&dist, i, mid, min_dist);
            (p, h.exp())
        })
        .collect();
    let perplexities = rows.iter().map(|r| r.1).collect();
    let p = Array2::from_shape_fn((n, n), |(i, j)| rows[i].0[j]);
    (p, perplexities)
}

fn kl_divergence(p: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let n = y.nrows();
    let num = student_kernel(y);
    let z: f64 = num.iter().sum();
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let q = (num[[i, j]] / z).max(MIN_PROB);
                let pij = p[[i, j]];
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

/// `1 / (1 + ‖yᵢ − yⱼ‖²)` with a zero diagonal.
fn student_kernel(y: &Array2<f64>) -> Array2<f64> {
    let n = y.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        let dx = y[[i, 0]] - y[[j, 0]];
                        let dy = y[[i, 1]] - y[[j, 1]];
                        1.0 / (1.0 + dx * dx + dy * dy)
                    }
                })
                .collect()
        })
        .collect();
    Array2::from_shape_fn((n, n), |(i, j)| rows[i][j])
}

/// KL gradient for every point given the (possibly exaggerated) P.
fn gradient(p: &Array2<f64>, y: &Array2<f64>, exaggeration: f64) -> Array2<f64> {
    let n = y.nrows();
    let num = student_kernel(y);
    // row sums in order, then summed sequentially: independent of threads
    let z: f64 = num.rows().into_iter().map(|r| r.sum()).sum();
    let rows: Vec<[f64; 2]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[[i, j]];
                let coeff = (exaggeration * p[[i, j]] - w / z) * w;
                g[0] += coeff * (y[[i, 0]] - y[[j, 0]]);
                g[1] += coeff * (y[[i, 1]] - y[[j, 1]]);
            }
            [4.0 * g[0], 4.0 * g[1]]
        })
        .collect();
    Array2::from_shape_fn((n, 2), |(i, d)| rows[i][d])
}

pub fn tsne(embeddings: ArrayView2<f64>, cfg: &TsneConfig, seed: u64) -> Result<TsneResult> {
    let n = embeddings.nrows();
    if n < 4 {
        return Err(Error::InsufficientPoints { found: n, required: 4 });
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("t-SNE input is not finite".into()));
    }
    let effective_perplexity = cfg.perplexity.min((n - 1) as f64 / 3.0);
    let sq = squared_distances(embeddings);
    let (cond, perplexities) = conditional_affinities(&sq, effective_perplexity);

    let mut p = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            ((cond[[i, j]] + cond[[j, i]]) / (2.0 * n as f64)).max(MIN_PROB)
        }
    });
    let total: f64 = p.sum();
    p /= total;

    let mut rng = rng::seeded(seed);
    let normal = Normal::new(0.0, cfg.init_sd).map_err(|e| Error::Precondition(e.to_string()))?;
    let mut y = Array2::from_shape_fn((n, 2), |_| normal.sample(&mut rng));
    let mut velocity = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut kl_history = Vec::new();

    for iter in 0..cfg.iterations {
        let exaggerated = iter < cfg.exaggeration_iterations;
        let exaggeration = if exaggerated { cfg.early_exaggeration } else { 1.0 };
        let momentum = if exaggerated {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };
        let grad = gradient(&p, &y, exaggeration);
        ndarray::Zip::from(&mut y)
            .and(&mut velocity)
            .and(&mut gains)
            .and(&grad)
            .for_each(|y, v, gain, &g| {
                *gain = if (g > 0.0) != (*v > 0.0) {
                    *gain + 0.2
                } else {
                    (*gain * 0.8).max(0.01)
                };
                *v = momentum * *v - cfg.learning_rate * *gain * g;
                *y += *v;
            });
        let mean = y.mean_axis(ndarray::Axis(0)).expect("non-empty");
        y -= &mean;

        let done = iter + 1;
        if (cfg.kl_every > 0 && done % cfg.kl_every == 0) || done == cfg.iterations {
            let kl = kl_divergence(&p, &y);
            log::trace!("t-SNE iteration {done}: KL {kl:.5}");
            kl_history.push((done, kl));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::TrainingDivergence("t-SNE coordinates non-finite".into()));
    }
    Ok(TsneResult {
        points: y,
        kl_history,
        perplexities,
        effective_perplexity,
    })
}
