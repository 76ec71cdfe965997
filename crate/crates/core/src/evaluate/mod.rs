//! Drug-laboratory-effect statistics and the predictivity error of a
//! synthetic series set against real series.
//!
//! For every real series the synthetic series with the smallest
//! pre-exposure MSE is taken as its match; the predictivity error `P_err`
//! is the mean during-exposure MSE over those matches.

pub mod stats;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coredata::{AlignedSeries, NormBounds, RawSegment, SeriesLayout};
use crate::error::{Error, Result};
use crate::gan::{generate, GanModel};
use crate::preprocess::denormalize;
use crate::rng;

pub use stats::{paired_t_test, student_t_two_sided, TTest};

/// Synthetic pool size as a multiple of the largest cluster.
pub const POOL_MULTIPLIER: usize = 10;

fn check_pair(x: &AlignedSeries, y: &AlignedSeries, layout: SeriesLayout) -> Result<()> {
    if x.values.len() != layout.len() || y.values.len() != layout.len() {
        return Err(Error::ShapeMismatch(format!(
            "series of length {} and {} under a {}-point layout",
            x.values.len(),
            y.values.len(),
            layout.len()
        )));
    }
    Ok(())
}

fn range_mse(x: &[f64], y: &[f64], range: std::ops::Range<usize>) -> f64 {
    let len = range.len() as f64;
    range.map(|i| (x[i] - y[i]) * (x[i] - y[i])).sum::<f64>() / len
}

pub fn mse_pre(x: &AlignedSeries, y: &AlignedSeries, layout: SeriesLayout) -> Result<f64> {
    check_pair(x, y, layout)?;
    Ok(range_mse(&x.values, &y.values, layout.pre_range()))
}

pub fn mse_exp(x: &AlignedSeries, y: &AlignedSeries, layout: SeriesLayout) -> Result<f64> {
    check_pair(x, y, layout)?;
    Ok(range_mse(&x.values, &y.values, layout.during_range()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictivityReport {
    pub per_series_errors: Vec<f64>,
    pub matched_index: Vec<usize>,
    pub p_err: f64,
    /// Population standard deviation of `per_series_errors`.
    pub sd: f64,
    pub n_real: usize,
    pub n_synth: usize,
}

/// Mean and population standard deviation.
pub fn mean_and_population_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn predictivity_error(
    real: &[AlignedSeries],
    synth: &[AlignedSeries],
    layout: SeriesLayout,
) -> Result<PredictivityReport> {
    if real.is_empty() {
        return Err(Error::EmptyInput("real series"));
    }
    if synth.is_empty() {
        return Err(Error::EmptyInput("synthetic series"));
    }
    for s in real.iter().chain(synth) {
        check_pair(s, s, layout)?;
    }
    let matches: Vec<(usize, f64)> = real
        .par_iter()
        .map(|x| {
            let mut best = (0, f64::INFINITY);
            for (j, y) in synth.iter().enumerate() {
                let d = range_mse(&x.values, &y.values, layout.pre_range());
                if d < best.1 {
                    best = (j, d);
                }
            }
            let j = best.0;
            (j, range_mse(&x.values, &synth[j].values, layout.during_range()))
        })
        .collect();
    let (matched_index, per_series_errors): (Vec<usize>, Vec<f64>) = matches.into_iter().unzip();
    let (p_err, sd) = mean_and_population_sd(&per_series_errors);
    Ok(PredictivityReport {
        per_series_errors,
        matched_index,
        p_err,
        sd,
        n_real: real.len(),
        n_synth: synth.len(),
    })
}

/// Units the drug-laboratory effect is reported in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DleScale {
    Normalized,
    /// Series are mapped back to mg/dL with these bounds first.
    Denormalized(NormBounds),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DleReport {
    pub n: usize,
    pub mean_pre: f64,
    pub mean_during: f64,
    /// Mean over segments of `during mean − pre mean`.
    pub effect_size: f64,
    /// Standard error of `effect_size`.
    pub standard_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sum::<f64>() / n
}

fn dle_from_means(pairs: &[(f64, f64)]) -> Result<DleReport> {
    let diffs: Vec<f64> = pairs.iter().map(|(pre, during)| during - pre).collect();
    let t = paired_t_test(&diffs)?;
    Ok(DleReport {
        n: pairs.len(),
        mean_pre: mean(pairs.iter().map(|p| p.0)),
        mean_during: mean(pairs.iter().map(|p| p.1)),
        effect_size: t.mean,
        standard_error: t.sd / (t.n as f64).sqrt(),
        t_stat: t.t_stat,
        p_value: t.p_value,
    })
}

/// Paired t-test of per-series pre vs during means.
pub fn dle_test(series: &[AlignedSeries], layout: SeriesLayout, scale: DleScale) -> Result<DleReport> {
    let pairs = series
        .iter()
        .map(|s| {
            s.validate(layout)?;
            let values = match scale {
                DleScale::Normalized => s.values.clone(),
                DleScale::Denormalized(b) => denormalize(&s.values, b),
            };
            Ok((
                mean(layout.pre_range().map(|i| values[i])),
                mean(layout.during_range().map(|i| values[i])),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    dle_from_means(&pairs)
}

/// Paired t-test on raw (mg/dL) segment measurements.
pub fn dle_test_segments(segments: &[RawSegment]) -> Result<DleReport> {
    let pairs: Vec<(f64, f64)> = segments
        .iter()
        .map(|s| {
            (
                mean(s.pre.iter().map(|p| p.1)),
                mean(s.during.iter().map(|p| p.1)),
            )
        })
        .collect();
    dle_from_means(&pairs)
}

/// Draws `POOL_MULTIPLIER × largest_cluster_size` series from `model` and
/// keeps a uniform subset of `n_real`, in pool order.
pub fn protocol_generate(
    model: &GanModel,
    largest_cluster_size: usize,
    n_real: usize,
    seed: u64,
) -> Result<Vec<AlignedSeries>> {
    let pool_size = POOL_MULTIPLIER * largest_cluster_size;
    if n_real == 0 || n_real > pool_size {
        return Err(Error::Precondition(format!(
            "cannot draw {n_real} series from a pool of {pool_size}"
        )));
    }
    let mut pool = generate(model, pool_size, rng::derive_seed(seed, 51))?;
    let mut pick = rng::seeded(rng::derive_seed(seed, 52));
    let mut keep = index::sample(&mut pick, pool_size, n_real).into_vec();
    keep.sort_unstable();
    let mut out = Vec::with_capacity(n_real);
    for i in keep.into_iter().rev() {
        out.push(pool.swap_remove(i));
    }
    out.reverse();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub cluster_id: usize,
    pub sub: PredictivityReport,
    pub total: PredictivityReport,
    /// Paired two-sided t-test on `sub − total` per-series errors.
    pub p_value: f64,
    /// Set when all differences were identical and `p_value` is 1 by
    /// convention.
    pub zero_variance: bool,
}

fn paired_p_value(sub: &PredictivityReport, total: &PredictivityReport) -> Result<(f64, bool)> {
    let diffs: Vec<f64> = sub
        .per_series_errors
        .iter()
        .zip(&total.per_series_errors)
        .map(|(s, t)| s - t)
        .collect();
    match paired_t_test(&diffs) {
        Ok(t) => Ok((t.p_value, false)),
        Err(Error::ZeroVariance) => Ok((1.0, true)),
        Err(e) => Err(e),
    }
}

/// Scores two models on the same real series; both synthetic sets are drawn
/// with `seed`.
pub fn compare_models(
    cluster_id: usize,
    real: &[AlignedSeries],
    sub_model: &GanModel,
    total_model: &GanModel,
    largest_cluster_size: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    let layout = sub_model.layout;
    if total_model.layout != layout {
        return Err(Error::ShapeMismatch("models use different series layouts".into()));
    }
    let sub_synth = protocol_generate(sub_model, largest_cluster_size, real.len(), seed)?;
    let total_synth = protocol_generate(total_model, largest_cluster_size, real.len(), seed)?;
    compare_synthetic(cluster_id, real, &sub_synth, &total_synth, layout)
}

/// Scores two given synthetic sets on the same real series.
pub fn compare_synthetic(
    cluster_id: usize,
    real: &[AlignedSeries],
    sub_synth: &[AlignedSeries],
    total_synth: &[AlignedSeries],
    layout: SeriesLayout,
) -> Result<ComparisonReport> {
    let sub = predictivity_error(real, sub_synth, layout)?;
    let total = predictivity_error(real, total_synth, layout)?;
    let (p_value, zero_variance) = paired_p_value(&sub, &total)?;
    Ok(ComparisonReport {
        cluster_id,
        sub,
        total,
        p_value,
        zero_variance,
    })
}

/// Uniform subset of `size` of `0..n`, ascending.
pub fn random_subset(n: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > n {
        return Err(Error::Precondition(format!("subset of {size} from {n}")));
    }
    let mut r = rng::seeded(seed);
    let mut idx = index::sample(&mut r, n, size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// For each size, trains a model on an independent random subset of
/// `series` and compares it with `total_model` on that subset.
/// `trainer(series, seed)` must be deterministic in its arguments.
pub fn random_cluster_baseline<F>(
    series: &[AlignedSeries],
    cluster_sizes: &[usize],
    trainer: F,
    total_model: &GanModel,
    largest_cluster_size: usize,
    seed: u64,
) -> Result<Vec<ComparisonReport>>
where
    F: Fn(&[AlignedSeries], u64) -> Result<GanModel> + Sync,
{
    cluster_sizes
        .par_iter()
        .enumerate()
        .map(|(i, &size)| {
            let stream = rng::derive_seed(seed, 1000 + i as u64);
            let members = random_subset(series.len(), size, rng::derive_seed(stream, 1))?;
            let subset: Vec<AlignedSeries> = members.iter().map(|&m| series[m].clone()).collect();
            let model = trainer(&subset, rng::derive_seed(stream, 2))?;
            compare_models(
                i,
                &subset,
                &model,
                total_model,
                largest_cluster_size,
                rng::derive_seed(stream, 3),
            )
        })
        .collect()
}
