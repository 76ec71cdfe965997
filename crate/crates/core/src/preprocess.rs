//! Raw observations and prescriptions to normalized [`AlignedSeries`].
//!
//! Prescriptions of one drug class are merged into exposure eras, each
//! patient's earliest era with both pre-exposure (lookback window) and
//! during-exposure measurements becomes a [`RawSegment`], both sides are
//! resampled independently onto a fixed grid, and the result is mapped onto
//! [-1, 1] using the cohort's central-mass interval.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coredata::{
    AlignedSeries, Dataset, ExposureEra, LabObservation, NormBounds, PrescriptionRecord,
    Provenance, RawSegment, SeriesLayout, DAYS_PER_YEAR,
};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_GAP_DAYS: i64 = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub drug_prefix: String,
    pub max_gap_days: i64,
    pub lookback_days: i64,
    pub n_pre: usize,
    pub n_during: usize,
    pub central_mass: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            drug_prefix: "C10AA".into(),
            max_gap_days: DEFAULT_MAX_GAP_DAYS,
            lookback_days: DAYS_PER_YEAR,
            n_pre: 8,
            n_during: 8,
            central_mass: 0.99,
        }
    }
}

impl PreprocessConfig {
    pub fn layout(&self) -> Result<SeriesLayout> {
        SeriesLayout::new(self.n_pre, self.n_during)
    }
}

/// Merges prescriptions whose codes start with `drug_class_prefix` into
/// per-patient eras. Two intervals merge when the next one starts at most
/// `max_gap_days` after the current one ends. Output is sorted by patient,
/// then start day.
pub fn build_exposure_eras(
    prescriptions: &[PrescriptionRecord],
    drug_class_prefix: &str,
    max_gap_days: i64,
) -> Vec<ExposureEra> {
    let mut by_patient: BTreeMap<&str, Vec<(i64, i64)>> = BTreeMap::new();
    for p in prescriptions
        .iter()
        .filter(|p| p.drug_code.starts_with(drug_class_prefix))
    {
        by_patient
            .entry(&p.patient_id)
            .or_default()
            .push((p.start_day, p.end_day));
    }

    let mut eras = Vec::new();
    for (patient, mut intervals) in by_patient {
        intervals.sort_unstable();
        let mut current = intervals[0];
        for &(start, end) in &intervals[1..] {
            if start - current.1 <= max_gap_days {
                current.1 = current.1.max(end);
            } else {
                eras.push(ExposureEra {
                    patient_id: patient.to_owned(),
                    start_day: current.0,
                    end_day: current.1,
                });
                current = (start, end);
            }
        }
        eras.push(ExposureEra {
            patient_id: patient.to_owned(),
            start_day: current.0,
            end_day: current.1,
        });
    }
    eras
}

/// Day-ordered measurements of one patient; same-day values are averaged.
fn daily_series(observations: &[&LabObservation]) -> Vec<(i64, f64)> {
    let mut sorted: Vec<_> = observations.iter().map(|o| (o.day, o.value)).collect();
    sorted.sort_by_key(|&(d, _)| d);
    let mut out: Vec<(i64, f64)> = Vec::with_capacity(sorted.len());
    let mut run = 0usize;
    for (day, value) in sorted {
        match out.last_mut() {
            Some(last) if last.0 == day => {
                run += 1;
                last.1 += (value - last.1) / run as f64;
            }
            _ => {
                out.push((day, value));
                run = 1;
            }
        }
    }
    out
}

/// One segment per patient: the earliest era with at least one measurement
/// inside it and at least one in the `lookback_days` before its start.
/// Measurements on the start day count as during exposure.
pub fn extract_segments(
    observations: &[LabObservation],
    eras: &[ExposureEra],
    lookback_days: i64,
) -> Vec<RawSegment> {
    let mut obs_by_patient: BTreeMap<&str, Vec<&LabObservation>> = BTreeMap::new();
    for o in observations {
        obs_by_patient.entry(&o.patient_id).or_default().push(o);
    }
    let mut eras_by_patient: BTreeMap<&str, Vec<&ExposureEra>> = BTreeMap::new();
    for e in eras {
        eras_by_patient.entry(&e.patient_id).or_default().push(e);
    }

    let mut segments = Vec::new();
    for (patient, mut patient_eras) in eras_by_patient {
        let Some(obs) = obs_by_patient.get(patient) else {
            continue;
        };
        let daily = daily_series(obs);
        patient_eras.sort_by_key(|e| (e.start_day, e.end_day));
        for era in patient_eras {
            let pre_window = (era.start_day - lookback_days)..era.start_day;
            let pre: Vec<_> = daily
                .iter()
                .copied()
                .filter(|(d, _)| pre_window.contains(d))
                .collect();
            let during: Vec<_> = daily
                .iter()
                .copied()
                .filter(|(d, _)| era.contains(*d))
                .collect();
            if pre.is_empty() || during.is_empty() {
                continue;
            }
            segments.push(RawSegment {
                patient_id: patient.to_owned(),
                pre,
                during,
                era: era.clone(),
            });
            break;
        }
    }
    segments
}

/// Piecewise-linear resampling of day-stamped values onto `n` points
/// equally spaced from the first to the last day.
pub fn resample_linear(points: &[(i64, f64)], n: usize) -> Vec<f64> {
    assert!(!points.is_empty(), "resampling needs at least one point");
    let first = points[0].0 as f64;
    let last = points[points.len() - 1].0 as f64;
    if points.len() == 1 || n == 1 {
        return vec![points[0].1; n];
    }
    let step = (last - first) / (n - 1) as f64;
    let mut k = 0;
    (0..n)
        .map(|i| {
            let t = if i == n - 1 { last } else { first + step * i as f64 };
            while k + 2 < points.len() && (points[k + 1].0 as f64) < t {
                k += 1;
            }
            let (d0, v0) = points[k];
            let (d1, v1) = points[k + 1];
            if t >= d1 as f64 {
                return v1;
            }
            let w = ((t - d0 as f64) / (d1 - d0) as f64).max(0.0);
            v0 + w * (v1 - v0)
        })
        .collect()
}

/// Resamples pre and during measurements independently and concatenates them.
pub fn interpolate_segment(seg: &RawSegment, layout: SeriesLayout) -> Vec<f64> {
    let mut out = resample_linear(&seg.pre, layout.n_pre);
    out.extend(resample_linear(&seg.during, layout.n_during));
    out
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// The central `central_mass` interval of `values`.
pub fn compute_norm_bounds(values: &[f64], central_mass: f64) -> Result<NormBounds> {
    if values.is_empty() {
        return Err(Error::EmptyInput("normalization values"));
    }
    if !(central_mass > 0.0 && central_mass <= 1.0) {
        return Err(Error::Precondition(format!(
            "central mass must be in (0, 1], got {central_mass}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - central_mass) / 2.0;
    let lo = quantile_sorted(&sorted, tail);
    let hi = quantile_sorted(&sorted, 1.0 - tail);
    if lo >= hi {
        return Err(Error::DegenerateBounds(lo));
    }
    NormBounds::new(lo, hi)
}

pub fn normalize(raw: &[f64], bounds: NormBounds) -> Vec<f64> {
    let width = bounds.hi - bounds.lo;
    raw.iter()
        .map(|v| (2.0 * (v - bounds.lo) / width - 1.0).clamp(-1.0, 1.0))
        .collect()
}

/// Inverse of the unclamped normalization map.
pub fn denormalize(normalized: &[f64], bounds: NormBounds) -> Vec<f64> {
    let width = bounds.hi - bounds.lo;
    normalized
        .iter()
        .map(|y| bounds.lo + (y + 1.0) * width / 2.0)
        .collect()
}

/// Everything the pipeline derived, for callers that need more than the
/// final dataset.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub dataset: Dataset,
    /// Index-aligned with `dataset.series`.
    pub segments: Vec<RawSegment>,
    /// Every value of every included patient, the sample the bounds came from.
    pub cohort_values: Vec<f64>,
}

pub fn preprocess_pipeline(
    observations: &[LabObservation],
    prescriptions: &[PrescriptionRecord],
    cfg: &PreprocessConfig,
) -> Result<Dataset> {
    preprocess_detailed(observations, prescriptions, cfg).map(|p| p.dataset)
}

pub fn preprocess_detailed(
    observations: &[LabObservation],
    prescriptions: &[PrescriptionRecord],
    cfg: &PreprocessConfig,
) -> Result<Preprocessed> {
    let layout = cfg.layout()?;
    let eras = build_exposure_eras(prescriptions, &cfg.drug_prefix, cfg.max_gap_days);
    let segments = extract_segments(observations, &eras, cfg.lookback_days);
    if segments.len() < 2 {
        return Err(Error::InsufficientCohort {
            included: segments.len(),
            required: 2,
        });
    }

    let included: std::collections::BTreeSet<&str> =
        segments.iter().map(|s| s.patient_id.as_str()).collect();
    let cohort_values: Vec<f64> = observations
        .iter()
        .filter(|o| included.contains(o.patient_id.as_str()))
        .map(|o| o.value)
        .collect();
    let bounds = compute_norm_bounds(&cohort_values, cfg.central_mass)?;

    let series = segments
        .par_iter()
        .map(|seg| {
            let raw = interpolate_segment(seg, layout);
            AlignedSeries::new(seg.patient_id.clone(), normalize(&raw, bounds), layout)
        })
        .collect::<Result<Vec<_>>>()?;

    let dataset = Dataset::new(layout, series, None, bounds, Provenance::Real)?;
    Ok(Preprocessed {
        dataset,
        segments,
        cohort_values,
    })
}
