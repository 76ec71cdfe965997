//! Seeded simulator of EHR-style cohorts with known cluster structure and
//! known drug effects.
//!
//! Each patient belongs to one latent cluster that fixes their baseline
//! level, the additive shift applied while exposed, and which block of
//! diagnosis codes they tend to carry. Patient `i` draws everything from
//! substream `i` of the seed, so the output is independent of scheduling.

use std::collections::BTreeMap;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng as _;
use rand_distr::{Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coredata::{DiagnosisRecord, LabObservation, PrescriptionRecord, RawSegment};
use crate::error::{Error, Result};
use crate::evaluate::mean_and_population_sd;
use crate::rng;
use crate::stratify::{adjusted_rand_index, ClusterAssignment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSpec {
    /// Relative probability of a patient falling in this cluster.
    pub weight: f64,
    /// Mean of the per-patient baseline (mg/dL).
    pub baseline_mean: f64,
    /// Between-patient SD of the baseline (mg/dL).
    pub baseline_sd: f64,
    /// Additive shift while exposed (mg/dL).
    pub effect: f64,
    /// Per-measurement noise SD (mg/dL).
    pub noise_sd: f64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            weight: 1.0,
            baseline_mean: 190.0,
            baseline_sd: 20.0,
            effect: -30.0,
            noise_sd: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_patients: usize,
    pub clusters: Vec<ClusterSpec>,
    /// Diagnosis codes per cluster block.
    pub codes_per_block: usize,
    /// Probability of carrying each code of one's own block.
    pub p_signal: f64,
    /// Probability of carrying each other code.
    pub p_noise: f64,
    /// Co-medications prescribed before the era with probability `p_noise`.
    pub comedication_codes: Vec<String>,
    pub statin_code: String,
    /// Expected measurements per 100 days.
    pub observation_rate: f64,
    /// Inclusive range of era lengths in days.
    pub era_length_range: [i64; 2],
    pub lookback_days: i64,
    /// Fraction of the lookback window (ending at the era start) in which
    /// pre-exposure measurements fall.
    pub lookback_occupancy: f64,
    /// Diagnoses are dated up to this many days before the era start.
    pub history_days: i64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let cluster = |baseline_mean, effect| ClusterSpec {
            baseline_mean,
            effect,
            ..ClusterSpec::default()
        };
        Self {
            n_patients: 500,
            clusters: vec![
                cluster(210.0, -55.0),
                cluster(185.0, -5.0),
                cluster(200.0, -30.0),
                cluster(175.0, 15.0),
            ],
            codes_per_block: 8,
            p_signal: 0.6,
            p_noise: 0.05,
            comedication_codes: vec!["A10BA02".into(), "B01AC06".into(), "C09AA02".into()],
            statin_code: "C10AA05".into(),
            observation_rate: 3.0,
            era_length_range: [180, 720],
            lookback_days: 365,
            lookback_occupancy: 1.0,
            history_days: 3 * 365,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Validation(m.to_string()));
        if self.clusters.is_empty() {
            return fail("at least one cluster is required");
        }
        if self.n_patients == 0 {
            return fail("n_patients must be positive");
        }
        for p in [self.p_signal, self.p_noise] {
            if !(0.0..=1.0).contains(&p) {
                return fail("probabilities must lie in [0, 1]");
            }
        }
        for c in &self.clusters {
            if !(c.baseline_sd > 0.0 && c.noise_sd > 0.0) {
                return fail("standard deviations must be positive");
            }
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return fail("cluster weights must be non-negative");
            }
        }
        if self.clusters.iter().all(|c| c.weight == 0.0) {
            return fail("cluster weights sum to zero");
        }
        if !(self.observation_rate > 0.0) {
            return fail("observation_rate must be positive");
        }
        let [lo, hi] = self.era_length_range;
        if lo < 1 || hi < lo {
            return fail("era_length_range must be a positive, ordered range");
        }
        if !(self.lookback_occupancy > 0.0 && self.lookback_occupancy <= 1.0) {
            return fail("lookback_occupancy must lie in (0, 1]");
        }
        if self.lookback_days < 1 || self.history_days < 1 {
            return fail("lookback_days and history_days must be positive");
        }
        if self.codes_per_block * self.clusters.len() > 900 {
            return fail("too many diagnosis codes for three-digit groups");
        }
        Ok(())
    }

    fn pre_window_days(&self) -> i64 {
        ((self.lookback_days as f64 * self.lookback_occupancy).floor() as i64).max(1)
    }

    /// Diagnosis code `j` of cluster `c`'s block.
    pub fn diagnosis_code(&self, cluster: usize, j: usize) -> String {
        format!("{:03}.1", 100 + cluster * self.codes_per_block + j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub k: usize,
    pub labels: BTreeMap<String, usize>,
    /// Configured effect per cluster (mg/dL).
    pub effects: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulatedCohort {
    pub observations: Vec<LabObservation>,
    pub prescriptions: Vec<PrescriptionRecord>,
    pub diagnoses: Vec<DiagnosisRecord>,
}

struct PatientRecords {
    label: usize,
    cohort: SimulatedCohort,
}

pub fn patient_id(i: usize) -> String {
    format!("P{i:05}")
}

/// Event days of a Poisson process on `[from, to]`; at least one day.
fn observation_days(from: i64, to: i64, per_day: f64, r: &mut rng::Rng) -> Vec<i64> {
    let span = (to - from + 1) as f64;
    let count = Poisson::new(per_day * span)
        .map(|p| p.sample(r) as usize)
        .unwrap_or(0)
        .max(1);
    let mut days: Vec<i64> = (0..count).map(|_| r.random_range(from..=to)).collect();
    days.sort_unstable();
    days.dedup();
    days
}

fn simulate_patient(cfg: &SimConfig, i: usize, chooser: &WeightedIndex<f64>) -> PatientRecords {
    let mut r = rng::substream(cfg.seed, i as u64);
    let id = patient_id(i);
    let label = chooser.sample(&mut r);
    let spec = &cfg.clusters[label];
    let baseline = spec.baseline_mean + spec.baseline_sd * r.sample::<f64, _>(rand_distr::StandardNormal);

    let earliest = cfg.history_days.max(cfg.lookback_days) + 1;
    let start = r.random_range(earliest..earliest + 3 * 365);
    let length = r.random_range(cfg.era_length_range[0]..=cfg.era_length_range[1]);
    let planned_end = start + length - 1;

    // consecutive fills with short gaps; the merged era ends with the last fill
    let mut prescriptions = Vec::new();
    let mut fill_start = start;
    let mut end = start;
    while fill_start <= planned_end {
        let fill_end = (fill_start + r.random_range(29..90)).min(planned_end);
        prescriptions.push(
            PrescriptionRecord::new(&id, &cfg.statin_code, fill_start, fill_end).expect("ordered fill"),
        );
        end = fill_end;
        fill_start = fill_end + 1 + r.random_range(0..15);
    }

    let per_day = cfg.observation_rate / 100.0;
    let pre_days = observation_days(start - cfg.pre_window_days(), start - 1, per_day, &mut r);
    let during_days = observation_days(start, end, per_day, &mut r);
    let noise = Normal::new(0.0, spec.noise_sd).expect("validated sd");
    let mut observations = Vec::with_capacity(pre_days.len() + during_days.len());
    for (days, shift) in [(&pre_days, 0.0), (&during_days, spec.effect)] {
        for &day in days {
            let jitter = noise.sample(&mut r);
            let value = (baseline + shift + jitter).max(0.0);
            observations.push(LabObservation::new(&id, day, value).expect("non-negative value"));
        }
    }

    let mut diagnoses = Vec::new();
    for c in 0..cfg.k() {
        let p = if c == label { cfg.p_signal } else { cfg.p_noise };
        for j in 0..cfg.codes_per_block {
            if r.random_bool(p) {
                diagnoses.push(DiagnosisRecord {
                    patient_id: id.clone(),
                    code: cfg.diagnosis_code(c, j),
                    day: start - r.random_range(1..=cfg.history_days),
                });
            }
        }
    }
    for code in &cfg.comedication_codes {
        if r.random_bool(cfg.p_noise) {
            let s = start - r.random_range(60..=cfg.history_days.max(60));
            prescriptions.push(PrescriptionRecord::new(&id, code, s, s + 29).expect("ordered fill"));
        }
    }

    PatientRecords {
        label,
        cohort: SimulatedCohort {
            observations,
            prescriptions,
            diagnoses,
        },
    }
}

/// Simulates `cfg.n_patients` patients; records are grouped by patient in
/// id order.
pub fn simulate_cohort(cfg: &SimConfig) -> Result<(SimulatedCohort, GroundTruth)> {
    cfg.validate()?;
    let per_day = cfg.observation_rate / 100.0;
    let expected_pre = per_day * cfg.pre_window_days() as f64;
    let expected_during = per_day * cfg.era_length_range[0] as f64;
    if expected_pre < 1.0 || expected_during < 1.0 {
        log::warn!(
            "expected {expected_pre:.2} pre and {expected_during:.2} during measurements per patient; \
             one of each is forced"
        );
    }
    let weights: Vec<f64> = cfg.clusters.iter().map(|c| c.weight).collect();
    let chooser = WeightedIndex::new(&weights).map_err(|e| Error::Validation(e.to_string()))?;
    let patients: Vec<PatientRecords> = (0..cfg.n_patients)
        .into_par_iter()
        .map(|i| simulate_patient(cfg, i, &chooser))
        .collect();

    let mut cohort = SimulatedCohort::default();
    let mut labels = BTreeMap::new();
    for (i, p) in patients.into_iter().enumerate() {
        labels.insert(patient_id(i), p.label);
        cohort.observations.extend(p.cohort.observations);
        cohort.prescriptions.extend(p.cohort.prescriptions);
        cohort.diagnoses.extend(p.cohort.diagnoses);
    }
    Ok((
        cohort,
        GroundTruth {
            k: cfg.k(),
            labels,
            effects: cfg.clusters.iter().map(|c| c.effect).collect(),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEffect {
    pub cluster: usize,
    pub n: usize,
    pub configured_effect: f64,
    /// Mean of per-segment `during mean − pre mean` (mg/dL); NaN when the
    /// cluster has no segment.
    pub measured_effect: f64,
    pub measured_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub ari: f64,
    pub effects: Vec<ClusterEffect>,
}

/// Agreement of `assignment` (over `patient_ids`) with the true labels, and
/// measured vs configured effect per true cluster.
pub fn oracle_report(
    truth: &GroundTruth,
    patient_ids: &[&str],
    assignment: &ClusterAssignment,
    segments: &[RawSegment],
) -> Result<OracleReport> {
    if patient_ids.len() != assignment.labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} patients but {} labels",
            patient_ids.len(),
            assignment.labels.len()
        )));
    }
    let true_labels = patient_ids
        .iter()
        .map(|id| {
            truth
                .labels
                .get(*id)
                .copied()
                .ok_or_else(|| Error::Validation(format!("patient {id} has no ground truth")))
        })
        .collect::<Result<Vec<_>>>()?;
    let ari = adjusted_rand_index(&true_labels, &assignment.labels)?;

    let mut diffs: Vec<Vec<f64>> = vec![Vec::new(); truth.k];
    for seg in segments {
        let label = *truth
            .labels
            .get(&seg.patient_id)
            .ok_or_else(|| Error::Validation(format!("patient {} has no ground truth", seg.patient_id)))?;
        let mean = |xs: &[(i64, f64)]| xs.iter().map(|p| p.1).sum::<f64>() / xs.len() as f64;
        diffs[label].push(mean(&seg.during) - mean(&seg.pre));
    }
    let effects = diffs
        .iter()
        .enumerate()
        .map(|(c, d)| {
            let (measured_effect, measured_sd) = if d.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                mean_and_population_sd(d)
            };
            ClusterEffect {
                cluster: c,
                n: d.len(),
                configured_effect: truth.effects[c],
                measured_effect,
                measured_sd,
            }
        })
        .collect();
    Ok(OracleReport { ari, effects })
}
