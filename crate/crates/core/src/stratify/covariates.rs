use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::coredata::{DiagnosisRecord, ExposureEra, PrescriptionRecord};
use crate::error::{Error, Result};

/// Binary presence of each vocabulary code before exposure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateVector {
    pub patient_id: String,
    pub bits: Vec<u8>,
}

/// A cohort's covariate matrix with its shared, sorted vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Covariates {
    pub vocabulary: Vec<String>,
    pub rows: Vec<CovariateVector>,
}

impl Covariates {
    pub fn validate(&self) -> Result<()> {
        if self.vocabulary.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(
                "covariate vocabulary must be sorted and unique".into(),
            ));
        }
        for row in &self.rows {
            if row.bits.len() != self.vocabulary.len() {
                return Err(Error::Validation(format!(
                    "covariate row `{}` has {} bits for a vocabulary of {}",
                    row.patient_id,
                    row.bits.len(),
                    self.vocabulary.len()
                )));
            }
            if row.bits.iter().any(|&b| b > 1) {
                return Err(Error::Validation(format!(
                    "covariate row `{}` is not binary",
                    row.patient_id
                )));
            }
        }
        Ok(())
    }

    pub fn patient_ids(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.patient_id.as_str()).collect()
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows.len(), self.vocabulary.len()), |(i, j)| {
            f64::from(self.rows[i].bits[j])
        })
    }

    /// Rows reordered (and filtered) to follow `patient_ids`; patients
    /// without a row get all zeros.
    pub fn aligned_to(&self, patient_ids: &[&str]) -> Covariates {
        let index: BTreeMap<&str, &CovariateVector> =
            self.rows.iter().map(|r| (r.patient_id.as_str(), r)).collect();
        let rows = patient_ids
            .iter()
            .map(|&id| match index.get(id) {
                Some(r) => (*r).clone(),
                None => CovariateVector {
                    patient_id: id.to_owned(),
                    bits: vec![0; self.vocabulary.len()],
                },
            })
            .collect();
        Covariates {
            vocabulary: self.vocabulary.clone(),
            rows,
        }
    }
}

/// Three-character diagnosis group, e.g. `250.02` → `250`.
pub fn diagnosis_group(code: &str) -> String {
    code.chars().filter(|c| *c != '.').take(3).collect()
}

fn encode(codes_by_patient: BTreeMap<String, BTreeSet<String>>) -> Covariates {
    let vocabulary: Vec<String> = codes_by_patient
        .values()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let position: BTreeMap<&str, usize> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let rows = codes_by_patient
        .iter()
        .map(|(patient, codes)| {
            let mut bits = vec![0u8; vocabulary.len()];
            for c in codes {
                bits[position[c.as_str()]] = 1;
            }
            CovariateVector {
                patient_id: patient.clone(),
                bits,
            }
        })
        .collect();
    Covariates { vocabulary, rows }
}

/// Drug codes and grouped diagnoses dated strictly before each patient's
/// (earliest) era start, one row per patient with an era, sorted by id.
pub fn build_covariates(
    prescriptions: &[PrescriptionRecord],
    diagnoses: &[DiagnosisRecord],
    eras: &[ExposureEra],
) -> Covariates {
    let mut start: BTreeMap<&str, i64> = BTreeMap::new();
    for e in eras {
        start
            .entry(&e.patient_id)
            .and_modify(|s| *s = (*s).min(e.start_day))
            .or_insert(e.start_day);
    }
    let mut codes: BTreeMap<String, BTreeSet<String>> = start
        .keys()
        .map(|p| ((*p).to_owned(), BTreeSet::new()))
        .collect();
    for p in prescriptions {
        if start.get(p.patient_id.as_str()).is_some_and(|&s| p.start_day < s) {
            codes
                .get_mut(&p.patient_id)
                .expect("patient present")
                .insert(p.drug_code.clone());
        }
    }
    for d in diagnoses {
        if start.get(d.patient_id.as_str()).is_some_and(|&s| d.day < s) {
            codes
                .get_mut(&d.patient_id)
                .expect("patient present")
                .insert(diagnosis_group(&d.code));
        }
    }
    encode(codes)
}

/// Covariates from long-form `(patient_id, code)` pairs, aligned to
/// `patient_ids`. Codes are taken verbatim.
pub fn covariates_from_codes(pairs: &[(String, String)], patient_ids: &[&str]) -> Covariates {
    let wanted: BTreeSet<&str> = patient_ids.iter().copied().collect();
    let mut codes: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (p, c) in pairs {
        if wanted.contains(p.as_str()) {
            codes.entry(p.clone()).or_default().insert(c.clone());
        }
    }
    encode(codes).aligned_to(patient_ids)
}
