//! Patient stratification: binary pre-exposure covariates are compressed by
//! a deep autoencoder, laid out in the plane with t-SNE and partitioned by
//! spectral clustering.

mod autoencoder;
mod covariates;
pub mod jacobi;
pub mod kmeans;
mod spectral;
pub mod tsne;

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use autoencoder::{
    embed, init_autoencoder, reconstruction_bce, train_stratification_autoencoder,
    AutoencoderConfig, StratificationAutoencoder, CODE_DIM, ENCODER_WIDTHS,
};
pub use covariates::{
    build_covariates, covariates_from_codes, diagnosis_group, CovariateVector, Covariates,
};
pub use spectral::{
    canonical_labels, normalized_laplacian, rbf_affinity, spectral_cluster, SpectralFit,
    KMEANS_RESTARTS,
};
pub use tsne::{tsne, TsneConfig, TsneResult};

use crate::error::{Error, Result};
use crate::rng;

/// A patient's autoencoder code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientEmbedding {
    pub code: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub xy: [f64; 2],
}

/// A partition of patients into `k` non-empty clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        let mut used = vec![false; k];
        for &l in &labels {
            if l >= k {
                return Err(Error::Validation(format!("label {l} outside [0, {k})")));
            }
            used[l] = true;
        }
        if let Some(empty) = used.iter().position(|u| !u) {
            return Err(Error::Validation(format!("cluster {empty} has no members")));
        }
        Ok(Self { labels, k })
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index of two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "labelings of {} and {} items",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as u64;
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        // both partitions trivial in the same way
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StratifyConfig {
    pub k: usize,
    pub autoencoder: AutoencoderConfig,
    pub tsne: TsneConfig,
}

impl Default for StratifyConfig {
    fn default() -> Self {
        Self {
            k: 4,
            autoencoder: AutoencoderConfig::default(),
            tsne: TsneConfig::default(),
        }
    }
}

/// Output of the full stratification; also the `clusters.json` schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratification {
    pub patient_ids: Vec<String>,
    pub assignment: ClusterAssignment,
    pub coordinates: Vec<PlanarPoint>,
    pub autoencoder_loss: Vec<f64>,
    pub tsne_final_kl: f64,
    pub seed: u64,
}

impl Stratification {
    pub fn label_of(&self) -> BTreeMap<&str, usize> {
        self.patient_ids
            .iter()
            .map(String::as_str)
            .zip(self.assignment.labels.iter().copied())
            .collect()
    }

    /// Indices into `patient_ids` of each cluster's members, in order.
    pub fn cluster_members(&self, patient_ids: &[&str], cluster: usize) -> Vec<usize> {
        let labels = self.label_of();
        patient_ids
            .iter()
            .enumerate()
            .filter(|(_, id)| labels.get(*id) == Some(&cluster))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Autoencoder → t-SNE → spectral clustering.
pub fn stratify(covariates: &Covariates, cfg: &StratifyConfig, seed: u64) -> Result<Stratification> {
    covariates.validate()?;
    let x: Array2<f64> = covariates.to_matrix();
    let ae = train_stratification_autoencoder(x.view(), rng::derive_seed(seed, 11), &cfg.autoencoder)?;
    let codes = embed(&ae.encoder, x.view())?;
    let layout = tsne(codes.view(), &cfg.tsne, rng::derive_seed(seed, 12))?;
    let fit = spectral_cluster(layout.points.view(), cfg.k, rng::derive_seed(seed, 13))?;
    Ok(Stratification {
        patient_ids: covariates.rows.iter().map(|r| r.patient_id.clone()).collect(),
        assignment: fit.assignment,
        coordinates: layout
            .points
            .rows()
            .into_iter()
            .map(|r| PlanarPoint { xy: [r[0], r[1]] })
            .collect(),
        autoencoder_loss: ae.loss_curve,
        tsne_final_kl: layout.final_kl(),
        seed,
    })
}
