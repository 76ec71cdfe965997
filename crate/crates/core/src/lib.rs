//! Synthetic drug-exposed laboratory time series.
//!
//! The crate turns raw laboratory observations and prescriptions into
//! aligned pre/during-exposure series, stratifies patients from their
//! clinical history, trains small GANs per patient group and scores the
//! synthetic series by how well they predict exposure trajectories.

pub mod cohortsim;
pub mod coredata;
pub mod error;
pub mod evaluate;
pub mod gan;
pub mod nn;
pub mod preprocess;
pub mod report;
pub mod rng;
pub mod stratify;

pub use coredata::{
    AlignedSeries, Dataset, DiagnosisRecord, ExposureEra, LabObservation, NormBounds,
    PrescriptionRecord, Provenance, RawSegment, SeriesLayout,
};
pub use error::{Error, Result};
pub use nn::{Activation, DenseNet, OptimState};
pub use preprocess::PreprocessConfig;
pub use stratify::{ClusterAssignment, CovariateVector, Covariates, Stratification, StratifyConfig};
pub use cohortsim::{GroundTruth, SimConfig};
pub use evaluate::{ComparisonReport, DleReport, PredictivityReport};
pub use gan::{GanModel, GanTrainConfig};
pub use report::{ExperimentConfig, ExperimentSummary};
