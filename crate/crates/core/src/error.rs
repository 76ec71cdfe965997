use std::path::PathBuf;

/// Every failure the pipeline can surface.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("unsupported format_version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("degenerate normalization bounds: all values equal {0}")]
    DegenerateBounds(f64),
    #[error("insufficient cohort: {included} patients included, at least {required} required")]
    InsufficientCohort { included: usize, required: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged: {0}")]
    TrainingDivergence(String),
    #[error("insufficient points: {found} given, at least {required} required")]
    InsufficientPoints { found: usize, required: usize },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("zero variance in paired differences; no p-value")]
    ZeroVariance,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
