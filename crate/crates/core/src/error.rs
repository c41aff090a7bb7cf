use std::fmt;

use thiserror::Error;

/// Pipeline stage a failure originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Factors,
    PenalizedFit,
    Projection,
    Score,
    Information,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Ingest => "ingest",
            Stage::Factors => "factor estimation",
            Stage::PenalizedFit => "penalized Cox fit",
            Stage::Projection => "Dantzig projection",
            Stage::Score => "decorrelated score",
            Stage::Information => "information estimate",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum FadsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "tied event times: rows {first} and {second} both fail at t = {time}; \
         break ties first (e.g. `fads::survival::break_ties`, jitter of 1e-9 per rank)"
    )]
    TiedEvents { first: usize, second: usize, time: f64 },

    #[error("no events")]
    NoEvents,

    #[error("linear predictor overflow at subject {index}: |eta| = {value:.3e} exceeds {limit}")]
    Overflow { index: usize, value: f64, limit: f64 },

    #[error(
        "Dantzig projection infeasible for column {column}: \
         best feasibility residual {residual:.3e} > lambda2 {lambda2:.3e}"
    )]
    Infeasible { column: usize, residual: f64, lambda2: f64 },

    #[error("degenerate matrix: smallest eigenvalue {min_eig:.3e} is below {threshold:.3e}")]
    Degenerate { min_eig: f64, threshold: f64 },

    #[error("cross-validation failed: {0}")]
    CrossValidation(String),

    #[error("censoring calibration failed: {0}")]
    Calibration(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<FadsError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FadsError {
    pub(crate) fn at(self, stage: Stage) -> Self {
        FadsError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage tags.
    pub fn root(&self) -> &FadsError {
        match self {
            FadsError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, FadsError>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
