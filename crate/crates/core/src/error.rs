use thiserror::Error;

use crate::autodiff::AutodiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("region error: {0}")]
    Region(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("training diverged at epoch {epoch}: non-finite {term}")]
    Divergence { epoch: usize, term: String },
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Solver {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
    #[error("unphysical result: {0}")]
    Unphysical(String),
    #[error("schema error: missing or invalid field `{field}`{detail}")]
    Schema { field: String, detail: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable class name, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Region(_) => "region",
            Error::Geometry(_) => "geometry",
            Error::Sampling(_) => "sampling",
            Error::Divergence { .. } => "divergence",
            Error::Solver { .. } => "solver",
            Error::Unphysical(_) => "unphysical",
            Error::Schema { .. } => "schema",
            Error::Validation(_) => "validation",
            Error::Range(_) => "range",
            Error::Autodiff(_) => "autodiff",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn schema(field: impl Into<String>, detail: impl Into<String>) -> Self {
        let detail = detail.into();
        Error::Schema {
            field: field.into(),
            detail: if detail.is_empty() { detail } else { format!(": {detail}") },
        }
    }
}
