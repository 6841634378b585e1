use thiserror::Error;

use crate::learning::PartialFit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its admissible domain.
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// The optimizer ran out of iterations on every restart. `best` holds the
    /// best point found (in natural parameterization) and its objective.
    #[error("{what} did not converge (best objective {objective:.6e})")]
    NonConvergence {
        what: &'static str,
        best: Vec<f64>,
        objective: f64,
    },

    /// A recursive fit failed at stage `stage` (1-based dimension index).
    #[error("fit aborted at stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
        partial: Box<PartialFit>,
    },

    #[error("inconsistent sampler: {0}")]
    InconsistentSampler(String),

    #[error("model format error at line {line}: {msg}")]
    Format { line: usize, msg: String },
}

pub(crate) fn check_param(
    name: &'static str,
    value: f64,
    ok: bool,
    reason: &'static str,
) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason,
        })
    }
}
