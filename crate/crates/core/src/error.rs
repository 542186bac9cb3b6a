use thiserror::Error;

use crate::scheme::SchemeReport;
use crate::variational::IterationLog;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or input violates a hypothesis of the problem. The first
    /// field names the rule that was broken.
    #[error("{rule}: {detail}")]
    Invalid { rule: &'static str, detail: String },

    #[error("empty interior: {0}")]
    EmptyInterior(String),

    #[error("minimizer did not converge after {iters} iterations (last variation norm {last_norm:.3e})")]
    NotConverged {
        iters: usize,
        last_norm: f64,
        log: Box<IterationLog>,
    },

    #[error(
        "scheme schedule exhausted before the Cauchy test passed (last gap {last_gap:.3e}, threshold {threshold:.3e})"
    )]
    ScheduleExhausted {
        last_gap: f64,
        threshold: f64,
        report: Box<SchemeReport>,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(rule: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            rule,
            detail: detail.into(),
        }
    }
}
