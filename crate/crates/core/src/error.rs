use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown individual id `{0}`")]
    UnknownId(String),

    #[error("comparison `{0}` is unsupported: no in-comparison samples")]
    Unsupported(String),

    #[error("every comparison is unsupported by the metric samples")]
    AllUnsupported,

    #[error("comparison `{id}` covers {frequency:.4} of sampled pairs, below gamma/2 = {threshold:.4}")]
    NotLarge { id: String, frequency: f64, threshold: f64 },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no feasible iterate after {iterations} iterations; most violated: {}", format_violations(.most_violated))]
    Infeasible {
        iterations: u64,
        most_violated: Vec<(String, f64)>,
    },

    #[error("learner `{learner}` failed: {message}")]
    Learner { learner: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_violations(v: &[(String, f64)]) -> String {
    v.iter()
        .map(|(id, r)| format!("{id}={r:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    /// True for errors caused by malformed inputs or configuration.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::Domain(_)
                | Error::UnknownId(_)
                | Error::Unsupported(_)
                | Error::AllUnsupported
                | Error::NotLarge { .. }
                | Error::Ingestion(_)
                | Error::Config(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Io(_)
        )
    }
}
