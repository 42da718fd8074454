use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("model admission failed: {0}")]
    Admission(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A job would exceed the configured number of 2×2 matrix products.
    #[error("work budget exceeded: estimated {estimated} matrix products, budget {budget}")]
    BudgetExceeded { estimated: u128, budget: u64 },

    #[error("reference estimate too noisy: std error {std_error:.3e} exceeds {limit:.3e}; need about {required_samples} samples")]
    ReferenceTooNoisy {
        std_error: f64,
        limit: f64,
        required_samples: u64,
    },

    #[error("estimator noise {noise:.3e} exceeds resolution {resolution:.3e}; need about {required_samples} samples")]
    NoiseFloor {
        noise: f64,
        resolution: f64,
        required_samples: u64,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
