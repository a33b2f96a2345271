use thiserror::Error;

use crate::glm::GlmError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("dataset carries oracle-only latent columns; strip them or enable include-U")]
    OracleColumns,

    #[error("include-U requested but the dataset has no latent columns")]
    MissingLatent,

    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),

    #[error("unknown coefficient '{0}'")]
    UnknownCoefficient(String),

    #[error("exact enumeration needs binary stochastic nodes; '{0}' is continuous")]
    NotEnumerable(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sensitivity cell unavailable: {0}")]
    UnavailableCell(String),

    #[error("treatment probability {p} outside (0,1) for subject {subject}, visit {visit}")]
    ProbabilityOutOfRange { subject: usize, visit: usize, p: f64 },

    #[error("no treatment model for visit {0}")]
    MissingModel(usize),

    #[error("denominator probability {p:e} below 1e-12 for subject {subject}")]
    TinyProbability { subject: usize, p: f64 },

    #[error("treatment sequence {0} is not observed; the saturated marginal model is not estimable")]
    UnobservedSequence(String),

    #[error("{skipped} of {total} draws were degenerate (limit 5%)")]
    TooManySkipped { skipped: usize, total: usize },

    #[error("invalid prior bounds for {name}: lo {lo} >= hi {hi}")]
    InvalidPrior { name: String, lo: f64, hi: f64 },

    #[error("chain segment of length {0} is too short (need >= 100)")]
    ShortChain(usize),

    #[error("constant chain: zero variance in a Geweke window")]
    ConstantChain,

    #[error(transparent)]
    Glm(#[from] GlmError),
}
