use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum Error {
    /// A named condition of the construction failed. `detail` carries both sides.
    #[error("stage {stage}: condition ({condition}) violated: {detail}")]
    ConditionViolation {
        stage: u64,
        condition: String,
        detail: String,
    },
    #[error("{0} and {1} are not coprime")]
    NotCoprime(String, String),
    #[error("point or box outside the good domain: {0}")]
    OutsideGoodDomain(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("boxes {0} and {1} overlap in positive measure")]
    Overlap(usize, usize),
    #[error("names have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("parameter out of range: {0}")]
    ParameterRange(String),
    #[error("no admissible stage below the search ceiling: {0}")]
    NoAdmissibleStage(String),
    #[error("indicator undefined at a sample point: {0}")]
    IndicatorUndefined(String),
}

impl Error {
    pub fn violation(stage: u64, condition: &str, detail: impl Into<String>) -> Self {
        Error::ConditionViolation {
            stage,
            condition: condition.to_string(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
