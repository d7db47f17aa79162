use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("negative or non-finite input in {what}: {value}")]
    NegativeInput { what: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("divergent integral: {0}")]
    Divergent(String),

    #[error("dominating mechanism violated at type {type_index}, z = {z}: local {local} < minorant {minorant}")]
    DominationViolated {
        type_index: usize,
        z: f64,
        local: f64,
        minorant: f64,
    },

    #[error("Grey's condition fails: limit of the cumulant is infinite")]
    GreyConditionFails,

    #[error("supercritical mechanism (beta* = {beta_star}); ergodicity quantities are undefined")]
    Supercritical { beta_star: f64 },

    #[error("blow-up: {what} exceeded ceiling {ceiling} at t = {t}")]
    BlowUp { what: &'static str, ceiling: f64, t: f64 },

    #[error("ODE solver failure: {0}")]
    Solver(String),

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("limit ladder failed to stabilise: last difference {last_diff} after lambda = {lambda}")]
    NotStabilized { lambda: f64, last_diff: f64 },

    #[error("sample count {n} exceeds assignment cap {cap}")]
    CapExceeded { n: usize, cap: usize },

    #[error("empty sample set")]
    EmptySamples,

    #[error("scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Input-validation errors, as opposed to numerical failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::NegativeInput { .. }
                | Error::InvalidParameter(_)
                | Error::Divergent(_)
                | Error::Scenario(_)
                | Error::Json(_)
                | Error::EmptySamples
                | Error::CapExceeded { .. }
        )
    }
}
