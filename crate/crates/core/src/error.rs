use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("time must be positive, got t = {0}")]
    NonPositiveTime(f64),

    #[error("initial dual point is outside the constraint set (distance {distance:e})")]
    InitialPointOutsideDomain { distance: f64 },

    #[error("timer value {tau} outside [{lower}, {upper}]")]
    TimerOutOfRange { tau: f64, lower: f64, upper: f64 },

    #[error("state is not in the jump set")]
    NotInJumpSet,

    #[error("saddle reference did not reach tolerance {tol:e}: best residual {residual:e}")]
    ReferenceNotConverged { tol: f64, residual: f64 },

    #[error("rate fit needs at least {needed} positive samples in the window, found {found}")]
    TooFewSamples { needed: usize, found: usize },

    #[error("missing reference fixture {0} (offline mode)")]
    MissingFixture(String),

    #[error("mismatched game specifications: {0}")]
    MismatchedGames(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("config serialization error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
