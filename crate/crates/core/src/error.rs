use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("duplicate row for unit {unit} in year {year}")]
    DuplicateRecord { unit: String, year: i32 },

    #[error("non-positive area {area} for unit {unit} in year {year}")]
    NonPositiveArea { unit: String, year: i32, area: f64 },

    #[error("crosswalk ranges overlap for source unit {source_unit}: {first:?} and {second:?}")]
    OverlappingCrosswalk {
        source_unit: String,
        first: (i32, i32),
        second: (i32, i32),
    },

    #[error("crosswalk target {0} is not a unit in the reference year")]
    UnknownCrosswalkTarget(String),

    #[error("unit {unit} has no zone in year {year}")]
    MissingZone { unit: String, year: i32 },

    #[error("no zone partition is valid in year {0}")]
    UncoveredYear(i32),

    #[error("year {0} is outside the panel")]
    YearOutOfRange(i32),

    #[error("empty window {0}..={1}")]
    EmptyWindow(i32, i32),

    #[error("no units survive: {0}")]
    NoUnits(String),

    #[error("statistic undefined: {0}")]
    Degenerate(String),

    #[error("sample covariance is singular (collinear sample)")]
    SingularCovariance,

    #[error("pilot density is zero at sample point {0}")]
    ZeroPilot(usize),

    #[error("every grid node is empty; bandwidth too small for the grid span")]
    EmptyField,

    #[error("no candidate produced a usable field")]
    NoViableCandidate,

    #[error("no attractor holds the minimum share of units")]
    NoAttractor,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
