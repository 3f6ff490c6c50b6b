use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Each variant carries a stable machine-readable code (see [`Error::code`])
/// and maps onto exactly one CLI exit status (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },
    #[error("rule {id}: pattern does not compile: {reason}")]
    BadPattern { id: String, reason: String },
    #[error("duplicate rule id {0}")]
    DuplicateId(String),
    #[error("expected a CALLSIGN span, got {0}")]
    WrongLabel(String),
    #[error("{0} span list contains overlapping spans")]
    OverlappingInput(&'static str),
    #[error("invalid span {start}..{end}: {reason}")]
    InvalidSpan {
        start: usize,
        end: usize,
        reason: String,
    },
    #[error("gold has {gold} utterances but predictions have {predicted}")]
    LengthMismatch { gold: usize, predicted: usize },
    #[error("bad timestamp {0:?}")]
    BadTime(String),
    #[error("timestamps must be non-decreasing ({0})")]
    NonMonotoneTime(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("duplicate node id {0}")]
    DuplicateNode(String),
    #[error("no path from {from} to {to}")]
    NoPath { from: String, to: String },
    #[error("invalid taxi plan: {0}")]
    InvalidPlan(String),
    #[error("empty destination query")]
    EmptyQuery,
    #[error("destination {0:?} does not resolve to any node")]
    UnresolvedDestination(String),
    #[error("mean and standard deviation must be positive (got mean={mean}, std={std})")]
    NonpositiveMoment { mean: f64, std: f64 },
    #[error("link length must be positive (got {0})")]
    NonpositiveDistance(f64),
    #[error("time must be positive (got {0})")]
    NonpositiveTime(f64),
    #[error("route has no links")]
    EmptyRoute,
    #[error("start-time offset must be non-negative (got {0})")]
    NegativeOffset(f64),
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("plan has no links")]
    EmptyPlan,
    #[error("node {0} is not on both taxi plans")]
    SpotNotShared(String),
    #[error("taxi plans do not overlap")]
    EmptyOverlap,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("speeds must be positive and finite (got {0})")]
    NonpositiveSpeed(f64),
    #[error("samples have zero log-variance")]
    ZeroVariance,
    #[error("every group has zero within-group variance")]
    DegenerateGroups,
    #[error("all observations are tied")]
    AllTied,
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub fn malformed(path: impl Into<String>, reason: impl ToString) -> Self {
        Error::MalformedFile {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Stable upper-case identifier used in JSON error reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IO_ERROR",
            Error::MalformedFile { .. } => "MALFORMED_FILE",
            Error::BadPattern { .. } => "BAD_PATTERN",
            Error::DuplicateId(_) => "DUPLICATE_ID",
            Error::WrongLabel(_) => "WRONG_LABEL",
            Error::OverlappingInput(_) => "OVERLAPPING_INPUT",
            Error::InvalidSpan { .. } => "INVALID_SPAN",
            Error::LengthMismatch { .. } => "LENGTH_MISMATCH",
            Error::BadTime(_) => "BAD_TIME",
            Error::NonMonotoneTime(_) => "NON_MONOTONE_TIME",
            Error::UnknownNode(_) => "UNKNOWN_NODE",
            Error::DuplicateNode(_) => "DUPLICATE_NODE",
            Error::NoPath { .. } => "NO_PATH",
            Error::InvalidPlan(_) => "INVALID_PLAN",
            Error::EmptyQuery => "EMPTY_QUERY",
            Error::UnresolvedDestination(_) => "UNRESOLVED_DESTINATION",
            Error::NonpositiveMoment { .. } => "NONPOSITIVE_MOMENT",
            Error::NonpositiveDistance(_) => "NONPOSITIVE_DISTANCE",
            Error::NonpositiveTime(_) => "NONPOSITIVE_TIME",
            Error::EmptyRoute => "EMPTY_ROUTE",
            Error::NegativeOffset(_) => "NEGATIVE_OFFSET",
            Error::InvalidParameter { .. } => "INVALID_PARAMETER",
            Error::EmptyPlan => "EMPTY_PLAN",
            Error::SpotNotShared(_) => "SPOT_NOT_SHARED",
            Error::EmptyOverlap => "EMPTY_OVERLAP",
            Error::TooFewSamples { .. } => "TOO_FEW_SAMPLES",
            Error::NonpositiveSpeed(_) => "NONPOSITIVE_SPEED",
            Error::ZeroVariance => "ZERO_VARIANCE",
            Error::DegenerateGroups => "DEGENERATE_GROUPS",
            Error::AllTied => "ALL_TIED",
            Error::Internal(_) => "INTERNAL",
        }
    }

    /// Process exit status: 1 for bad input, 2 for computations that cannot
    /// produce a result, 3 for broken internal invariants.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::MalformedFile { .. }
            | Error::BadPattern { .. }
            | Error::DuplicateId(_)
            | Error::WrongLabel(_)
            | Error::OverlappingInput(_)
            | Error::InvalidSpan { .. }
            | Error::LengthMismatch { .. }
            | Error::BadTime(_)
            | Error::NonMonotoneTime(_)
            | Error::UnknownNode(_)
            | Error::DuplicateNode(_)
            | Error::InvalidPlan(_)
            | Error::EmptyQuery
            | Error::NonpositiveMoment { .. }
            | Error::NonpositiveDistance(_)
            | Error::NonpositiveTime(_)
            | Error::NegativeOffset(_)
            | Error::InvalidParameter { .. }
            | Error::SpotNotShared(_)
            | Error::NonpositiveSpeed(_) => 1,
            Error::NoPath { .. }
            | Error::UnresolvedDestination(_)
            | Error::EmptyRoute
            | Error::EmptyPlan
            | Error::EmptyOverlap
            | Error::TooFewSamples { .. }
            | Error::ZeroVariance
            | Error::DegenerateGroups
            | Error::AllTied => 2,
            Error::Internal(_) => 3,
        }
    }
}

pub fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
