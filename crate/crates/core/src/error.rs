use crate::population::Day;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("inconsistent event history for individual {individual}: {reason}")]
    InconsistentHistory { individual: usize, reason: String },

    #[error(
        "test characteristics are uninformative: sensitivity {sensitivity} + specificity \
         {specificity} must exceed 1"
    )]
    UninformativeTest { sensitivity: f64, specificity: f64 },

    #[error("stratum cleared on day {stratum} has no members at day {day}")]
    EmptyStratum { stratum: Day, day: Day },

    #[error("testing probability for stratum {stratum} on day {day} is degenerate ({reason})")]
    DegenerateStratum {
        stratum: Day,
        day: Day,
        reason: &'static str,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown scenario `{name}`; valid names: {valid}")]
    UnknownScenario { name: String, valid: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
