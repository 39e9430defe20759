use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("graph contains a cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("duplicate node `{0}`")]
    DuplicateNode(String),

    #[error("graph already has a selection node `{0}`")]
    DuplicateSelection(String),

    #[error("graph has no selection node")]
    NoSelectionNode,

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("node sets overlap on `{0}`")]
    OverlappingSets(String),

    #[error("variable `{variable}` has cardinality {left} in one factor and {right} in another")]
    CardinalityMismatch {
        variable: String,
        left: usize,
        right: usize,
    },

    #[error("variable `{0}` is not in the factor scope")]
    NotInScope(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("variable `{variable}` has no state `{state}`")]
    UnknownState { variable: String, state: String },

    #[error("factor has zero total mass")]
    ZeroMass,

    #[error("evidence has zero probability under the model")]
    ZeroProbabilityEvidence,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("variable `{0}` has a state without a numeric representative")]
    MissingRepresentative(String),

    #[error("estimator precondition failed: {0}")]
    Precondition(String),

    #[error("stratum is empty: {0}")]
    EmptyStratum(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("repetition {index} failed: {source}")]
    Repetition {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
