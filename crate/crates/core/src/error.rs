use thiserror::Error;

use crate::Stage;

#[derive(Debug, Error)]
pub enum Error {
    #[error("trace line {line}: {msg}")]
    TraceParse { line: usize, msg: String },

    #[error("unresolved shader id `{0}`")]
    UnresolvedShader(String),

    #[error("IL line {line}: {msg}")]
    IlSyntax { line: usize, msg: String },

    #[error("IL line {line}: unknown opcode `{opcode}`")]
    UnknownOpcode { line: usize, opcode: String },

    #[error("no cost for opcode `{opcode}` in the {stage} cost table")]
    MissingOpcodeCost { opcode: String, stage: Stage },

    #[error("missing {what} for active stage {stage}")]
    MissingStageData { stage: Stage, what: &'static str },

    #[error("load {load} exceeds the {stage} performance function domain (max {max})")]
    OutOfDomain { stage: Stage, load: f64, max: f64 },

    #[error("performance function needs at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("invalid performance model: {0}")]
    InvalidPerfModel(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient observations: {rows} rows for {dim} unknowns")]
    InsufficientData { rows: usize, dim: usize },

    #[error("column {0} is all zero and singular value pruning is disabled")]
    ZeroColumn(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("actual frametime must be positive, got {value} at index {index}")]
    NonPositiveActual { index: usize, value: f64 },

    #[error("online step requires online mode")]
    NotOnline,

    #[error("{0} is not calibrated")]
    Uncalibrated(&'static str),

    #[error("frequency must be positive, got {0}")]
    InvalidFrequency(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{stage} sweep never exceeded the {cap_ms} ms cap within {steps} steps")]
    CapUnreachable { stage: Stage, cap_ms: f64, steps: usize },

    #[error("{stage} sweep exceeded the {cap_ms} ms cap at its minimum load")]
    CapAtMinimum { stage: Stage, cap_ms: f64 },

    #[error("opcode `{opcode}` on {stage} measured a non-positive cost ({value} ms)")]
    NonPositiveOpcode { stage: Stage, opcode: String, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
