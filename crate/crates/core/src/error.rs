use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("{op}: invalid window {window} for spatial extents {height}x{width}")]
    InvalidWindow {
        op: &'static str,
        window: usize,
        height: usize,
        width: usize,
    },

    #[error("label {label} at position {index} is out of range for {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("degenerate (zero-norm) kernel at layer {layer}, task {task}, kernel {kernel}")]
    DegenerateKernel {
        layer: usize,
        task: usize,
        kernel: usize,
    },

    #[error("cosine similarity of a zero-norm vector is undefined")]
    ZeroNorm,

    #[error("kernel bank for layer {layer}, task {task}, kernel {kernel} is empty")]
    EmptyBank {
        layer: usize,
        task: usize,
        kernel: usize,
    },

    #[error("{what} index {index} out of range (limit {limit}){context}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
        context: String,
    },

    #[error("mixing coefficient {0} is outside [0, 1]")]
    InvalidPhi(f64),

    #[error("threshold {0} is outside [0.1, 0.9]")]
    InvalidThreshold(f64),

    #[error("task {task}: {reason}")]
    Architecture { task: usize, reason: String },

    #[error("task {task}: {source}")]
    Task {
        task: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{path}: malformed meta: {reason}")]
    MalformedMeta { path: PathBuf, reason: String },

    #[error("{path}: truncated data, expected {expected} bytes, found {actual}")]
    TruncatedData {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}:{line}: label {label} out of range for {classes} classes")]
    LabelFile {
        path: PathBuf,
        line: usize,
        label: String,
        classes: usize,
    },

    #[error("dataset too small to split: {0} examples (need at least 10)")]
    TooFewExamples(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn in_task(self, task: usize) -> Self {
        match self {
            e @ Error::Task { .. } => e,
            other => Error::Task {
                task,
                source: Box::new(other),
            },
        }
    }
}
