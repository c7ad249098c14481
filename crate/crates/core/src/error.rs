use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit index {qubit} out of range for a {n_qubits}-qubit register")]
    QubitOutOfRange { qubit: usize, n_qubits: usize },

    #[error("qubit index {0} listed more than once")]
    DuplicateQubit(usize),

    #[error("parameter slot {slot} missing (parameter vector has {len} entries)")]
    MissingParameter { slot: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("state is not normalized (norm {norm})")]
    NotNormalized { norm: f64 },

    #[error("{n_qubits} qubits exceeds the limit of {limit} for this operation")]
    TooManyQubits { n_qubits: usize, limit: usize },

    #[error("invalid gate: {0}")]
    InvalidGate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("label {label} invalid for {n_classes} classes")]
    InvalidLabel { label: usize, n_classes: usize },

    #[error("readout mass over the class outcomes vanished ({mass:e})")]
    DegenerateReadout { mass: f64 },

    #[error("perturbation step cancelled the state vector")]
    DegenerateStep,

    #[error("all-zero image cannot be amplitude encoded")]
    ZeroImage,

    #[error("malformed IDX data at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
