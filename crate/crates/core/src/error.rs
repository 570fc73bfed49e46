use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },

    #[error("layer {layer}: output spatial dims would be non-positive (h_in={h_in}, p={pad}, k={k})")]
    NonPositiveOutput {
        layer: usize,
        h_in: usize,
        pad: usize,
        k: usize,
    },

    #[error("model graph: {0}")]
    InvalidGraph(String),

    #[error("invalid PU configuration: {0}")]
    InvalidPu(String),

    #[error("invalid port configuration: {0}")]
    InvalidPort(String),

    #[error("tile of layer {layer} needs {entries} URAM entries, capacity is {capacity}")]
    TileTooLarge {
        layer: usize,
        entries: u64,
        capacity: u64,
    },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("residual scale mismatch at layer {layer}: branch shift {branch}, output shift {output}")]
    ScaleMismatch {
        layer: usize,
        branch: i32,
        output: i32,
    },

    #[error("layer {layer}: kernel row of {bytes} bytes is below the 32-byte minimum transfer; lower it host-side or pad channels")]
    BelowMinimumTransfer { layer: usize, bytes: usize },

    #[error("layer {layer}: {kind} layers are not fetched through IM2COL commands")]
    NotIm2col { layer: usize, kind: &'static str },

    #[error("scheduling: {0}")]
    Schedule(String),

    #[error("brute-force oracle limited to {max} tiles, got {got}")]
    InstanceTooLarge { max: usize, got: usize },

    #[error("missing parameters for layer {0}")]
    MissingParams(usize),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
