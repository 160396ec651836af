use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} holds {expected} elements but {actual} values were given")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("invalid shape {0:?}: extents must be positive")]
    InvalidShape(Vec<usize>),
    #[error(
        "conv2d: extent {extent} with pad {pad}, kernel {kernel}, stride {stride} \
         leaves no valid output position"
    )]
    ConvGeometry {
        extent: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    #[error("label {label} at batch index {index} is outside [0, {classes})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward was already run on this tape")]
    TapeConsumed,
    #[error("batchnorm: eval mode requested but no running statistics were recorded")]
    NoRunningStats,
    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),
}
