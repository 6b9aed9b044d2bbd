use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    Shape { shape: Vec<usize>, reason: &'static str },

    #[error("dtype mismatch in {0}")]
    DType(&'static str),

    #[error("element {index} is {value}, not one of -1, 0, +1")]
    NotTernary { index: usize, value: f32 },

    #[error("reserved ternary code 0b11 at byte {byte}")]
    CorruptCode { byte: usize },

    #[error("nonzero padding bits in final byte {byte}")]
    CorruptPadding { byte: usize },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("invalid value for {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("layer {layer}: {reason}")]
    Layer { layer: usize, reason: String },

    #[error("missing weights for layer {0}")]
    MissingWeights(usize),

    #[error("non-finite loss")]
    NonFiniteLoss,

    #[error("non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("{0}")]
    Missing(&'static str),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn layer(layer: usize, reason: impl Into<String>) -> Self {
        Error::Layer {
            layer,
            reason: reason.into(),
        }
    }
}
