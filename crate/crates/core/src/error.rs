use thiserror::Error;

/// Errors raised across the crate.
///
/// Each variant maps onto a stable [`ErrorCategory`] so front ends can turn
/// failures into machine-readable categories and exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {shapes}")]
    ShapeMismatch { op: &'static str, shapes: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("function under gradient check is not deterministic")]
    NonDeterministic,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("out-of-vocabulary word {0:?}")]
    UnknownWord(String),

    #[error("invalid layer name {0:?}")]
    InvalidLayer(String),

    #[error("invalid layer range {0:?}")]
    InvalidLayerRange(String),

    #[error("layer {0} is not in the registry")]
    UnknownLayer(String),

    #[error("registry mismatch: {0}")]
    RegistryMismatch(String),

    #[error("non-finite loss at step {step}")]
    DivergedAt { step: usize },

    #[error("non-finite sample at denoising step {step}")]
    SamplingDiverged { step: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// Coarse grouping of [`Error`] variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Numeric,
    Argument,
    Layer,
    Format,
    Io,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Numeric => "numeric",
            ErrorCategory::Argument => "argument",
            ErrorCategory::Layer => "layer",
            ErrorCategory::Format => "format",
            ErrorCategory::Io => "io",
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::NonFinite { .. }
            | Error::NonDeterministic
            | Error::DivergedAt { .. }
            | Error::SamplingDiverged { .. } => ErrorCategory::Numeric,
            Error::ShapeMismatch { .. }
            | Error::NotScalar(_)
            | Error::InvalidArgument(_)
            | Error::UnknownWord(_) => ErrorCategory::Argument,
            Error::InvalidLayer(_)
            | Error::InvalidLayerRange(_)
            | Error::UnknownLayer(_)
            | Error::RegistryMismatch(_) => ErrorCategory::Layer,
            Error::Format(_) | Error::Json(_) => ErrorCategory::Format,
            Error::Io(_) | Error::Image(_) => ErrorCategory::Io,
        }
    }

    pub(crate) fn shape(op: &'static str, shapes: &[&[usize]]) -> Self {
        let shapes = shapes
            .iter()
            .map(|s| format!("{s:?}"))
            .collect::<Vec<_>>()
            .join(" vs ");
        Error::ShapeMismatch { op, shapes }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
