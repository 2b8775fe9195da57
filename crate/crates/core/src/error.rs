use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("rectangle at ({row}, {col}) of size {height}x{width} exceeds a {image_height}x{image_width} image")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
        image_height: usize,
        image_width: usize,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("stain basis is rank deficient")]
    RankDeficient,

    #[error("non-finite gradient; optimizer step rejected")]
    NonFiniteGradient,

    #[error("training diverged at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("forward cache does not belong to this model state")]
    StaleCache,

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: &[usize], found: &[usize]) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Strips any stage annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
