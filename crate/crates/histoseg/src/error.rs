use std::path::{Path, PathBuf};

use histoseg_core::Error as CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: file not found", path.display())]
    NotFound { path: PathBuf },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: malformed PNG: {message}", path.display())]
    MalformedPng { path: PathBuf, message: String },

    #[error("{}: unsupported PNG bit depth {depth}; only 8-bit images are read", path.display())]
    UnsupportedBitDepth { path: PathBuf, depth: u8 },

    #[error("{}: unsupported PNG color type {color}", path.display())]
    UnsupportedColor { path: PathBuf, color: String },

    /// A JSON, CSV, TOML or checkpoint file that could not be parsed.
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: CoreError,
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{failed} of {total} images failed")]
    Partial { failed: usize, total: usize },
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound { path: path.to_path_buf() }
        } else {
            Error::Io { path: path.to_path_buf(), source }
        }
    }

    pub(crate) fn format(path: &Path, message: impl ToString) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    /// Short stable identifier, used in the machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotFound { .. } => "not_found",
            Error::Io { .. } => "io",
            Error::MalformedPng { .. } => "malformed_png",
            Error::UnsupportedBitDepth { .. } => "unsupported_bit_depth",
            Error::UnsupportedColor { .. } => "unsupported_color",
            Error::Format { .. } => "format",
            Error::Core { source, .. } => match source.root() {
                CoreError::ShapeMismatch { .. } => "shape_mismatch",
                CoreError::InvalidImage(_) => "invalid_image",
                CoreError::InvalidConfig(_) => "invalid_config",
                CoreError::OutOfRange(_) => "out_of_range",
                CoreError::OutOfBounds { .. } => "out_of_bounds",
                CoreError::DegenerateInput(_) => "degenerate_input",
                CoreError::RankDeficient => "rank_deficient",
                CoreError::NonFiniteGradient | CoreError::Divergence { .. } => "divergence",
                CoreError::StaleCache => "stale_cache",
                CoreError::Stage { .. } => unreachable!("root strips stages"),
            },
            Error::Manifest(_) => "manifest",
            Error::Config(_) => "config",
            Error::Partial { .. } => "partial_failure",
        }
    }
}

/// Attaches a context string (typically an image id or path) to core errors.
pub(crate) trait CoreContext<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> CoreContext<T> for std::result::Result<T, CoreError> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Core {
            context: context(),
            source,
        })
    }
}
