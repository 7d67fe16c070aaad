use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: [usize; 4],
        rhs: [usize; 4],
    },

    #[error("invalid shape for {op}: {reason}")]
    Shape { op: &'static str, reason: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown ablation variant `{0}`")]
    UnknownVariant(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("invalid image {path}: {reason}")]
    Image { path: String, reason: String },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("no cached attention tensor to export")]
    NoAttention,

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::UnknownVariant(_) => ErrorKind::Usage,
            Error::NonFinite { .. } | Error::Diverged { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::Config(_) => "config",
            Error::UnknownVariant(_) => "unknown_variant",
            Error::MissingParam(_) => "missing_param",
            Error::CorruptCheckpoint(_) => "corrupt_checkpoint",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::Image { .. } => "image",
            Error::Manifest(_) => "manifest",
            Error::NoAttention => "no_attention",
            Error::Diverged { .. } => "diverged",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
