use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("empty normalization axis in {0}")]
    EmptyAxis(&'static str),

    #[error("degenerate softmax slice: every entry is -inf")]
    DegenerateSlice,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("config error at line {line}: {msg}")]
    ConfigLine { line: usize, msg: String },

    #[error("input error: {0}")]
    Input(String),

    #[error("image too small: {width}x{height}, need at least {min}x{min}")]
    Resolution {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("{}: row {row}: {msg}", path.display())]
    Manifest {
        path: PathBuf,
        row: usize,
        msg: String,
    },

    #[error("label mapping error: {0}")]
    Mapping(String),

    #[error("LOSO needs at least 2 subjects, found {0}")]
    LosoInfeasible(usize),

    #[error("bad tensor file: {0}")]
    Format(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// True for errors caused by invalid configuration rather than runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::ConfigLine { .. } | Error::Mapping(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
