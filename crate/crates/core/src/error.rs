use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // model construction
    #[error("duplicate variable name `{0}`")]
    DuplicateName(String),
    #[error("variable `{name}` has inverted bounds [{lo}, {hi}]")]
    InvertedBounds { name: String, lo: f64, hi: f64 },
    #[error("variable reference does not belong to this model")]
    ForeignVariable,
    #[error("model is frozen")]
    Frozen,
    #[error("model must be frozen before emission")]
    NotFrozen,
    #[error("assignment is missing variable `{0}`")]
    MissingVariable(String),
    #[error("binary `{name}` has non-integral value {value}")]
    NonIntegralBinary { name: String, value: f64 },

    // data and architecture
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("column `{column}` is not numeric at line {line}")]
    NonNumericFeature { column: String, line: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("nonpositive dimension at layer {layer}: {detail}")]
    NonpositiveDimension { layer: usize, detail: String },
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    // builders
    #[error("bounds missing for layer {0}")]
    BoundsMissing(usize),
    #[error("ill-posed ReLU bounds [{lo}, {hi}]: need lo <= 0 <= hi")]
    IllPosedBounds { lo: f64, hi: f64 },
    #[error("unbounded activation in quantized product")]
    UnboundedActivation,
    #[error("empty pooling window")]
    EmptyWindow,
    #[error("mode unsupported: {0}")]
    ModeUnsupported(String),
    #[error("big-M {m} is smaller than |{bound}| required at layer {layer}")]
    BigMTooSmall { layer: usize, bound: f64, m: f64 },
    #[error("index out of range: {0}")]
    OutOfRange(String),

    // emission and solutions
    #[error("bilinear constraint terms cannot be written in this format")]
    BilinearUnsupported,
    #[error("unknown variable `{0}` in solution")]
    UnknownVariable(String),
    #[error("solution is missing {count} variables (first: `{first}`)")]
    IncompleteSolution { count: usize, first: String },

    // reconstruction and audit
    #[error("audit failed: {0}")]
    AuditFailure(String),
    #[error("root layer pruned (gamma[1] = 0)")]
    RootLayerPruned,

    // oracle
    #[error("{count} binaries exceed the enumeration limit of {limit}")]
    TooManyBinaries { count: usize, limit: usize },
    #[error("no feasible assignment")]
    NoFeasibleAssignment,

    // pipeline
    #[error("config error: {0}")]
    Config(String),
    #[error("solver subprocess failed: {0}")]
    Subprocess(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
