use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Domain errors. [`Error::name`] gives the stable identifier printed by the
/// command-line tool.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("negative smoothing sigma {0}")]
    NegativeSigma(f64),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("checkpoint incompatible: {0}")]
    CheckpointIncompatible(String),
    #[error("no data: {0}")]
    DataEmpty(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("ground-truth id {0} not in gallery")]
    TruthMissing(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("classifier output is not a distribution: {0}")]
    DegenerateClassifier(String),
    #[error("results mix gallery sizes {0} and {1}")]
    MixedGallerySizes(usize, usize),
    #[error("model has not been trained")]
    UntrainedModel,
    #[error("missing labels: {0}")]
    MissingLabels(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn name(&self) -> &'static str {
        match self {
            Error::MissingFile(_) => "MissingFile",
            Error::Schema(_) => "SchemaError",
            Error::Alignment(_) => "AlignmentError",
            Error::InvalidScript(_) => "InvalidScript",
            Error::InvalidScene(_) => "InvalidScene",
            Error::DegenerateCamera(_) => "DegenerateCamera",
            Error::SizeMismatch(_) => "SizeMismatch",
            Error::NegativeSigma(_) => "NegativeSigma",
            Error::Shape(_) => "ShapeError",
            Error::Numerical(_) => "NumericalError",
            Error::CheckpointIncompatible(_) => "CheckpointIncompatible",
            Error::DataEmpty(_) => "DataEmpty",
            Error::DimensionMismatch(..) => "DimensionMismatch",
            Error::TruthMissing(_) => "TruthMissing",
            Error::EmptyInput(_) => "EmptyInput",
            Error::DegenerateClassifier(_) => "DegenerateClassifier",
            Error::MixedGallerySizes(..) => "MixedGallerySizes",
            Error::UntrainedModel => "UntrainedModel",
            Error::MissingLabels(_) => "MissingLabels",
            Error::Config(_) => "ConfigError",
            Error::Io { .. } => "IoError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
