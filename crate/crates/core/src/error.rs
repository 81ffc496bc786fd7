use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty support")]
    EmptySupport,

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("parameter `{name}` out of range: {detail}")]
    OutOfRange { name: &'static str, detail: String },

    #[error("model `{model}` does not satisfy the precondition: {detail}")]
    Precondition { model: String, detail: String },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("missing growth constant `{0}`")]
    MissingConstant(&'static str),

    #[error("non-finite state at fine step {step} (t = {time}): x = {state:?}")]
    NonFiniteState { step: usize, time: f64, state: Vec<f64> },

    #[error("non-finite Bellman value at fine step {step}, node {node}, state {state:?}")]
    NonFiniteValue { step: usize, node: String, state: Vec<f64> },

    #[error("state grid too small: {fraction:.3} of quadrature mass clamped at the box boundary")]
    StateGridTooSmall { fraction: f64 },

    #[error("node {0} has no particles")]
    EmptyNode(String),

    #[error("grids are not nested: {0}")]
    NotNested(String),

    #[error("config error at key `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
