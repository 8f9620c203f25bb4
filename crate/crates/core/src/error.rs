use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema violation: {0}")]
    Schema(String),

    #[error("dangling adjacency: resource `{resource}` referenced in `{field}` does not exist")]
    DanglingAdjacency { resource: String, field: &'static str },

    #[error("duplicate resource id `{0}`")]
    DuplicateResource(String),

    #[error("overlapping parallel groups: resource `{resource}` ({field})")]
    OverlappingGroups { resource: String, field: &'static str },

    #[error("invalid value for resource `{resource}` in `{field}`")]
    InvalidResource { resource: String, field: &'static str },

    #[error("unknown resource `{0}`")]
    UnknownResource(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("train `{0}` has no successor toward its destination")]
    NoSuccessor(String),

    #[error("action {action} is masked out for train `{train}`")]
    MaskedAction { train: String, action: u8 },

    #[error("simulator contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),

    #[error("empty action mask")]
    EmptyMask,

    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),

    #[error("could not place trains after {0} attempts")]
    PlacementFailed(usize),

    #[error("empty delay table")]
    EmptyTable,

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
