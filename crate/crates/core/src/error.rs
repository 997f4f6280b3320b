use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid configuration: violates `{0}`")]
    Invariant(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("episode already finished after {0} TTIs")]
    EpisodeOver(usize),
    #[error("expected {expected} per-UE entries, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("{what} symbol {value} outside vocabulary of size {size}")]
    Symbol {
        what: &'static str,
        value: usize,
        size: usize,
    },
    #[error("TTI phase violation: {0}")]
    Phase(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field} value {value} outside [0, {max}]")]
pub struct EncodeError {
    pub field: &'static str,
    pub value: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeuralError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite gradient entry {0}")]
    NonFinite(f64),
    #[error("malformed parameter blob: {0}")]
    Format(String),
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("malformed configuration file: {0}")]
    ConfigParse(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupted checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("output directory is locked by another writer: {0}")]
    Locked(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("no snapshots to select from")]
    NoSnapshots,
    #[error("empty p_t grid")]
    EmptyGrid,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}
