use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} holds {expected} values but {actual} were given")]
    ShapeData {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("variable belongs to tape {var_tape}, not tape {tape}")]
    Lineage { var_tape: u64, tape: u64 },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("function is not deterministic: {first} != {second}")]
    Determinism { first: f64, second: f64 },
    #[error("step {step} outside schedule range 0..={total}")]
    ScheduleRange { step: u64, total: u64 },
    #[error("invalid schedule: {0}")]
    Schedule(String),
}
