use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: n_q = {0} (must be in 1..=31)")]
    InvalidLattice(u32),

    #[error("cell ({i}, {j}) out of range for N = {n}")]
    CellOutOfRange { i: usize, j: usize, n: usize },

    #[error("lattice mismatch: N = {left} vs N = {right}")]
    SpecMismatch { left: usize, right: usize },

    #[error("invalid gate {gate}: {reason}")]
    InvalidGate { gate: String, reason: &'static str },

    #[error("invalid registers: {0}")]
    InvalidRegisters(String),

    #[error("circuit acts on {found} qubits, state has {expected}")]
    QubitCountMismatch { expected: usize, found: usize },

    #[error("state too large: {qubits} qubits exceeds the limit of {limit}")]
    StateTooLarge { qubits: usize, limit: usize },

    #[error("input not normalized: total weight {0}")]
    NotNormalized(f64),

    #[error("lattice map is not a bijection")]
    NotBijective,

    #[error("shift of {delta} cells is not smaller than N = {n}")]
    ShiftTooLarge { delta: usize, n: usize },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}
