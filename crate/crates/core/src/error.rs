use thiserror::Error;

/// Errors produced by the energy-tree calculus.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum WrError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not Hermitian: max |M - M*| = {asymmetry:e}")]
    NotHermitian { asymmetry: f64 },

    #[error("matrix is not positive semidefinite: min eigenvalue {min_eigenvalue:e} below -{tolerance:e}")]
    NotPsd { min_eigenvalue: f64, tolerance: f64 },

    #[error("operator norm {norm} exceeds 1 + {tolerance:e}")]
    NotContraction { norm: f64, tolerance: f64 },

    #[error("A <= R fails: min eigenvalue of R - A is {min_eigenvalue:e} (tolerance {tolerance:e})")]
    NotDominated { min_eigenvalue: f64, tolerance: f64 },

    #[error("vector has zero norm")]
    ZeroVector,

    #[error("symbol {symbol} outside the alphabet 0..={max}")]
    SymbolOutOfRange { symbol: usize, max: usize },

    #[error("could not parse word {0:?}")]
    InvalidWord(String),

    #[error("contraction family is empty")]
    EmptyFamily,

    #[error("enumeration needs more than {cap} live rows (reached {rows} at depth {depth})")]
    EnumerationTooLarge { rows: usize, cap: usize, depth: usize },

    #[error("leakage not certified: alpha = {alpha} at scan depth {scan_depth} (horizon {horizon})")]
    LeakageNotCertified {
        alpha: f64,
        scan_depth: usize,
        horizon: usize,
    },

    #[error("extinction bound violated at level {level}: mass {mass:e} exceeds bound {bound:e}")]
    BoundViolated { level: usize, mass: f64, bound: f64 },

    #[error("truncation depth {depth} insufficient: median error bound {median:e} >= {required:e} (max {max:e})")]
    TruncationInsufficient {
        depth: usize,
        median: f64,
        max: f64,
        required: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, WrError>;
