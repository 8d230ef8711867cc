use thiserror::Error;

/// Crate-wide error type. Variants map one-to-one onto the failure modes of
/// the numerical operations; the CLI maps them onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("alias: mode {mode:?} is not representable on a grid with dims {dims:?}")]
    Alias { mode: Vec<i64>, dims: Vec<usize> },

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("derivative depth {requested} exceeds the symbol's available depth {available}")]
    Depth { requested: usize, available: usize },

    #[error("symbol does not declare an h-expansion")]
    Expansion,

    #[error("dense form needs fourier dimension {dim}, cap is {cap}")]
    Cap { dim: usize, cap: usize },

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("power iteration did not converge within {0} iterations")]
    Convergence(usize),

    #[error("regression input: {0}")]
    Data(String),

    #[error("side-face extrapolation unstable: successive values differ by {0:.3e}")]
    Extrapolation(f64),

    #[error("generator symbol does not vanish at the center: max |a(x, xi0, h)| = {0:.3e}")]
    Generator(f64),

    #[error("scan resolution: {0}")]
    Resolution(String),

    #[error("exact rational input required: {0}")]
    Rationality(String),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI exit code contract: 2 config, 3 resource cap, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Cap { .. } => 3,
            _ => 4,
        }
    }
}
