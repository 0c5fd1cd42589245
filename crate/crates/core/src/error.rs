use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch between {left} and {right}: expected {expected}, found {found}")]
    DimensionMismatch {
        left: &'static str,
        right: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("resolvent (j*omega*I - A) is singular at omega = {omega}")]
    SingularResolvent { omega: f64 },

    #[error("state matrix is not Hurwitz (max real part of spectrum = {max_real})")]
    NotHurwitz { max_real: f64 },

    #[error("closed loop is unstable")]
    Unstable,

    #[error("H2 norm is infinite: feedthrough D is nonzero")]
    InfiniteH2,

    #[error("H-infinity bisection did not converge, bracket [{lo}, {hi}]")]
    HinfNoConvergence { lo: f64, hi: f64 },

    #[error("eigenvalue iteration did not converge for a {0}x{0} matrix")]
    EigenFailure(usize),

    #[error("Lyapunov solve failed: {0}")]
    Lyapunov(String),

    #[error("sample times must be nonempty, nondecreasing and start at t >= 0")]
    InvalidTimes,

    #[error("removing line {line} disconnects the network")]
    Disconnects { line: u32 },

    #[error("unknown line id {0}")]
    UnknownLine(u32),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("k = {k} out of range 1..={m}")]
    KOutOfRange { k: usize, m: usize },

    #[error("nominal closed loop unstable on contingencies {0:?}")]
    UnstableContingencies(Vec<u32>),

    #[error("closed loop unstable on plant {0}")]
    UnstablePlant(usize),

    #[error("no stabilizing starting gain")]
    NoStabilizingStart,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed distance matrix: {0}")]
    MalformedDistances(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
