use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("input has nonzero spatial mean ({0:.3e})")]
    NonZeroMean(f64),
    #[error("input has nonzero theta mean ({0:.3e})")]
    NonZeroThetaMean(f64),
    #[error("phase not increasing along x1: min d1(phi) = {0:.3e}")]
    DegenerateDirection(f64),
    #[error("gradient field degenerates: min |X| = {0:.3e}")]
    DegenerateGradient(f64),
    #[error("modulated input is not in the range of the singular divergence (obstruction {0:.3e})")]
    Obstructed(f64),
    #[error("singular inverse not resolved on this grid: {0}")]
    Unresolved(String),
    #[error("epsilon {eps} below resolvable limit {eps_min} for this grid")]
    EpsilonTooSmallForGrid { eps: f64, eps_min: f64 },
    #[error("modulation e^(ik l.x/eps) is not periodic for k={k}, eps={eps}")]
    NonPeriodicModulation { k: usize, eps: f64 },
    #[error("CFL violation: dt*max|u|*kmax = {0:.3}")]
    Cfl(f64),
    #[error("nondegeneracy lost at t = {0}")]
    NondegeneracyLost(f64),
    #[error("initial profile of order {0} is not polarized")]
    PolarizationViolated(usize),
    #[error("polarization drift {0:.3e} exceeds tolerance")]
    PolarizationDrift(f64),
    #[error("missing dependency: {0}")]
    MissingDependency(String),
    #[error("need at least {need} snapshots, got {got}")]
    InsufficientSnapshots { need: usize, got: usize },
    #[error("nonpositive norm in fit input")]
    NonPositiveNorm,
    #[error("time grids do not match")]
    TimeGridMismatch,
    #[error("degenerate choice: {0}")]
    DegenerateChoice(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("bad snapshot format: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
