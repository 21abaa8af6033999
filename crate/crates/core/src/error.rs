use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {0} is not inside the open disk")]
    OutsideDisk(f64),
    #[error("boundary points must be pairwise distinct")]
    CoincidentPoints,
    #[error("gromov product of a point with itself is infinite")]
    InfiniteProduct,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("anchors are not in strict cyclic order")]
    AnchorOrder,
    #[error("generator {index} is not parabolic (|tr|^2 = {trace_sq})")]
    NotParabolic { index: usize, trace_sq: f64 },
    #[error("ping-pong check failed: {0}")]
    PingPong(String),
    #[error("curvature pinching violated: {0}")]
    Pinching(String),
    #[error("displacement {requested} exceeds the reachable displacement {max} at the maximal turning height")]
    DisplacementTooLarge { requested: f64, max: f64 },
    #[error("point is outside the coding set K of the block")]
    OutsideK,
    #[error("limit point did not converge after {0} blocks")]
    NoConvergence(usize),
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("eigenfunction is not positive at node {index} (value {value:e})")]
    NotPositive { index: usize, value: f64 },
    #[error("bracket does not enclose a root: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    BracketFailure { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("spectral gap collapsed at t = {0}")]
    GapCollapse(f64),
    #[error("fit quality too low: R^2 = {0}")]
    PoorFit(f64),
    #[error("budget exceeded; largest reachable value {0}")]
    BudgetExceeded(f64),
    #[error("horoball candidates exhausted")]
    CandidatesExhausted,
    #[error("resolvent ill-conditioned at t = {0}")]
    ResolventIllConditioned(f64),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
