use thiserror::Error;

/// A malformed line of a configuration or fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct LineError {
    pub line: usize,
    pub msg: String,
}

pub type Result<T> = std::result::Result<T, KdsError>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum KdsError {
    #[error("extremality violated: {0}")]
    ExtremalityViolated(String),
    #[error("cosmological constant must be positive (l = {0})")]
    NonPositiveCosmologicalConstant(f64),
    #[error("r = {r} outside ({lo}, {hi})")]
    OutOfDomain { r: f64, lo: f64, hi: f64 },
    #[error("no convergence in {0}")]
    ConvergenceFailure(String),
    #[error("sin(theta) = {0:e} too close to a pole")]
    PoleProximity(f64),
    #[error("matrix is not block diagonal")]
    NotBlockDiagonal,
    #[error("need at least {need} samples, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("{0} is not a half-integer")]
    NotHalfInteger(f64),
    #[error("eigensolver failure: {0}")]
    EigensolverFailure(String),
    #[error("no sign change bracketing eigenvalue near {0}")]
    BracketingFailure(f64),
    #[error("pairing ambiguity: residual {0:e}")]
    PairingAmbiguity(f64),
    #[error("packet support overflows the grid: {0}")]
    SupportOverflow(String),
    #[error("boundary touched at t = {t}: boundary norm {mass:e}")]
    BoundaryTouch { t: f64, mass: f64 },
    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),
    #[error("stiff integration: {0}")]
    StiffIntegration(String),
    #[error("state not filtered away from zero energy: {0}")]
    UnfilteredState(String),
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("linear solver stalled: {0}")]
    SolverStall(String),
    #[error("{}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Parse(Vec<LineError>),
    #[error("invalid configuration: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("i/o: {0}")]
    Io(String),
    #[error("{module}::{op}: {source}")]
    Context {
        module: &'static str,
        op: &'static str,
        source: Box<KdsError>,
    },
}

impl KdsError {
    pub fn context(self, module: &'static str, op: &'static str) -> Self {
        KdsError::Context {
            module,
            op,
            source: Box::new(self),
        }
    }

    pub fn root(&self) -> &KdsError {
        match self {
            KdsError::Context { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code: 2 validation, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            KdsError::Parse(_)
            | KdsError::Validation(_)
            | KdsError::ExtremalityViolated(_)
            | KdsError::NonPositiveCosmologicalConstant(_)
            | KdsError::NotHalfInteger(_) => 2,
            KdsError::Io(_) => 4,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for KdsError {
    fn from(e: std::io::Error) -> Self {
        KdsError::Io(e.to_string())
    }
}
