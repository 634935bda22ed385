use std::path::PathBuf;

/// Errors raised by the reconstruction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("dimension {0} is not supported here")]
    UnsupportedDimension(usize),

    #[error("point {point:?} lies outside the grid extents")]
    OutsideDomain { point: Vec<f64> },

    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("conductivity {value} at node {node} outside bounds [{min}, {max}]")]
    ConductivityBounds {
        node: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("singular data: det = {det:e} below threshold {threshold:e} at {count} node(s), first node {node}")]
    Singular {
        det: f64,
        threshold: f64,
        node: usize,
        count: usize,
    },

    #[error("frame not orthonormal: deviation {deviation:e}")]
    NotOrthonormal { deviation: f64 },

    #[error("boundary minimum of the illumination is attained only at corner node(s) {nodes:?}; adjust the illumination")]
    CornerMinimum { nodes: Vec<usize> },

    #[error("incomplete Fourier lattice, missing modes: {missing:?}")]
    IncompleteLattice { missing: Vec<String> },

    #[error("oscillation under-resolved: {nodes_per_period:.2} nodes per period, need at least 8 (spacing <= {required_spacing:e})")]
    UnderResolved {
        nodes_per_period: f64,
        required_spacing: f64,
    },

    #[error("no covering reaches c0 = {target:e}: best achievable {best:e}, violation for x1 in [{lo}, {hi}]")]
    Covering {
        target: f64,
        best: f64,
        lo: f64,
        hi: f64,
    },

    #[error("segment from {from:?} to {to:?} cannot be covered by the subdomains")]
    Uncoverable { from: Vec<f64>, to: Vec<f64> },

    #[error("rotation drift {drift:e} exceeds limit {limit:e}")]
    Drift { drift: f64, limit: f64 },

    #[error("{failed} of {total} nodes failed to reconstruct")]
    TooManyFailures { failed: usize, total: usize },

    #[error("{label}: {source}")]
    Context {
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach a label such as the data set or stage name.
    pub fn context(self, label: impl Into<String>) -> Self {
        Error::Context {
            label: label.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error below any labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
