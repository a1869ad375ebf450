use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("CFL bound violated: dt = {dt:.6e} exceeds 0.5*dx = {limit:.6e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("chart domain violated: {0}")]
    ChartDomain(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("field shape mismatch: {0}")]
    Shape(String),

    #[error("support violation: {0}")]
    Support(String),

    #[error("unsupported background: {0}")]
    UnsupportedBackground(String),

    #[error("precondition violated: {name} (measured {measured:.3e}, tolerance {tol:.3e})")]
    Precondition {
        name: String,
        measured: f64,
        tol: f64,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("evolution error: {0}")]
    Evolution(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
