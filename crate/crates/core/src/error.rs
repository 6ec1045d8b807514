use thiserror::Error;

/// Errors raised while building, assembling or solving a problem.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid boundary shape: {0}")]
    Shape(String),

    #[error("invalid electrode layout: {0}")]
    Layout(String),

    #[error("angle {theta} lies outside electrode {electrode}")]
    OutsideElectrode { electrode: usize, theta: f64 },

    #[error("no root in the admissible interval: {0}")]
    NoRoot(String),

    #[error("grid does not contain the domain with a margin of 2h: {0}")]
    Margin(String),

    #[error("under-resolved geometry on segment {0}; use a smaller h")]
    UnderResolved(String),

    #[error("flux stencil degenerate at boundary point {0}; refine h")]
    DegenerateStencil(usize),

    #[error("electrode {0} unresolved: fewer than 2 boundary points")]
    ElectrodeUnresolved(usize),

    #[error("non-positive conductivity {value} at ({x}, {y})")]
    NonPositiveConductivity { value: f64, x: f64, y: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("iterative solver stopped after {iterations} iterations with relative residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("convergence sweep failed: {0}")]
    Sweep(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors that stem from user input rather than from the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Shape(_)
                | Error::Layout(_)
                | Error::Margin(_)
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::Dimension(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
