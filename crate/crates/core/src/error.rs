use thiserror::Error;

/// Errors raised by the numerical engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid quadrature spec: {0}")]
    InvalidQuadrature(String),

    #[error("integrand is not finite at node ({u_x}, {u_y})")]
    NonFinite { u_x: f64, u_y: f64 },

    #[error("pupil has zero energy over the aperture")]
    EmptyPupil,

    #[error("Zernike index {index} outside 1..={n_modes}")]
    ZernikeIndex { index: usize, n_modes: usize },

    #[error(
        "integrand under-resolved: refinement changed the result by {est_error:e} \
         (tolerance {tolerance:e}); raise the quadrature orders"
    )]
    Oscillation { est_error: f64, tolerance: f64 },

    #[error("degenerate overlap: 1 - delta^2 = {one_minus_delta_sq:e} is below {threshold:e}")]
    Degenerate {
        one_minus_delta_sq: f64,
        threshold: f64,
    },

    #[error("{block} block is singular (smallest eigenvalue {min_eigenvalue:e})")]
    SingularBlock {
        block: &'static str,
        min_eigenvalue: f64,
    },

    #[error(
        "analytic derivative dP{channel}/dl_{axis} = {analytic:e} disagrees with \
         central difference {finite_difference:e}"
    )]
    DerivativeMismatch {
        channel: usize,
        axis: char,
        analytic: f64,
        finite_difference: f64,
    },

    #[error("probabilities are off the simplex: {0}")]
    SimplexViolation(String),

    #[error("every channel probability is below the floor {floor:e}")]
    AllChannelsBelowFloor { floor: f64 },

    #[error("invalid simulation config: {0}")]
    InvalidSimulation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
