use thiserror::Error;

#[derive(Debug, Error)]
pub enum WotError {
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid parameters: {0}")]
    Params(String),

    #[error("endpoint masses differ: {mass0} vs {mass1}")]
    MassMismatch { mass0: f64, mass1: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("conjugate gradient stalled after {iterations} iterations (relative residual {residual:e})")]
    CgStagnation { iterations: usize, residual: f64 },

    #[error(
        "prox bracket failure for rho_bar={rho_bar}, |w_bar|={w_norm}, step={step}, gamma={gamma_weight}"
    )]
    ProxBracket {
        rho_bar: f64,
        w_norm: f64,
        step: f64,
        gamma_weight: f64,
    },

    #[error("brute-force minimizer hit the search box boundary at ({rho}, {w})")]
    SearchBoxBoundary { rho: f64, w: f64 },

    #[error("integrity check failed: {0}")]
    Integrity(String),
}

pub type Result<T> = std::result::Result<T, WotError>;
