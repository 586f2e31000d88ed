use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("background form is not positive: density {value:.6e} at node {node}")]
    BackgroundNotPositive { node: usize, value: f64 },

    #[error("perturbation mode (degree {degree}, order {order}) is odd but the model is restricted to even functions")]
    OddPerturbation { degree: usize, order: i64 },

    #[error("function does not match the model: {0}")]
    Mismatch(String),

    #[error("metric is not positive: minimum Monge-Ampere ratio {min_ratio:.6e}")]
    NotPositive { min_ratio: f64 },

    #[error("basic class condition fails: mean curvature deviation {residual:.3e}")]
    ClassCondition { residual: f64 },

    #[error("inadmissible state on path at s = {s}: minimum ratio {min_ratio:.3e}")]
    InadmissiblePath { s: f64, min_ratio: f64 },

    #[error("path quadrature did not converge after {doublings} doublings (last change {change:.3e})")]
    QuadratureNotConverged { doublings: usize, change: f64 },

    #[error("linearized operator is singular at t = {t}: smallest singular value {sigma_min:.3e}")]
    SingularOperator { t: f64, sigma_min: f64 },

    #[error("Newton iteration diverged at t = {t}: last residual {residual:.3e}")]
    NewtonDivergence { t: f64, residual: f64 },

    #[error("positivity lost during line search at t = {t}")]
    PositivityLost { t: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("family has {nodes} converged nodes; at least {required} uniformly spaced nodes are needed")]
    FamilyTooSparse { nodes: usize, required: usize },

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("eigenvalue cluster at {target} is not separated: nearest outside eigenvalue is {gap:.3e} away")]
    AmbiguousKernel { target: f64, gap: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
