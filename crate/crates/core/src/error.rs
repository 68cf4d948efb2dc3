use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid misaligned: A/Na = {age_step} but S/Ns = {size_step}; aligned grid needs Ns = {required_ns}")]
    GridMisaligned {
        age_step: f64,
        size_step: f64,
        required_ns: f64,
    },

    #[error("horizon {requested} is not a multiple of dt = {dt}; nearest valid horizons are {below} and {above}")]
    HorizonMisaligned {
        requested: f64,
        dt: f64,
        below: f64,
        above: f64,
    },

    #[error("operation not supported for the {0} support variant")]
    UnsupportedVariant(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("solver diverged (non-finite value) at step {step}")]
    Divergence { step: usize },

    #[error("conjugate gradient stagnated after {iterations} iterations")]
    Stagnation {
        iterations: usize,
        residual_trace: Vec<f64>,
    },

    #[error("fixed-point iteration did not converge in {iterations} iterations (last change {last_change:e})")]
    NonConvergence {
        iterations: usize,
        last_change: f64,
        history: Vec<f64>,
    },

    #[error("staircase plan rejected: endpoint below delta = {delta} on box a <= {a_star}, s in [{s1_star}, {s2_star}] (min {found})")]
    PlanRejected {
        delta: f64,
        a_star: f64,
        s1_star: f64,
        s2_star: f64,
        found: f64,
    },

    #[error("leg {leg} residual ratio {residual_ratio:e} exceeds {tolerance:e}; increase the leg count or the leg horizon")]
    LegFailure {
        leg: usize,
        residual_ratio: f64,
        tolerance: f64,
    },

    #[error("positivity violated in leg {leg} at step {step}: value {value:e} at a = {a}, s = {s}")]
    PositivityViolation {
        leg: usize,
        step: usize,
        a: f64,
        s: f64,
        value: f64,
    },

    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("invalid configuration at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("malformed binary dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::Stagnation { .. } | Error::NonConvergence { .. }
        )
    }

    /// True when the inputs were valid but the experiment missed its target.
    pub fn is_experiment(&self) -> bool {
        matches!(
            self,
            Error::LegFailure { .. } | Error::PositivityViolation { .. } | Error::PlanRejected { .. }
        )
    }
}
