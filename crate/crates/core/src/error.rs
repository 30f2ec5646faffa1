//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The domain descriptor does not contain a single grid node.
    #[error("domain descriptor yields no interior node")]
    EmptyDomain,

    /// An interior node sits on the lattice edge, so its boundary layer
    /// cannot be represented. The grid needs more margin around the domain.
    #[error("domain is not contained in the grid with a one-node margin (node {node})")]
    DomainExceedsGrid { node: usize },

    #[error("node {node} is not an interior node")]
    NotInterior { node: usize },

    /// A stencil reached an exterior node; the mask invariants are violated.
    #[error("node {node} has an exterior neighbor along axis {axis}")]
    MissingNeighbor { node: usize, axis: usize },

    #[error("point {point:?} lies outside the interpolation hull")]
    OutOfDomain { point: Vec<f64> },

    /// Radius falls in the regime handled by a different oracle.
    #[error("radius {radius} is outside this oracle's regime: {hint}")]
    WrongRegime { radius: f64, hint: &'static str },

    #[error("degenerate matching system: {0}")]
    DegenerateMatching(String),

    #[error("no interface bracket: {0}")]
    NoInterface(String),

    /// Iteration budget exhausted. Carries the residual history collected so far.
    #[error("no convergence after {sweeps} sweeps (residual {residual:.3e})")]
    NoConvergence {
        sweeps: usize,
        residual: f64,
        history: Vec<(usize, f64)>,
    },

    #[error("bad parameter `{name}`: {message}")]
    BadParameter { name: &'static str, message: String },

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(field: &str, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 for configuration problems, 3 for
    /// non-convergence, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse { .. } | Error::Validation { .. } | Error::BadParameter { .. } => 2,
            Error::NoConvergence { .. } => 3,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyDomain => "empty_domain",
            Error::DomainExceedsGrid { .. } => "domain_exceeds_grid",
            Error::NotInterior { .. } => "not_interior",
            Error::MissingNeighbor { .. } => "missing_neighbor",
            Error::OutOfDomain { .. } => "out_of_domain",
            Error::WrongRegime { .. } => "wrong_regime",
            Error::DegenerateMatching(_) => "degenerate_matching",
            Error::NoInterface(_) => "no_interface",
            Error::NoConvergence { .. } => "no_convergence",
            Error::BadParameter { .. } => "bad_parameter",
            Error::ConfigParse { .. } => "config_parse",
            Error::Validation { .. } => "validation",
            Error::Io(_) => "io",
        }
    }
}
