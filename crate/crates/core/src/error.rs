//! Error type shared by every solver.

use thiserror::Error;

use crate::noise_tree::NodeId;

pub type Result<T> = std::result::Result<T, MfgError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MfgError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("CFL violated: dt = {dt:.6e} > {limit:.6e} = 0.9*dx^2/(2*(sup a + eps) + dx*sup|b|) with dx = {dx:.6e}, sup a + eps = {diffusion:.6e}, sup|b| = {speed:.6e}")]
    Cfl {
        dt: f64,
        limit: f64,
        dx: f64,
        diffusion: f64,
        speed: f64,
    },

    #[error("numerical blow-up at time level {level}: {detail}")]
    NumericalBlowup { level: usize, detail: String },

    #[error("radius too small: maximizer at lattice boundary p = {p:.6e} (radius {radius:.6e})")]
    RadiusTooSmall { p: f64, radius: f64 },

    #[error("structural assumption violated: {0}")]
    StructuralAssumption(String),

    #[error("domain too small: shifting lost {mass_loss:.3e} of the mass")]
    DomainTooSmall { mass_loss: f64 },

    #[error("scheme failure: {0}")]
    SchemeFailure(String),

    #[error("fixed point did not converge after {} iterations (last residual {last:.3e})", residual_series.len())]
    NonConvergence { residual_series: Vec<f64>, last: f64 },

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("node {node}: {source}")]
    AtNode {
        node: NodeId,
        #[source]
        source: Box<MfgError>,
    },
}

impl MfgError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        MfgError::InvalidArgument(msg.into())
    }

    pub fn at_node(self, node: NodeId) -> Self {
        MfgError::AtNode {
            node,
            source: Box::new(self),
        }
    }

    /// The innermost error, with node tags removed.
    pub fn root_cause(&self) -> &MfgError {
        match self {
            MfgError::AtNode { source, .. } => source.root_cause(),
            other => other,
        }
    }
}
