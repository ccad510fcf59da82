use thiserror::Error;

use crate::floquet::StabilityReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("segment {segment} is overdamped: radicand {radicand:e} <= 0")]
    Overdamped { segment: u8, radicand: f64 },

    #[error("invalid configuration: {}", fields.iter().map(|(f, m)| format!("{f}: {m}")).collect::<Vec<_>>().join("; "))]
    Config { fields: Vec<(String, String)> },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("no fixed point: spectral radius {:.12} is not below one", .0.spectral_radius)]
    NoFixedPoint(Box<StabilityReport>),

    #[error("variant not strictly stable (without SN: {:?}, with SN: {:?})", .no_sn.classification, .sn.classification)]
    NotStable {
        no_sn: Box<StabilityReport>,
        sn: Box<StabilityReport>,
    },

    #[error("quadrature did not converge: estimate {estimate:e}, error bound {error:e}")]
    Quadrature { estimate: f64, error: f64 },

    #[error("envelope extraction failed: {0}")]
    Envelope(String),

    #[error("trajectory {trajectory} became non-finite at step {step}")]
    EnsembleDiverged { trajectory: usize, step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            fields: vec![(field.into(), msg.into())],
        }
    }
}
