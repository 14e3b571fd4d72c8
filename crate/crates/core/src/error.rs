//! Error and runtime-monitor types shared across the crate.

use thiserror::Error;

/// Runtime monitors that can abort a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monitor {
    /// min J fell below the configured floor (or det(∇ξ) ≤ 0).
    JacobianFloor,
    /// A field picked up a NaN or infinity.
    NonFinite,
    /// A substep violated its stability bound and the step was rejected.
    StepRejected,
    /// A dissipation rate came out negative beyond round-off.
    Dissipation,
}

impl std::fmt::Display for Monitor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Monitor::JacobianFloor => write!(f, "jacobian-floor monitor"),
            Monitor::NonFinite => write!(f, "finite-field monitor"),
            Monitor::StepRejected => write!(f, "stability monitor"),
            Monitor::Dissipation => write!(f, "dissipation-sign monitor"),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid value for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{monitor} tripped at t={t:.6e} (step {step}): {details}")]
    MonitorTripped {
        monitor: Monitor,
        t: f64,
        step: u64,
        details: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("snapshot format error: {0}")]
    Snapshot(String),
}

impl SimError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Exit code contract: config/parse problems exit 2, tripped monitors exit 3,
    /// I/O problems exit 4.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config { .. } | SimError::Parse { .. } => 2,
            SimError::MonitorTripped { .. } => 3,
            SimError::Io(_) | SimError::Snapshot(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
