use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("argument out of domain: {0}")]
    Domain(String),

    /// The geometric series behind the OFF-interval transform diverges at `z`.
    #[error("t3 transform diverges at z = {z} (denominator {denominator})")]
    OutOfDomain { z: f64, denominator: f64 },

    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        last: [f64; 4],
    },

    #[error("power iteration did not converge after {0} iterations")]
    PowerIteration(usize),

    #[error("queue is unstable: arrival {arrival} bit/s >= service {service} bit/s")]
    UnstableQueue { arrival: f64, service: f64 },

    #[error("trace too short: {blocks} blocks, need at least {needed}")]
    TraceTooShort { blocks: usize, needed: usize },

    #[error("energy model diverges at collision probability {0}")]
    Divergent(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
