use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse: {0}")]
    Parse(#[from] serde_json::Error),

    /// A parameter or scenario violates one of its documented invariants.
    #[error("{0}")]
    Invariant(String),

    /// Same, but attributable to one specific module of the stack.
    #[error("module {index}: {what}")]
    ModuleInvariant { index: usize, what: String },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("simulation diverged at t = {t:.6} s (step {step}): {what}")]
    Diverged { t: f64, step: u64, what: String },
}

pub type Result<T> = std::result::Result<T, Error>;
