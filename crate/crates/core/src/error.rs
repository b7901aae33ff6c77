use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("time {t} outside the admissible range [{lo}, {hi}]")]
    Range { t: f64, lo: f64, hi: f64 },

    #[error("singular coefficient: {0}")]
    Singularity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("non-finite state at step {step}")]
    Divergence { step: usize },

    #[error("training diverged at step {step}: loss {loss}")]
    Training { step: usize, loss: f64 },

    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    #[error("time {0} was not recorded in the trajectory")]
    Lookup(f64),

    #[error("weight file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
