use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semidefinite: pivot {index} is {value:e}")]
    NotPsd { index: usize, value: f64 },

    #[error("innovation covariance is singular (condition number {0:e})")]
    SingularInnovation(f64),

    #[error("eigenvalue iteration did not converge (residual {0:e})")]
    NoConvergence(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("system is not observable (rank {rank} of {dim})")]
    NotObservable { rank: usize, dim: usize },

    #[error("importance weights are degenerate: {0}")]
    DegenerateWeights(String),

    #[error("observation {symbol} at step {step} has zero probability under the model")]
    ImpossibleObservation { step: usize, symbol: usize },

    #[error("training diverged at step {step} (loss {loss}){}", checkpoint_note(.checkpoint))]
    Diverged {
        step: usize,
        loss: f64,
        checkpoint: Option<String>,
    },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(String),
}

fn checkpoint_note(path: &Option<String>) -> String {
    match path {
        Some(p) => format!("; last good parameters written to {p}"),
        None => String::new(),
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
