use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed problem spec: {0}")]
    Parse(String),
    #[error("invalid problem spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("distribution is not identifiable: rank(A) = {rank} < n = {n}")]
    NotIdentifiable { rank: usize, n: usize },
    #[error("arm {arm} has not been pulled yet")]
    UnpulledArm { arm: usize },
    #[error("output {output} of arm {arm} has zero probability under the model")]
    SingularModel { arm: usize, output: usize },
    #[error("Fisher information matrix is singular (condition number {condition:e})")]
    SingularFisher { condition: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no lattice point yields a non-singular Fisher matrix")]
    NoValidAllocation,
    #[error("step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn at_step(self, step: u64) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
