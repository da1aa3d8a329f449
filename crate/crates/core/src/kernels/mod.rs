//! Double-precision reference kernels: visual feature fusion, the
//! projection/concatenation front end, pre-norm attention blocks with
//! bias-tuned linears, stage-aware parameter freezing, AdamW, and a
//! finite-difference gradient checker.

mod fusion;
mod gradcheck;
mod model;
mod ops;
mod optim;
mod params;
mod tensor;
mod vocab;

pub use fusion::*;
pub use gradcheck::*;
pub use model::*;
pub use ops::*;
pub use optim::*;
pub use params::*;
pub use tensor::Tensor;
pub use vocab::*;

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("token {token} outside vocabulary of {vocab}")]
    TokenOutOfVocab { token: usize, vocab: usize },
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("duplicate parameter {0}")]
    DuplicateParameter(String),
    #[error("gradient supplied for frozen parameter {0}")]
    FrozenGradient(String),
    #[error("unknown training stage {0} (expected 1, 2 or 3)")]
    UnknownStage(u8),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("parameter file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
