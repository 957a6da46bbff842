use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("attention over an empty key axis")]
    EmptyKeys,
    #[error("sinusoidal encoding needs an even dimension, got {0}")]
    OddDimension(usize),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
