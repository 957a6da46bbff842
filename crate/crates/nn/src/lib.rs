//! A deliberately small numerical kernel: dense row-major tensors, the fixed
//! set of layers a transformer diffusion model needs (each with a hand-written
//! backward pass), Adam, and a central-difference gradient checker.
//!
//! Everything is generic over [`Float`] so models train in `f32` and are
//! gradient-checked in `f64`.

pub mod adam;
pub mod error;
pub mod float;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod param;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{NnError, Result};
pub use float::Float;
pub use layers::{EncoderLayer, FeedForward, LayerNorm, Linear, Mlp, SelfAttention};
pub use param::{Ctx, Module, Parameter};
pub use tensor::Tensor;
