//! Full-body locomotion reconstruction from a pair of pressure-sensing
//! insoles.
//!
//! Poses come from an insole-conditioned denoising diffusion model; global
//! root translation comes from a separate regressor over the insole IMUs.

pub mod baselines;
pub mod checkpoint;
pub mod conditioning;
pub mod data;
pub mod dataset;
pub mod denoiser;
pub mod diffusion;
pub mod displacement;
pub mod error;
pub mod eval;
pub mod orientation;
pub mod preprocess;
pub mod selfcheck;
pub mod sensor_layout;
pub mod synth;

pub use error::{MotionError, Result};
