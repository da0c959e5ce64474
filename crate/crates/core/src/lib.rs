pub mod branch;
pub mod cli;
pub mod conductor;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod instructor;
pub mod mask;
pub mod model;
pub mod nn;
pub mod scene;
pub mod service;
pub mod tensor;
pub mod training;

pub use error::{ApiError, Error, ErrorCode, Result, Stage};
