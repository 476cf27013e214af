//! Contrastive sentence encoders and sentiment classifiers on a small
//! reverse-mode autodiff tape.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix the common choices.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod heads;
pub mod objectives;
pub mod optim;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod upsample;

pub use error::{Error, Result};

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = tensor::Tape<f32>;
pub type Tape64 = tensor::Tape<f64>;
pub type EncoderParams32 = encoder::EncoderParams<f32>;
pub type EncoderParams64 = encoder::EncoderParams<f64>;
pub type HeadParams32 = heads::HeadParams<f32>;
pub type HeadParams64 = heads::HeadParams<f64>;
pub type Classifier32 = train::Classifier<f32>;
pub type Classifier64 = train::Classifier<f64>;
pub type Checkpoint32 = checkpoint::Checkpoint<f32>;
pub type Checkpoint64 = checkpoint::Checkpoint<f64>;
