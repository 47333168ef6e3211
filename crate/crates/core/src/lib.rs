//! Attention-based joint phone recognition and articulatory feature detection.
//!
//! The crate is organized along the processing pipeline:
//!
//! * [`frontend`]: filterbank / MFCC extraction, deltas, global normalization.
//! * [`phoneset`]: phone inventories, 61 to 39 folding, timed markup.
//! * [`artic`]: articulatory feature matrix and the indicator-to-phone algebra.
//! * [`nnet`]: pyramidal BLSTM encoder, Luong attention, two decoder heads, training.
//! * [`decoder`]: greedy and indicator decoding (sampled / mapped feedback).
//! * [`align`]: DTW hard alignment of attention, frame and segment projection.
//! * [`eval`]: edit alignment, phone error rate, feature accuracies, confusions.
//! * [`corpus`]: SPHERE / RIFF audio, TIMIT layout, synthetic corpora.
//!
//! Numerical code is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks); the aliases below name the common instantiations.

pub mod align;
pub mod artic;
pub mod binio;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod frontend;
pub mod nnet;
pub mod phoneset;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision model used for training and inference.
pub type Model32 = nnet::Model<f32>;
/// Double-precision model used for finite-difference checks.
pub type Model64 = nnet::Model<f64>;
pub type Trainer32 = nnet::Trainer<f32>;
pub type Mat32 = nnet::Mat<f32>;
pub type Mat64 = nnet::Mat<f64>;
pub type AttentionMatrix32 = nnet::AttentionMatrix<f32>;
pub type Posteriorgram32 = decoder::IndicatorPosteriorgram<f32>;
