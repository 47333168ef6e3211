//! Sequence model: pyramidal BLSTM encoder, bilinear attention, a phone
//! decoder head and an indicator decoder head sharing the encoder.
//!
//! Everything runs one utterance at a time on a [`Tape`]; batches are formed
//! by summing per-utterance gradients, so no padding or masking is needed.

pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use gradcheck::{check_gradients, GradCheckReport};
pub use loss::mtl_loss;
pub use model::{
    attend, encoder_length, AttentionMatrix, DecodeSession, EncoderOutput, ForwardOutput, Head, HeadState,
    Model, StepInput, StepOutput,
};
pub use optim::{TrainExample, Trainer};
pub use params::{CheckpointManifest, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Mat;

/// Which decoder heads exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Tasks {
    Phones,
    Features,
    #[default]
    Joint,
}

impl Tasks {
    pub fn has_phones(self) -> bool {
        matches!(self, Tasks::Phones | Tasks::Joint)
    }

    pub fn has_features(self) -> bool {
        matches!(self, Tasks::Features | Tasks::Joint)
    }
}

/// What the indicator head is fed when it consumes its own output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    /// Nearest matrix column of the posteriors.
    #[default]
    Mapped,
    /// Bernoulli draw (training) or 0.5 threshold (inference).
    Sampled,
}

impl std::str::FromStr for Feedback {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mapped" | "m" => Ok(Feedback::Mapped),
            "sampled" | "s" => Ok(Feedback::Sampled),
            _ => Err(Error::UnsupportedFormat(format!("feedback mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub encoder_units: usize,
    pub decoder_units: usize,
    pub embedding_dims: usize,
    pub dropout_prob: f64,
    pub scheduled_sampling_prob: f64,
    pub l2_decay: f64,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub input_dims: usize,
    /// Phones in the inventory, without sos / eos.
    pub phone_count: usize,
    /// Articulatory features, without the eos indicator.
    pub feature_count: usize,
    pub tasks: Tasks,
    pub feedback: Feedback,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_layers: 3,
            encoder_units: 256,
            decoder_units: 256,
            embedding_dims: 64,
            dropout_prob: 0.2,
            scheduled_sampling_prob: 0.1,
            l2_decay: 1e-5,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            input_dims: 123,
            phone_count: 39,
            feature_count: 28,
            tasks: Tasks::Joint,
            feedback: Feedback::Mapped,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("encoder_layers", self.encoder_layers),
            ("encoder_units", self.encoder_units),
            ("decoder_units", self.decoder_units),
            ("embedding_dims", self.embedding_dims),
            ("input_dims", self.input_dims),
            ("phone_count", self.phone_count),
            ("feature_count", self.feature_count),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::shape(format!("config `{name}` must be positive")));
        }
        for (name, p) in [
            ("dropout_prob", self.dropout_prob),
            ("scheduled_sampling_prob", self.scheduled_sampling_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::shape(format!("config `{name}` = {p} is not a probability")));
            }
        }
        if self.dropout_prob >= 1.0 {
            return Err(Error::shape("dropout_prob must be below 1"));
        }
        for (name, v) in [
            ("l2_decay", self.l2_decay),
            ("learning_rate", self.learning_rate),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::shape(format!("config `{name}` = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    /// Time reduction of the encoder: `2^(layers - 1)`.
    pub fn reduction_factor(&self) -> usize {
        1 << (self.encoder_layers.max(1) - 1)
    }

    /// Phone head output size (phones plus sos and eos).
    pub fn phone_outputs(&self) -> usize {
        self.phone_count + 2
    }

    /// Indicator head output size (features plus eos).
    pub fn indicator_outputs(&self) -> usize {
        self.feature_count + 1
    }
}
