//! The four sequence classifiers: shared embedding, an sRNN / LSTM / BLSTM /
//! CNN encoder, then a ReLU hidden layer and a softmax output over the three
//! operator classes.
//!
//! Recurrent encoders run over the first `true_length` positions only and
//! return the final hidden state. The CNN sees the whole padded sequence,
//! padding rows included.

mod layers;
mod model;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::OperatorClass;
use crate::numerics::NumericsError;

pub use layers::{
    blstm_forward, classify, cnn_forward, embedding_lookup, head_logits, lstm_step, predict_class,
    recurrent_forward, srnn_step, RecurrentCell,
};
pub use model::{forward_logits, Model};
pub use params::{
    init_params, CnnParams, EmbeddingParams, Encoder, HeadParams, LstmParams, ModelParams, SrnnParams,
};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("token id {id} outside embedding table of {rows} rows")]
    IdOutOfRange { id: usize, rows: usize },
    #[error("convolution kernel {kernel} longer than sequence length {len}")]
    KernelTooLarge { kernel: usize, len: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("parameter {name} has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("expected {expected} parameter tensors, found {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("sequence has {found} positions, model expects {expected}")]
    SequenceLength { expected: usize, found: usize },
    #[error("unknown architecture {0:?} (expected cnn, srnn, lstm or blstm)")]
    UnknownArchitecture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Cnn,
    Srnn,
    Lstm,
    Blstm,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Cnn,
        Architecture::Srnn,
        Architecture::Lstm,
        Architecture::Blstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Cnn => "cnn",
            Architecture::Srnn => "srnn",
            Architecture::Lstm => "lstm",
            Architecture::Blstm => "blstm",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ModelError::UnknownArchitecture(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    /// Kept vocabulary tokens (V); the embedding table has `V + 2` rows.
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden_units: usize,
    pub head_units: usize,
    pub num_classes: usize,
    pub max_len: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub dropout_rate: f64,
}

impl ModelConfig {
    pub fn new(arch: Architecture, vocab_size: usize) -> Self {
        ModelConfig {
            arch,
            vocab_size,
            embedding_dim: 100,
            hidden_units: 128,
            head_units: 64,
            num_classes: OperatorClass::COUNT,
            max_len: crate::textprep::DEFAULT_MAX_LEN,
            conv_filters: 128,
            conv_kernel: 5,
            dropout_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("embedding_dim", self.embedding_dim),
            ("hidden_units", self.hidden_units),
            ("head_units", self.head_units),
            ("max_len", self.max_len),
            ("conv_filters", self.conv_filters),
            ("conv_kernel", self.conv_kernel),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidConfig(format!("{name} must be at least 1")));
        }
        if self.num_classes != OperatorClass::COUNT {
            return Err(ModelError::InvalidConfig(format!(
                "num_classes must be {}",
                OperatorClass::COUNT
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidConfig("dropout_rate must be in [0, 1)".into()));
        }
        if self.arch == Architecture::Cnn && self.conv_kernel > self.max_len {
            return Err(ModelError::KernelTooLarge {
                kernel: self.conv_kernel,
                len: self.max_len,
            });
        }
        Ok(())
    }

    /// Width of the encoder output fed to the hidden layer.
    pub fn feature_dim(&self) -> usize {
        match self.arch {
            Architecture::Srnn | Architecture::Lstm => self.hidden_units,
            Architecture::Blstm => 2 * self.hidden_units,
            Architecture::Cnn => self.conv_filters,
        }
    }

    pub fn embedding_rows(&self) -> usize {
        self.vocab_size + 2
    }
}
