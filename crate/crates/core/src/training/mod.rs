//! Cross-entropy loss, SGD / Adam, the seeded mini-batch loop and checkpoint
//! files.

mod checkpoint;
mod history;
mod optim;
mod trainer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::OperatorClass;
use crate::models::ModelError;
use crate::numerics::floor_prob;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointError, ModelCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use history::{read_history_csv, write_history_csv, HISTORY_HEADER};
pub use optim::{optimizer_step, OptimizerState};
pub use trainer::{select_best, train, Trainer};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonfiniteLoss { epoch: usize, batch: usize },
    #[error("parameter {index}: expected {expected} values, found {found}")]
    ShapeMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(TrainError::InvalidConfig(format!("unknown optimizer {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectBy {
    #[default]
    ValidationAccuracy,
    ValidationLoss,
}

impl fmt::Display for SelectBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectBy::ValidationAccuracy => "validation_accuracy",
            SelectBy::ValidationLoss => "validation_loss",
        })
    }
}

impl FromStr for SelectBy {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "validation_accuracy" | "val_acc" => Ok(SelectBy::ValidationAccuracy),
            "validation_loss" | "val_loss" => Ok(SelectBy::ValidationLoss),
            _ => Err(TrainError::InvalidConfig(format!("unknown selection metric {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub select_best_by: SelectBy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 20,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            select_best_by: SelectBy::ValidationAccuracy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must be in [0, 1)");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

/// Metrics recorded after each epoch. Epochs count from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_loss: f64,
    pub validation_accuracy: f64,
}

/// `-ln(max(p[label], 1e-12))`. A NaN probability gives a NaN loss.
pub fn cross_entropy(probs: &[f64], label: OperatorClass) -> f64 {
    -floor_prob(probs[label.code()]).ln()
}

/// Mean cross-entropy over a batch; 0 for an empty batch.
pub fn mean_cross_entropy(batch: &[([f64; 3], OperatorClass)]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().map(|(p, l)| cross_entropy(p, *l)).sum::<f64>() / batch.len() as f64
}
