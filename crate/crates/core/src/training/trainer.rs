use rayon::prelude::*;

use super::{optimizer_step, EpochRecord, ModelCheckpoint, OptimizerState, SelectBy, TrainConfig, TrainError};
use crate::corpus::{LabeledRecord, OperatorClass, SplitDataset};
use crate::models::{forward_logits, predict_class, Model, ModelConfig, ModelError, ModelParams};
use crate::numerics::{Gradients, Graph, Var, XorShiftRng};
use crate::textprep::{Preprocessor, TokenSequence};

const ORDER_STREAM: u64 = 0x4F52_4445;
const DROPOUT_STREAM: u64 = 0x4452_4F50;

type Sample = (TokenSequence, OperatorClass);

struct SamplePass {
    loss: f64,
    grads: Gradients,
    vars: ModelParams<Var>,
    rows: Vec<usize>,
}

fn sample_pass(model: &Model, seq: &TokenSequence, label: OperatorClass, rng: Option<XorShiftRng>) -> Result<SamplePass, ModelError> {
    let mut g = Graph::new();
    let (vars, compact, rows) = model.bind_compact(&mut g, seq, true)?;
    let mut rng = rng;
    let logits = forward_logits(&mut g, model.config(), &vars, &compact, rng.as_mut())?;
    let loss = g.softmax_cross_entropy(logits, label.code())?;
    let grads = g.backward(loss)?;
    Ok(SamplePass {
        loss: g.value(loss).data()[0],
        grads,
        vars,
        rows,
    })
}

/// Mean clamped cross-entropy and accuracy of `model` over `samples`.
fn pass_metrics(model: &Model, samples: &[Sample]) -> Result<(f64, f64), ModelError> {
    let probs: Vec<[f64; 3]> = samples
        .par_iter()
        .map(|(seq, _)| model.predict_proba(seq))
        .collect::<Result<_, _>>()?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (p, (_, label)) in probs.iter().zip(samples) {
        loss += super::cross_entropy(p, *label);
        correct += usize::from(predict_class(p) == *label);
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Index of the best record. Ties go to the earliest epoch.
pub fn select_best(history: &[EpochRecord], by: SelectBy) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in history.iter().enumerate() {
        let better = match best.map(|b| &history[b]) {
            None => true,
            Some(b) => match by {
                SelectBy::ValidationAccuracy => r.validation_accuracy > b.validation_accuracy,
                SelectBy::ValidationLoss => r.validation_loss < b.validation_loss,
            },
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Epoch-at-a-time training driver. Only the train and validation parts of
/// the split are ever read.
pub struct Trainer {
    model: Model,
    config: TrainConfig,
    preprocessor: Preprocessor,
    state: OptimizerState,
    train_set: Vec<Sample>,
    validation_set: Vec<Sample>,
    order: Vec<usize>,
    order_rng: XorShiftRng,
    grads: Vec<Vec<f64>>,
    history: Vec<EpochRecord>,
    best: Option<ModelCheckpoint>,
}

impl Trainer {
    pub fn new(
        model_config: ModelConfig,
        config: TrainConfig,
        split: &SplitDataset,
        preprocessor: Preprocessor,
    ) -> Result<Self, TrainError> {
        let model = Model::init(model_config, config.seed)?;
        Self::with_model(model, config, split, preprocessor)
    }

    /// Starts from existing parameters instead of a fresh initialisation.
    pub fn with_model(
        model: Model,
        config: TrainConfig,
        split: &SplitDataset,
        preprocessor: Preprocessor,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let mc = model.config();
        if mc.vocab_size != preprocessor.vocabulary.len() {
            return Err(TrainError::InvalidConfig(format!(
                "model vocab_size {} but vocabulary has {} tokens",
                mc.vocab_size,
                preprocessor.vocabulary.len()
            )));
        }
        if mc.max_len != preprocessor.max_len {
            return Err(TrainError::InvalidConfig(format!(
                "model max_len {} but preprocessor max_len {}",
                mc.max_len, preprocessor.max_len
            )));
        }
        if split.train().is_empty() {
            return Err(TrainError::EmptySplit("train"));
        }
        if split.validation().is_empty() {
            return Err(TrainError::EmptySplit("validation"));
        }
        let encode = |recs: &[LabeledRecord]| -> Vec<Sample> {
            recs.iter().map(|r| (preprocessor.encode(&r.summary), r.class)).collect()
        };
        let train_set = encode(split.train());
        let validation_set = encode(split.validation());
        let grads = model.params().flatten().iter().map(|t| vec![0.0; t.numel()]).collect();
        Ok(Trainer {
            order: (0..train_set.len()).collect(),
            order_rng: XorShiftRng::derived(config.seed, ORDER_STREAM),
            model,
            config,
            preprocessor,
            state: OptimizerState::new(),
            train_set,
            validation_set,
            grads,
            history: Vec::new(),
            best: None,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn train_len(&self) -> usize {
        self.train_set.len()
    }

    pub fn best_checkpoint(&self) -> Option<&ModelCheckpoint> {
        self.best.as_ref()
    }

    /// Shuffles, runs every mini-batch, then records full-pass metrics.
    pub fn run_epoch(&mut self) -> Result<EpochRecord, TrainError> {
        let epoch = self.history.len() + 1;
        self.order_rng.shuffle(&mut self.order);
        let order = std::mem::take(&mut self.order);
        let result = order
            .chunks(self.config.batch_size)
            .enumerate()
            .try_for_each(|(b, batch)| self.step(batch, epoch, b + 1).map(|_| ()));
        self.order = order;
        result?;

        let (train_loss, train_accuracy) = pass_metrics(&self.model, &self.train_set)?;
        let (validation_loss, validation_accuracy) = pass_metrics(&self.model, &self.validation_set)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            train_accuracy,
            validation_loss,
            validation_accuracy,
        };
        self.history.push(record.clone());
        if select_best(&self.history, self.config.select_best_by) == Some(epoch - 1) {
            self.best = Some(self.checkpoint(epoch));
        }
        Ok(record)
    }

    /// One optimizer step on the given training-set indices. Returns the mean
    /// batch loss before the update.
    pub fn train_batch(&mut self, indices: &[usize]) -> Result<f64, TrainError> {
        self.step(indices, self.history.len() + 1, 1)
    }

    fn step(&mut self, indices: &[usize], epoch: usize, batch: usize) -> Result<f64, TrainError> {
        let model = &self.model;
        let rate = model.config().dropout_rate;
        let seed = self.config.seed;
        let samples = &self.train_set;
        let passes: Vec<SamplePass> = indices
            .par_iter()
            .enumerate()
            .map(|(pos, &i)| {
                let rng = (rate > 0.0).then(|| {
                    let stream = ((epoch as u64) << 40) ^ ((batch as u64) << 20) ^ pos as u64;
                    XorShiftRng::derived(seed ^ DROPOUT_STREAM, stream)
                });
                let (seq, label) = &samples[i];
                sample_pass(model, seq, *label, rng)
            })
            .collect::<Result<_, _>>()?;

        for buf in &mut self.grads {
            buf.fill(0.0);
        }
        let dim = model.config().embedding_dim;
        let mut loss = 0.0;
        for pass in &passes {
            loss += pass.loss;
            let vars = pass.vars.flatten();
            if let Some(t) = pass.grads.get(*vars[0]) {
                let table = &mut self.grads[0];
                for (k, &row) in pass.rows.iter().enumerate() {
                    let src = &t.data()[k * dim..(k + 1) * dim];
                    for (d, s) in table[row * dim..(row + 1) * dim].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            for (buf, v) in self.grads.iter_mut().zip(&vars).skip(1) {
                pass.grads.accumulate_into(**v, buf);
            }
        }
        let n = indices.len().max(1) as f64;
        loss /= n;
        if !loss.is_finite() {
            return Err(TrainError::NonfiniteLoss { epoch, batch });
        }
        for buf in &mut self.grads {
            buf.iter_mut().for_each(|g| *g /= n);
        }
        let mut params = self.model.params_mut().flatten_mut();
        optimizer_step(&mut params, &self.grads, &mut self.state, &self.config)?;
        Ok(loss)
    }

    fn checkpoint(&self, epoch: usize) -> ModelCheckpoint {
        ModelCheckpoint {
            model: self.model.clone(),
            preprocessor: self.preprocessor.clone(),
            epoch,
        }
    }

    /// The best checkpoint so far (the current model if no epoch has run)
    /// and the full history.
    pub fn finish(self) -> (ModelCheckpoint, Vec<EpochRecord>) {
        let best = match self.best {
            Some(b) => b,
            None => self.checkpoint(0),
        };
        (best, self.history)
    }
}

/// Trains for `config.epochs` epochs and returns the best checkpoint with the
/// per-epoch history.
pub fn train(
    model_config: ModelConfig,
    config: TrainConfig,
    split: &SplitDataset,
    preprocessor: Preprocessor,
) -> Result<(ModelCheckpoint, Vec<EpochRecord>), TrainError> {
    let epochs = config.epochs;
    let mut trainer = Trainer::new(model_config, config, split, preprocessor)?;
    for _ in 0..epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.finish())
}
