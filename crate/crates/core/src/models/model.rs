use super::layers::{blstm_forward, cnn_forward, dropout, embedding_lookup, head_logits_with, recurrent_forward};
use super::{init_params, Encoder, ModelConfig, ModelError, ModelParams, RecurrentCell};
use crate::corpus::OperatorClass;
use crate::models::predict_class;
use crate::numerics::{softmax, Graph, Tensor, Var, XorShiftRng};
use crate::textprep::TokenSequence;

/// Logits for one sequence. `dropout_rng` enables training-time dropout at
/// the configured rate on the encoder output and the hidden layer.
pub fn forward_logits(
    g: &mut Graph,
    config: &ModelConfig,
    params: &ModelParams<Var>,
    seq: &TokenSequence,
    mut dropout_rng: Option<&mut XorShiftRng>,
) -> Result<Var, ModelError> {
    if seq.ids.len() != config.max_len {
        return Err(ModelError::SequenceLength {
            expected: config.max_len,
            found: seq.ids.len(),
        });
    }
    let embedded = embedding_lookup(g, &seq.ids, params.embedding.table)?;
    let len = seq.true_length;
    let mut features = match &params.encoder {
        Encoder::Srnn(p) => recurrent_forward(g, embedded, len, RecurrentCell::Srnn(p))?,
        Encoder::Lstm(p) => recurrent_forward(g, embedded, len, RecurrentCell::Lstm(p))?,
        Encoder::Blstm { forward, backward } => blstm_forward(g, embedded, len, forward, backward)?,
        Encoder::Cnn(p) => cnn_forward(g, embedded, p)?,
    };
    let rate = config.dropout_rate;
    if let Some(rng) = dropout_rng.as_deref_mut() {
        features = dropout(g, features, rate, rng)?;
    }
    head_logits_with(g, features, &params.head, dropout_rng.map(|r| (r, rate)))
}

/// A configuration with matching parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self, ModelError> {
        config.validate()?;
        let tensors = params.flatten().into_iter().cloned().collect();
        let params = ModelParams::from_tensors(&config, tensors)?;
        Ok(Model { config, params })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let params = init_params(&config, seed)?;
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    /// Adds every parameter to `g` as a gradient-tracking leaf.
    pub fn bind(&self, g: &mut Graph) -> ModelParams<Var> {
        self.params.map(|t| g.param(t.clone()))
    }

    pub fn bind_constant(&self, g: &mut Graph) -> ModelParams<Var> {
        self.params.map(|t| g.constant(t.clone()))
    }

    /// Binds parameters for a single sequence with only the embedding rows it
    /// uses. Returns the bound parameters, the sequence re-indexed into the
    /// compact table, and the original row id of each compact row.
    pub fn bind_compact(
        &self,
        g: &mut Graph,
        seq: &TokenSequence,
        requires_grad: bool,
    ) -> Result<(ModelParams<Var>, TokenSequence, Vec<usize>), ModelError> {
        let table = &self.params.embedding.table;
        let (rows, dim) = (table.shape()[0], table.shape()[1]);
        let mut used: Vec<usize> = seq.ids.clone();
        used.sort_unstable();
        used.dedup();
        if let Some(&id) = used.last().filter(|&&id| id >= rows) {
            return Err(ModelError::IdOutOfRange { id, rows });
        }
        let mut data = Vec::with_capacity(used.len() * dim);
        for &id in &used {
            data.extend_from_slice(&table.data()[id * dim..(id + 1) * dim]);
        }
        let compact = Tensor::matrix(used.len(), dim, data);
        let ids = seq
            .ids
            .iter()
            .map(|id| used.binary_search(id).expect("id collected above"))
            .collect();
        let mut first = true;
        let vars = self.params.map(|t| {
            let value = if std::mem::take(&mut first) { compact.clone() } else { t.clone() };
            g.leaf(value, requires_grad)
        });
        let remapped = TokenSequence {
            ids,
            true_length: seq.true_length,
        };
        Ok((vars, remapped, used))
    }

    pub fn logits(&self, seq: &TokenSequence) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let (vars, compact, _) = self.bind_compact(&mut g, seq, false)?;
        let out = forward_logits(&mut g, &self.config, &vars, &compact, None)?;
        Ok(g.value(out).data().to_vec())
    }

    pub fn predict_proba(&self, seq: &TokenSequence) -> Result<[f64; 3], ModelError> {
        let p = softmax(&self.logits(seq)?);
        Ok([p[0], p[1], p[2]])
    }

    pub fn predict(&self, seq: &TokenSequence) -> Result<(OperatorClass, [f64; 3]), ModelError> {
        let probs = self.predict_proba(seq)?;
        Ok((predict_class(&probs), probs))
    }
}
