//! Parameter sets, generic over storage so the same layout describes owned
//! tensors (`T = Tensor`) and their graph leaves (`T = Var`).
//!
//! Canonical flat order, used by the optimizer and the checkpoint format:
//! embedding table; encoder tensors; head `w_hidden, b_hidden, w_out, b_out`.
//! LSTM blocks list weights `f, i, o, g` then biases `f, i, o, g`; a BLSTM
//! lists the forward block before the backward block.

use super::{Architecture, ModelConfig, ModelError};
use crate::numerics::{Tensor, XorShiftRng};

/// Half-width of the uniform embedding initialization.
const EMBEDDING_INIT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams<T = Tensor> {
    /// `(V + 2) × d`; rows 0 and 1 embed padding and out-of-vocabulary.
    pub table: T,
}

/// `h_t = tanh(weight · [h_{t−1}, x_t] + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SrnnParams<T = Tensor> {
    /// `H × (H + d)`
    pub weight: T,
    pub bias: T,
}

/// Gate weights are `H × (H + d)` over `[h_{t−1}, x_t]`; biases are length `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T = Tensor> {
    pub w_forget: T,
    pub w_input: T,
    pub w_output: T,
    pub w_cell: T,
    pub b_forget: T,
    pub b_input: T,
    pub b_output: T,
    pub b_cell: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams<T = Tensor> {
    /// `F × k × d`
    pub filters: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T = Tensor> {
    /// `head_units × feature_dim`
    pub w_hidden: T,
    pub b_hidden: T,
    /// `3 × head_units`
    pub w_out: T,
    pub b_out: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder<T = Tensor> {
    Srnn(SrnnParams<T>),
    Lstm(LstmParams<T>),
    Blstm { forward: LstmParams<T>, backward: LstmParams<T> },
    Cnn(CnnParams<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub embedding: EmbeddingParams<T>,
    pub encoder: Encoder<T>,
    pub head: HeadParams<T>,
}

impl<T> LstmParams<T> {
    fn flat(&self) -> [&T; 8] {
        [
            &self.w_forget,
            &self.w_input,
            &self.w_output,
            &self.w_cell,
            &self.b_forget,
            &self.b_input,
            &self.b_output,
            &self.b_cell,
        ]
    }

    fn flat_mut(&mut self) -> [&mut T; 8] {
        [
            &mut self.w_forget,
            &mut self.w_input,
            &mut self.w_output,
            &mut self.w_cell,
            &mut self.b_forget,
            &mut self.b_input,
            &mut self.b_output,
            &mut self.b_cell,
        ]
    }

    fn take(it: &mut impl Iterator<Item = T>) -> Option<Self> {
        Some(LstmParams {
            w_forget: it.next()?,
            w_input: it.next()?,
            w_output: it.next()?,
            w_cell: it.next()?,
            b_forget: it.next()?,
            b_input: it.next()?,
            b_output: it.next()?,
            b_cell: it.next()?,
        })
    }
}

impl<T> ModelParams<T> {
    pub fn arch(&self) -> Architecture {
        match self.encoder {
            Encoder::Srnn(_) => Architecture::Srnn,
            Encoder::Lstm(_) => Architecture::Lstm,
            Encoder::Blstm { .. } => Architecture::Blstm,
            Encoder::Cnn(_) => Architecture::Cnn,
        }
    }

    /// All tensors in canonical order.
    pub fn flatten(&self) -> Vec<&T> {
        let mut out = vec![&self.embedding.table];
        match &self.encoder {
            Encoder::Srnn(p) => out.extend([&p.weight, &p.bias]),
            Encoder::Lstm(p) => out.extend(p.flat()),
            Encoder::Blstm { forward, backward } => {
                out.extend(forward.flat());
                out.extend(backward.flat());
            }
            Encoder::Cnn(p) => out.extend([&p.filters, &p.bias]),
        }
        let h = &self.head;
        out.extend([&h.w_hidden, &h.b_hidden, &h.w_out, &h.b_out]);
        out
    }

    pub fn flatten_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.embedding.table];
        match &mut self.encoder {
            Encoder::Srnn(p) => out.extend([&mut p.weight, &mut p.bias]),
            Encoder::Lstm(p) => out.extend(p.flat_mut()),
            Encoder::Blstm { forward, backward } => {
                out.extend(forward.flat_mut());
                out.extend(backward.flat_mut());
            }
            Encoder::Cnn(p) => out.extend([&mut p.filters, &mut p.bias]),
        }
        let h = &mut self.head;
        out.extend([&mut h.w_hidden, &mut h.b_hidden, &mut h.w_out, &mut h.b_out]);
        out
    }

    /// Rebuilds from canonical order; `None` if the count is wrong.
    pub fn from_flat(arch: Architecture, items: impl IntoIterator<Item = T>) -> Option<Self> {
        let mut it = items.into_iter();
        let embedding = EmbeddingParams { table: it.next()? };
        let encoder = match arch {
            Architecture::Srnn => Encoder::Srnn(SrnnParams {
                weight: it.next()?,
                bias: it.next()?,
            }),
            Architecture::Lstm => Encoder::Lstm(LstmParams::take(&mut it)?),
            Architecture::Blstm => Encoder::Blstm {
                forward: LstmParams::take(&mut it)?,
                backward: LstmParams::take(&mut it)?,
            },
            Architecture::Cnn => Encoder::Cnn(CnnParams {
                filters: it.next()?,
                bias: it.next()?,
            }),
        };
        let head = HeadParams {
            w_hidden: it.next()?,
            b_hidden: it.next()?,
            w_out: it.next()?,
            b_out: it.next()?,
        };
        if it.next().is_some() {
            return None;
        }
        Some(ModelParams {
            embedding,
            encoder,
            head,
        })
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> ModelParams<U> {
        let arch = self.arch();
        ModelParams::from_flat(arch, self.flatten().into_iter().map(f)).expect("same layout")
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Embedding,
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

struct Slot {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn glorot(name: String, rows: usize, cols: usize) -> Slot {
    Slot {
        name,
        shape: vec![rows, cols],
        init: Init::Glorot {
            fan_in: cols,
            fan_out: rows,
        },
    }
}

fn bias(name: String, len: usize, init: Init) -> Slot {
    Slot {
        name,
        shape: vec![len],
        init,
    }
}

fn lstm_slots(prefix: &str, h: usize, d: usize) -> Vec<Slot> {
    let mut v: Vec<Slot> = ["forget", "input", "output", "cell"]
        .iter()
        .map(|g| glorot(format!("{prefix}.w_{g}"), h, h + d))
        .collect();
    v.push(bias(format!("{prefix}.b_forget"), h, Init::Ones));
    for g in ["input", "output", "cell"] {
        v.push(bias(format!("{prefix}.b_{g}"), h, Init::Zeros));
    }
    v
}

/// Names, shapes and initializers in canonical order.
fn layout(config: &ModelConfig) -> Vec<Slot> {
    let (d, h) = (config.embedding_dim, config.hidden_units);
    let mut slots = vec![Slot {
        name: "embedding.table".into(),
        shape: vec![config.embedding_rows(), d],
        init: Init::Embedding,
    }];
    match config.arch {
        Architecture::Srnn => {
            slots.push(glorot("srnn.weight".into(), h, h + d));
            slots.push(bias("srnn.bias".into(), h, Init::Zeros));
        }
        Architecture::Lstm => slots.extend(lstm_slots("lstm", h, d)),
        Architecture::Blstm => {
            slots.extend(lstm_slots("blstm.forward", h, d));
            slots.extend(lstm_slots("blstm.backward", h, d));
        }
        Architecture::Cnn => {
            let (f, k) = (config.conv_filters, config.conv_kernel);
            slots.push(Slot {
                name: "cnn.filters".into(),
                shape: vec![f, k, d],
                init: Init::Glorot {
                    fan_in: k * d,
                    fan_out: f,
                },
            });
            slots.push(bias("cnn.bias".into(), f, Init::Zeros));
        }
    }
    let (u, c) = (config.head_units, config.num_classes);
    slots.push(glorot("head.w_hidden".into(), u, config.feature_dim()));
    slots.push(bias("head.b_hidden".into(), u, Init::Zeros));
    slots.push(glorot("head.w_out".into(), c, u));
    slots.push(bias("head.b_out".into(), c, Init::Zeros));
    slots
}

impl ModelParams {
    /// `(name, shape)` for every tensor of `config`, canonical order.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        layout(config).into_iter().map(|s| (s.name, s.shape)).collect()
    }

    /// Checks tensor count and shapes against `config`.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        let expected = Self::expected_shapes(config);
        if expected.len() != tensors.len() {
            return Err(ModelError::ParamCount {
                expected: expected.len(),
                found: tensors.len(),
            });
        }
        for ((name, shape), t) in expected.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        Ok(ModelParams::from_flat(config.arch, tensors).expect("count checked"))
    }

    pub fn num_scalars(&self) -> usize {
        self.flatten().iter().map(|t| t.numel()).sum()
    }
}

/// Seeded initialization: Glorot-uniform `±sqrt(6 / (fan_in + fan_out))` for
/// weights, zero biases except the LSTM forget bias (one), embedding rows
/// uniform in `±0.05`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let mut rng = XorShiftRng::derived(seed, 0x494E_4954);
    let tensors = layout(config)
        .into_iter()
        .map(|slot| {
            let n: usize = slot.shape.iter().product();
            let data: Vec<f64> = match slot.init {
                Init::Embedding => (0..n).map(|_| rng.symmetric(EMBEDDING_INIT)).collect(),
                Init::Glorot { fan_in, fan_out } => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| rng.symmetric(bound)).collect()
                }
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
            };
            Tensor::new(slot.shape, data).expect("layout shape")
        })
        .collect();
    ModelParams::from_tensors(config, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(arch: Architecture) -> ModelConfig {
        ModelConfig {
            embedding_dim: 3,
            hidden_units: 4,
            head_units: 5,
            conv_filters: 6,
            conv_kernel: 2,
            max_len: 7,
            ..ModelConfig::new(arch, 9)
        }
    }

    #[test]
    fn deterministic_init() {
        for arch in Architecture::ALL {
            let c = small(arch);
            assert_eq!(init_params(&c, 5).unwrap(), init_params(&c, 5).unwrap());
            assert_ne!(init_params(&c, 5).unwrap(), init_params(&c, 6).unwrap());
        }
    }

    #[test]
    fn biases_and_bounds() {
        for arch in Architecture::ALL {
            let c = small(arch);
            let p = init_params(&c, 1).unwrap();
            let shapes = ModelParams::expected_shapes(&c);
            for ((name, shape), t) in shapes.iter().zip(p.flatten()) {
                let max = t.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let leaf = name.rsplit('.').next().unwrap();
                if leaf == "b_forget" {
                    assert!(t.data().iter().all(|&x| x == 1.0), "{name}");
                } else if leaf.starts_with('b') {
                    assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
                } else if name == "embedding.table" {
                    assert!(max <= 0.05);
                } else {
                    let (fan_out, fan_in) = (shape[0], shape[1..].iter().product::<usize>());
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    assert!(max <= bound, "{name}: {max} > {bound}");
                    assert!(max > 0.0);
                }
            }
        }
    }

    #[test]
    fn shapes_follow_config() {
        let c = small(Architecture::Blstm);
        let p = init_params(&c, 0).unwrap();
        assert_eq!(p.embedding.table.shape(), &[11, 3]);
        assert_eq!(p.head.w_hidden.shape(), &[5, 8]);
        let Encoder::Blstm { forward, .. } = &p.encoder else { panic!() };
        assert_eq!(forward.w_cell.shape(), &[4, 7]);
        let c = small(Architecture::Cnn);
        let p = init_params(&c, 0).unwrap();
        let Encoder::Cnn(cnn) = &p.encoder else { panic!() };
        assert_eq!(cnn.filters.shape(), &[6, 2, 3]);
    }

    #[test]
    fn from_tensors_validates() {
        let c = small(Architecture::Srnn);
        let mut tensors: Vec<Tensor> = init_params(&c, 0).unwrap().flatten().into_iter().cloned().collect();
        tensors[1] = Tensor::zeros(&[4, 6]);
        assert!(matches!(
            ModelParams::from_tensors(&c, tensors.clone()),
            Err(ModelError::ParamShape { .. })
        ));
        tensors.pop();
        assert!(matches!(
            ModelParams::from_tensors(&c, tensors),
            Err(ModelError::ParamCount { .. })
        ));
    }
}
