use super::{CnnParams, HeadParams, LstmParams, ModelError, SrnnParams};
use crate::corpus::OperatorClass;
use crate::numerics::{Graph, Tensor, Var, XorShiftRng};

/// Rows of `table` selected by `ids`, as a `len(ids) × d` matrix.
pub fn embedding_lookup(g: &mut Graph, ids: &[usize], table: Var) -> Result<Var, ModelError> {
    let rows = g.value(table).shape()[0];
    if let Some(&id) = ids.iter().find(|&&id| id >= rows) {
        return Err(ModelError::IdOutOfRange { id, rows });
    }
    Ok(g.gather_rows(table, ids)?)
}

pub fn srnn_step(g: &mut Graph, h_prev: Var, x_t: Var, p: &SrnnParams<Var>) -> Result<Var, ModelError> {
    let z = g.concat(&[h_prev, x_t])?;
    let a = g.matmul(p.weight, z)?;
    let a = g.add(a, p.bias)?;
    Ok(g.tanh(a)?)
}

/// One LSTM step over `z = [h_prev, x_t]`:
/// `f, i, o = σ(W z + b)`, `g = tanh(W_g z + b_g)`, `c = f⊙c_prev + i⊙g`,
/// `h = o⊙tanh(c)`. Returns `(h, c)`.
pub fn lstm_step(
    g: &mut Graph,
    h_prev: Var,
    c_prev: Var,
    x_t: Var,
    p: &LstmParams<Var>,
) -> Result<(Var, Var), ModelError> {
    let z = g.concat(&[h_prev, x_t])?;
    let mut affine = |w: Var, b: Var| -> Result<Var, ModelError> {
        let a = g.matmul(w, z)?;
        Ok(g.add(a, b)?)
    };
    let f = affine(p.w_forget, p.b_forget)?;
    let i = affine(p.w_input, p.b_input)?;
    let o = affine(p.w_output, p.b_output)?;
    let cand = affine(p.w_cell, p.b_cell)?;
    let f = g.sigmoid(f)?;
    let i = g.sigmoid(i)?;
    let o = g.sigmoid(o)?;
    let cand = g.tanh(cand)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let squashed = g.tanh(c)?;
    let h = g.mul(o, squashed)?;
    Ok((h, c))
}

#[derive(Debug, Clone, Copy)]
pub enum RecurrentCell<'a> {
    Srnn(&'a SrnnParams<Var>),
    Lstm(&'a LstmParams<Var>),
}

impl RecurrentCell<'_> {
    fn hidden_units(&self, g: &Graph) -> usize {
        let bias = match self {
            RecurrentCell::Srnn(p) => p.bias,
            RecurrentCell::Lstm(p) => p.b_cell,
        };
        g.value(bias).numel()
    }
}

fn check_length(g: &Graph, seq: Var, true_length: usize) -> Result<(), ModelError> {
    let rows = g.value(seq).shape().first().copied().unwrap_or(0);
    if true_length > rows {
        return Err(ModelError::SequenceLength {
            expected: rows,
            found: true_length,
        });
    }
    Ok(())
}

/// Runs `cell` from a zero state over the given rows of `seq`; returns the
/// final hidden state.
fn run_cell(
    g: &mut Graph,
    seq: Var,
    rows: impl Iterator<Item = usize>,
    cell: RecurrentCell<'_>,
) -> Result<Var, ModelError> {
    let zeros = Tensor::zeros(&[cell.hidden_units(g)]);
    let mut h = g.constant(zeros.clone());
    let mut c = g.constant(zeros);
    for t in rows {
        let x = g.select_row(seq, t)?;
        match cell {
            RecurrentCell::Srnn(p) => h = srnn_step(g, h, x, p)?,
            RecurrentCell::Lstm(p) => (h, c) = lstm_step(g, h, c, x, p)?,
        }
    }
    Ok(h)
}

/// Final hidden state after the first `true_length` rows of `seq`
/// (`T × d`); the zero vector when `true_length` is 0.
pub fn recurrent_forward(
    g: &mut Graph,
    seq: Var,
    true_length: usize,
    cell: RecurrentCell<'_>,
) -> Result<Var, ModelError> {
    check_length(g, seq, true_length)?;
    run_cell(g, seq, 0..true_length, cell)
}

/// `[forward final state, backward final state]`, the backward pass reading
/// rows `true_length − 1` down to `0`.
pub fn blstm_forward(
    g: &mut Graph,
    seq: Var,
    true_length: usize,
    forward: &LstmParams<Var>,
    backward: &LstmParams<Var>,
) -> Result<Var, ModelError> {
    check_length(g, seq, true_length)?;
    let fwd = run_cell(g, seq, 0..true_length, RecurrentCell::Lstm(forward))?;
    let bwd = run_cell(g, seq, (0..true_length).rev(), RecurrentCell::Lstm(backward))?;
    Ok(g.concat(&[fwd, bwd])?)
}

/// Valid 1-D convolution over all `T` rows of `seq`, bias, ReLU, then global
/// max over positions. Padding rows are convolved like any other row.
pub fn cnn_forward(g: &mut Graph, seq: Var, p: &CnnParams<Var>) -> Result<Var, ModelError> {
    let fshape = g.value(p.filters).shape().to_vec();
    let [filters, kernel, dim] = fshape[..] else {
        return Err(ModelError::InvalidConfig(format!("filters must be F×k×d, got {fshape:?}")));
    };
    let len = g.value(seq).shape()[0];
    if kernel > len {
        return Err(ModelError::KernelTooLarge { kernel, len });
    }
    let flat = g.reshape(p.filters, &[filters, kernel * dim])?;
    let windows = g.unfold(seq, kernel)?;
    let conv = g.matmul_transpose(windows, flat)?;
    let conv = g.add(conv, p.bias)?;
    let act = g.relu(conv)?;
    Ok(g.max_over_axis(act, 0)?)
}

/// Inverted dropout: zero each entry with probability `rate`, scale the rest
/// by `1 / (1 − rate)`.
pub(crate) fn dropout(g: &mut Graph, x: Var, rate: f64, rng: &mut XorShiftRng) -> Result<Var, ModelError> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let shape = g.value(x).shape().to_vec();
    let n = g.value(x).numel();
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
        .collect();
    let mask = g.constant(Tensor::new(shape, mask).expect("mask shape"));
    Ok(g.mul(x, mask)?)
}

pub(crate) fn head_logits_with(
    g: &mut Graph,
    features: Var,
    head: &HeadParams<Var>,
    mut dropout_rng: Option<(&mut XorShiftRng, f64)>,
) -> Result<Var, ModelError> {
    let z = g.matmul(head.w_hidden, features)?;
    let z = g.add(z, head.b_hidden)?;
    let mut hidden = g.relu(z)?;
    if let Some((rng, rate)) = dropout_rng.as_mut() {
        hidden = dropout(g, hidden, *rate, rng)?;
    }
    let out = g.matmul(head.w_out, hidden)?;
    Ok(g.add(out, head.b_out)?)
}

/// `w_out · relu(w_hidden · features + b_hidden) + b_out`.
pub fn head_logits(g: &mut Graph, features: Var, head: &HeadParams<Var>) -> Result<Var, ModelError> {
    head_logits_with(g, features, head, None)
}

/// Softmax of [`head_logits`].
pub fn classify(g: &mut Graph, features: Var, head: &HeadParams<Var>) -> Result<Var, ModelError> {
    let logits = head_logits(g, features, head)?;
    Ok(g.softmax(logits)?)
}

/// Index of the largest probability; ties go to the lowest index.
pub fn predict_class(probs: &[f64]) -> OperatorClass {
    assert_eq!(probs.len(), OperatorClass::COUNT, "expected one probability per class");
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    OperatorClass::from_code(best).expect("index below class count")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, Architecture, Encoder, ModelConfig};
    use proptest::prelude::*;

    const TOL: f64 = 1e-12;

    fn scalar_srnn(g: &mut Graph, w: [f64; 2], b: f64) -> SrnnParams<Var> {
        SrnnParams {
            weight: g.constant(Tensor::matrix(1, 2, w.to_vec())),
            bias: g.constant(Tensor::vector(vec![b])),
        }
    }

    fn scalar_lstm(g: &mut Graph, w: [f64; 2], b: f64) -> LstmParams<Var> {
        let mut m = || g.constant(Tensor::matrix(1, 2, w.to_vec()));
        let (wf, wi, wo, wc) = (m(), m(), m(), m());
        let mut v = || g.constant(Tensor::vector(vec![b]));
        let (bf, bi, bo, bc) = (v(), v(), v(), v());
        LstmParams {
            w_forget: wf,
            w_input: wi,
            w_output: wo,
            w_cell: wc,
            b_forget: bf,
            b_input: bi,
            b_output: bo,
            b_cell: bc,
        }
    }

    fn scalar(g: &mut Graph, v: f64) -> Var {
        g.constant(Tensor::vector(vec![v]))
    }

    fn item(g: &Graph, v: Var) -> f64 {
        g.value(v).data()[0]
    }

    #[test]
    fn srnn_zero_weights() {
        let mut g = Graph::new();
        let p = scalar_srnn(&mut g, [0.0, 0.0], 0.0);
        let (h, x) = (scalar(&mut g, 0.7), scalar(&mut g, -3.0));
        let out = srnn_step(&mut g, h, x, &p).unwrap();
        assert_eq!(item(&g, out), 0.0);
        let p = scalar_srnn(&mut g, [0.0, 0.0], 0.3);
        let out = srnn_step(&mut g, h, x, &p).unwrap();
        assert!((item(&g, out) - 0.3f64.tanh()).abs() < TOL);
    }

    #[test]
    fn srnn_scalar_example() {
        let mut g = Graph::new();
        let p = scalar_srnn(&mut g, [0.5, 0.5], 0.0);
        let (h, x) = (scalar(&mut g, 0.2), scalar(&mut g, 0.6));
        let out = srnn_step(&mut g, h, x, &p).unwrap();
        assert!((item(&g, out) - 0.379949).abs() < 1e-6);
        assert!((item(&g, out) - 0.4f64.tanh()).abs() < TOL);
    }

    #[test]
    fn lstm_zero_params() {
        let mut g = Graph::new();
        let p = scalar_lstm(&mut g, [0.0, 0.0], 0.0);
        let (h, c, x) = (scalar(&mut g, 0.4), scalar(&mut g, 2.0), scalar(&mut g, 1.0));
        let (h1, c1) = lstm_step(&mut g, h, c, x, &p).unwrap();
        assert!((item(&g, c1) - 1.0).abs() < TOL);
        assert!((item(&g, h1) - 0.5 * 1.0f64.tanh()).abs() < TOL);
        let zero = scalar(&mut g, 0.0);
        let (h2, c2) = lstm_step(&mut g, zero, zero, x, &p).unwrap();
        assert_eq!((item(&g, h2), item(&g, c2)), (0.0, 0.0));
    }

    #[test]
    fn lstm_scalar_example() {
        let mut g = Graph::new();
        let p = scalar_lstm(&mut g, [1.0, 1.0], 0.0);
        let (zero, x) = (scalar(&mut g, 0.0), scalar(&mut g, 1.0));
        let (h, c) = lstm_step(&mut g, zero, zero, x, &p).unwrap();
        // σ(1)·tanh(1) and σ(1)·tanh(σ(1)·tanh(1)), evaluated independently
        assert!((item(&g, c) - 0.556_769_941_145_940).abs() < 1e-12, "{}", item(&g, c));
        assert!((item(&g, h) - 0.369_606_352_935_706).abs() < 1e-12, "{}", item(&g, h));
    }

    #[test]
    fn recurrent_base_cases() {
        let mut g = Graph::new();
        let p = scalar_srnn(&mut g, [0.5, -0.3], 0.1);
        let seq = g.constant(Tensor::matrix(3, 1, vec![0.9, -0.4, 0.2]));
        let empty = recurrent_forward(&mut g, seq, 0, RecurrentCell::Srnn(&p)).unwrap();
        assert_eq!(item(&g, empty), 0.0);
        let one = recurrent_forward(&mut g, seq, 1, RecurrentCell::Srnn(&p)).unwrap();
        assert!((item(&g, one) - (-0.3f64 * 0.9 + 0.1).tanh()).abs() < TOL);
        // hand-unrolled three steps
        let mut h = 0.0f64;
        for x in [0.9, -0.4, 0.2] {
            h = (0.5 * h - 0.3 * x + 0.1).tanh();
        }
        let three = recurrent_forward(&mut g, seq, 3, RecurrentCell::Srnn(&p)).unwrap();
        assert!((item(&g, three) - h).abs() < TOL);
        assert!(recurrent_forward(&mut g, seq, 4, RecurrentCell::Srnn(&p)).is_err());
    }

    #[test]
    fn blstm_single_step() {
        let mut g = Graph::new();
        let fwd = scalar_lstm(&mut g, [0.4, 0.8], 0.1);
        let bwd = scalar_lstm(&mut g, [-0.2, 0.5], -0.3);
        let seq = g.constant(Tensor::matrix(2, 1, vec![0.7, 5.0]));
        let out = blstm_forward(&mut g, seq, 1, &fwd, &bwd).unwrap();
        let (zero, x) = (scalar(&mut g, 0.0), scalar(&mut g, 0.7));
        let (hf, _) = lstm_step(&mut g, zero, zero, x, &fwd).unwrap();
        let (hb, _) = lstm_step(&mut g, zero, zero, x, &bwd).unwrap();
        assert_eq!(g.value(out).data(), &[item(&g, hf), item(&g, hb)]);
    }

    fn cnn_params(g: &mut Graph, filters: Tensor, bias: Vec<f64>) -> CnnParams<Var> {
        CnnParams {
            filters: g.constant(filters),
            bias: g.constant(Tensor::vector(bias)),
        }
    }

    #[test]
    fn cnn_zero_and_saturated() {
        let mut g = Graph::new();
        let seq = g.constant(Tensor::matrix(4, 2, vec![1.0, -2.0, 3.0, 0.5, -1.0, 2.0, 0.0, 0.0]));
        let p = cnn_params(&mut g, Tensor::zeros(&[3, 2, 2]), vec![0.0; 3]);
        let out = cnn_forward(&mut g, seq, &p).unwrap();
        assert_eq!(g.value(out).data(), &[0.0; 3]);
        let p = cnn_params(&mut g, Tensor::new(vec![1, 2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap(), vec![-1e6]);
        let out = cnn_forward(&mut g, seq, &p).unwrap();
        assert_eq!(g.value(out).data(), &[0.0]);
        let p = cnn_params(&mut g, Tensor::zeros(&[1, 5, 2]), vec![0.0]);
        assert!(matches!(cnn_forward(&mut g, seq, &p), Err(ModelError::KernelTooLarge { kernel: 5, len: 4 })));
    }

    #[test]
    fn cnn_indicator_filter() {
        let mut g = Graph::new();
        let rows = [[1.0, -2.0], [3.0, 0.5], [-1.0, 2.0], [0.0, 0.0]];
        let seq = g.constant(Tensor::matrix(4, 2, rows.concat()));
        for j in 0..2 {
            let mut f = vec![0.0; 2];
            f[j] = 1.0;
            let p = cnn_params(&mut g, Tensor::new(vec![1, 1, 2], f).unwrap(), vec![0.0]);
            let out = cnn_forward(&mut g, seq, &p).unwrap();
            let expected = rows.iter().map(|r| r[j].max(0.0)).fold(0.0, f64::max);
            assert_eq!(item(&g, out), expected);
        }
    }

    fn head(g: &mut Graph, w_out: Tensor, b_out: Vec<f64>) -> HeadParams<Var> {
        HeadParams {
            w_hidden: g.constant(Tensor::matrix(2, 2, vec![1.0, -1.0, 0.5, 2.0])),
            b_hidden: g.constant(Tensor::vector(vec![0.1, 0.0])),
            w_out: g.constant(w_out),
            b_out: g.constant(Tensor::vector(b_out)),
        }
    }

    #[test]
    fn classify_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.3, -0.8]));
        let h = head(&mut g, Tensor::zeros(&[3, 2]), vec![0.0; 3]);
        let p = classify(&mut g, x, &h).unwrap();
        assert!(g.value(p).data().iter().all(|&v| (v - 1.0 / 3.0).abs() < TOL));
        let h = head(&mut g, Tensor::zeros(&[3, 2]), vec![0.0, 2f64.ln(), 0.0]);
        let p = classify(&mut g, x, &h).unwrap();
        let d = g.value(p).data();
        assert!((d[0] - 0.25).abs() < TOL && (d[1] - 0.5).abs() < TOL && (d[2] - 0.25).abs() < TOL);
        let bad = g.constant(Tensor::vector(vec![1.0; 3]));
        assert!(classify(&mut g, bad, &h).is_err());
    }

    #[test]
    fn predict_examples() {
        assert_eq!(predict_class(&[0.2, 0.5, 0.3]), OperatorClass::Military);
        assert_eq!(predict_class(&[0.4, 0.4, 0.2]), OperatorClass::Commercial);
        assert_eq!(predict_class(&[0.0, 0.0, 1.0]), OperatorClass::Private);
    }

    #[test]
    fn embedding_gather_and_range() {
        let mut g = Graph::new();
        let table = g.param(Tensor::matrix(4, 2, (0..8).map(f64::from).collect()));
        let out = embedding_lookup(&mut g, &[2, 0], table).unwrap();
        assert_eq!(g.value(out).data(), &[4.0, 5.0, 0.0, 1.0]);
        assert_eq!(
            embedding_lookup(&mut g, &[4], table).unwrap_err(),
            ModelError::IdOutOfRange { id: 4, rows: 4 }
        );
    }

    proptest! {
        #[test]
        fn argmax_shift_invariant(z in prop::array::uniform3(-50.0f64..50.0), c in -100.0f64..100.0) {
            let p = crate::numerics::softmax(&z);
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let q = crate::numerics::softmax(&shifted);
            prop_assert_eq!(predict_class(&z), predict_class(&shifted));
            prop_assert_eq!(predict_class(&p), predict_class(&z));
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn recurrent_padding_insensitive(seed in 0u64..1000, tail in prop::collection::vec(0usize..12, 6)) {
            for arch in [Architecture::Srnn, Architecture::Lstm, Architecture::Blstm] {
                let config = ModelConfig {
                    embedding_dim: 3, hidden_units: 2, head_units: 2, max_len: 10,
                    ..ModelConfig::new(arch, 10)
                };
                let params = init_params(&config, seed).unwrap();
                let base = [5usize, 2, 9, 3];
                let run = |tail: &[usize]| {
                    let mut ids = base.to_vec();
                    ids.extend_from_slice(tail);
                    let mut g = Graph::new();
                    let vars = params.map(|t| g.constant(t.clone()));
                    let seq = embedding_lookup(&mut g, &ids, vars.embedding.table).unwrap();
                    let out = match &vars.encoder {
                        Encoder::Srnn(p) => recurrent_forward(&mut g, seq, 4, RecurrentCell::Srnn(p)),
                        Encoder::Lstm(p) => recurrent_forward(&mut g, seq, 4, RecurrentCell::Lstm(p)),
                        Encoder::Blstm { forward, backward } => blstm_forward(&mut g, seq, 4, forward, backward),
                        Encoder::Cnn(_) => unreachable!(),
                    }.unwrap();
                    g.value(out).clone()
                };
                prop_assert_eq!(run(&[0; 6]), run(&tail));
            }
        }
    }
}
