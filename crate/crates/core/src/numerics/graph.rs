//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every primitive appends a node holding its forward value. Nodes are only
//! ever appended, so the node list is topologically ordered by construction
//! and `backward` is a single reverse sweep.
//!
//! Shape table (T = row count, "vec" = rank 1, "mat" = rank 2):
//!
//! | primitive          | inputs                         | output          |
//! |--------------------|--------------------------------|-----------------|
//! | `matmul`           | mat m×k, mat k×n / vec k       | mat m×n / vec m |
//! | `matmul_transpose` | mat m×k, mat n×k               | mat m×n         |
//! | `add`              | equal shapes, or mat m×n + vec n | lhs shape     |
//! | `mul`              | equal shapes                   | same            |
//! | `scale`            | any                            | same            |
//! | `concat`           | vecs, or mats with equal rows  | last axis summed|
//! | `slice`            | vec or mat, range on last axis | narrowed        |
//! | `select_row`       | mat T×d                        | vec d           |
//! | `reshape`          | any, same element count        | new shape       |
//! | `sum`, `mean`      | any                            | scalar          |
//! | `tanh`, `sigmoid`, `relu` | any                     | same            |
//! | `softmax`          | vec or mat (per row)           | same            |
//! | `max_over_axis`    | mat (axis 0 or 1), vec (axis 0)| rank − 1        |
//! | `gather_rows`      | mat R×d, ids < R               | mat n×d         |
//! | `unfold`           | mat T×d, window k ≤ T          | mat (T−k+1)×kd  |
//! | `softmax_cross_entropy` | vec C, label < C          | scalar          |

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use super::{NumericsError, Tensor};

/// Floor applied to the true-class probability inside the cross-entropy loss.
pub const PROB_FLOOR: f64 = 1e-12;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of a specific [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    MatMulTransB { a: usize, b: usize },
    Add { a: usize, b: usize },
    AddRowBias { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    Concat { inputs: Vec<usize> },
    Slice { a: usize, start: usize },
    SelectRow { a: usize, row: usize },
    Reshape { a: usize },
    Sum { a: usize },
    Mean { a: usize },
    Tanh { a: usize },
    Sigmoid { a: usize },
    Relu { a: usize },
    Softmax { a: usize },
    Max { a: usize, argmax: Vec<usize> },
    Gather { table: usize, ids: Vec<usize> },
    Unfold { a: usize, window: usize },
    SoftmaxXent { logits: usize, label: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let i = self.index(v).expect("variable from another graph");
        &self.nodes[i].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.index(v).map(|i| self.nodes[i].requires_grad).unwrap_or(false)
    }

    fn var(&self, index: usize) -> Var {
        Var {
            graph: self.id,
            index,
        }
    }

    fn index(&self, v: Var) -> Result<usize, NumericsError> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(NumericsError::ForeignVar);
        }
        Ok(v.index)
    }

    fn shape(&self, i: usize) -> &[usize] {
        self.nodes[i].value.shape()
    }

    fn data(&self, i: usize) -> &[f64] {
        self.nodes[i].value.data()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        let value = Tensor::new(shape, data).expect("primitive produced inconsistent shape");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.var(self.nodes.len() - 1)
    }

    fn mismatch(&self, op: &'static str, a: usize, b: usize) -> NumericsError {
        NumericsError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    fn rank_error(&self, op: &'static str, a: usize) -> NumericsError {
        NumericsError::InvalidRank {
            op,
            shape: self.shape(a).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        let (sa, sb) = (self.shape(ai), self.shape(bi));
        if sa.len() != 2 || !(sb.len() == 1 || sb.len() == 2) || sa[1] != sb[0] {
            return Err(self.mismatch("matmul", ai, bi));
        }
        let (m, k) = (sa[0], sa[1]);
        let n = if sb.len() == 2 { sb[1] } else { 1 };
        let out_shape = if sb.len() == 2 { vec![m, n] } else { vec![m] };
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (self.data(ai), self.data(bi));
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                for (o, &bv) in orow.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *o += aip * bv;
                }
            }
        }
        Ok(self.push(out_shape, out, Op::MatMul { a: ai, b: bi }, &[ai, bi]))
    }

    /// `a · bᵀ` for matrices `a: m×k`, `b: n×k`.
    pub fn matmul_transpose(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        let (sa, sb) = (self.shape(ai), self.shape(bi));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(self.mismatch("matmul_transpose", ai, bi));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let (ad, bd) = (self.data(ai), self.data(bi));
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let arow = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                out.push(dot(arow, &bd[j * k..(j + 1) * k]));
            }
        }
        Ok(self.push(vec![m, n], out, Op::MatMulTransB { a: ai, b: bi }, &[ai, bi]))
    }

    /// Elementwise sum; a vector right operand is added to every row of a matrix.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        let (sa, sb) = (self.shape(ai).to_vec(), self.shape(bi));
        if sa == sb {
            let out = zip_map(self.data(ai), self.data(bi), |x, y| x + y);
            return Ok(self.push(sa, out, Op::Add { a: ai, b: bi }, &[ai, bi]));
        }
        if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            let bias = self.data(bi);
            let out: Vec<f64> = self
                .data(ai)
                .chunks(sa[1])
                .flat_map(|row| row.iter().zip(bias).map(|(x, y)| x + y))
                .collect();
            return Ok(self.push(sa, out, Op::AddRowBias { a: ai, b: bi }, &[ai, bi]));
        }
        Err(self.mismatch("add", ai, bi))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        if self.shape(ai) != self.shape(bi) {
            return Err(self.mismatch("mul", ai, bi));
        }
        let out = zip_map(self.data(ai), self.data(bi), |x, y| x * y);
        let shape = self.shape(ai).to_vec();
        Ok(self.push(shape, out, Op::Mul { a: ai, b: bi }, &[ai, bi]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, NumericsError> {
        let ai = self.index(a)?;
        let out = self.data(ai).iter().map(|x| x * factor).collect();
        let shape = self.shape(ai).to_vec();
        Ok(self.push(shape, out, Op::Scale { a: ai, factor }, &[ai]))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let idx = parts
            .iter()
            .map(|&v| self.index(v))
            .collect::<Result<Vec<_>, _>>()?;
        let first = *idx.first().ok_or(NumericsError::EmptyInput("concat"))?;
        let rank = self.shape(first).len();
        if rank == 0 || rank > 2 {
            return Err(self.rank_error("concat", first));
        }
        let rows = if rank == 2 { self.shape(first)[0] } else { 1 };
        for &i in &idx[1..] {
            let s = self.shape(i);
            if s.len() != rank || (rank == 2 && s[0] != rows) {
                return Err(self.mismatch("concat", first, i));
            }
        }
        let widths: Vec<usize> = idx.iter().map(|&i| *self.shape(i).last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&i, &w) in idx.iter().zip(&widths) {
                out.extend_from_slice(&self.data(i)[r * w..(r + 1) * w]);
            }
        }
        let shape = if rank == 2 { vec![rows, total] } else { vec![total] };
        Ok(self.push(shape, out, Op::Concat { inputs: idx.clone() }, &idx))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let ai = self.index(a)?;
        let s = self.shape(ai).to_vec();
        if s.is_empty() || s.len() > 2 {
            return Err(self.rank_error("slice", ai));
        }
        let width = *s.last().unwrap();
        if len == 0 || start + len > width {
            return Err(NumericsError::IndexOutOfRange {
                op: "slice",
                index: start + len,
                size: width,
            });
        }
        let out: Vec<f64> = self
            .data(ai)
            .chunks(width)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = s;
        *shape.last_mut().unwrap() = len;
        Ok(self.push(shape, out, Op::Slice { a: ai, start }, &[ai]))
    }

    pub fn select_row(&mut self, a: Var, row: usize) -> Result<Var, NumericsError> {
        let ai = self.index(a)?;
        let s = self.shape(ai);
        if s.len() != 2 {
            return Err(self.rank_error("select_row", ai));
        }
        let (rows, cols) = (s[0], s[1]);
        if row >= rows {
            return Err(NumericsError::IndexOutOfRange {
                op: "select_row",
                index: row,
                size: rows,
            });
        }
        let out = self.data(ai)[row * cols..(row + 1) * cols].to_vec();
        Ok(self.push(vec![cols], out, Op::SelectRow { a: ai, row }, &[ai]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let ai = self.index(a)?;
        if shape.iter().product::<usize>() != self.nodes[ai].value.numel() || shape.contains(&0) {
            return Err(NumericsError::ShapeMismatch {
                op: "reshape",
                left: self.shape(ai).to_vec(),
                right: shape.to_vec(),
            });
        }
        let out = self.data(ai).to_vec();
        Ok(self.push(shape.to_vec(), out, Op::Reshape { a: ai }, &[ai]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ai = self.index(a)?;
        let s = self.data(ai).iter().sum();
        Ok(self.push(vec![], vec![s], Op::Sum { a: ai }, &[ai]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ai = self.index(a)?;
        let d = self.data(ai);
        let m = d.iter().sum::<f64>() / d.len() as f64;
        Ok(self.push(vec![], vec![m], Op::Mean { a: ai }, &[ai]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: impl Fn(usize) -> Op) -> Result<Var, NumericsError> {
        let ai = self.index(a)?;
        let out = self.data(ai).iter().map(|&x| f(x)).collect();
        let shape = self.shape(ai).to_vec();
        Ok(self.push(shape, out, op(ai), &[ai]))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(a, f64::tanh, |a| Op::Tanh { a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(a, sigmoid, |a| Op::Sigmoid { a })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, |a| Op::Relu { a })
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ai = self.index(a)?;
        let s = self.shape(ai).to_vec();
        if s.is_empty() || s.len() > 2 {
            return Err(self.rank_error("softmax", ai));
        }
        let width = *s.last().unwrap();
        let out: Vec<f64> = self.data(ai).chunks(width).flat_map(softmax).collect();
        Ok(self.push(s, out, Op::Softmax { a: ai }, &[ai]))
    }

    /// Maximum along `axis`; ties resolve to the first position.
    pub fn max_over_axis(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        let ai = self.index(a)?;
        let s = self.shape(ai).to_vec();
        let d = self.data(ai);
        let (shape, argmax): (Vec<usize>, Vec<usize>) = match (s.len(), axis) {
            (1, 0) => (vec![], vec![first_argmax(d.iter().copied().enumerate())]),
            (2, 0) => {
                let (rows, cols) = (s[0], s[1]);
                let idx = (0..cols)
                    .map(|c| first_argmax((0..rows).map(|r| (r * cols + c, d[r * cols + c]))))
                    .collect();
                (vec![cols], idx)
            }
            (2, 1) => {
                let (rows, cols) = (s[0], s[1]);
                let idx = (0..rows)
                    .map(|r| first_argmax((0..cols).map(|c| (r * cols + c, d[r * cols + c]))))
                    .collect();
                (vec![rows], idx)
            }
            _ => return Err(self.rank_error("max_over_axis", ai)),
        };
        let out = argmax.iter().map(|&i| d[i]).collect();
        Ok(self.push(shape, out, Op::Max { a: ai, argmax }, &[ai]))
    }

    /// Row lookup: output row `t` is row `ids[t]` of `table`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let ti = self.index(table)?;
        let s = self.shape(ti);
        if s.len() != 2 {
            return Err(self.rank_error("gather_rows", ti));
        }
        if ids.is_empty() {
            return Err(NumericsError::EmptyInput("gather_rows"));
        }
        let (rows, cols) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(NumericsError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                size: rows,
            });
        }
        let d = self.data(ti);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            out.extend_from_slice(&d[id * cols..(id + 1) * cols]);
        }
        Ok(self.push(
            vec![ids.len(), cols],
            out,
            Op::Gather {
                table: ti,
                ids: ids.to_vec(),
            },
            &[ti],
        ))
    }

    /// Sliding windows over rows: output row `t` is rows `t..t+window` flattened.
    pub fn unfold(&mut self, a: Var, window: usize) -> Result<Var, NumericsError> {
        let ai = self.index(a)?;
        let s = self.shape(ai);
        if s.len() != 2 {
            return Err(self.rank_error("unfold", ai));
        }
        let (rows, cols) = (s[0], s[1]);
        if window == 0 || window > rows {
            return Err(NumericsError::WindowTooLarge { window, len: rows });
        }
        let positions = rows - window + 1;
        let d = self.data(ai);
        let mut out = Vec::with_capacity(positions * window * cols);
        for t in 0..positions {
            out.extend_from_slice(&d[t * cols..(t + window) * cols]);
        }
        Ok(self.push(
            vec![positions, window * cols],
            out,
            Op::Unfold { a: ai, window },
            &[ai],
        ))
    }

    /// Fused `−ln(max(softmax(logits)[label], PROB_FLOOR))`.
    ///
    /// The backward pass uses `p − onehot(label)` directly, including when the
    /// floor is active.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, NumericsError> {
        let li = self.index(logits)?;
        let s = self.shape(li);
        if s.len() != 1 {
            return Err(self.rank_error("softmax_cross_entropy", li));
        }
        if label >= s[0] {
            return Err(NumericsError::IndexOutOfRange {
                op: "softmax_cross_entropy",
                index: label,
                size: s[0],
            });
        }
        let z = self.data(li);
        let probs = softmax(z);
        let loss = xent_from_logits(z, label);
        Ok(self.push(
            vec![],
            vec![loss],
            Op::SoftmaxXent {
                logits: li,
                label,
                probs,
            },
            &[li],
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Contributions from every use of a node are summed. Leaves that require
    /// a gradient but do not reach `loss` receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let root = self.index(loss).map_err(|_| NumericsError::DisconnectedLoss)?;
        if self.nodes[root].value.numel() != 1 {
            return Err(NumericsError::NotScalarLoss(self.shape(root).to_vec()));
        }
        let mut leaves: HashMap<usize, LeafGrad> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.requires_grad && matches!(n.op, Op::Leaf))
            .map(|(i, n)| (i, LeafGrad::new(n.value.shape().to_vec())))
            .collect();

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        if self.nodes[root].requires_grad {
            grads[root] = Some(vec![1.0]);
        }

        for i in (0..=root).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if let Some(leaf) = leaves.get_mut(&i) {
                        leaf.add_dense(&gy);
                    }
                }
                Op::MatMul { a, b } => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let (m, k) = (sa[0], sa[1]);
                    let n = if sb.len() == 2 { sb[1] } else { 1 };
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        for r in 0..m {
                            let grow = &gy[r * n..(r + 1) * n];
                            for p in 0..k {
                                ga[r * k + p] += dot(grow, &bd[p * n..(p + 1) * n]);
                            }
                        }
                    }
                    if let Some(gb) = self.slot(&mut grads, *b) {
                        for r in 0..m {
                            let grow = &gy[r * n..(r + 1) * n];
                            for p in 0..k {
                                axpy(ad[r * k + p], grow, &mut gb[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
                Op::MatMulTransB { a, b } => {
                    let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let n = self.shape(*b)[0];
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        for r in 0..m {
                            let arow = &mut ga[r * k..(r + 1) * k];
                            for j in 0..n {
                                axpy(gy[r * n + j], &bd[j * k..(j + 1) * k], arow);
                            }
                        }
                    }
                    if let Some(gb) = self.slot(&mut grads, *b) {
                        for r in 0..m {
                            let arow = &ad[r * k..(r + 1) * k];
                            for j in 0..n {
                                axpy(gy[r * n + j], arow, &mut gb[j * k..(j + 1) * k]);
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    for &x in [a, b] {
                        if let Some(gx) = self.slot(&mut grads, x) {
                            axpy(1.0, &gy, gx);
                        }
                    }
                }
                Op::AddRowBias { a, b } => {
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        axpy(1.0, &gy, ga);
                    }
                    if let Some(gb) = self.slot(&mut grads, *b) {
                        let width = gb.len();
                        for row in gy.chunks(width) {
                            axpy(1.0, row, gb);
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        for ((g, &y), &other) in ga.iter_mut().zip(&gy).zip(bd) {
                            *g += y * other;
                        }
                    }
                    if let Some(gb) = self.slot(&mut grads, *b) {
                        for ((g, &y), &other) in gb.iter_mut().zip(&gy).zip(ad) {
                            *g += y * other;
                        }
                    }
                }
                Op::Scale { a, factor } => {
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        axpy(*factor, &gy, ga);
                    }
                }
                Op::Concat { inputs } => {
                    let total = *node.value.shape().last().unwrap();
                    let rows = gy.len() / total;
                    let mut offset = 0;
                    for &x in inputs {
                        let w = *self.shape(x).last().unwrap();
                        if let Some(gx) = self.slot(&mut grads, x) {
                            for r in 0..rows {
                                axpy(
                                    1.0,
                                    &gy[r * total + offset..r * total + offset + w],
                                    &mut gx[r * w..(r + 1) * w],
                                );
                            }
                        }
                        offset += w;
                    }
                }
                Op::Slice { a, start } => {
                    let width = *self.shape(*a).last().unwrap();
                    let len = *node.value.shape().last().unwrap();
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        for (r, grow) in gy.chunks(len).enumerate() {
                            let off = r * width + start;
                            axpy(1.0, grow, &mut ga[off..off + len]);
                        }
                    }
                }
                Op::SelectRow { a, row } => {
                    let cols = gy.len();
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        axpy(1.0, &gy, &mut ga[row * cols..(row + 1) * cols]);
                    }
                }
                Op::Reshape { a } => {
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        axpy(1.0, &gy, ga);
                    }
                }
                Op::Sum { a } | Op::Mean { a } => {
                    let n = self.nodes[*a].value.numel();
                    let g = if matches!(node.op, Op::Mean { .. }) {
                        gy[0] / n as f64
                    } else {
                        gy[0]
                    };
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        ga.iter_mut().for_each(|x| *x += g);
                    }
                }
                Op::Tanh { a } => {
                    let y = node.value.data();
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        for ((g, &u), &yv) in ga.iter_mut().zip(&gy).zip(y) {
                            *g += u * (1.0 - yv * yv);
                        }
                    }
                }
                Op::Sigmoid { a } => {
                    let y = node.value.data();
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        for ((g, &u), &yv) in ga.iter_mut().zip(&gy).zip(y) {
                            *g += u * yv * (1.0 - yv);
                        }
                    }
                }
                Op::Relu { a } => {
                    let x = self.data(*a);
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        for ((g, &u), &xv) in ga.iter_mut().zip(&gy).zip(x) {
                            if xv > 0.0 {
                                *g += u;
                            }
                        }
                    }
                }
                Op::Softmax { a } => {
                    let y = node.value.data();
                    let width = *node.value.shape().last().unwrap();
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        for ((gout, grow), yrow) in
                            ga.chunks_mut(width).zip(gy.chunks(width)).zip(y.chunks(width))
                        {
                            let inner = dot(grow, yrow);
                            for ((g, &u), &yv) in gout.iter_mut().zip(grow).zip(yrow) {
                                *g += yv * (u - inner);
                            }
                        }
                    }
                }
                Op::Max { a, argmax } => {
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        for (&src, &u) in argmax.iter().zip(&gy) {
                            ga[src] += u;
                        }
                    }
                }
                Op::Gather { table, ids } => {
                    let cols = self.shape(*table)[1];
                    if let Some(leaf) = leaves.get_mut(table) {
                        for (t, &id) in ids.iter().enumerate() {
                            leaf.add_row(id, &gy[t * cols..(t + 1) * cols]);
                        }
                    } else if let Some(gt) = self.slot(&mut grads, *table) {
                        for (t, &id) in ids.iter().enumerate() {
                            axpy(1.0, &gy[t * cols..(t + 1) * cols], &mut gt[id * cols..(id + 1) * cols]);
                        }
                    }
                }
                Op::Unfold { a, window } => {
                    let cols = self.shape(*a)[1];
                    let span = window * cols;
                    if let Some(ga) = self.slot(&mut grads, *a) {
                        for (t, grow) in gy.chunks(span).enumerate() {
                            axpy(1.0, grow, &mut ga[t * cols..t * cols + span]);
                        }
                    }
                }
                Op::SoftmaxXent {
                    logits,
                    label,
                    probs,
                } => {
                    if let Some(gl) = self.slot(&mut grads, *logits) {
                        for (c, (g, &p)) in gl.iter_mut().zip(probs).enumerate() {
                            let target = if c == *label { 1.0 } else { 0.0 };
                            *g += gy[0] * (p - target);
                        }
                    }
                }
            }
        }

        Ok(Gradients {
            graph: self.id,
            leaves,
        })
    }

    /// Gradient buffer for node `i`, allocated on first use; `None` when the
    /// node does not take part in differentiation.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], i: usize) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[i].requires_grad {
            return None;
        }
        let n = self.nodes[i].value.numel();
        Some(grads[i].get_or_insert_with(|| vec![0.0; n]))
    }
}

#[derive(Debug, Clone)]
struct LeafGrad {
    shape: Vec<usize>,
    dense: Option<Vec<f64>>,
    /// Row contributions from `gather_rows`, kept sparse so large embedding
    /// tables do not need a dense buffer per pass.
    rows: BTreeMap<usize, Vec<f64>>,
}

impl LeafGrad {
    fn new(shape: Vec<usize>) -> Self {
        LeafGrad {
            shape,
            dense: None,
            rows: BTreeMap::new(),
        }
    }

    fn add_dense(&mut self, g: &[f64]) {
        match &mut self.dense {
            Some(d) => axpy(1.0, g, d),
            None => self.dense = Some(g.to_vec()),
        }
    }

    fn add_row(&mut self, row: usize, g: &[f64]) {
        match self.rows.get_mut(&row) {
            Some(r) => axpy(1.0, g, r),
            None => {
                self.rows.insert(row, g.to_vec());
            }
        }
    }

    fn accumulate_into(&self, buf: &mut [f64]) {
        if let Some(d) = &self.dense {
            axpy(1.0, d, buf);
        }
        if let Some(&cols) = self.shape.get(1) {
            for (&row, g) in &self.rows {
                axpy(1.0, g, &mut buf[row * cols..(row + 1) * cols]);
            }
        }
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    graph: u64,
    leaves: HashMap<usize, LeafGrad>,
}

impl Gradients {
    /// Dense gradient of a leaf that requires grad; `None` for anything else.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let leaf = self.leaf(v)?;
        let mut buf = vec![0.0; leaf.shape.iter().product()];
        leaf.accumulate_into(&mut buf);
        Some(Tensor::new(leaf.shape.clone(), buf).expect("gradient shape"))
    }

    /// Adds the gradient of `v` into `buf`. Returns false if `v` has none.
    pub fn accumulate_into(&self, v: Var, buf: &mut [f64]) -> bool {
        match self.leaf(v) {
            Some(leaf) => {
                assert_eq!(buf.len(), leaf.shape.iter().product::<usize>());
                leaf.accumulate_into(buf);
                true
            }
            None => false,
        }
    }

    fn leaf(&self, v: Var) -> Option<&LeafGrad> {
        (v.graph == self.graph).then(|| self.leaves.get(&v.index)).flatten()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `−ln(max(softmax(z)[label], PROB_FLOOR))` evaluated as
/// `ln(1 + Σ_{j≠label} exp(z_j − z_label))`, which keeps full precision when
/// the true-class probability is close to 1.
fn xent_from_logits(z: &[f64], label: usize) -> f64 {
    let zl = z[label];
    if z.iter().any(|v| v.is_nan()) {
        return f64::NAN;
    }
    let rest: f64 = z
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label)
        .map(|(_, &v)| (v - zl).exp())
        .sum();
    rest.ln_1p().min(-PROB_FLOOR.ln())
}

/// `max(p, PROB_FLOOR)`, except that NaN stays NaN.
pub fn floor_prob(p: f64) -> f64 {
    if p < PROB_FLOOR {
        PROB_FLOOR
    } else {
        p
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn first_argmax(items: impl Iterator<Item = (usize, f64)>) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in items {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i).unwrap_or(0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
