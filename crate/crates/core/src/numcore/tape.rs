//! Tape-based reverse-mode automatic differentiation over matrices.
//!
//! Every op appends one node holding its forward value; node ids grow in
//! construction order, so the reverse of that order is a valid topological
//! order for the backward sweep.

use std::collections::HashMap;
use std::rc::Rc;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::{matmul_at_into, matmul_bt_into, matmul_into};
use super::Tensor;
use crate::error::{KalmError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Elu(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Gelu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    SegmentSoftmax(Var, Rc<[usize]>),
    LayerNormRows { x: Var, xhat: Rc<[f64]>, inv_std: Rc<[f64]> },
    Dropout(Var, Rc<[f64]>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Rc<[usize]>),
    ScatterAddRows(Var, Rc<[usize]>),
    Transpose(Var),
    Sum(Var),
    MeanRows(Var),
    Pick(Var, usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for one backward sweep.
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    vars: Vec<Option<Tensor>>,
    params: ParamGrads,
}

impl Gradients {
    /// Gradient of the loss with respect to any node that required one.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.vars.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(512),
            params: HashMap::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(KalmError::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_unary(&mut self, x: Var, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        let needs = self.needs(x);
        self.push(value, op, needs, name)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Loads a parameter; repeated loads of the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    fn mat(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        self.value(v).check_matrix(what)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), needs, "matmul")
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat(a, "matmul_bt")?;
        let (n, k2) = self.mat(b, "matmul_bt")?;
        if k != k2 {
            return Err(KalmError::dim(format!("matmul_bt: {m}x{k} · ({n}x{k2})ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        matmul_bt_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMulBt(a, b), needs, "matmul_bt")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), needs, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub(a, b), needs, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), needs, "mul")
    }

    fn check_row_broadcast(&self, x: Var, r: Var, what: &str) -> Result<(usize, usize)> {
        let (m, n) = self.mat(x, what)?;
        let (rr, rc) = self.mat(r, what)?;
        if rr != 1 || rc != n {
            return Err(KalmError::dim(format!("{what}: {m}x{n} with row {rr}x{rc}")));
        }
        Ok((m, n))
    }

    /// `x + 1·r` for a `1×n` row `r`.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (_, n) = self.check_row_broadcast(x, r, "add_row")?;
        let row = self.value(r).data().to_vec();
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, b) in chunk.iter_mut().zip(&row) {
                *o += b;
            }
        }
        let needs = self.needs(x) || self.needs(r);
        self.push(out, Op::AddRow(x, r), needs, "add_row")
    }

    /// Multiplies every row of `x` elementwise by the `1×n` row `r`.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (_, n) = self.check_row_broadcast(x, r, "mul_row")?;
        let row = self.value(r).data().to_vec();
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, b) in chunk.iter_mut().zip(&row) {
                *o *= b;
            }
        }
        let needs = self.needs(x) || self.needs(r);
        self.push(out, Op::MulRow(x, r), needs, "mul_row")
    }

    /// Scales row `i` of `x` by `c[i]` for an `m×1` column `c`.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var> {
        let (m, n) = self.mat(x, "mul_col")?;
        let (cr, cc) = self.mat(c, "mul_col")?;
        if cr != m || cc != 1 {
            return Err(KalmError::dim(format!("mul_col: {m}x{n} with column {cr}x{cc}")));
        }
        let col = self.value(c).data().to_vec();
        let mut out = self.value(x).clone();
        for (chunk, s) in out.data_mut().chunks_mut(n).zip(&col) {
            for o in chunk {
                *o *= s;
            }
        }
        let needs = self.needs(x) || self.needs(c);
        self.push(out, Op::MulCol(x, c), needs, "mul_col")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).scale(s);
        self.push_unary(x, out, Op::Scale(x, s), "scale")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        self.push_unary(x, out, Op::Tanh(x), "tanh")
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(elu);
        self.push_unary(x, out, Op::Elu(x), "elu")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push_unary(x, out, Op::Relu(x), "relu")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push_unary(x, out, Op::LeakyRelu(x, slope), "leaky_relu")
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self
            .value(x)
            .map(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_K * v * v * v)).tanh()));
        self.push_unary(x, out, Op::Gelu(x), "gelu")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.mat(x, "softmax_rows")?;
        let out = self.value(x).softmax(1)?;
        self.push_unary(x, out, Op::SoftmaxRows(x), "softmax")
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, n) = self.mat(x, "log_softmax_rows")?;
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row {
                *v -= lse;
            }
        }
        self.push_unary(x, out, Op::LogSoftmaxRows(x), "log_softmax")
    }

    /// Softmax of an `E×1` column within groups: entry `e` is normalized over
    /// every entry sharing `segment[e]`.
    pub fn segment_softmax(&mut self, x: Var, segment: Rc<[usize]>, n_segments: usize) -> Result<Var> {
        let (e, c) = self.mat(x, "segment_softmax")?;
        if c != 1 || segment.len() != e {
            return Err(KalmError::dim(format!(
                "segment_softmax: {e}x{c} logits with {} segment ids",
                segment.len()
            )));
        }
        if let Some(&bad) = segment.iter().find(|&&s| s >= n_segments) {
            return Err(KalmError::dim(format!("segment id {bad} >= {n_segments}")));
        }
        let logits = self.value(x).data();
        let mut max = vec![f64::NEG_INFINITY; n_segments];
        for (&s, &v) in segment.iter().zip(logits) {
            max[s] = max[s].max(v);
        }
        let mut out: Vec<f64> = segment
            .iter()
            .zip(logits)
            .map(|(&s, &v)| (v - max[s]).exp())
            .collect();
        let mut total = vec![0.0; n_segments];
        for (&s, &v) in segment.iter().zip(&out) {
            total[s] += v;
        }
        for (&s, v) in segment.iter().zip(out.iter_mut()) {
            *v /= total[s];
        }
        let out = Tensor::matrix(e, 1, out)?;
        self.push_unary(x, out, Op::SegmentSoftmax(x, segment), "segment_softmax")
    }

    /// Per-row standardization (no affine part).
    pub fn layer_norm_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.mat(x, "layer_norm_rows")?;
        let src = self.value(x).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                xhat[i * n + j] = (row[j] - mean) * is;
            }
        }
        let out = Tensor::matrix(m, n, xhat.clone())?;
        let op = Op::LayerNormRows {
            x,
            xhat: xhat.into(),
            inv_std: inv_std.into(),
        };
        self.push_unary(x, out, op, "layer_norm")
    }

    /// Multiplies by a precomputed scale mask (see `DropoutRng`).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(KalmError::dim("dropout mask length mismatch"));
        }
        let mut out = self.value(x).clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push_unary(x, out, Op::Dropout(x, mask.into()), "dropout")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(KalmError::dim("concat_cols of nothing"));
        };
        let (m, _) = self.mat(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.mat(p, "concat_cols")?;
            if r != m {
                return Err(KalmError::dim(format!("concat_cols: {r} rows vs {m}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::matrix(m, total, out)?, Op::ConcatCols(parts.to_vec()), needs, "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(KalmError::dim("concat_rows of nothing"));
        };
        let (_, n) = self.mat(first, "concat_rows")?;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.mat(p, "concat_rows")?;
            if c != n {
                return Err(KalmError::dim(format!("concat_rows: {c} cols vs {n}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::matrix(rows, n, out)?, Op::ConcatRows(parts.to_vec()), needs, "concat_rows")
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.mat(x, "slice_rows")?;
        if len == 0 || start + len > m {
            return Err(KalmError::dim(format!("slice_rows {start}..{} of {m}", start + len)));
        }
        let data = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let out = Tensor::matrix(len, n, data)?;
        self.push_unary(x, out, Op::SliceRows(x, start), "slice_rows")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.mat(x, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(KalmError::dim(format!("slice_cols {start}..{} of {n}", start + len)));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let out = Tensor::matrix(m, len, data)?;
        self.push_unary(x, out, Op::SliceCols(x, start), "slice_cols")
    }

    pub fn gather_rows(&mut self, x: Var, idx: Rc<[usize]>) -> Result<Var> {
        let (m, n) = self.mat(x, "gather_rows")?;
        if idx.is_empty() {
            return Err(KalmError::dim("gather_rows with no indices"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(KalmError::dim(format!("gather_rows index {bad} >= {m}")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx.iter() {
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let out = Tensor::matrix(idx.len(), n, data)?;
        self.push_unary(x, out, Op::GatherRows(x, idx), "gather_rows")
    }

    /// Row `e` of `x` is added into output row `idx[e]`; output has `n_out` rows.
    pub fn scatter_add_rows(&mut self, x: Var, idx: Rc<[usize]>, n_out: usize) -> Result<Var> {
        let (m, n) = self.mat(x, "scatter_add_rows")?;
        if idx.len() != m {
            return Err(KalmError::dim(format!("scatter_add_rows: {m} rows, {} indices", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_out) {
            return Err(KalmError::dim(format!("scatter index {bad} >= {n_out}")));
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; n_out * n];
        for (e, &t) in idx.iter().enumerate() {
            for j in 0..n {
                data[t * n + j] += src[e * n + j];
            }
        }
        let out = Tensor::matrix(n_out, n, data)?;
        self.push_unary(x, out, Op::ScatterAddRows(x, idx), "scatter_add_rows")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        self.push_unary(x, out, Op::Transpose(x), "transpose")
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push_unary(x, out, Op::Sum(x), "sum")
    }

    /// Column means as a `1×n` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.mat(x, "mean_rows")?;
        let src = self.value(x).data();
        let mut data = vec![0.0; n];
        for row in src.chunks(n) {
            for (d, v) in data.iter_mut().zip(row) {
                *d += v;
            }
        }
        for d in &mut data {
            *d /= m as f64;
        }
        let out = Tensor::matrix(1, n, data)?;
        self.push_unary(x, out, Op::MeanRows(x), "mean_rows")
    }

    /// Selects one entry as a `1×1` tensor.
    pub fn pick(&mut self, x: Var, r: usize, c: usize) -> Result<Var> {
        let (m, n) = self.mat(x, "pick")?;
        if r >= m || c >= n {
            return Err(KalmError::dim(format!("pick ({r},{c}) outside {m}x{n}")));
        }
        let out = Tensor::scalar(self.value(x).get(r, c));
        self.push_unary(x, out, Op::Pick(x, r, c), "pick")
    }

    /// Reverse sweep from a scalar `loss`. The tape can be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(KalmError::StaleTape);
        }
        if self.value(loss).len() != 1 {
            return Err(KalmError::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0).reshape(self.value(loss).shape().to_vec())?);
        let mut params = ParamGrads::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.backprop_node(idx, &g, &mut grads)?;
            if let Op::Param(pid) = self.nodes[idx].op {
                params.map.insert(pid, g.clone());
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { vars: grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.mat(*a, "matmul")?;
                let n = self.value(*b).cols();
                if self.needs(*a) {
                    let mut ga = vec![0.0; m * k];
                    matmul_bt_into(g.data(), self.value(*b).data(), &mut ga, m, n, k);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, ga)?);
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; k * n];
                    matmul_at_into(self.value(*a).data(), g.data(), &mut gb, m, k, n);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, gb)?);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.mat(*a, "matmul_bt")?;
                let n = self.value(*b).rows();
                if self.needs(*a) {
                    let mut ga = vec![0.0; m * k];
                    matmul_into(g.data(), self.value(*b).data(), &mut ga, m, n, k);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, ga)?);
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; n * k];
                    matmul_at_into(g.data(), self.value(*a).data(), &mut gb, m, n, k);
                    self.accumulate(grads, *b, Tensor::matrix(n, k, gb)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y)?);
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y)?);
                }
            }
            Op::AddRow(x, r) => {
                self.accumulate(grads, *x, g.clone());
                if self.needs(*r) {
                    self.accumulate(grads, *r, column_sums(g)?);
                }
            }
            Op::MulRow(x, r) => {
                let n = g.cols();
                if self.needs(*x) {
                    let row = self.value(*r).data();
                    let mut gx = g.clone();
                    for chunk in gx.data_mut().chunks_mut(n) {
                        for (o, s) in chunk.iter_mut().zip(row) {
                            *o *= s;
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.needs(*r) {
                    let prod = g.zip_map(self.value(*x), |a, b| a * b)?;
                    self.accumulate(grads, *r, column_sums(&prod)?);
                }
            }
            Op::MulCol(x, c) => {
                let n = g.cols();
                if self.needs(*x) {
                    let col = self.value(*c).data();
                    let mut gx = g.clone();
                    for (chunk, s) in gx.data_mut().chunks_mut(n).zip(col) {
                        for o in chunk {
                            *o *= s;
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.needs(*c) {
                    let xs = self.value(*x).data();
                    let gc: Vec<f64> = g
                        .data()
                        .chunks(n)
                        .zip(xs.chunks(n))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                        .collect();
                    let rows = gc.len();
                    self.accumulate(grads, *c, Tensor::matrix(rows, 1, gc)?);
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, g.scale(*s)),
            Op::Tanh(x) => {
                let gx = g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv))?;
                self.accumulate(grads, *x, gx);
            }
            Op::Elu(x) => {
                let gx = g.zip_map(y, |gv, yv| if yv < 0.0 { gv * (yv + 1.0) } else { gv })?;
                self.accumulate(grads, *x, gx);
            }
            Op::Relu(x) => {
                let gx = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                self.accumulate(grads, *x, gx);
            }
            Op::LeakyRelu(x, slope) => {
                let s = *slope;
                let gx = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { s * gv })?;
                self.accumulate(grads, *x, gx);
            }
            Op::Gelu(x) => {
                let gx = g.zip_map(self.value(*x), |gv, v| {
                    let t = (GELU_C * (v + GELU_K * v * v * v)).tanh();
                    let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * v * v);
                    gv * (0.5 * (1.0 + t) + 0.5 * v * dt)
                })?;
                self.accumulate(grads, *x, gx);
            }
            Op::SoftmaxRows(x) => {
                let n = y.cols();
                let mut gx = g.clone();
                for (gr, yr) in gx.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (o, yv) in gr.iter_mut().zip(yr) {
                        *o = yv * (*o - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LogSoftmaxRows(x) => {
                let n = y.cols();
                let mut gx = g.clone();
                for (gr, yr) in gx.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                    let total: f64 = gr.iter().sum();
                    for (o, yv) in gr.iter_mut().zip(yr) {
                        *o -= yv.exp() * total;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SegmentSoftmax(x, seg) => {
                let n_seg = seg.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n_seg];
                for ((&s, gv), yv) in seg.iter().zip(g.data()).zip(y.data()) {
                    dot[s] += gv * yv;
                }
                let gx: Vec<f64> = seg
                    .iter()
                    .zip(g.data())
                    .zip(y.data())
                    .map(|((&s, gv), yv)| yv * (gv - dot[s]))
                    .collect();
                self.accumulate(grads, *x, Tensor::matrix(gx.len(), 1, gx)?);
            }
            Op::LayerNormRows { x, xhat, inv_std } => {
                let n = g.cols();
                let mut gx = g.clone();
                for (i, gr) in gx.data_mut().chunks_mut(n).enumerate() {
                    let xr = &xhat[i * n..(i + 1) * n];
                    let mean_g = gr.iter().sum::<f64>() / n as f64;
                    let mean_gx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for (o, xv) in gr.iter_mut().zip(xr) {
                        *o = inv_std[i] * (*o - mean_g - xv * mean_gx);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Dropout(x, mask) => {
                let mut gx = g.clone();
                for (o, m) in gx.data_mut().iter_mut().zip(mask.iter()) {
                    *o *= m;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let mut gp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            gp.extend_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                        }
                        self.accumulate(grads, p, Tensor::matrix(m, w, gp)?);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let n = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    if self.needs(p) {
                        let gp = g.data()[offset * n..(offset + r) * n].to_vec();
                        self.accumulate(grads, p, Tensor::matrix(r, n, gp)?);
                    }
                    offset += r;
                }
            }
            Op::SliceRows(x, start) => {
                let (m, n) = self.mat(*x, "slice_rows")?;
                let mut gx = vec![0.0; m * n];
                gx[start * n..start * n + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *x, Tensor::matrix(m, n, gx)?);
            }
            Op::SliceCols(x, start) => {
                let (m, n) = self.mat(*x, "slice_cols")?;
                let w = g.cols();
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    gx[i * n + start..i * n + start + w].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, *x, Tensor::matrix(m, n, gx)?);
            }
            Op::GatherRows(x, idx) => {
                let (m, n) = self.mat(*x, "gather_rows")?;
                let mut gx = vec![0.0; m * n];
                for (e, &i) in idx.iter().enumerate() {
                    for j in 0..n {
                        gx[i * n + j] += g.data()[e * n + j];
                    }
                }
                self.accumulate(grads, *x, Tensor::matrix(m, n, gx)?);
            }
            Op::ScatterAddRows(x, idx) => {
                let n = g.cols();
                let mut gx = Vec::with_capacity(idx.len() * n);
                for &t in idx.iter() {
                    gx.extend_from_slice(&g.data()[t * n..(t + 1) * n]);
                }
                self.accumulate(grads, *x, Tensor::matrix(idx.len(), n, gx)?);
            }
            Op::Transpose(x) => self.accumulate(grads, *x, g.transpose()?),
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                let n = self.value(*x).len();
                self.accumulate(grads, *x, Tensor::new(shape, vec![g.data()[0]; n])?);
            }
            Op::MeanRows(x) => {
                let (m, n) = self.mat(*x, "mean_rows")?;
                let mut gx = Vec::with_capacity(m * n);
                for _ in 0..m {
                    gx.extend(g.data().iter().map(|v| v / m as f64));
                }
                self.accumulate(grads, *x, Tensor::matrix(m, n, gx)?);
            }
            Op::Pick(x, r, c) => {
                let (m, n) = self.mat(*x, "pick")?;
                let mut gx = vec![0.0; m * n];
                gx[r * n + c] = g.data()[0];
                self.accumulate(grads, *x, Tensor::matrix(m, n, gx)?);
            }
        }
        Ok(())
    }
}

pub(crate) fn elu(v: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        v.exp_m1()
    }
}

fn column_sums(g: &Tensor) -> Result<Tensor> {
    let n = g.cols();
    let mut out = vec![0.0; n];
    for row in g.data().chunks(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::matrix(1, n, out)
}
