//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its value and a record of its
//! inputs. [`Tape::backward`] walks the nodes in reverse execution order and
//! accumulates gradients additively, so a node consumed by several
//! operations receives the sum of their contributions.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Probabilities are clamped to this floor before taking a logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Log(Var),
    Softmax(Var),
    SoftmaxCrossEntropy(Var, usize),
    Dot(Var, Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    AddN(Vec<Var>),
    Gather(Var, Vec<usize>),
    GatherMean(Var, Vec<Vec<usize>>),
    Pick(Var, usize),
    GradReverse(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims().ok_or_else(|| Error::Dimension {
        op,
        lhs: t.shape().to_vec(),
        rhs: vec![],
    })
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn softmax_row(x: &[f64], mask: Option<&[bool]>, out: &mut [f64]) {
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let max = x
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let mut total = 0.0;
    for (i, (o, v)) in out.iter_mut().zip(x).enumerate() {
        *o = if keep(i) { (v - max).exp() } else { 0.0 };
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable input, typically a parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never needs a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v`; zeros when nothing reached it.
    pub fn grad(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone())
                .expect("gradient shape tracks value shape"),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k) = dims("matmul", ta)?;
        let (k2, m) = dims("matmul", tb)?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let out = matmul_raw(ta.values(), tb.values(), n, k, m);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = dims("transpose", t)?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.values()[i * c + j];
            }
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::matrix(c, r, out)?, Op::Transpose(a), rg))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let out = ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = ta.shape().to_vec();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the `1 x c` row `b` to every row of the `r x c` matrix `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, c) = dims("add_row", ta)?;
        if tb.dims() != Some((1, c)) {
            return Err(mismatch("add_row", ta, tb));
        }
        let mut out = ta.values().to_vec();
        for i in 0..r {
            for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(tb.values()) {
                *o += v;
            }
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::AddRow(a, b), rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let out = t.values().iter().map(|x| f(*x)).collect();
        let shape = t.shape().to_vec();
        let rg = self.needs(&[a]);
        self.push(Tensor::new(shape, out).expect("same length"), op, rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.map(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Natural log with the argument clamped below at [`LOG_FLOOR`].
    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(LOG_FLOOR).ln(), Op::Log(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.softmax_impl(a, None)
    }

    /// Row-wise softmax where entries with `mask[j] == false` get weight
    /// exactly zero. A row with every entry masked comes out all zero.
    pub fn masked_softmax(&mut self, a: Var, mask: Vec<bool>) -> Result<Var> {
        self.softmax_impl(a, Some(mask))
    }

    fn softmax_impl(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = dims("softmax", t)?;
        if let Some(m) = &mask {
            if m.len() != c {
                return Err(Error::Dimension {
                    op: "masked_softmax",
                    lhs: t.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            softmax_row(
                &t.values()[i * c..(i + 1) * c],
                mask.as_deref(),
                &mut out[i * c..(i + 1) * c],
            );
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::Softmax(a), rg))
    }

    /// `-log softmax(logits)[target]` for a single row of logits, evaluated
    /// with max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        let (r, c) = dims("softmax_cross_entropy", t)?;
        if r != 1 || target >= c {
            return Err(Error::Contract(format!(
                "softmax_cross_entropy needs a single row with target < {c}, got shape {:?} and target {target}",
                t.shape()
            )));
        }
        let x = t.values();
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - x[target];
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy(logits, target),
            rg,
        ))
    }

    /// Inner product of two equally sized tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(mismatch("dot", ta, tb));
        }
        let s = ta.values().iter().zip(tb.values()).map(|(x, y)| x * y).sum();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).values().iter().sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let s = t.values().iter().sum::<f64>() / t.len() as f64;
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), rg))
    }

    /// Column means of an `r x c` matrix, as a `1 x c` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = dims("mean_rows", t)?;
        if r == 0 {
            return Err(Error::Contract("mean_rows of a matrix with no rows".into()));
        }
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(t.row_slice(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::row(out), Op::MeanRows(a), rg))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let rows = dims("concat_cols", self.value(*first))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let t = self.value(*p);
            let (r, c) = dims("concat_cols", t)?;
            if r != rows {
                return Err(mismatch("concat_cols", self.value(*first), t));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let t = self.value(*p);
            for i in 0..rows {
                out[i * total + offset..i * total + offset + w].copy_from_slice(t.row_slice(i));
            }
            offset += w;
        }
        let rg = self.needs(parts);
        Ok(self.push(
            Tensor::matrix(rows, total, out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Sum of equally shaped tensors.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("add_n of nothing".into()))?;
        let shape = self.value(*first).shape().to_vec();
        let mut out = vec![0.0; self.value(*first).len()];
        for p in parts {
            let t = self.value(*p);
            if t.shape() != shape.as_slice() {
                return Err(mismatch("add_n", self.value(*first), t));
            }
            for (o, v) in out.iter_mut().zip(t.values()) {
                *o += v;
            }
        }
        let rg = self.needs(parts);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddN(parts.to_vec()), rg))
    }

    /// Embedding lookup: selects `rows` of `table` into a new matrix.
    pub fn gather(&mut self, table: Var, rows: Vec<usize>) -> Result<Var> {
        let t = self.value(table);
        let (r, c) = dims("gather", t)?;
        if let Some(bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::Data(format!(
                "gather index {bad} out of range for table with {r} rows"
            )));
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in &rows {
            out.extend_from_slice(t.row_slice(i));
        }
        let n = rows.len();
        let rg = self.needs(&[table]);
        Ok(self.push(Tensor::matrix(n, c, out)?, Op::Gather(table, rows), rg))
    }

    /// Mean of looked-up rows per group: output row `g` averages the rows of
    /// `table` listed in `groups[g]`, or is zero for an empty group.
    pub fn gather_mean(&mut self, table: Var, groups: Vec<Vec<usize>>) -> Result<Var> {
        let t = self.value(table);
        let (r, c) = dims("gather_mean", t)?;
        let mut out = vec![0.0; groups.len() * c];
        for (g, idx) in groups.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let row = &mut out[g * c..(g + 1) * c];
            for &i in idx {
                if i >= r {
                    return Err(Error::Data(format!(
                        "gather index {i} out of range for table with {r} rows"
                    )));
                }
                for (o, v) in row.iter_mut().zip(t.row_slice(i)) {
                    *o += v;
                }
            }
            let inv = 1.0 / idx.len() as f64;
            row.iter_mut().for_each(|o| *o *= inv);
        }
        let n = groups.len();
        let rg = self.needs(&[table]);
        Ok(self.push(
            Tensor::matrix(n, c, out)?,
            Op::GatherMean(table, groups),
            rg,
        ))
    }

    /// Selects one element by flat index.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let t = self.value(a);
        let v = *t.values().get(index).ok_or_else(|| {
            Error::Contract(format!(
                "pick index {index} out of range for shape {:?}",
                t.shape()
            ))
        })?;
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::scalar(v), Op::Pick(a, index), rg))
    }

    /// Identity on the way forward; multiplies the gradient by `-lambda` on
    /// the way back.
    pub fn grad_reverse(&mut self, a: Var, lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Contract(format!(
                "gradient reversal needs a finite lambda >= 0, got {lambda}"
            )));
        }
        let value = self.value(a).clone();
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::GradReverse(a, lambda), rg))
    }

    /// Clears all accumulated gradients so `backward` may run again.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    /// Accumulates `d loss / d node` into every node that `loss` depends on.
    ///
    /// A second call without an intervening [`Tape::zero_grad`] is rejected.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this tape; call zero_grad first".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: &[f64]) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
            None => node.grad = Some(delta.to_vec()),
        }
    }

    fn accumulate_with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let n = node.value.len();
        let g = node.grad.get_or_insert_with(|| vec![0.0; n]);
        f(g);
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        // The op record is moved out while its inputs are updated and put
        // back afterwards.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.value(*a).dims().unwrap();
                let m = self.value(*b).cols();
                if self.nodes[a.0].requires_grad {
                    // dA = G B^T
                    let bv = self.value(*b).values();
                    let mut da = vec![0.0; n * k];
                    for i in 0..n {
                        for p in 0..k {
                            let brow = &bv[p * m..(p + 1) * m];
                            da[i * k + p] = g[i * m..(i + 1) * m]
                                .iter()
                                .zip(brow)
                                .map(|(x, y)| x * y)
                                .sum();
                        }
                    }
                    self.accumulate(*a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = A^T G
                    let av = self.value(*a).values();
                    let mut db = vec![0.0; k * m];
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, gv) in db[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *o += x * gv;
                            }
                        }
                    }
                    self.accumulate(*b, &db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims().unwrap();
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g[j * r + i];
                    }
                }
                self.accumulate(*a, &da);
            }
            Op::Add(a, b) => {
                self.accumulate(*a, g);
                self.accumulate(*b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.accumulate(*b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.value(*b).values())
                    .map(|(x, y)| x * y)
                    .collect();
                let db: Vec<f64> = g
                    .iter()
                    .zip(self.value(*a).values())
                    .map(|(x, y)| x * y)
                    .collect();
                self.accumulate(*a, &da);
                self.accumulate(*b, &db);
            }
            Op::AddRow(a, b) => {
                self.accumulate(*a, g);
                let c = self.value(*b).len();
                self.accumulate_with(*b, |db| {
                    for row in g.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                });
            }
            Op::Scale(a, f) => {
                let da: Vec<f64> = g.iter().map(|v| v * f).collect();
                self.accumulate(*a, &da);
            }
            Op::Tanh(a) => {
                let y = self.nodes[idx].value.values();
                let da: Vec<f64> = g.iter().zip(y).map(|(gv, y)| gv * (1.0 - y * y)).collect();
                self.accumulate(*a, &da);
            }
            Op::Relu(a) => {
                let x = self.value(*a).values();
                let da: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(*a, &da);
            }
            Op::Log(a) => {
                let x = self.value(*a).values();
                let da: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(gv, x)| if *x > LOG_FLOOR { gv / x } else { 0.0 })
                    .collect();
                self.accumulate(*a, &da);
            }
            Op::Softmax(a) => {
                let y = &self.nodes[idx].value;
                let c = y.cols();
                let mut da = vec![0.0; y.len()];
                for (i, (yr, gr)) in y.values().chunks(c).zip(g.chunks(c)).enumerate() {
                    let inner: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        da[i * c + j] = yr[j] * (gr[j] - inner);
                    }
                }
                self.accumulate(*a, &da);
            }
            Op::SoftmaxCrossEntropy(a, target) => {
                let x = self.value(*a).values();
                let mut p = vec![0.0; x.len()];
                softmax_row(x, None, &mut p);
                p[*target] -= 1.0;
                p.iter_mut().for_each(|v| *v *= g[0]);
                self.accumulate(*a, &p);
            }
            Op::Dot(a, b) => {
                let da: Vec<f64> = self.value(*b).values().iter().map(|v| v * g[0]).collect();
                let db: Vec<f64> = self.value(*a).values().iter().map(|v| v * g[0]).collect();
                self.accumulate(*a, &da);
                self.accumulate(*b, &db);
            }
            Op::Sum(a) => {
                self.accumulate_with(*a, |da| da.iter_mut().for_each(|v| *v += g[0]));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                self.accumulate_with(*a, |da| da.iter_mut().for_each(|v| *v += g[0] / n));
            }
            Op::MeanRows(a) => {
                let (r, c) = self.value(*a).dims().unwrap();
                let inv = 1.0 / r as f64;
                self.accumulate_with(*a, |da| {
                    for row in da.chunks_mut(c) {
                        row.iter_mut().zip(g).for_each(|(o, v)| *o += v * inv);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = self.nodes[idx].value.cols();
                let rows = self.nodes[idx].value.rows();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    self.accumulate_with(*p, |dp| {
                        for i in 0..rows {
                            let src = &g[i * total + offset..i * total + offset + w];
                            dp[i * w..(i + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(o, v)| *o += v);
                        }
                    });
                    offset += w;
                }
            }
            Op::AddN(parts) => {
                for p in parts {
                    self.accumulate(*p, g);
                }
            }
            Op::Gather(table, rows) => {
                let c = self.value(*table).cols();
                self.accumulate_with(*table, |dt| {
                    for (k, &i) in rows.iter().enumerate() {
                        dt[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(&g[k * c..(k + 1) * c])
                            .for_each(|(o, v)| *o += v);
                    }
                });
            }
            Op::GatherMean(table, groups) => {
                let c = self.value(*table).cols();
                self.accumulate_with(*table, |dt| {
                    for (k, idx) in groups.iter().enumerate() {
                        if idx.is_empty() {
                            continue;
                        }
                        let inv = 1.0 / idx.len() as f64;
                        let src = &g[k * c..(k + 1) * c];
                        for &i in idx {
                            dt[i * c..(i + 1) * c]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(o, v)| *o += v * inv);
                        }
                    }
                });
            }
            Op::Pick(a, index) => {
                let index = *index;
                self.accumulate_with(*a, |da| da[index] += g[0]);
            }
            Op::GradReverse(a, lambda) => {
                let da: Vec<f64> = g.iter().map(|v| -lambda * v).collect();
                self.accumulate(*a, &da);
            }
        }
        self.nodes[idx].op = op;
    }
}
