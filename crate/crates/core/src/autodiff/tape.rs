use super::tensor::{add_into, axpy, dot_slice};
use super::{AutodiffError, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The operation kinds the tape can record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatVec,
    VecMat,
    MatMulNt,
    Add,
    Sub,
    Mul,
    AddRow,
    Affine,
    Tanh,
    Sigmoid,
    Softmax,
    LogSoftmax,
    Concat,
    Stack,
    Dot,
    Sum,
    MeanRows,
    DivScalar,
    MulScalar,
    Slice,
    Gather,
    Rows,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatVec => "matvec",
            OpKind::VecMat => "vecmat",
            OpKind::MatMulNt => "matmul_nt",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::AddRow => "add_row",
            OpKind::Affine => "affine",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::Concat => "concat",
            OpKind::Stack => "stack",
            OpKind::Dot => "dot",
            OpKind::Sum => "sum",
            OpKind::MeanRows => "mean_rows",
            OpKind::DivScalar => "div_scalar",
            OpKind::MulScalar => "mul_scalar",
            OpKind::Slice => "slice",
            OpKind::Gather => "gather",
            OpKind::Rows => "rows",
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatVec(Var, Var),
    VecMat(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Dot(Var, Var),
    Sum(Var),
    MeanRows(Var),
    DivScalar(Var, Var),
    MulScalar(Var, Var),
    Slice(Var, usize),
    Gather(Var, Vec<usize>),
    Rows(Var, Vec<usize>),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatVec(..) => OpKind::MatVec,
            Op::VecMat(..) => OpKind::VecMat,
            Op::MatMulNt(..) => OpKind::MatMulNt,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Affine(..) => OpKind::Affine,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LogSoftmax(..) => OpKind::LogSoftmax,
            Op::Concat(..) => OpKind::Concat,
            Op::Stack(..) => OpKind::Stack,
            Op::Dot(..) => OpKind::Dot,
            Op::Sum(..) => OpKind::Sum,
            Op::MeanRows(..) => OpKind::MeanRows,
            Op::DivScalar(..) => OpKind::DivScalar,
            Op::MulScalar(..) => OpKind::MulScalar,
            Op::Slice(..) => OpKind::Slice,
            Op::Gather(..) => OpKind::Gather,
            Op::Rows(..) => OpKind::Rows,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, so every op's inputs precede it and a
/// single reverse sweep visits each node once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to the leaves of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(op: OpKind, shapes: &[&[usize]]) -> AutodiffError {
    AutodiffError::Shape {
        op: op.name(),
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    for x in row.iter_mut() {
        *x -= lse;
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

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input: gradients are reported for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    fn vec_len(&self, op: OpKind, v: Var) -> Result<usize, AutodiffError> {
        let t = self.value(v);
        if t.is_vector() {
            Ok(t.len())
        } else {
            Err(shape_err(op, &[t.shape()]))
        }
    }

    fn mat_dims(&self, op: OpKind, v: Var) -> Result<(usize, usize), AutodiffError> {
        let t = self.value(v);
        if t.is_matrix() {
            Ok((t.rows(), t.cols()))
        } else {
            Err(shape_err(op, &[t.shape()]))
        }
    }

    fn scalar_value(&self, op: OpKind, v: Var) -> Result<f64, AutodiffError> {
        let t = self.value(v);
        if t.is_scalar() {
            Ok(t.item())
        } else {
            Err(shape_err(op, &[t.shape()]))
        }
    }

    /// `m · x` for `m: [r, c]`, `x: [c]`.
    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.mat_dims(OpKind::MatVec, m)?;
        let n = self.vec_len(OpKind::MatVec, x)?;
        if n != c {
            return Err(shape_err(OpKind::MatVec, &[self.shape(m), self.shape(x)]));
        }
        let mv = self.value(m);
        let xv = self.value(x).data();
        let out: Vec<f64> = (0..r).map(|i| dot_slice(mv.row(i), xv)).collect();
        Ok(self.record(Tensor::vector(out), Op::MatVec(m, x), &[m, x]))
    }

    /// `wᵀ · m` for `w: [n]`, `m: [n, d]`: the `w`-weighted sum of the rows of `m`.
    pub fn vecmat(&mut self, w: Var, m: Var) -> Result<Var, AutodiffError> {
        let n = self.vec_len(OpKind::VecMat, w)?;
        let (r, d) = self.mat_dims(OpKind::VecMat, m)?;
        if n != r {
            return Err(shape_err(OpKind::VecMat, &[self.shape(w), self.shape(m)]));
        }
        let mut out = vec![0.0; d];
        let wv = self.value(w).data();
        let mv = self.value(m);
        for (i, &wi) in wv.iter().enumerate() {
            axpy(&mut out, wi, mv.row(i));
        }
        Ok(self.record(Tensor::vector(out), Op::VecMat(w, m), &[w, m]))
    }

    /// `a · bᵀ` for `a: [n, k]`, `b: [m, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (n, k) = self.mat_dims(OpKind::MatMulNt, a)?;
        let (m, k2) = self.mat_dims(OpKind::MatMulNt, b)?;
        if k != k2 {
            return Err(shape_err(OpKind::MatMulNt, &[self.shape(a), self.shape(b)]));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let ar = av.row(i);
            for j in 0..m {
                out.push(dot_slice(ar, bv.row(j)));
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        Ok(self.record(t, Op::MatMulNt(a, b), &[a, b]))
    }

    fn elementwise(
        &mut self,
        kind: OpKind,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(kind, &[av.shape(), bv.shape()]));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.elementwise(OpKind::Add, a, b, |x, y| x + y)?;
        Ok(self.record(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.elementwise(OpKind::Sub, a, b, |x, y| x - y)?;
        Ok(self.record(t, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.elementwise(OpKind::Mul, a, b, |x, y| x * y)?;
        Ok(self.record(t, Op::Mul(a, b), &[a, b]))
    }

    /// Adds the vector `v: [c]` to every row of `m: [n, c]`.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var, AutodiffError> {
        let (n, c) = self.mat_dims(OpKind::AddRow, m)?;
        let len = self.vec_len(OpKind::AddRow, v)?;
        if len != c {
            return Err(shape_err(OpKind::AddRow, &[self.shape(m), self.shape(v)]));
        }
        let mut data = self.value(m).data().to_vec();
        let vv = self.value(v).data();
        for i in 0..n {
            add_into(&mut data[i * c..(i + 1) * c], vv);
        }
        let t = Tensor::new(vec![n, c], data)?;
        Ok(self.record(t, Op::AddRow(m, v), &[m, v]))
    }

    /// `scale * x + shift` with constant `scale` and `shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| scale * v + shift).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("shape preserved");
        self.record(t, Op::Affine(x, scale), &[x])
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v.tanh()).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("shape preserved");
        self.record(t, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| sigmoid(v)).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("shape preserved");
        self.record(t, Op::Sigmoid(x), &[x])
    }

    /// Softmax over the last axis (per row for matrices), max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        let c = if t.is_vector() { t.len() } else { t.cols() };
        for row in t.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        self.record(t, Op::Softmax(x), &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        let c = if t.is_vector() { t.len() } else { t.cols() };
        for row in t.data_mut().chunks_mut(c) {
            log_softmax_in_place(row);
        }
        self.record(t, Op::LogSoftmax(x), &[x])
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        if parts.is_empty() {
            return Err(shape_err(OpKind::Concat, &[]));
        }
        let mut data = Vec::new();
        for &p in parts {
            self.vec_len(OpKind::Concat, p)?;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.record(Tensor::vector(data), Op::Concat(parts.to_vec()), parts))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var, AutodiffError> {
        if rows.is_empty() {
            return Err(shape_err(OpKind::Stack, &[]));
        }
        let d = self.vec_len(OpKind::Stack, rows[0])?;
        let mut data = Vec::with_capacity(d * rows.len());
        for &r in rows {
            if self.vec_len(OpKind::Stack, r)? != d {
                return Err(shape_err(
                    OpKind::Stack,
                    &[self.shape(rows[0]), self.shape(r)],
                ));
            }
            data.extend_from_slice(self.value(r).data());
        }
        let t = Tensor::new(vec![rows.len(), d], data)?;
        Ok(self.record(t, Op::Stack(rows.to_vec()), rows))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(OpKind::Dot, &[av.shape(), bv.shape()]));
        }
        let s = dot_slice(av.data(), bv.data());
        Ok(self.record(Tensor::scalar(s), Op::Dot(a, b), &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.record(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Mean over the rows of `m: [n, d]`.
    pub fn mean_rows(&mut self, m: Var) -> Result<Var, AutodiffError> {
        let (n, d) = self.mat_dims(OpKind::MeanRows, m)?;
        let mv = self.value(m);
        let mut out = vec![0.0; d];
        for i in 0..n {
            add_into(&mut out, mv.row(i));
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(self.record(Tensor::vector(out), Op::MeanRows(m), &[m]))
    }

    /// `x / s` for a scalar node `s`.
    pub fn div_scalar(&mut self, x: Var, s: Var) -> Result<Var, AutodiffError> {
        let sv = self.scalar_value(OpKind::DivScalar, s)?;
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v / sv).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.record(t, Op::DivScalar(x, s), &[x, s]))
    }

    /// `x * s` for a scalar node `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var, AutodiffError> {
        let sv = self.scalar_value(OpKind::MulScalar, s)?;
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * sv).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.record(t, Op::MulScalar(x, s), &[x, s]))
    }

    /// Contiguous sub-vector `x[start..start + len]`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let n = self.vec_len(OpKind::Slice, x)?;
        if len == 0 || start + len > n {
            return Err(shape_err(OpKind::Slice, &[self.shape(x), &[start, len]]));
        }
        let data = self.value(x).data()[start..start + len].to_vec();
        Ok(self.record(Tensor::vector(data), Op::Slice(x, start), &[x]))
    }

    /// `out[k] = x[idx[k]]`; indices may repeat.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let n = self.vec_len(OpKind::Gather, x)?;
        if idx.is_empty() || idx.iter().any(|&i| i >= n) {
            return Err(AutodiffError::Index {
                op: OpKind::Gather.name(),
                index: idx.iter().copied().find(|&i| i >= n).unwrap_or(0),
                len: n,
            });
        }
        let xv = self.value(x).data();
        let data = idx.iter().map(|&i| xv[i]).collect();
        Ok(self.record(Tensor::vector(data), Op::Gather(x, idx.to_vec()), &[x]))
    }

    /// Gathers rows of `table: [n, d]` into `[idx.len(), d]`.
    pub fn rows(&mut self, table: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let (n, d) = self.mat_dims(OpKind::Rows, table)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(AutodiffError::Index {
                op: OpKind::Rows.name(),
                index: bad,
                len: n,
            });
        }
        if idx.is_empty() {
            return Err(shape_err(OpKind::Rows, &[self.shape(table), &[0]]));
        }
        let tv = self.value(table);
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(tv.row(i));
        }
        let t = Tensor::new(vec![idx.len(), d], data)?;
        Ok(self.record(t, Op::Rows(table, idx.to_vec()), &[table]))
    }

    /// Single row of a matrix as a vector.
    pub fn row(&mut self, table: Var, i: usize) -> Result<Var, AutodiffError> {
        let (n, d) = self.mat_dims(OpKind::Rows, table)?;
        if i >= n {
            return Err(AutodiffError::Index {
                op: OpKind::Rows.name(),
                index: i,
                len: n,
            });
        }
        let data = self.value(table).row(i).to_vec();
        let t = Tensor::new(vec![d], data)?;
        Ok(self.record(t, Op::Rows(table, vec![i]), &[table]))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Returns gradients for every leaf that requires them. A node feeding
    /// several consumers accumulates the sum of their contributions.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(AutodiffError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            log::warn!(
                "backward called on a loss with no trainable inputs; all gradients are zero"
            );
            return Ok(Gradients {
                grads: vec![None; self.nodes.len()],
            });
        }
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
        }

        let mut out: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let g = if matches!(node.op, Op::Leaf) && node.requires_grad {
                grads.get_mut(id).and_then(|g| g.take()).map(|data| {
                    Tensor::new(node.value.shape().to_vec(), data).expect("gradient shape")
                })
            } else {
                None
            };
            out.push(g);
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let y = node.value.data();
        // Lazily allocated gradient buffer of an input node, or None when the
        // input does not need one.
        macro_rules! buf {
            ($v:expr) => {{
                let v: Var = $v;
                if self.nodes[v.0].requires_grad {
                    let len = self.nodes[v.0].value.len();
                    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatVec(m, x) => {
                let (mv, xv) = (self.value(*m), self.value(*x));
                if let Some(gm) = buf!(*m) {
                    let c = mv.cols();
                    for (i, &gi) in g.iter().enumerate() {
                        if gi != 0.0 {
                            axpy(&mut gm[i * c..(i + 1) * c], gi, xv.data());
                        }
                    }
                }
                if let Some(gx) = buf!(*x) {
                    for (i, &gi) in g.iter().enumerate() {
                        if gi != 0.0 {
                            axpy(gx, gi, mv.row(i));
                        }
                    }
                }
            }
            Op::VecMat(w, m) => {
                let (wv, mv) = (self.value(*w), self.value(*m));
                if let Some(gw) = buf!(*w) {
                    for (i, gwi) in gw.iter_mut().enumerate() {
                        *gwi += dot_slice(mv.row(i), g);
                    }
                }
                if let Some(gm) = buf!(*m) {
                    let d = mv.cols();
                    for (i, &wi) in wv.data().iter().enumerate() {
                        axpy(&mut gm[i * d..(i + 1) * d], wi, g);
                    }
                }
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k) = (av.rows(), av.cols());
                let m = bv.rows();
                if let Some(ga) = buf!(*a) {
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        let row = &mut ga[i * k..(i + 1) * k];
                        for (j, &gij) in gi.iter().enumerate() {
                            axpy(row, gij, bv.row(j));
                        }
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        let ar = av.row(i);
                        for (j, &gij) in gi.iter().enumerate() {
                            axpy(&mut gb[j * k..(j + 1) * k], gij, ar);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = buf!(*a) {
                    add_into(ga, g);
                }
                if let Some(gb) = buf!(*b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = buf!(*a) {
                    add_into(ga, g);
                }
                if let Some(gb) = buf!(*b) {
                    axpy(gb, -1.0, g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = buf!(*a) {
                    for ((o, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gi * bi;
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for ((o, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *o += gi * ai;
                    }
                }
            }
            Op::AddRow(m, v) => {
                if let Some(gm) = buf!(*m) {
                    add_into(gm, g);
                }
                if let Some(gv) = buf!(*v) {
                    let c = gv.len();
                    for row in g.chunks(c) {
                        add_into(gv, row);
                    }
                }
            }
            Op::Affine(x, scale) => {
                if let Some(gx) = buf!(*x) {
                    axpy(gx, *scale, g);
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = buf!(*x) {
                    for ((o, gi), yi) in gx.iter_mut().zip(g).zip(y) {
                        *o += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = buf!(*x) {
                    for ((o, gi), yi) in gx.iter_mut().zip(g).zip(y) {
                        *o += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Softmax(x) => {
                let c = if node.value.is_vector() {
                    node.value.len()
                } else {
                    node.value.cols()
                };
                if let Some(gx) = buf!(*x) {
                    for ((grow, yrow), orow) in g.chunks(c).zip(y.chunks(c)).zip(gx.chunks_mut(c)) {
                        let s = dot_slice(grow, yrow);
                        for ((o, gi), yi) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += yi * (gi - s);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let c = if node.value.is_vector() {
                    node.value.len()
                } else {
                    node.value.cols()
                };
                if let Some(gx) = buf!(*x) {
                    for ((grow, yrow), orow) in g.chunks(c).zip(y.chunks(c)).zip(gx.chunks_mut(c)) {
                        let s: f64 = grow.iter().sum();
                        for ((o, gi), yi) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += gi - yi.exp() * s;
                        }
                    }
                }
            }
            Op::Concat(parts) | Op::Stack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    if let Some(gp) = buf!(p) {
                        add_into(gp, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = buf!(*a) {
                    axpy(ga, g[0], bv);
                }
                if let Some(gb) = buf!(*b) {
                    axpy(gb, g[0], av);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = buf!(*x) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::MeanRows(m) => {
                let n = self.value(*m).rows() as f64;
                if let Some(gm) = buf!(*m) {
                    let d = g.len();
                    for row in gm.chunks_mut(d) {
                        axpy(row, 1.0 / n, g);
                    }
                }
            }
            Op::DivScalar(x, s) => {
                let sv = self.value(*s).item();
                let xv = self.value(*x).data();
                if let Some(gx) = buf!(*x) {
                    axpy(gx, 1.0 / sv, g);
                }
                if let Some(gs) = buf!(*s) {
                    gs[0] -= dot_slice(g, xv) / (sv * sv);
                }
            }
            Op::MulScalar(x, s) => {
                let sv = self.value(*s).item();
                let xv = self.value(*x).data();
                if let Some(gx) = buf!(*x) {
                    axpy(gx, sv, g);
                }
                if let Some(gs) = buf!(*s) {
                    gs[0] += dot_slice(g, xv);
                }
            }
            Op::Slice(x, start) => {
                if let Some(gx) = buf!(*x) {
                    add_into(&mut gx[*start..*start + g.len()], g);
                }
            }
            Op::Gather(x, idx) => {
                if let Some(gx) = buf!(*x) {
                    for (&i, gi) in idx.iter().zip(g) {
                        gx[i] += gi;
                    }
                }
            }
            Op::Rows(table, idx) => {
                let d = self.value(*table).cols();
                if let Some(gt) = buf!(*table) {
                    for (k, &i) in idx.iter().enumerate() {
                        add_into(&mut gt[i * d..(i + 1) * d], &g[k * d..(k + 1) * d]);
                    }
                }
            }
        }
    }
}
