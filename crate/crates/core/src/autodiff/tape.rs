use std::collections::BTreeMap;

use super::kernels;
use super::{AutodiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The differentiable primitives understood by the tape.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// A (n×k) · B (k×m).
    MatMul,
    /// A (n×k) · Bᵀ with B m×k.
    MatMulT,
    Add,
    Mul,
    /// x (n×d) plus a length-d bias on every row.
    AddRowBias,
    Scale(f32),
    AddScalar(f32),
    Exp,
    Log,
    Relu,
    /// Softmax along the last axis.
    Softmax,
    LogSoftmax,
    /// Softmax where row `r` only sees columns `0..offset + r + 1`; the rest are zero.
    CausalSoftmax {
        offset: usize,
    },
    /// Parameter-free RMS normalisation of each row.
    RmsNorm,
    /// Rows of a table selected by index.
    GatherRows(Vec<usize>),
    /// One element per row, `out[r] = x[r, idx[r]]`, shaped n×1.
    Pick(Vec<usize>),
    ConcatRows,
    SliceRows {
        start: usize,
        end: usize,
    },
    Sum,
    Mean,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::MatMulT => "matmul_t",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::AddRowBias => "add_row_bias",
            Primitive::Scale(_) => "scale",
            Primitive::AddScalar(_) => "add_scalar",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Relu => "relu",
            Primitive::Softmax => "softmax",
            Primitive::LogSoftmax => "log_softmax",
            Primitive::CausalSoftmax { .. } => "causal_softmax",
            Primitive::RmsNorm => "rms_norm",
            Primitive::GatherRows(_) => "gather_rows",
            Primitive::Pick(_) => "pick",
            Primitive::ConcatRows => "concat_rows",
            Primitive::SliceRows { .. } => "slice_rows",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Primitive::MatMul
            | Primitive::MatMulT
            | Primitive::Add
            | Primitive::Mul
            | Primitive::AddRowBias
            | Primitive::ConcatRows => 2,
            _ => 1,
        }
    }
}

#[derive(Debug)]
enum Record {
    Leaf,
    Apply {
        prim: Primitive,
        inputs: Vec<Var>,
        /// Per-row inverse RMS for `RmsNorm`.
        saved: Vec<f32>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    record: Record,
}

/// Ordered record of primitive applications. Nodes are appended in
/// evaluation order, so every input precedes its consumer.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of the backward root with respect to each grad-requiring leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(&var)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn shape_err(prim: &Primitive, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op: prim.name(),
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn dims(prim: &Primitive, t: &Tensor) -> Result<(usize, usize), AutodiffError> {
    t.dims2().ok_or_else(|| shape_err(prim, t.shape(), &[]))
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

    /// A leaf whose gradient is wanted.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Record::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Record::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, record: Record) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            record,
        });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `prim` on `inputs` and records it.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var, AutodiffError> {
        if inputs.len() != prim.arity() {
            return Err(AutodiffError::Arity {
                op: prim.name(),
                expected: prim.arity(),
                got: inputs.len(),
            });
        }
        let (value, saved) = self.eval(&prim, inputs)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let record = if requires_grad {
            Record::Apply {
                prim,
                inputs: inputs.to_vec(),
                saved,
            }
        } else {
            Record::Leaf
        };
        Ok(self.push(value, requires_grad, record))
    }

    fn eval(&self, prim: &Primitive, inputs: &[Var]) -> Result<(Tensor, Vec<f32>), AutodiffError> {
        let a = &self.nodes[inputs[0].0].value;
        let b = inputs.get(1).map(|v| &self.nodes[v.0].value);
        let mut saved = Vec::new();
        let out = match prim {
            Primitive::MatMul => {
                let b = b.expect("arity checked");
                let (n, k) = dims(prim, a)?;
                let (k2, m) = dims(prim, b)?;
                if k != k2 {
                    return Err(shape_err(prim, a.shape(), b.shape()));
                }
                Tensor::matrix(n, m, kernels::matmul(a.data(), b.data(), n, k, m))
            }
            Primitive::MatMulT => {
                let b = b.expect("arity checked");
                let (n, k) = dims(prim, a)?;
                let (m, k2) = dims(prim, b)?;
                if k != k2 {
                    return Err(shape_err(prim, a.shape(), b.shape()));
                }
                Tensor::matrix(n, m, kernels::matmul_t(a.data(), b.data(), n, k, m))
            }
            Primitive::Add | Primitive::Mul => {
                let b = b.expect("arity checked");
                if a.shape() != b.shape() {
                    return Err(shape_err(prim, a.shape(), b.shape()));
                }
                let data = if matches!(prim, Primitive::Add) {
                    a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()
                } else {
                    a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect()
                };
                Tensor::new(a.shape().to_vec(), data)
            }
            Primitive::AddRowBias => {
                let b = b.expect("arity checked");
                let (_, d) = dims(prim, a)?;
                let (br, bd) = dims(prim, b)?;
                if br != 1 || bd != d {
                    return Err(shape_err(prim, a.shape(), b.shape()));
                }
                let mut data = a.data().to_vec();
                for row in data.chunks_exact_mut(d) {
                    for (x, &bias) in row.iter_mut().zip(b.data()) {
                        *x += bias;
                    }
                }
                Tensor::new(a.shape().to_vec(), data)
            }
            Primitive::Scale(c) => map(a, |x| x * c),
            Primitive::AddScalar(c) => map(a, |x| x + c),
            Primitive::Exp => map(a, f32::exp),
            Primitive::Log => map(a, f32::ln),
            Primitive::Relu => map(a, |x| x.max(0.0)),
            Primitive::Softmax | Primitive::LogSoftmax => {
                let (_, d) = dims(prim, a)?;
                let mut data = vec![0.0; a.len()];
                for (x, o) in a.data().chunks_exact(d).zip(data.chunks_exact_mut(d)) {
                    if matches!(prim, Primitive::Softmax) {
                        kernels::softmax_row(x, o);
                    } else {
                        kernels::log_softmax_row(x, o);
                    }
                }
                Tensor::new(a.shape().to_vec(), data)
            }
            Primitive::CausalSoftmax { offset } => {
                let (n, d) = dims(prim, a)?;
                if offset + n > d {
                    return Err(shape_err(prim, a.shape(), &[*offset]));
                }
                let mut data = vec![0.0; a.len()];
                for r in 0..n {
                    let valid = offset + r + 1;
                    kernels::softmax_row(
                        &a.data()[r * d..r * d + valid],
                        &mut data[r * d..r * d + valid],
                    );
                }
                Tensor::new(a.shape().to_vec(), data)
            }
            Primitive::RmsNorm => {
                let (_, d) = dims(prim, a)?;
                let mut data = vec![0.0; a.len()];
                for (x, o) in a.data().chunks_exact(d).zip(data.chunks_exact_mut(d)) {
                    saved.push(kernels::rms_norm_row(x, o));
                }
                Tensor::new(a.shape().to_vec(), data)
            }
            Primitive::GatherRows(idx) => {
                let (rows, d) = dims(prim, a)?;
                if idx.is_empty() {
                    return Err(shape_err(prim, a.shape(), &[0]));
                }
                let mut data = Vec::with_capacity(idx.len() * d);
                for &i in idx {
                    if i >= rows {
                        return Err(AutodiffError::IndexOutOfRange {
                            op: prim.name(),
                            index: i,
                            bound: rows,
                        });
                    }
                    data.extend_from_slice(a.row(i));
                }
                Tensor::matrix(idx.len(), d, data)
            }
            Primitive::Pick(idx) => {
                let (n, d) = dims(prim, a)?;
                if idx.len() != n {
                    return Err(shape_err(prim, a.shape(), &[idx.len()]));
                }
                let mut data = Vec::with_capacity(n);
                for (r, &c) in idx.iter().enumerate() {
                    if c >= d {
                        return Err(AutodiffError::IndexOutOfRange {
                            op: prim.name(),
                            index: c,
                            bound: d,
                        });
                    }
                    data.push(a.data()[r * d + c]);
                }
                Tensor::matrix(n, 1, data)
            }
            Primitive::ConcatRows => {
                let b = b.expect("arity checked");
                let (n1, d) = dims(prim, a)?;
                let (n2, d2) = dims(prim, b)?;
                if d != d2 {
                    return Err(shape_err(prim, a.shape(), b.shape()));
                }
                let mut data = Vec::with_capacity((n1 + n2) * d);
                data.extend_from_slice(a.data());
                data.extend_from_slice(b.data());
                Tensor::matrix(n1 + n2, d, data)
            }
            Primitive::SliceRows { start, end } => {
                let (n, d) = dims(prim, a)?;
                if start >= end || *end > n {
                    return Err(shape_err(prim, a.shape(), &[*start, *end]));
                }
                Tensor::matrix(end - start, d, a.data()[start * d..end * d].to_vec())
            }
            Primitive::Sum => Tensor::scalar(a.data().iter().sum()),
            Primitive::Mean => Tensor::scalar(a.data().iter().sum::<f32>() / a.len() as f32),
        };
        Ok((out, saved))
    }

    /// Reverse pass from a scalar root. Every grad-requiring leaf gets an
    /// entry; leaves the root does not depend on get zeros.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(AutodiffError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; root.0 + 1];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let Record::Apply {
                prim,
                inputs,
                saved,
            } = &node.record
            else {
                continue;
            };
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(prim, inputs, saved, &node.value, &g, &mut grads);
        }
        let mut out = Gradients::default();
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.record, Record::Leaf) {
                let data = grads
                    .get_mut(idx)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                out.grads
                    .insert(Var(idx), Tensor::new(node.value.shape().to_vec(), data));
            }
        }
        Ok(out)
    }

    fn propagate(
        &self,
        prim: &Primitive,
        inputs: &[Var],
        saved: &[f32],
        out: &Tensor,
        g: &[f32],
        grads: &mut [Option<Vec<f32>>],
    ) {
        let a_var = inputs[0];
        let a = &self.nodes[a_var.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, delta: Vec<f32>| accumulate(grads, v, delta);
        match prim {
            Primitive::MatMul => {
                let b_var = inputs[1];
                let b = &self.nodes[b_var.0].value;
                let (n, k) = a.dims2().unwrap();
                let (_, m) = b.dims2().unwrap();
                if wants(a_var) {
                    send(a_var, kernels::matmul_t(g, b.data(), n, m, k));
                }
                if wants(b_var) {
                    let mut db = vec![0.0; k * m];
                    kernels::add_matmul_tn(a.data(), g, n, k, m, &mut db);
                    send(b_var, db);
                }
            }
            Primitive::MatMulT => {
                let b_var = inputs[1];
                let b = &self.nodes[b_var.0].value;
                let (n, k) = a.dims2().unwrap();
                let (m, _) = b.dims2().unwrap();
                if wants(a_var) {
                    send(a_var, kernels::matmul(g, b.data(), n, m, k));
                }
                if wants(b_var) {
                    let mut db = vec![0.0; m * k];
                    kernels::add_matmul_tn(g, a.data(), n, m, k, &mut db);
                    send(b_var, db);
                }
            }
            Primitive::Add => {
                let b_var = inputs[1];
                if wants(a_var) {
                    send(a_var, g.to_vec());
                }
                if wants(b_var) {
                    send(b_var, g.to_vec());
                }
            }
            Primitive::Mul => {
                let b_var = inputs[1];
                let b = &self.nodes[b_var.0].value;
                if wants(a_var) {
                    send(a_var, g.iter().zip(b.data()).map(|(g, y)| g * y).collect());
                }
                if wants(b_var) {
                    send(b_var, g.iter().zip(a.data()).map(|(g, x)| g * x).collect());
                }
            }
            Primitive::AddRowBias => {
                let b_var = inputs[1];
                if wants(a_var) {
                    send(a_var, g.to_vec());
                }
                if wants(b_var) {
                    let d = self.nodes[b_var.0].value.len();
                    let mut db = vec![0.0; d];
                    for row in g.chunks_exact(d) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    send(b_var, db);
                }
            }
            Primitive::Scale(c) => send(a_var, g.iter().map(|v| v * c).collect()),
            Primitive::AddScalar(_) => send(a_var, g.to_vec()),
            Primitive::Exp => send(
                a_var,
                g.iter().zip(out.data()).map(|(g, y)| g * y).collect(),
            ),
            Primitive::Log => send(a_var, g.iter().zip(a.data()).map(|(g, x)| g / x).collect()),
            Primitive::Relu => send(
                a_var,
                g.iter()
                    .zip(a.data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect(),
            ),
            Primitive::Softmax | Primitive::CausalSoftmax { .. } => {
                let (_, d) = out.dims2().unwrap();
                let mut dx = vec![0.0; out.len()];
                for ((y, gr), o) in out
                    .data()
                    .chunks_exact(d)
                    .zip(g.chunks_exact(d))
                    .zip(dx.chunks_exact_mut(d))
                {
                    let s: f32 = y.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((o, &y), &g) in o.iter_mut().zip(y).zip(gr) {
                        *o = y * (g - s);
                    }
                }
                send(a_var, dx);
            }
            Primitive::LogSoftmax => {
                let (_, d) = out.dims2().unwrap();
                let mut dx = vec![0.0; out.len()];
                for ((y, gr), o) in out
                    .data()
                    .chunks_exact(d)
                    .zip(g.chunks_exact(d))
                    .zip(dx.chunks_exact_mut(d))
                {
                    let s: f32 = gr.iter().sum();
                    for ((o, &y), &g) in o.iter_mut().zip(y).zip(gr) {
                        *o = g - y.exp() * s;
                    }
                }
                send(a_var, dx);
            }
            Primitive::RmsNorm => {
                let (_, d) = out.dims2().unwrap();
                let mut dx = vec![0.0; out.len()];
                for (r, ((y, gr), o)) in out
                    .data()
                    .chunks_exact(d)
                    .zip(g.chunks_exact(d))
                    .zip(dx.chunks_exact_mut(d))
                    .enumerate()
                {
                    let inv = saved[r];
                    let proj: f32 = y.iter().zip(gr).map(|(y, g)| y * g).sum::<f32>() / d as f32;
                    for ((o, &y), &g) in o.iter_mut().zip(y).zip(gr) {
                        *o = inv * (g - y * proj);
                    }
                }
                send(a_var, dx);
            }
            Primitive::GatherRows(idx) => {
                let (_, d) = a.dims2().unwrap();
                let mut dt = vec![0.0; a.len()];
                for (gr, &i) in g.chunks_exact(d).zip(idx) {
                    for (acc, &v) in dt[i * d..(i + 1) * d].iter_mut().zip(gr) {
                        *acc += v;
                    }
                }
                send(a_var, dt);
            }
            Primitive::Pick(idx) => {
                let (_, d) = a.dims2().unwrap();
                let mut dx = vec![0.0; a.len()];
                for (r, &c) in idx.iter().enumerate() {
                    dx[r * d + c] = g[r];
                }
                send(a_var, dx);
            }
            Primitive::ConcatRows => {
                let b_var = inputs[1];
                let split = a.len();
                if wants(a_var) {
                    send(a_var, g[..split].to_vec());
                }
                if wants(b_var) {
                    send(b_var, g[split..].to_vec());
                }
            }
            Primitive::SliceRows { start, end } => {
                let (_, d) = a.dims2().unwrap();
                let mut dx = vec![0.0; a.len()];
                dx[start * d..end * d].copy_from_slice(g);
                send(a_var, dx);
            }
            Primitive::Sum => send(a_var, vec![g[0]; a.len()]),
            Primitive::Mean => send(a_var, vec![g[0] / a.len() as f32; a.len()]),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::MatMulT, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::AddRowBias, &[a, bias])
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Scale(c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Result<Var, AutodiffError> {
        self.apply(Primitive::AddScalar(c), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Log, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Relu, &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Softmax, &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::LogSoftmax, &[a])
    }

    pub fn causal_softmax(&mut self, a: Var, offset: usize) -> Result<Var, AutodiffError> {
        self.apply(Primitive::CausalSoftmax { offset }, &[a])
    }

    pub fn rms_norm(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::RmsNorm, &[a])
    }

    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Result<Var, AutodiffError> {
        self.apply(Primitive::GatherRows(idx), &[table])
    }

    pub fn pick(&mut self, a: Var, idx: Vec<usize>) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Pick(idx), &[a])
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::ConcatRows, &[a, b])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        self.apply(Primitive::SliceRows { start, end }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Mean, &[a])
    }
}

fn map(a: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

fn accumulate(grads: &mut [Option<Vec<f32>>], v: Var, delta: Vec<f32>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, d) in acc.iter_mut().zip(delta) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}
