//! Reverse-mode autodiff on an append-only op tape.
//!
//! Forward values are computed eagerly when an op is recorded. `backward`
//! walks the tape in reverse, accumulating gradients with `+=` so fan-out is
//! handled naturally. The op set is deliberately small; models compose
//! everything else from it.

use super::{ParamId, ParamSet, Tensor, TensorError};

/// Handle to a node on a [`Tape`]. Only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<ParamId> },
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    BroadcastRow(Var, usize),
    StopGradient(Var),
    Mse(Var, Var),
    LogitShift(Var, Tensor),
    RowNormalize(Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of ops with cached forward values.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(), TensorError> {
    if t.is_matrix() {
        Ok(())
    } else {
        Err(TensorError::NotAMatrix {
            op,
            shape: t.shape().to_vec(),
        })
    }
}

fn require_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    /// Forward value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Record a constant input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf { param: None }, value)
    }

    /// Record a parameter input; `backward_params` will route the node's
    /// gradient into the parameter's grad buffer.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let value = params.get(id).value.clone();
        self.push(Op::Leaf { param: Some(id) }, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        require_matrix("matmul", ta)?;
        require_matrix("matmul", tb)?;
        if ta.cols() != tb.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let value = matmul_values(ta, tb);
        Ok(self.push(Op::Matmul(a, b), value))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        require_matrix("transpose", ta)?;
        let value = transpose_values(ta);
        Ok(self.push(Op::Transpose(a), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        require_same_shape("add", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).unwrap();
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        require_same_shape("sub", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).unwrap();
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        require_same_shape("mul", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).unwrap();
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| c * x).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push(Op::ScalarMul(a, c), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| sigmoid(x)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x.tanh()).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push(Op::Tanh(a), value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push(Op::Relu(a), value)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        require_matrix("softmax_rows", ta)?;
        let value = softmax_rows_values(ta);
        Ok(self.push(Op::SoftmaxRows(a), value))
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Mean of all entries, as a 1x1 tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let s: f64 = ta.data().iter().sum();
        let m = s / ta.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(m))
    }

    /// Concatenate two matrices along the last axis (columns).
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        require_matrix("concat_cols", ta)?;
        require_matrix("concat_cols", tb)?;
        if ta.rows() != tb.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (r, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(&ta.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&tb.data()[i * cb..(i + 1) * cb]);
        }
        let value = Tensor::matrix(r, ca + cb, data).unwrap();
        Ok(self.push(Op::ConcatCols(a, b), value))
    }

    /// Contiguous column range `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let ta = self.value(a);
        require_matrix("slice_cols", ta)?;
        let c = ta.cols();
        if start >= end || end > c {
            return Err(TensorError::BadColumnRange {
                op: "slice_cols",
                start,
                end,
                cols: c,
            });
        }
        let r = ta.rows();
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&ta.data()[i * c + start..i * c + end]);
        }
        let value = Tensor::matrix(r, end - start, data).unwrap();
        Ok(self.push(Op::SliceCols(a, start, end), value))
    }

    /// Repeat a 1xN row `rows` times into a rows x N matrix.
    pub fn broadcast_row(&mut self, a: Var, rows: usize) -> Result<Var, TensorError> {
        let ta = self.value(a);
        require_matrix("broadcast_row", ta)?;
        if ta.rows() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_row",
                left: ta.shape().to_vec(),
                right: vec![1, ta.cols()],
            });
        }
        let mut data = Vec::with_capacity(rows * ta.cols());
        for _ in 0..rows {
            data.extend_from_slice(ta.data());
        }
        let value = Tensor::matrix(rows, ta.cols(), data).unwrap();
        Ok(self.push(Op::BroadcastRow(a, rows), value))
    }

    /// Identity forward; backward propagates nothing into `a`.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(Op::StopGradient(a), value)
    }

    /// Mean squared error between two same-shape tensors, as a 1x1 tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        require_same_shape("mse", ta, tb)?;
        let n = ta.len() as f64;
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Op::Mse(a, b), Tensor::scalar(s / n)))
    }

    /// Elementwise sigmoid(logit(p) + shift) with `shift` held constant.
    ///
    /// Entries of `p` must lie in [0,1]. Where the shift entry is exactly 0.0
    /// the input passes through bitwise unchanged (the identity
    /// sigmoid(logit(p)) = p is exact here, which floating-point exp/ln would
    /// not preserve). Entries exactly 0 or 1 are fixed points for any shift;
    /// a saturated sigmoid upstream can produce them.
    pub fn logit_shift(&mut self, a: Var, shift: &Tensor) -> Result<Var, TensorError> {
        let ta = self.value(a);
        require_same_shape("logit_shift", ta, shift)?;
        let data = ta
            .data()
            .iter()
            .zip(shift.data())
            .map(|(&p, &n)| logit_shift_value(p, n))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data).unwrap();
        Ok(self.push(Op::LogitShift(a, shift.clone()), value))
    }

    /// Divide each row by its sum.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        require_matrix("row_normalize", ta)?;
        let (r, c) = (ta.rows(), ta.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &ta.data()[i * c..(i + 1) * c];
            let s: f64 = row.iter().sum();
            data.extend(row.iter().map(|x| x / s));
        }
        let value = Tensor::matrix(r, c, data).unwrap();
        Ok(self.push(Op::RowNormalize(a), value))
    }

    /// Recompute every node's forward value from the leaves, in order.
    /// Returns the recomputed values; recording is pure, so these are
    /// bitwise identical to the cached ones.
    pub fn replay(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf { .. } => node.value.clone(),
                Op::Matmul(a, b) => matmul_values(&out[a.0], &out[b.0]),
                Op::Transpose(a) => transpose_values(&out[a.0]),
                Op::Add(a, b) => zip_values(&out[a.0], &out[b.0], |x, y| x + y),
                Op::Sub(a, b) => zip_values(&out[a.0], &out[b.0], |x, y| x - y),
                Op::Mul(a, b) => zip_values(&out[a.0], &out[b.0], |x, y| x * y),
                Op::ScalarMul(a, c) => map_values(&out[a.0], |x| c * x),
                Op::Sigmoid(a) => map_values(&out[a.0], sigmoid),
                Op::Tanh(a) => map_values(&out[a.0], f64::tanh),
                Op::Relu(a) => map_values(&out[a.0], |x| if x > 0.0 { x } else { 0.0 }),
                Op::SoftmaxRows(a) => softmax_rows_values(&out[a.0]),
                Op::Sum(a) => Tensor::scalar(out[a.0].data().iter().sum()),
                Op::Mean(a) => {
                    let t = &out[a.0];
                    Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64)
                }
                Op::ConcatCols(a, b) => {
                    let (ta, tb) = (&out[a.0], &out[b.0]);
                    let (r, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
                    let mut data = Vec::with_capacity(r * (ca + cb));
                    for i in 0..r {
                        data.extend_from_slice(&ta.data()[i * ca..(i + 1) * ca]);
                        data.extend_from_slice(&tb.data()[i * cb..(i + 1) * cb]);
                    }
                    Tensor::matrix(r, ca + cb, data).unwrap()
                }
                Op::SliceCols(a, start, end) => {
                    let ta = &out[a.0];
                    let c = ta.cols();
                    let mut data = Vec::with_capacity(ta.rows() * (end - start));
                    for i in 0..ta.rows() {
                        data.extend_from_slice(&ta.data()[i * c + start..i * c + end]);
                    }
                    Tensor::matrix(ta.rows(), end - start, data).unwrap()
                }
                Op::BroadcastRow(a, rows) => {
                    let ta = &out[a.0];
                    let mut data = Vec::with_capacity(rows * ta.cols());
                    for _ in 0..*rows {
                        data.extend_from_slice(ta.data());
                    }
                    Tensor::matrix(*rows, ta.cols(), data).unwrap()
                }
                Op::StopGradient(a) => out[a.0].clone(),
                Op::Mse(a, b) => {
                    let (ta, tb) = (&out[a.0], &out[b.0]);
                    let s: f64 = ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    Tensor::scalar(s / ta.len() as f64)
                }
                Op::LogitShift(a, shift) => {
                    zip_values(&out[a.0], shift, logit_shift_value)
                }
                Op::RowNormalize(a) => {
                    let ta = &out[a.0];
                    let (r, c) = (ta.rows(), ta.cols());
                    let mut data = Vec::with_capacity(r * c);
                    for i in 0..r {
                        let row = &ta.data()[i * c..(i + 1) * c];
                        let s: f64 = row.iter().sum();
                        data.extend(row.iter().map(|x| x / s));
                    }
                    Tensor::matrix(r, c, data).unwrap()
                }
            };
            out.push(v);
        }
        out
    }

    /// Gradient of the scalar `loss` with respect to every node.
    /// Nodes outside the loss's ancestry get `None` (exactly zero).
    pub fn backward(&self, loss: Var) -> Result<Vec<Option<Tensor>>, TensorError> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(lt.shape().to_vec(), vec![1.0]).unwrap());

        for idx in (0..self.nodes.len()).rev() {
            let g = match &grads[idx] {
                Some(g) => g.clone(),
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf { .. } => {}
                Op::Matmul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = matmul_values(&g, &transpose_values(tb));
                    let gb = matmul_values(&transpose_values(ta), &g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, transpose_values(&g)),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, map_values(&g, |x| -x));
                }
                Op::Mul(a, b) => {
                    let ga = zip_values(&g, self.value(*b), |x, y| x * y);
                    let gb = zip_values(&g, self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::ScalarMul(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, map_values(&g, |x| c * x));
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[idx].value;
                    let ga = zip_values(&g, y, |gi, yi| gi * yi * (1.0 - yi));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[idx].value;
                    let ga = zip_values(&g, y, |gi, yi| gi * (1.0 - yi * yi));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let ga = zip_values(&g, x, |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[idx].value;
                    let (r, c) = (y.rows(), y.cols());
                    let mut ga = Tensor::zeros(vec![r, c]);
                    for i in 0..r {
                        let dot: f64 = (0..c).map(|j| g.get(i, j) * y.get(i, j)).sum();
                        for j in 0..c {
                            ga.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::filled(shape, s));
                }
                Op::Mean(a) => {
                    let ta = self.value(*a);
                    let s = g.data()[0] / ta.len() as f64;
                    accumulate(&mut grads, *a, Tensor::filled(ta.shape().to_vec(), s));
                }
                Op::ConcatCols(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (r, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
                    let mut ga = Tensor::zeros(vec![r, ca]);
                    let mut gb = Tensor::zeros(vec![r, cb]);
                    for i in 0..r {
                        for j in 0..ca {
                            ga.set(i, j, g.get(i, j));
                        }
                        for j in 0..cb {
                            gb.set(i, j, g.get(i, ca + j));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SliceCols(a, start, _end) => {
                    let ta = self.value(*a);
                    let mut ga = Tensor::zeros(ta.shape().to_vec());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            ga.set(i, start + j, g.get(i, j));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::BroadcastRow(a, _rows) => {
                    let c = g.cols();
                    let mut ga = Tensor::zeros(vec![1, c]);
                    for i in 0..g.rows() {
                        for j in 0..c {
                            ga.data_mut()[j] += g.get(i, j);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::StopGradient(_) => {}
                Op::Mse(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let scale = 2.0 * g.data()[0] / ta.len() as f64;
                    let ga = zip_values(ta, tb, |x, y| scale * (x - y));
                    let gb = map_values(&ga, |x| -x);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::LogitShift(a, shift) => {
                    let p = self.value(*a);
                    let mut ga = Tensor::zeros(p.shape().to_vec());
                    for k in 0..p.len() {
                        let (pi, ni) = (p.data()[k], shift.data()[k]);
                        ga.data_mut()[k] = g.data()[k] * logit_shift_slope(pi, ni);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::RowNormalize(a) => {
                    let ta = self.value(*a);
                    let y = &self.nodes[idx].value;
                    let (r, c) = (ta.rows(), ta.cols());
                    let mut ga = Tensor::zeros(vec![r, c]);
                    for i in 0..r {
                        let s: f64 = (0..c).map(|j| ta.get(i, j)).sum();
                        let dot: f64 = (0..c).map(|j| g.get(i, j) * y.get(i, j)).sum();
                        for j in 0..c {
                            ga.set(i, j, (g.get(i, j) - dot) / s);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        Ok(grads)
    }

    /// Run `backward` and accumulate leaf gradients into their parameters.
    pub fn backward_params(&self, loss: Var, params: &mut ParamSet) -> Result<(), TensorError> {
        let grads = self.backward(loss)?;
        for (node, grad) in self.nodes.iter().zip(grads) {
            if let (Op::Leaf { param: Some(id) }, Some(g)) = (&node.op, grad) {
                params.get_mut(*id).grad.accumulate(&g);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.accumulate(&g),
        slot => *slot = Some(g),
    }
}

fn matmul_values(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data()[i * k + p];
            let brow = &b.data()[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::matrix(m, n, out).unwrap()
}

fn transpose_values(a: &Tensor) -> Tensor {
    let (r, c) = (a.rows(), a.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data()[i * c + j];
        }
    }
    Tensor::matrix(c, r, out).unwrap()
}

fn softmax_rows_values(a: &Tensor) -> Tensor {
    let (r, c) = (a.rows(), a.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &a.data()[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for j in 0..c {
            let e = (row[j] - max).exp();
            out[i * c + j] = e;
            s += e;
        }
        for j in 0..c {
            out[i * c + j] /= s;
        }
    }
    Tensor::matrix(r, c, out).unwrap()
}

fn map_values(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect()).unwrap()
}

fn zip_values(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

fn logit_shift_value(p: f64, n: f64) -> f64 {
    if n == 0.0 || p == 0.0 || p == 1.0 {
        p
    } else {
        // sigmoid(logit(p) + n); exp of a huge |n| saturates the quotient to
        // the correct endpoint instead of producing inf/inf
        p / (p + (1.0 - p) * (-n).exp())
    }
}

// d/dp sigmoid(logit(p) + n) = e^{-n} / (p + (1-p) e^{-n})^2, with the
// exponent sign chosen so exp never overflows. The textbook form
// y(1-y) / (p(1-p)) is 0/0 when saturation upstream pins p at exactly 0 or 1;
// this one stays finite there, so a chained saturated sigmoid gradient
// multiplies it by zero instead of by NaN.
fn logit_shift_slope(p: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 1.0;
    }
    let e = (-n.abs()).exp();
    let den = if n > 0.0 {
        p + (1.0 - p) * e
    } else {
        p * e + (1.0 - p)
    };
    if den > 0.0 {
        (e / den / den).min(f64::MAX)
    } else {
        f64::MAX
    }
}
