use super::tensor::matmul_raw;
use super::{Tensor, TensorError};

/// Largest magnitude accepted by `exp` before it is treated as an overflow.
pub const EXP_LIMIT: f64 = 700.0;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_index_for_tests(i: usize) -> Self {
        Var(i)
    }
}

type ElementFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

enum Op {
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Exp(Var),
    Abs(Var),
    Sqrt(Var),
    Square(Var),
    Softplus(Var),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    Concat(Vec<Var>, usize),
    Reshape(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    AddBias(Var, Var),
    Transpose(Var),
    SliceCols(Var, usize),
    ProjectUnitBall(Var),
    Map(Var, ElementFn),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Option<Op>,
}

/// Records tensor operations for a single reverse-mode pass.
///
/// Leaves created with [`Tape::param`] receive gradients; leaves created with
/// [`Tape::constant`] do not. An operation is recorded only when one of its
/// inputs requires a gradient, so a tape holding only constants is a plain
/// evaluator.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
    visited: usize,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
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

    /// Number of operations actually recorded (i.e. with a backward rule).
    pub fn recorded_ops(&self) -> usize {
        self.nodes.iter().filter(|n| n.op.is_some()).count()
    }

    /// Number of recorded operations replayed by the last backward pass.
    pub fn visited_ops(&self) -> usize {
        self.visited
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, None)
    }

    /// A leaf that is treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, None)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Gradient of the last backward output with respect to `v`, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        let shape = self.nodes[v.0].value.shape().to_vec();
        Tensor::new(shape, g.clone()).ok()
    }

    /// Like [`Tape::grad`], but unreached nodes yield zeros.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v).unwrap_or_else(|| {
            let value = &self.nodes[v.0].value;
            Tensor::new(value.shape().to_vec(), vec![0.0; value.len()])
                .expect("shape of a recorded value is valid")
        })
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Option<Op>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: if requires_grad { op } else { None },
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, requires_grad, Some(op))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[x.0].value.map(f);
        self.record(value, &[x], op)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.record(value, &[a, b], op))
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        let t = self.value(v);
        if t.rank() != 2 {
            return Err(TensorError::RankMismatch {
                op,
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(mismatch("matmul", self.value(a), self.value(b)));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::matrix(m, n, data)?;
        Ok(self.record(value, &[a, b], Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise quotient; the divisor must not contain zeros.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.value(b).data().contains(&0.0) {
            return Err(TensorError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(
            x,
            |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, logistic, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        if let Some(&bad) = self.value(x).data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(x, f64::ln, Op::Log(x)))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        if let Some(&bad) = self.value(x).data().iter().find(|&&v| v.abs() > EXP_LIMIT) {
            return Err(TensorError::Domain {
                op: "exp",
                detail: format!("|{bad}| exceeds {EXP_LIMIT}"),
            });
        }
        Ok(self.unary(x, f64::exp, Op::Exp(x)))
    }

    /// Absolute value. The subgradient at exactly zero is taken as 0.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    /// Square root. The gradient at exactly zero is taken as 0.
    pub fn sqrt(&mut self, x: Var) -> Result<Var, TensorError> {
        if let Some(&bad) = self.value(x).data().iter().find(|&&v| v < 0.0 || v.is_nan()) {
            return Err(TensorError::Domain {
                op: "sqrt",
                detail: format!("negative input {bad}"),
            });
        }
        Ok(self.unary(x, f64::sqrt, Op::Sqrt(x)))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: Option<usize>) -> Result<(), TensorError> {
        if let Some(axis) = axis {
            let t = self.value(x);
            if t.rank() != 2 || axis > 1 {
                return Err(TensorError::InvalidAxis {
                    op,
                    axis,
                    shape: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    fn reduce_sum(t: &Tensor, axis: Option<usize>) -> Tensor {
        match axis {
            None => Tensor::scalar(t.data().iter().sum()),
            Some(0) => {
                let (r, c) = (t.rows(), t.cols());
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for (o, v) in out.iter_mut().zip(t.row(i)) {
                        *o += v;
                    }
                }
                Tensor::matrix(1, c, out).expect("non-empty reduction")
            }
            Some(_) => {
                let out = (0..t.rows()).map(|i| t.row(i).iter().sum()).collect();
                Tensor::matrix(t.rows(), 1, out).expect("non-empty reduction")
            }
        }
    }

    /// Sum over all elements (`None`, shape `[1]`) or along an axis of a
    /// matrix, keeping the reduced axis with size 1.
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var, TensorError> {
        self.check_axis("sum", x, axis)?;
        let value = Self::reduce_sum(self.value(x), axis);
        Ok(self.record(value, &[x], Op::Sum(x, axis)))
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var, TensorError> {
        self.check_axis("mean", x, axis)?;
        let t = self.value(x);
        let count = match axis {
            None => t.len(),
            Some(0) => t.rows(),
            Some(_) => t.cols(),
        } as f64;
        let value = Self::reduce_sum(t, axis).map(|v| v / count);
        Ok(self.record(value, &[x], Op::Mean(x, axis)))
    }

    /// Concatenates matrices along axis 0 (rows) or 1 (columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = *inputs.first().ok_or(TensorError::EmptyInput { op: "concat" })?;
        self.check_axis("concat", first, Some(axis))?;
        let (r0, c0) = self.matrix_dims("concat", first)?;
        for &v in &inputs[1..] {
            let (r, c) = self.matrix_dims("concat", v)?;
            if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                return Err(mismatch("concat", self.value(first), self.value(v)));
            }
        }
        let value = if axis == 0 {
            let mut data = Vec::new();
            for &v in inputs {
                data.extend_from_slice(self.value(v).data());
            }
            let rows = inputs.iter().map(|&v| self.value(v).rows()).sum();
            Tensor::matrix(rows, c0, data)?
        } else {
            let cols: usize = inputs.iter().map(|&v| self.value(v).cols()).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row(i));
                }
            }
            Tensor::matrix(r0, cols, data)?
        };
        Ok(self.record(value, inputs, Op::Concat(inputs.to_vec(), axis)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).reshaped(shape.to_vec())?;
        Ok(self.record(value, &[x], Op::Reshape(x)))
    }

    fn softmax_rows(t: &Tensor, axis: usize, log: bool) -> Tensor {
        // Work on rows; axis 0 is handled by transposing.
        let src = if axis == 0 { t.transpose() } else { t.clone() };
        let (r, c) = (src.rows(), src.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = src.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_total = total.ln();
            for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = if log {
                    v - max - log_total
                } else {
                    (v - max).exp() / total
                };
            }
        }
        let res = Tensor::matrix(r, c, out).expect("softmax preserves shape");
        if axis == 0 {
            res.transpose()
        } else {
            res
        }
    }

    /// Softmax along an axis of a matrix, with max-subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.check_axis("softmax", x, Some(axis))?;
        let value = Self::softmax_rows(self.value(x), axis, false);
        Ok(self.record(value, &[x], Op::Softmax(x, axis)))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.check_axis("log_softmax", x, Some(axis))?;
        let value = Self::softmax_rows(self.value(x), axis, true);
        Ok(self.record(value, &[x], Op::LogSoftmax(x, axis)))
    }

    /// Adds a bias vector (length = column count) to every row of a matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (r, c) = self.matrix_dims("add_bias", x)?;
        let b = self.value(bias);
        if b.len() != c {
            return Err(mismatch("add_bias", self.value(x), b));
        }
        let mut data = self.value(x).data().to_vec();
        for i in 0..r {
            for (o, bv) in data[i * c..(i + 1) * c].iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let value = Tensor::matrix(r, c, data)?;
        Ok(self.record(value, &[x, bias], Op::AddBias(x, bias)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        self.matrix_dims("transpose", x)?;
        let value = self.value(x).transpose();
        Ok(self.record(value, &[x], Op::Transpose(x)))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (r, c) = self.matrix_dims("slice_cols", x)?;
        if start >= end || end > c {
            return Err(TensorError::InvalidSlice { start, end, cols: c });
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        let value = Tensor::matrix(r, end - start, data)?;
        Ok(self.record(value, &[x], Op::SliceCols(x, start)))
    }

    /// Projects each row onto the closed unit ball: `v / max(1, ‖v‖₂)`.
    pub fn project_unit_ball(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = self.matrix_dims("project_unit_ball", x)?;
        let mut data = self.value(x).data().to_vec();
        for i in 0..r {
            let row = &mut data[i * c..(i + 1) * c];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        let value = Tensor::matrix(r, c, data)?;
        Ok(self.record(value, &[x], Op::ProjectUnitBall(x)))
    }

    /// Applies a caller-supplied elementwise function with its derivative.
    pub fn map(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Var {
        self.unary(x, f, Op::Map(x, Box::new(derivative)))
    }

    /// Reverse pass from a one-element output.
    ///
    /// Gradients become available through [`Tape::grad`]. A tape supports a
    /// single backward pass.
    pub fn backward(&mut self, output: Var) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(TensorError::NonScalar(out.shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(vec![1.0]);
        }
        let mut visited = 0;
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Some(op) = &self.nodes[i].op {
                visited += 1;
                self.propagate(i, op, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        self.visited = visited;
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing
                .iter_mut()
                .zip(contribution)
                .for_each(|(e, c)| *e += c),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn elementwise(&self, x: Var, g: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.value(x).data().iter().zip(g).map(|(&v, &gi)| gi * f(v)).collect()
    }

    fn propagate(&self, idx: usize, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[idx].value;
        match op {
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.wants(*a) {
                    // dA = dC · Bᵀ
                    let bt = tb.transpose();
                    let da = matmul_raw(g, bt.data(), m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    // dB = Aᵀ · dC
                    let at = ta.transpose();
                    let db = matmul_raw(at.data(), g, k, m, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d = self.value(*b).data().iter().zip(g).map(|(y, gi)| y * gi).collect();
                    self.accumulate(grads, *a, d);
                }
                if self.wants(*b) {
                    let d = self.value(*a).data().iter().zip(g).map(|(x, gi)| x * gi).collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Div(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let d = tb.iter().zip(g).map(|(y, gi)| gi / y).collect();
                    self.accumulate(grads, *a, d);
                }
                if self.wants(*b) {
                    let d = ta
                        .iter()
                        .zip(tb)
                        .zip(g)
                        .map(|((x, y), gi)| -gi * x / (y * y))
                        .collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, g.iter().map(|v| v * f).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::Relu(x) => {
                let d = self.elementwise(*x, g, |v| if v > 0.0 { 1.0 } else { 0.0 });
                self.accumulate(grads, *x, d);
            }
            Op::LeakyRelu(x, slope) => {
                let d = self.elementwise(*x, g, |v| if v > 0.0 { 1.0 } else { *slope });
                self.accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = out.data().iter().zip(g).map(|(y, gi)| gi * y * (1.0 - y)).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Tanh(x) => {
                let d = out.data().iter().zip(g).map(|(y, gi)| gi * (1.0 - y * y)).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Log(x) => {
                let d = self.elementwise(*x, g, |v| 1.0 / v);
                self.accumulate(grads, *x, d);
            }
            Op::Exp(x) => {
                let d = out.data().iter().zip(g).map(|(y, gi)| gi * y).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Abs(x) => {
                let d = self.elementwise(*x, g, |v| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *x, d);
            }
            Op::Sqrt(x) => {
                let d = out
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(y, gi)| if *y > 0.0 { gi * 0.5 / y } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::Square(x) => {
                let d = self.elementwise(*x, g, |v| 2.0 * v);
                self.accumulate(grads, *x, d);
            }
            Op::Softplus(x) => {
                let d = self.elementwise(*x, g, logistic);
                self.accumulate(grads, *x, d);
            }
            Op::Sum(x, axis) | Op::Mean(x, axis) => {
                let t = self.value(*x);
                let (r, c) = (t.rows(), t.cols());
                let scale = match (op, axis) {
                    (Op::Sum(..), _) => 1.0,
                    (_, None) => 1.0 / t.len() as f64,
                    (_, Some(0)) => 1.0 / r as f64,
                    (_, Some(_)) => 1.0 / c as f64,
                };
                let d = match axis {
                    None => vec![g[0] * scale; t.len()],
                    Some(0) => (0..r * c).map(|i| g[i % c] * scale).collect(),
                    Some(_) => (0..r * c).map(|i| g[i / c] * scale).collect(),
                };
                self.accumulate(grads, *x, d);
            }
            Op::Concat(inputs, axis) => {
                let total_cols = out.cols();
                let mut row_offset = 0;
                let mut col_offset = 0;
                for &v in inputs {
                    let t = self.value(v);
                    let (r, c) = (t.rows(), t.cols());
                    if self.wants(v) {
                        let d = if *axis == 0 {
                            g[row_offset * c..(row_offset + r) * c].to_vec()
                        } else {
                            let mut d = Vec::with_capacity(r * c);
                            for i in 0..r {
                                let start = i * total_cols + col_offset;
                                d.extend_from_slice(&g[start..start + c]);
                            }
                            d
                        };
                        self.accumulate(grads, v, d);
                    }
                    row_offset += r;
                    col_offset += c;
                }
            }
            Op::Softmax(x, axis) | Op::LogSoftmax(x, axis) => {
                let log = matches!(op, Op::LogSoftmax(..));
                let (y, gm) = if *axis == 0 {
                    let gt = Tensor::new(out.shape().to_vec(), g.to_vec())
                        .expect("gradient matches output")
                        .transpose();
                    (out.transpose(), gt)
                } else {
                    let gt = Tensor::new(out.shape().to_vec(), g.to_vec())
                        .expect("gradient matches output");
                    (out.clone(), gt)
                };
                let (r, c) = (y.rows(), y.cols());
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    let (yr, gr) = (y.row(i), gm.row(i));
                    if log {
                        let total: f64 = gr.iter().sum();
                        for j in 0..c {
                            d[i * c + j] = gr[j] - yr[j].exp() * total;
                        }
                    } else {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            d[i * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                }
                let d = if *axis == 0 {
                    Tensor::matrix(r, c, d).expect("softmax grad shape").transpose().into_data()
                } else {
                    d
                };
                self.accumulate(grads, *x, d);
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.to_vec());
                if self.wants(*bias) {
                    let c = out.cols();
                    let mut d = vec![0.0; c];
                    for row in g.chunks(c) {
                        d.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    self.accumulate(grads, *bias, d);
                }
            }
            Op::Transpose(x) => {
                let gt = Tensor::new(out.shape().to_vec(), g.to_vec())
                    .expect("gradient matches output")
                    .transpose();
                self.accumulate(grads, *x, gt.into_data());
            }
            Op::SliceCols(x, start) => {
                let t = self.value(*x);
                let (r, c) = (t.rows(), t.cols());
                let w = out.cols();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    d[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, *x, d);
            }
            Op::ProjectUnitBall(x) => {
                let t = self.value(*x);
                let c = t.cols();
                let mut d = g.to_vec();
                for i in 0..t.rows() {
                    let v = t.row(i);
                    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                    if norm > 1.0 {
                        let y = out.row(i);
                        let gr = &g[i * c..(i + 1) * c];
                        let yg: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            d[i * c + j] = (gr[j] - y[j] * yg) / norm;
                        }
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::Map(x, derivative) => {
                let d = self.elementwise(*x, g, derivative);
                self.accumulate(grads, *x, d);
            }
        }
    }
}
