//! Minimal dense-matrix reverse-mode automatic differentiation.
//!
//! Everything is a 2-D matrix of `f64` (scalars are 1×1) recorded on a [`Tape`]. The op set
//! is closed and static: matmul, add, add-row (bias broadcast), sub, elementwise mul,
//! concat of columns, relu, tanh, sigmoid, log, exp, sqrt, full-reduction mean/sum,
//! scale / add-const (affine by compile-time constants), clamp, row-wise softmax, and
//! reshape. There is no general broadcasting — every special case an MLP needs is its own
//! op with its own exact backward rule, which keeps the engine small enough to verify
//! against finite differences op by op.
//!
//! Training code keeps parameters outside the tape in [`Parameter`] values, registers them
//! as leaves each step via [`Tape::param`], runs [`Tape::backward`] on a scalar loss, then
//! harvests per-slot gradients with [`Tape::param_grads`]. Any non-finite value produced by
//! a public operation is reported as an error naming the op rather than propagated.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch ({lhs} vs {rhs})")]
    ShapeMismatch { op: &'static str, lhs: String, rhs: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: {what}")]
    Domain { op: &'static str, what: String },
    #[error("backward root must be scalar, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("variable does not belong to the active graph (detached or wrong tape)")]
    DetachedGraph,
    #[error("optimizer step: parameter '{name}' has no gradient")]
    MissingGrad { name: String },
}

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a node on a [`Tape`]; cheap to copy, valid only for the tape that made it.
#[derive(Debug, Clone, Copy)]
pub struct Var {
    id: usize,
    tape_id: u64,
    pub rows: usize,
    pub cols: usize,
}

impl Var {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    ConcatCols(usize, usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Log(usize),
    Exp(usize),
    Sqrt(usize),
    MeanAll(usize),
    SumAll(usize),
    Scale(usize, f64),
    AddConst(usize),
    Clamp(usize, f64, f64),
    SoftmaxRows(usize),
    Reshape(usize),
    Transpose(usize),
}

struct Node {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
    grad: Option<Vec<f64>>,
    op: Op,
    tracked: bool,
    /// caller-assigned slot for parameter leaves, used to route gradients back out
    slot: Option<usize>,
}

static TAPE_COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(1);

/// Single-owner differentiation graph; build ops forward, then call [`Tape::backward`].
pub struct Tape {
    nodes: Vec<Node>,
    tape_id: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

// ---- raw matrix kernels (accumulate into `out`) ----

fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

/// out[m×k] += dC[m×n] · B[k×n]ᵀ
fn matmul_nt_acc(dc: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for (dv, bv) in drow.iter().zip(brow) {
                acc += dv * bv;
            }
            *o += acc;
        }
    }
}

/// out[k×n] += A[m×k]ᵀ · dC[m×n]
fn matmul_tn_acc(a: &[f64], dc: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for l in 0..m {
        let arow = &a[l * k..(l + 1) * k];
        let drow = &dc[l * n..(l + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &dv) in orow.iter_mut().zip(drow) {
                    *o += av * dv;
                }
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            tape_id: TAPE_COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed),
        }
    }

    fn push(&mut self, data: Vec<f64>, rows: usize, cols: usize, op: Op, tracked: bool, slot: Option<usize>) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { data, rows, cols, grad: None, op, tracked, slot });
        Var { id, tape_id: self.tape_id, rows, cols }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape_id != self.tape_id || v.id >= self.nodes.len() {
            return Err(TensorError::DetachedGraph);
        }
        Ok(())
    }

    fn finite(&self, v: Var, op: &'static str) -> Result<Var> {
        if self.nodes[v.id].data.iter().all(|x| x.is_finite()) {
            Ok(v)
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    /// Constant leaf: participates in values, never receives a gradient.
    pub fn constant(&mut self, data: Vec<f64>, rows: usize, cols: usize) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(TensorError::ShapeMismatch {
                op: "constant",
                lhs: format!("{rows}x{cols}"),
                rhs: format!("len {}", data.len()),
            });
        }
        let v = self.push(data, rows, cols, Op::Leaf, false, None);
        self.finite(v, "constant")
    }

    pub fn scalar_const(&mut self, x: f64) -> Result<Var> {
        self.constant(vec![x], 1, 1)
    }

    /// Parameter leaf: copies the parameter's current values onto the tape and tags the
    /// node with `slot` so [`Tape::param_grads`] can hand the gradient back.
    pub fn param(&mut self, p: &Parameter, slot: usize) -> Result<Var> {
        let v = self.push(p.data.clone(), p.rows, p.cols, Op::Leaf, true, Some(slot));
        self.finite(v, "param")
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.id].data
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.id].data[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.id].grad.as_deref()
    }

    fn bin_same_shape(&mut self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        if a.rows != b.rows || a.cols != b.cols {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: format!("{}x{}", a.rows, a.cols),
                rhs: format!("{}x{}", b.rows, b.cols),
            });
        }
        Ok(())
    }

    fn tracked(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].tracked)
    }

    // ---- ops ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        if a.cols != b.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: format!("{}x{}", a.rows, a.cols),
                rhs: format!("{}x{}", b.rows, b.cols),
            });
        }
        let mut data = vec![0.0; a.rows * b.cols];
        matmul_acc(&self.nodes[a.id].data, &self.nodes[b.id].data, a.rows, a.cols, b.cols, &mut data);
        let t = self.tracked(&[a.id, b.id]);
        let v = self.push(data, a.rows, b.cols, Op::Matmul(a.id, b.id), t, None);
        self.finite(v, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin_same_shape("add", a, b)?;
        let data: Vec<f64> = self.nodes[a.id]
            .data
            .iter()
            .zip(&self.nodes[b.id].data)
            .map(|(x, y)| x + y)
            .collect();
        let t = self.tracked(&[a.id, b.id]);
        let v = self.push(data, a.rows, a.cols, Op::Add(a.id, b.id), t, None);
        self.finite(v, "add")
    }

    /// `a[m×n] + row[1×n]`, the bias broadcast.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check(a)?;
        self.check(row)?;
        if row.rows != 1 || row.cols != a.cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: format!("{}x{}", a.rows, a.cols),
                rhs: format!("{}x{}", row.rows, row.cols),
            });
        }
        let rdata = &self.nodes[row.id].data;
        let data: Vec<f64> = self.nodes[a.id]
            .data
            .chunks(a.cols)
            .flat_map(|r| r.iter().zip(rdata.iter()).map(|(x, y)| x + y).collect::<Vec<_>>())
            .collect();
        let t = self.tracked(&[a.id, row.id]);
        let v = self.push(data, a.rows, a.cols, Op::AddRow(a.id, row.id), t, None);
        self.finite(v, "add_row")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin_same_shape("sub", a, b)?;
        let data: Vec<f64> = self.nodes[a.id]
            .data
            .iter()
            .zip(&self.nodes[b.id].data)
            .map(|(x, y)| x - y)
            .collect();
        let t = self.tracked(&[a.id, b.id]);
        let v = self.push(data, a.rows, a.cols, Op::Sub(a.id, b.id), t, None);
        self.finite(v, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin_same_shape("mul", a, b)?;
        let data: Vec<f64> = self.nodes[a.id]
            .data
            .iter()
            .zip(&self.nodes[b.id].data)
            .map(|(x, y)| x * y)
            .collect();
        let t = self.tracked(&[a.id, b.id]);
        let v = self.push(data, a.rows, a.cols, Op::Mul(a.id, b.id), t, None);
        self.finite(v, "mul")
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        if a.rows != b.rows {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: format!("{}x{}", a.rows, a.cols),
                rhs: format!("{}x{}", b.rows, b.cols),
            });
        }
        let cols = a.cols + b.cols;
        let mut data = Vec::with_capacity(a.rows * cols);
        for i in 0..a.rows {
            data.extend_from_slice(&self.nodes[a.id].data[i * a.cols..(i + 1) * a.cols]);
            data.extend_from_slice(&self.nodes[b.id].data[i * b.cols..(i + 1) * b.cols]);
        }
        let t = self.tracked(&[a.id, b.id]);
        let v = self.push(data, a.rows, cols, Op::ConcatCols(a.id, b.id), t, None);
        self.finite(v, "concat_cols")
    }

    fn unary(&mut self, op_name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        self.check(a)?;
        let data: Vec<f64> = self.nodes[a.id].data.iter().map(|&x| f(x)).collect();
        let t = self.nodes[a.id].tracked;
        let v = self.push(data, a.rows, a.cols, op, t, None);
        self.finite(v, op_name)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, Op::Relu(a.id), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, Op::Tanh(a.id), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, Op::Sigmoid(a.id), |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        if let Some(&bad) = self.nodes[a.id].data.iter().find(|x| **x <= 0.0) {
            return Err(TensorError::Domain { op: "log", what: format!("non-positive argument {bad}") });
        }
        self.unary("log", a, Op::Log(a.id), f64::ln)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, Op::Exp(a.id), f64::exp)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        if let Some(&bad) = self.nodes[a.id].data.iter().find(|x| **x < 0.0) {
            return Err(TensorError::Domain { op: "sqrt", what: format!("negative argument {bad}") });
        }
        self.unary("sqrt", a, Op::Sqrt(a.id), f64::sqrt)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let n = a.len() as f64;
        let s: f64 = self.nodes[a.id].data.iter().sum();
        let t = self.nodes[a.id].tracked;
        let v = self.push(vec![s / n], 1, 1, Op::MeanAll(a.id), t, None);
        self.finite(v, "mean")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s: f64 = self.nodes[a.id].data.iter().sum();
        let t = self.nodes[a.id].tracked;
        let v = self.push(vec![s], 1, 1, Op::SumAll(a.id), t, None);
        self.finite(v, "sum")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, Op::Scale(a.id, c), |x| c * x)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("add_const", a, Op::AddConst(a.id), |x| x + c)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(TensorError::Domain { op: "clamp", what: format!("lo {lo} > hi {hi}") });
        }
        self.unary("clamp", a, Op::Clamp(a.id, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let mut data = Vec::with_capacity(a.len());
        for row in self.nodes[a.id].data.chunks(a.cols) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
            let s: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / s));
        }
        let t = self.nodes[a.id].tracked;
        let v = self.push(data, a.rows, a.cols, Op::SoftmaxRows(a.id), t, None);
        self.finite(v, "softmax_rows")
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        self.check(a)?;
        if rows * cols != a.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: format!("{}x{}", a.rows, a.cols),
                rhs: format!("{rows}x{cols}"),
            });
        }
        let data = self.nodes[a.id].data.clone();
        let t = self.nodes[a.id].tracked;
        let v = self.push(data, rows, cols, Op::Reshape(a.id), t, None);
        self.finite(v, "reshape")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let (r, c) = (a.rows, a.cols);
        let src = &self.nodes[a.id].data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let t = self.nodes[a.id].tracked;
        let v = self.push(data, c, r, Op::Transpose(a.id), t, None);
        self.finite(v, "transpose")
    }

    // ---- reverse pass ----

    fn grad_buf(&mut self, id: usize) -> &mut Vec<f64> {
        let len = self.nodes[id].data.len();
        self.nodes[id].grad.get_or_insert_with(|| vec![0.0; len])
    }

    /// Reverse-mode sweep from a scalar root; leaves registered via [`Tape::param`]
    /// (and every tracked intermediate) receive `d(root)/d(node)` in their grad.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        self.check(root)?;
        if root.rows * root.cols != 1 {
            return Err(TensorError::NonScalarRoot { rows: root.rows, cols: root.cols });
        }
        if !self.nodes[root.id].tracked {
            return Err(TensorError::DetachedGraph);
        }
        self.grad_buf(root.id)[0] = 1.0;
        for id in (0..=root.id).rev() {
            if !self.nodes[id].tracked || self.nodes[id].grad.is_none() {
                continue;
            }
            let d = self.nodes[id].grad.clone().unwrap();
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (m, k, n) = (self.nodes[a].rows, self.nodes[a].cols, self.nodes[b].cols);
                    if self.nodes[a].tracked {
                        let bdata = self.nodes[b].data.clone();
                        matmul_nt_acc(&d, &bdata, m, n, k, self.grad_buf(a));
                    }
                    if self.nodes[b].tracked {
                        let adata = self.nodes[a].data.clone();
                        matmul_tn_acc(&adata, &d, m, k, n, self.grad_buf(b));
                    }
                }
                Op::Add(a, b) => {
                    for (src, arm) in [(a, true), (b, true)] {
                        if arm && self.nodes[src].tracked {
                            for (g, dv) in self.grad_buf(src).iter_mut().zip(&d) {
                                *g += dv;
                            }
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    if self.nodes[a].tracked {
                        for (g, dv) in self.grad_buf(a).iter_mut().zip(&d) {
                            *g += dv;
                        }
                    }
                    if self.nodes[row].tracked {
                        let cols = self.nodes[row].data.len();
                        let rg = self.grad_buf(row);
                        for chunk in d.chunks(cols) {
                            for (g, dv) in rg.iter_mut().zip(chunk) {
                                *g += dv;
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[a].tracked {
                        for (g, dv) in self.grad_buf(a).iter_mut().zip(&d) {
                            *g += dv;
                        }
                    }
                    if self.nodes[b].tracked {
                        for (g, dv) in self.grad_buf(b).iter_mut().zip(&d) {
                            *g -= dv;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a].tracked {
                        let bdata = self.nodes[b].data.clone();
                        for ((g, dv), bv) in self.grad_buf(a).iter_mut().zip(&d).zip(&bdata) {
                            *g += dv * bv;
                        }
                    }
                    if self.nodes[b].tracked {
                        let adata = self.nodes[a].data.clone();
                        for ((g, dv), av) in self.grad_buf(b).iter_mut().zip(&d).zip(&adata) {
                            *g += dv * av;
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (ac, bc) = (self.nodes[a].cols, self.nodes[b].cols);
                    let rows = self.nodes[a].rows;
                    if self.nodes[a].tracked {
                        let ga = self.grad_buf(a);
                        for i in 0..rows {
                            for j in 0..ac {
                                ga[i * ac + j] += d[i * (ac + bc) + j];
                            }
                        }
                    }
                    if self.nodes[b].tracked {
                        let gb = self.grad_buf(b);
                        for i in 0..rows {
                            for j in 0..bc {
                                gb[i * bc + j] += d[i * (ac + bc) + ac + j];
                            }
                        }
                    }
                }
                Op::Relu(a) => {
                    if self.nodes[a].tracked {
                        let adata = self.nodes[a].data.clone();
                        for ((g, dv), av) in self.grad_buf(a).iter_mut().zip(&d).zip(&adata) {
                            if *av > 0.0 {
                                *g += dv;
                            }
                        }
                    }
                }
                Op::Tanh(a) => {
                    if self.nodes[a].tracked {
                        let ydata = self.nodes[id].data.clone();
                        for ((g, dv), yv) in self.grad_buf(a).iter_mut().zip(&d).zip(&ydata) {
                            *g += dv * (1.0 - yv * yv);
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    if self.nodes[a].tracked {
                        let ydata = self.nodes[id].data.clone();
                        for ((g, dv), yv) in self.grad_buf(a).iter_mut().zip(&d).zip(&ydata) {
                            *g += dv * yv * (1.0 - yv);
                        }
                    }
                }
                Op::Log(a) => {
                    if self.nodes[a].tracked {
                        let adata = self.nodes[a].data.clone();
                        for ((g, dv), av) in self.grad_buf(a).iter_mut().zip(&d).zip(&adata) {
                            *g += dv / av;
                        }
                    }
                }
                Op::Exp(a) => {
                    if self.nodes[a].tracked {
                        let ydata = self.nodes[id].data.clone();
                        for ((g, dv), yv) in self.grad_buf(a).iter_mut().zip(&d).zip(&ydata) {
                            *g += dv * yv;
                        }
                    }
                }
                Op::Sqrt(a) => {
                    if self.nodes[a].tracked {
                        let ydata = self.nodes[id].data.clone();
                        for ((g, dv), yv) in self.grad_buf(a).iter_mut().zip(&d).zip(&ydata) {
                            *g += dv / (2.0 * yv);
                        }
                    }
                }
                Op::MeanAll(a) => {
                    if self.nodes[a].tracked {
                        let n = self.nodes[a].data.len() as f64;
                        let dv = d[0] / n;
                        for g in self.grad_buf(a).iter_mut() {
                            *g += dv;
                        }
                    }
                }
                Op::SumAll(a) => {
                    if self.nodes[a].tracked {
                        let dv = d[0];
                        for g in self.grad_buf(a).iter_mut() {
                            *g += dv;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if self.nodes[a].tracked {
                        for (g, dv) in self.grad_buf(a).iter_mut().zip(&d) {
                            *g += dv * c;
                        }
                    }
                }
                Op::AddConst(a) => {
                    if self.nodes[a].tracked {
                        for (g, dv) in self.grad_buf(a).iter_mut().zip(&d) {
                            *g += dv;
                        }
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    if self.nodes[a].tracked {
                        let adata = self.nodes[a].data.clone();
                        for ((g, dv), av) in self.grad_buf(a).iter_mut().zip(&d).zip(&adata) {
                            if *av > lo && *av < hi {
                                *g += dv;
                            }
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    if self.nodes[a].tracked {
                        let cols = self.nodes[id].cols;
                        let ydata = self.nodes[id].data.clone();
                        let ga = self.grad_buf(a);
                        for (r, (yrow, drow)) in ydata.chunks(cols).zip(d.chunks(cols)).enumerate() {
                            let dot: f64 = yrow.iter().zip(drow).map(|(y, dv)| y * dv).sum();
                            for j in 0..cols {
                                ga[r * cols + j] += yrow[j] * (drow[j] - dot);
                            }
                        }
                    }
                }
                Op::Reshape(a) => {
                    if self.nodes[a].tracked {
                        for (g, dv) in self.grad_buf(a).iter_mut().zip(&d) {
                            *g += dv;
                        }
                    }
                }
                Op::Transpose(a) => {
                    if self.nodes[a].tracked {
                        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
                        let ga = self.grad_buf(a);
                        for i in 0..r {
                            for j in 0..c {
                                ga[i * c + j] += d[j * r + i];
                            }
                        }
                    }
                }
            }
            if self.nodes[id]
                .grad
                .as_ref()
                .is_some_and(|g| g.iter().any(|x| !x.is_finite()))
            {
                return Err(TensorError::NonFinite { op: "backward" });
            }
        }
        Ok(())
    }

    /// Drop every adjoint accumulated by previous backward sweeps, keeping forward values;
    /// lets a second objective be differentiated on the same tape without cross-talk.
    pub fn clear_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// `(slot, gradient)` for every parameter leaf that received one.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.nodes
            .iter()
            .filter_map(|n| match (n.slot, n.grad.as_deref()) {
                (Some(s), Some(g)) => Some((s, g)),
                _ => None,
            })
    }
}

// ---- parameters ----

/// A named, persistently-stored weight matrix; lives outside any tape.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Parameter {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self { name: name.into(), rows, cols, data: vec![0.0; rows * cols], grad: None }
    }

    pub fn from_data(name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "parameter data length");
        Self { name: name.into(), rows, cols, data, grad: None }
    }

    /// Uniform(−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out))) — fan-in is the row count.
    pub fn glorot(name: impl Into<String>, rows: usize, cols: usize, rng: &mut crate::rng::SeededSampler) -> Self {
        let lim = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform_in(-lim, lim)).collect();
        Self { name: name.into(), rows, cols, data, grad: None }
    }

    pub fn accumulate_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }
}

/// Route every parameter gradient on the tape into the matching entry of `params`,
/// where `params[slot]` corresponds to the `slot` passed to [`Tape::param`].
pub fn harvest_grads(tape: &Tape, params: &mut [&mut Parameter]) {
    for (slot, g) in tape.param_grads() {
        params[slot].accumulate_grad(g);
    }
}
