//! Dense 2-D tensors and a reverse-mode autodiff tape.
//!
//! Everything is double precision and row-major. A [`Graph`] is an
//! append-only tape of operation records; append order is topological order,
//! and [`Graph::backward`] walks it once in reverse. Parameters live outside
//! the tape as [`Tensor`] values and are re-registered as leaves each step
//! via [`Graph::leaf`].
//!
//! Shape mismatches are contract violations and panic with a message naming
//! both shapes.

use serde::{Deserialize, Serialize};

/// A dense row-major matrix. Vectors are represented as `1 x n` rows and
/// scalars as `1 x 1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
    /// Accumulated gradient, lazily allocated; empty means "not allocated".
    #[serde(skip)]
    pub grad: Vec<f64>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn zeros(shape: [usize; 2]) -> Self {
        Tensor {
            shape,
            values: vec![0.0; shape[0] * shape[1]],
            grad: Vec::new(),
            requires_grad: false,
        }
    }

    pub fn from_vec(shape: [usize; 2], values: Vec<f64>) -> Self {
        assert_eq!(
            shape[0] * shape[1],
            values.len(),
            "tensor shape {}x{} does not match {} values",
            shape[0],
            shape[1],
            values.len()
        );
        Tensor { shape, values, grad: Vec::new(), requires_grad: false }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor::from_vec([1, 1], vec![x])
    }

    pub fn row(values: Vec<f64>) -> Self {
        Tensor::from_vec([1, values.len()], values)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.shape[1] + c] = v;
    }

    /// Allocate the gradient buffer if missing.
    pub fn ensure_grad(&mut self) {
        if self.grad.is_empty() && !self.values.is_empty() {
            self.grad = vec![0.0; self.values.len()];
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grad {
            *g = 0.0;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node on one [`Graph`]'s tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// matrix `[m,n]` plus a `[1,n]` row added to every row (bias broadcast,
    /// the only broadcast supported).
    AddRowBroadcast(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat { parts: Vec<Var>, axis: usize },
    /// Per-row max-shifted log-sum-exp, `[m,n] -> [m,1]`.
    LogSumExpRows(Var),
    SumAll(Var),
    /// Sum of entries at flat indices (with multiplicity), `-> [1,1]`.
    SelectSum(Var, Vec<usize>),
    /// Row gather with scatter-add backward (embedding lookup).
    Rows(Var, Vec<usize>),
    /// Column gather.
    Cols(Var, Vec<usize>),
    Scale(Var, f64),
}

struct Node {
    shape: [usize; 2],
    values: Vec<f64>,
    grad: Vec<f64>, // empty = unallocated
    requires_grad: bool,
    op: Op,
}

/// Append-only tape of operations; rebuilt for every training step.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_str(s: [usize; 2]) -> String {
    format!("{}x{}", s[0], s[1])
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    /// Scalar value of a `1x1` node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        assert_eq!(n.shape, [1, 1], "scalar_value on a {} node", shape_str(n.shape));
        n.values[0]
    }

    /// Gradient buffer of a node, if one was allocated by backward.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        let n = &self.nodes[v.0];
        if n.grad.is_empty() {
            None
        } else {
            Some(&n.grad)
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, shape: [usize; 2], values: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape[0] * shape[1], values.len());
        self.nodes.push(Node { shape, values, grad: Vec::new(), requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Register an external tensor as a leaf, copying its values.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape, t.values.clone(), t.requires_grad, Op::Leaf)
    }

    /// Constant leaf (never receives gradient).
    pub fn constant(&mut self, shape: [usize; 2], values: Vec<f64>) -> Var {
        assert_eq!(
            shape[0] * shape[1],
            values.len(),
            "constant shape {} does not match {} values",
            shape_str(shape),
            values.len()
        );
        self.push(shape, values, false, Op::Leaf)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant([1, 1], vec![x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(
            sa[1],
            sb[0],
            "matmul: inner dimensions disagree: lhs {} vs rhs {}",
            shape_str(sa),
            shape_str(sb)
        );
        let vals = matmul_raw(self.value(a), self.value(b), sa[0], sa[1], sb[1]);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push([sa[0], sb[1]], vals, rg, Op::Matmul(a, b))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let vals = transpose_raw(self.value(x), s[0], s[1]);
        let rg = self.requires_grad(x);
        self.push([s[1], s[0]], vals, rg, Op::Transpose(x))
    }

    fn binary_same_shape(&mut self, name: &str, a: Var, b: Var) -> [usize; 2] {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(
            sa,
            sb,
            "{name}: shapes disagree: lhs {} vs rhs {}",
            shape_str(sa),
            shape_str(sb)
        );
        sa
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let s = self.binary_same_shape("add", a, b);
        let vals: Vec<f64> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(s, vals, rg, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let s = self.binary_same_shape("sub", a, b);
        let vals: Vec<f64> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(s, vals, rg, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let s = self.binary_same_shape("mul", a, b);
        let vals: Vec<f64> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(s, vals, rg, Op::Mul(a, b))
    }

    /// `matrix + row`, the bias broadcast: `row` is `1 x n` and is added to
    /// every row of the `m x n` matrix.
    pub fn add_row_broadcast(&mut self, matrix: Var, row: Var) -> Var {
        let (sm, sr) = (self.shape(matrix), self.shape(row));
        assert!(
            sr[0] == 1 && sr[1] == sm[1],
            "add_row_broadcast: matrix {} incompatible with row {}",
            shape_str(sm),
            shape_str(sr)
        );
        let n = sm[1];
        let rowv = self.value(row).to_vec();
        let vals: Vec<f64> = self
            .value(matrix)
            .iter()
            .enumerate()
            .map(|(i, x)| x + rowv[i % n])
            .collect();
        let rg = self.requires_grad(matrix) || self.requires_grad(row);
        self.push(sm, vals, rg, Op::AddRowBroadcast(matrix, row))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let vals: Vec<f64> = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let rg = self.requires_grad(x);
        self.push(s, vals, rg, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let vals: Vec<f64> = self.value(x).iter().map(|&v| v.tanh()).collect();
        let rg = self.requires_grad(x);
        self.push(s, vals, rg, Op::Tanh(x))
    }

    /// Concatenate along `axis` (0 = stack rows, 1 = widen columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat: empty part list");
        assert!(axis < 2, "concat: axis {axis} out of range for 2-D tensors");
        let first = self.shape(parts[0]);
        let fixed_axis = 1 - axis;
        for &p in parts {
            let s = self.shape(p);
            assert_eq!(
                s[fixed_axis],
                first[fixed_axis],
                "concat: part shape {} disagrees with {} on axis {}",
                shape_str(s),
                shape_str(first),
                fixed_axis
            );
        }
        let shape;
        let mut vals;
        if axis == 0 {
            let rows: usize = parts.iter().map(|&p| self.shape(p)[0]).sum();
            shape = [rows, first[1]];
            vals = Vec::with_capacity(rows * first[1]);
            for &p in parts {
                vals.extend_from_slice(self.value(p));
            }
        } else {
            let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
            let rows = first[0];
            shape = [rows, cols];
            vals = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for &p in parts {
                    let pc = self.shape(p)[1];
                    let pv = self.value(p);
                    vals.extend_from_slice(&pv[r * pc..(r + 1) * pc]);
                }
            }
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        self.push(shape, vals, rg, Op::Concat { parts: parts.to_vec(), axis })
    }

    /// Max-shifted log-sum-exp over each row: `[m,n] -> [m,1]`.
    pub fn logsumexp_rows(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        assert!(s[1] >= 1, "logsumexp_rows: empty reduction axis on {} tensor", shape_str(s));
        let xv = self.value(x);
        let vals: Vec<f64> = (0..s[0]).map(|r| logsumexp_slice(&xv[r * s[1]..(r + 1) * s[1]])).collect();
        let rg = self.requires_grad(x);
        self.push([s[0], 1], vals, rg, Op::LogSumExpRows(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).iter().sum();
        let rg = self.requires_grad(x);
        self.push([1, 1], vec![total], rg, Op::SumAll(x))
    }

    /// Sum of the entries at `indices` (flat, row-major, with multiplicity).
    pub fn select_sum(&mut self, x: Var, indices: &[usize]) -> Var {
        let len = self.value(x).len();
        for &i in indices {
            assert!(i < len, "select_sum: flat index {i} out of bounds for {len} entries");
        }
        let xv = self.value(x);
        let total: f64 = indices.iter().map(|&i| xv[i]).sum();
        let rg = self.requires_grad(x);
        self.push([1, 1], vec![total], rg, Op::SelectSum(x, indices.to_vec()))
    }

    /// Gather rows; backward scatter-adds, so a repeated index accumulates
    /// both contributions.
    pub fn rows(&mut self, x: Var, indices: &[usize]) -> Var {
        let s = self.shape(x);
        for &i in indices {
            assert!(i < s[0], "rows: row index {i} out of bounds for {} tensor", shape_str(s));
        }
        let mut vals = Vec::with_capacity(indices.len() * s[1]);
        let xv = self.value(x);
        for &i in indices {
            vals.extend_from_slice(&xv[i * s[1]..(i + 1) * s[1]]);
        }
        let rg = self.requires_grad(x);
        self.push([indices.len(), s[1]], vals, rg, Op::Rows(x, indices.to_vec()))
    }

    pub fn cols(&mut self, x: Var, indices: &[usize]) -> Var {
        let s = self.shape(x);
        for &j in indices {
            assert!(j < s[1], "cols: column index {j} out of bounds for {} tensor", shape_str(s));
        }
        let xv = self.value(x);
        let mut vals = Vec::with_capacity(s[0] * indices.len());
        for r in 0..s[0] {
            for &j in indices {
                vals.push(xv[r * s[1] + j]);
            }
        }
        let rg = self.requires_grad(x);
        self.push([s[0], indices.len()], vals, rg, Op::Cols(x, indices.to_vec()))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let s = self.shape(x);
        let vals: Vec<f64> = self.value(x).iter().map(|&v| v * c).collect();
        let rg = self.requires_grad(x);
        self.push(s, vals, rg, Op::Scale(x, c))
    }

    fn add_to_grad(&mut self, v: Var, contribution: &[f64]) {
        let n = &mut self.nodes[v.0];
        if !n.requires_grad {
            return;
        }
        if n.grad.is_empty() {
            n.grad = vec![0.0; n.values.len()];
        }
        for (g, c) in n.grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    /// Reverse pass from a scalar loss. Gradients accumulate into every
    /// reachable node with `requires_grad`; repeated calls without a fresh
    /// graph keep accumulating.
    pub fn backward(&mut self, loss: Var) {
        let s = self.shape(loss);
        assert_eq!(s, [1, 1], "backward: loss must be a scalar, got {}", shape_str(s));
        // leaf gradients accumulate across calls; intermediate gradients are
        // per-pass scratch and must start from zero
        for idx in 0..=loss.0 {
            if !matches!(self.nodes[idx].op, Op::Leaf) {
                for g in &mut self.nodes[idx].grad {
                    *g = 0.0;
                }
            }
        }
        self.add_to_grad(loss, &[1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad || self.nodes[idx].grad.is_empty() {
                continue;
            }
            let out_grad = self.nodes[idx].grad.clone();
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (sa, sb) = (self.shape(a), self.shape(b));
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    let da = matmul_nt(&out_grad, self.value(b), m, n, k);
                    self.add_to_grad(a, &da);
                    let db = matmul_tn(self.value(a), &out_grad, m, k, n);
                    self.add_to_grad(b, &db);
                }
                Op::Transpose(x) => {
                    let s = self.shape(x);
                    // out is s[1] x s[0]
                    let dx = transpose_raw(&out_grad, s[1], s[0]);
                    self.add_to_grad(x, &dx);
                }
                Op::Add(a, b) => {
                    self.add_to_grad(a, &out_grad);
                    self.add_to_grad(b, &out_grad);
                }
                Op::Sub(a, b) => {
                    self.add_to_grad(a, &out_grad);
                    let neg: Vec<f64> = out_grad.iter().map(|g| -g).collect();
                    self.add_to_grad(b, &neg);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> =
                        out_grad.iter().zip(self.value(b)).map(|(g, y)| g * y).collect();
                    self.add_to_grad(a, &da);
                    let db: Vec<f64> =
                        out_grad.iter().zip(self.value(a)).map(|(g, x)| g * x).collect();
                    self.add_to_grad(b, &db);
                }
                Op::AddRowBroadcast(matrix, row) => {
                    self.add_to_grad(matrix, &out_grad);
                    let n = self.shape(matrix)[1];
                    let mut drow = vec![0.0; n];
                    for (i, g) in out_grad.iter().enumerate() {
                        drow[i % n] += g;
                    }
                    self.add_to_grad(row, &drow);
                }
                Op::Sigmoid(x) => {
                    let out_vals = &self.nodes[idx].values;
                    let dx: Vec<f64> = out_grad
                        .iter()
                        .zip(out_vals)
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect();
                    self.add_to_grad(x, &dx);
                }
                Op::Tanh(x) => {
                    let out_vals = &self.nodes[idx].values;
                    let dx: Vec<f64> =
                        out_grad.iter().zip(out_vals).map(|(g, t)| g * (1.0 - t * t)).collect();
                    self.add_to_grad(x, &dx);
                }
                Op::Concat { parts, axis } => {
                    if axis == 0 {
                        let mut offset = 0;
                        for &p in &parts {
                            let len = self.value(p).len();
                            let slice = out_grad[offset..offset + len].to_vec();
                            self.add_to_grad(p, &slice);
                            offset += len;
                        }
                    } else {
                        let rows = self.shape(parts[0])[0];
                        let total_cols = self.nodes[idx].shape[1];
                        let mut col_offset = 0;
                        for &p in &parts {
                            let pc = self.shape(p)[1];
                            let mut dp = Vec::with_capacity(rows * pc);
                            for r in 0..rows {
                                let start = r * total_cols + col_offset;
                                dp.extend_from_slice(&out_grad[start..start + pc]);
                            }
                            self.add_to_grad(p, &dp);
                            col_offset += pc;
                        }
                    }
                }
                Op::LogSumExpRows(x) => {
                    let s = self.shape(x);
                    let out_vals = self.nodes[idx].values.clone();
                    let xv = self.value(x);
                    let mut dx = vec![0.0; xv.len()];
                    for r in 0..s[0] {
                        let g = out_grad[r];
                        let lse = out_vals[r];
                        for c in 0..s[1] {
                            dx[r * s[1] + c] = g * (xv[r * s[1] + c] - lse).exp();
                        }
                    }
                    self.add_to_grad(x, &dx);
                }
                Op::SumAll(x) => {
                    let dx = vec![out_grad[0]; self.value(x).len()];
                    self.add_to_grad(x, &dx);
                }
                Op::SelectSum(x, indices) => {
                    let mut dx = vec![0.0; self.value(x).len()];
                    for &i in &indices {
                        dx[i] += out_grad[0];
                    }
                    self.add_to_grad(x, &dx);
                }
                Op::Rows(x, indices) => {
                    let s = self.shape(x);
                    let mut dx = vec![0.0; s[0] * s[1]];
                    for (k, &i) in indices.iter().enumerate() {
                        for c in 0..s[1] {
                            dx[i * s[1] + c] += out_grad[k * s[1] + c];
                        }
                    }
                    self.add_to_grad(x, &dx);
                }
                Op::Cols(x, indices) => {
                    let s = self.shape(x);
                    let mut dx = vec![0.0; s[0] * s[1]];
                    for r in 0..s[0] {
                        for (k, &j) in indices.iter().enumerate() {
                            dx[r * s[1] + j] += out_grad[r * indices.len() + k];
                        }
                    }
                    self.add_to_grad(x, &dx);
                }
                Op::Scale(x, c) => {
                    let dx: Vec<f64> = out_grad.iter().map(|g| g * c).collect();
                    self.add_to_grad(x, &dx);
                }
            }
        }
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

/// Max-shifted log-sum-exp of a non-empty slice; never overflows for finite
/// inputs.
pub fn logsumexp_slice(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "logsumexp of an empty slice");
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

/// `a [m,k] x transpose(b [n,k]) -> [m,n]`
fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[j * k + p];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// `transpose(a [m,k]) x b [m,n] -> [k,n]`
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[p * n + j] += av * b[i * n + j];
            }
        }
    }
    out
}

fn transpose_raw(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}
