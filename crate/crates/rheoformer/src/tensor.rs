//! Dense 2-D tensors with reverse-mode automatic differentiation.
//!
//! All model math runs on a [`Tape`]: an append-only arena of operation
//! nodes in topological order. Forward values are computed eagerly; calling
//! [`Tape::backward`] on a scalar node walks the arena once in reverse and
//! accumulates gradients into every node that requires them.
//!
//! Everything is 64-bit and row-major. There is no broadcasting beyond
//! row-wise affine parameters (`add_row_bias`, the layer-norm gains).

use crate::error::{Result, RheoError};

/// Plain row-major matrix used outside the autodiff tape (datasets, solver
/// fields, frozen projections).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle into a [`Tape`].
pub type TensorId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    AddRowBias(TensorId, TensorId),
    Transpose(TensorId),
    Gelu(TensorId),
    Sqrt(TensorId),
    Sum(TensorId),
    LayerNorm {
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ColNorm {
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SliceCols { x: TensorId, start: usize },
    ConcatCols(Vec<TensorId>),
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// The computation record: operation nodes in topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// `c += a * b` with `a: m x k`, `b: k x p`, `c: m x p` (row-major, ikj order).
fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let cr = &mut c[i * p..(i + 1) * p];
        for (l, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let br = &b[l * p..(l + 1) * p];
            for (cv, &bv) in cr.iter_mut().zip(br) {
                *cv += av * bv;
            }
        }
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

    /// Total number of f64 elements held by node values. Gradient buffers
    /// count separately via [`Tape::live_grad_elems`].
    pub fn live_value_elems(&self) -> usize {
        self.nodes.iter().map(|n| n.data.len()).sum()
    }

    pub fn live_grad_elems(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.grad.as_ref().map_or(0, |g| g.len()))
            .sum()
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        (self.nodes[id].rows, self.nodes[id].cols)
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id].data
    }

    pub fn value_matrix(&self, id: TensorId) -> Matrix {
        let n = &self.nodes[id];
        Matrix::new(n.rows, n.cols, n.data.clone())
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id].grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id].requires_grad
    }

    /// Clears all gradient buffers so another backward pass may run.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(rows * cols, data.len());
        self.nodes.push(Node { rows, cols, data, grad: None, requires_grad, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool) -> TensorId {
        assert_eq!(rows * cols, data.len(), "leaf data length mismatch");
        self.push(rows, cols, data, requires_grad, Op::Leaf)
    }

    pub fn leaf_matrix(&mut self, m: &Matrix, requires_grad: bool) -> TensorId {
        self.push(m.rows, m.cols, m.data.clone(), requires_grad, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.leaf(1, 1, vec![v], false)
    }

    fn rg2(&self, a: TensorId, b: TensorId) -> bool {
        self.nodes[a].requires_grad || self.nodes[b].requires_grad
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.shape(a);
        let (k2, p) = self.shape(b);
        if k != k2 {
            return Err(RheoError::ShapeMismatch { op: "matmul", lhs: (m, k), rhs: (k2, p) });
        }
        let mut out = vec![0.0; m * p];
        matmul_acc(&self.nodes[a].data, &self.nodes[b].data, &mut out, m, k, p);
        Ok(self.push(m, p, out, self.rg2(a, b), Op::Matmul(a, b)))
    }

    fn elementwise(
        &mut self,
        opname: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(RheoError::ShapeMismatch { op: opname, lhs: sa, rhs: sb });
        }
        let out: Vec<f64> = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(sa.0, sa.1, out, self.rg2(a, b), op))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let (r, k) = self.shape(a);
        let out: Vec<f64> = self.nodes[a].data.iter().map(|&x| x * c).collect();
        let rg = self.nodes[a].requires_grad;
        self.push(r, k, out, rg, Op::Scale(a, c))
    }

    /// `x + bias` with `x: n x d` and `bias: 1 x d`, broadcast over rows.
    pub fn add_row_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let (n, d) = self.shape(x);
        let sb = self.shape(bias);
        if sb != (1, d) {
            return Err(RheoError::ShapeMismatch { op: "add_row_bias", lhs: (n, d), rhs: sb });
        }
        let bv = self.nodes[bias].data.clone();
        let mut out = self.nodes[x].data.clone();
        for r in 0..n {
            for c in 0..d {
                out[r * d + c] += bv[c];
            }
        }
        Ok(self.push(n, d, out, self.rg2(x, bias), Op::AddRowBias(x, bias)))
    }

    pub fn transpose(&mut self, x: TensorId) -> TensorId {
        let (n, d) = self.shape(x);
        let src = &self.nodes[x].data;
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            for c in 0..d {
                out[c * n + r] = src[r * d + c];
            }
        }
        let rg = self.nodes[x].requires_grad;
        self.push(d, n, out, rg, Op::Transpose(x))
    }

    pub fn gelu(&mut self, x: TensorId) -> TensorId {
        let (n, d) = self.shape(x);
        let out: Vec<f64> = self.nodes[x].data.iter().map(|&v| gelu(v)).collect();
        let rg = self.nodes[x].requires_grad;
        self.push(n, d, out, rg, Op::Gelu(x))
    }

    /// Elementwise square root; defined for non-negative inputs.
    pub fn sqrt(&mut self, x: TensorId) -> TensorId {
        let (n, d) = self.shape(x);
        let out: Vec<f64> = self.nodes[x].data.iter().map(|&v| v.sqrt()).collect();
        let rg = self.nodes[x].requires_grad;
        self.push(n, d, out, rg, Op::Sqrt(x))
    }

    /// Sum of all elements, producing a 1x1 scalar.
    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let s: f64 = self.nodes[x].data.iter().sum();
        let rg = self.nodes[x].requires_grad;
        self.push(1, 1, vec![s], rg, Op::Sum(x))
    }

    /// Row-wise standardization followed by a per-feature affine map.
    /// `x: n x d`, `gain, bias: 1 x d`.
    pub fn layer_norm(&mut self, x: TensorId, gain: TensorId, bias: TensorId, eps: f64) -> Result<TensorId> {
        let (n, d) = self.shape(x);
        if self.shape(gain) != (1, d) {
            return Err(RheoError::ShapeMismatch { op: "layer_norm gain", lhs: (n, d), rhs: self.shape(gain) });
        }
        if self.shape(bias) != (1, d) {
            return Err(RheoError::ShapeMismatch { op: "layer_norm bias", lhs: (n, d), rhs: self.shape(bias) });
        }
        let mut mean = vec![0.0; n];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        {
            let xd = &self.nodes[x].data;
            let gv = &self.nodes[gain].data;
            let bv = &self.nodes[bias].data;
            for r in 0..n {
                let row = &xd[r * d..(r + 1) * d];
                let mu = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
                let is = 1.0 / (var + eps).sqrt();
                mean[r] = mu;
                inv_std[r] = is;
                for c in 0..d {
                    out[r * d + c] = gv[c] * (row[c] - mu) * is + bv[c];
                }
            }
        }
        let rg = self.rg2(x, gain) || self.nodes[bias].requires_grad;
        Ok(self.push(n, d, out, rg, Op::LayerNorm { x, gain, bias, mean, inv_std }))
    }

    /// Column-wise standardization (statistics over the n rows of each
    /// column) followed by a per-column affine map. Used as the quadrature
    /// normalization of K and V in Galerkin-type attention.
    pub fn col_norm(&mut self, x: TensorId, gain: TensorId, bias: TensorId, eps: f64) -> Result<TensorId> {
        let (n, d) = self.shape(x);
        if self.shape(gain) != (1, d) {
            return Err(RheoError::ShapeMismatch { op: "col_norm gain", lhs: (n, d), rhs: self.shape(gain) });
        }
        if self.shape(bias) != (1, d) {
            return Err(RheoError::ShapeMismatch { op: "col_norm bias", lhs: (n, d), rhs: self.shape(bias) });
        }
        let mut mean = vec![0.0; d];
        let mut inv_std = vec![0.0; d];
        let mut out = vec![0.0; n * d];
        {
            let xd = &self.nodes[x].data;
            let gv = &self.nodes[gain].data;
            let bv = &self.nodes[bias].data;
            for c in 0..d {
                let mut mu = 0.0;
                for r in 0..n {
                    mu += xd[r * d + c];
                }
                mu /= n as f64;
                let mut var = 0.0;
                for r in 0..n {
                    let dv = xd[r * d + c] - mu;
                    var += dv * dv;
                }
                var /= n as f64;
                let is = 1.0 / (var + eps).sqrt();
                mean[c] = mu;
                inv_std[c] = is;
                for r in 0..n {
                    out[r * d + c] = gv[c] * (xd[r * d + c] - mu) * is + bv[c];
                }
            }
        }
        let rg = self.rg2(x, gain) || self.nodes[bias].requires_grad;
        Ok(self.push(n, d, out, rg, Op::ColNorm { x, gain, bias, mean, inv_std }))
    }

    /// Contiguous column slice `[start, start+len)`.
    pub fn slice_cols(&mut self, x: TensorId, start: usize, len: usize) -> TensorId {
        let (n, d) = self.shape(x);
        assert!(start + len <= d, "column slice out of range");
        let src = &self.nodes[x].data;
        let mut out = vec![0.0; n * len];
        for r in 0..n {
            out[r * len..(r + 1) * len].copy_from_slice(&src[r * d + start..r * d + start + len]);
        }
        let rg = self.nodes[x].requires_grad;
        self.push(n, len, out, rg, Op::SliceCols { x, start })
    }

    /// Horizontal concatenation; all parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        assert!(!parts.is_empty());
        let n = self.shape(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            let (rn, rc) = self.shape(p);
            if rn != n {
                return Err(RheoError::ShapeMismatch { op: "concat_cols", lhs: (n, 0), rhs: (rn, rc) });
            }
            total += rc;
        }
        let mut out = vec![0.0; n * total];
        let mut off = 0;
        for &p in parts {
            let (_, c) = self.shape(p);
            let src = &self.nodes[p].data;
            for r in 0..n {
                out[r * total + off..r * total + off + c].copy_from_slice(&src[r * c..(r + 1) * c]);
            }
            off += c;
        }
        let rg = parts.iter().any(|&p| self.nodes[p].requires_grad);
        Ok(self.push(n, total, out, rg, Op::ConcatCols(parts.to_vec())))
    }

    fn grad_buf(&mut self, id: TensorId) -> &mut Vec<f64> {
        let len = self.nodes[id].data.len();
        self.nodes[id].grad.get_or_insert_with(|| vec![0.0; len])
    }

    /// Reverse pass from a scalar loss. Each node is visited exactly once;
    /// gradients accumulate into every node with `requires_grad`.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(RheoError::EmptyTape);
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(RheoError::NonScalarLoss(r, c));
        }
        if self.backward_done {
            return Err(RheoError::BackwardRepeated);
        }
        self.backward_done = true;
        *self.grad_buf(loss) = vec![1.0];

        for id in (0..=loss).rev() {
            if self.nodes[id].grad.is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let op = self.nodes[id].op.clone();
            let g = self.nodes[id].grad.clone().unwrap();
            match op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (m, k) = self.shape(a);
                    let (_, p) = self.shape(b);
                    if self.nodes[a].requires_grad {
                        // dA = g . B^T
                        let bd = self.nodes[b].data.clone();
                        let mut bt = vec![0.0; k * p];
                        for i in 0..k {
                            for j in 0..p {
                                bt[j * k + i] = bd[i * p + j];
                            }
                        }
                        let ga = self.grad_buf(a);
                        matmul_acc(&g, &bt, ga, m, p, k);
                    }
                    if self.nodes[b].requires_grad {
                        // dB = A^T . g
                        let ad = self.nodes[a].data.clone();
                        let mut at = vec![0.0; m * k];
                        for i in 0..m {
                            for j in 0..k {
                                at[j * m + i] = ad[i * k + j];
                            }
                        }
                        let gb = self.grad_buf(b);
                        matmul_acc(&at, &g, gb, k, m, p);
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[a].requires_grad {
                        for (d, &s) in self.grad_buf(a).iter_mut().zip(&g) {
                            *d += s;
                        }
                    }
                    if self.nodes[b].requires_grad {
                        for (d, &s) in self.grad_buf(b).iter_mut().zip(&g) {
                            *d += s;
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[a].requires_grad {
                        for (d, &s) in self.grad_buf(a).iter_mut().zip(&g) {
                            *d += s;
                        }
                    }
                    if self.nodes[b].requires_grad {
                        for (d, &s) in self.grad_buf(b).iter_mut().zip(&g) {
                            *d -= s;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a].requires_grad {
                        let bd = self.nodes[b].data.clone();
                        for ((d, &s), &bv) in self.grad_buf(a).iter_mut().zip(&g).zip(&bd) {
                            *d += s * bv;
                        }
                    }
                    if self.nodes[b].requires_grad {
                        let ad = self.nodes[a].data.clone();
                        for ((d, &s), &av) in self.grad_buf(b).iter_mut().zip(&g).zip(&ad) {
                            *d += s * av;
                        }
                    }
                }
                Op::Scale(a, cfac) => {
                    if self.nodes[a].requires_grad {
                        for (d, &s) in self.grad_buf(a).iter_mut().zip(&g) {
                            *d += cfac * s;
                        }
                    }
                }
                Op::AddRowBias(x, bias) => {
                    let (n, d) = self.shape(x);
                    if self.nodes[x].requires_grad {
                        for (dst, &s) in self.grad_buf(x).iter_mut().zip(&g) {
                            *dst += s;
                        }
                    }
                    if self.nodes[bias].requires_grad {
                        let gb = self.grad_buf(bias);
                        for r in 0..n {
                            for c2 in 0..d {
                                gb[c2] += g[r * d + c2];
                            }
                        }
                    }
                }
                Op::Transpose(x) => {
                    if self.nodes[x].requires_grad {
                        let (n, d) = self.shape(x); // x is n x d, this node is d x n
                        let gx = self.grad_buf(x);
                        for r in 0..n {
                            for c2 in 0..d {
                                gx[r * d + c2] += g[c2 * n + r];
                            }
                        }
                    }
                }
                Op::Gelu(x) => {
                    if self.nodes[x].requires_grad {
                        let xd = self.nodes[x].data.clone();
                        for ((d, &s), &xv) in self.grad_buf(x).iter_mut().zip(&g).zip(&xd) {
                            *d += s * gelu_grad(xv);
                        }
                    }
                }
                Op::Sqrt(x) => {
                    if self.nodes[x].requires_grad {
                        let yd = self.nodes[id].data.clone();
                        for ((d, &s), &yv) in self.grad_buf(x).iter_mut().zip(&g).zip(&yd) {
                            *d += s * 0.5 / yv;
                        }
                    }
                }
                Op::Sum(x) => {
                    if self.nodes[x].requires_grad {
                        let s = g[0];
                        for d in self.grad_buf(x).iter_mut() {
                            *d += s;
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, mean, inv_std } => {
                    let (n, d) = self.shape(x);
                    let xd = self.nodes[x].data.clone();
                    let gv = self.nodes[gain].data.clone();
                    if self.nodes[x].requires_grad {
                        let mut gx = vec![0.0; n * d];
                        for r in 0..n {
                            let is = inv_std[r];
                            let mu = mean[r];
                            let mut m1 = 0.0;
                            let mut m2 = 0.0;
                            for c2 in 0..d {
                                let xh = (xd[r * d + c2] - mu) * is;
                                let gy = g[r * d + c2] * gv[c2];
                                m1 += gy;
                                m2 += gy * xh;
                            }
                            m1 /= d as f64;
                            m2 /= d as f64;
                            for c2 in 0..d {
                                let xh = (xd[r * d + c2] - mu) * is;
                                let gy = g[r * d + c2] * gv[c2];
                                gx[r * d + c2] = is * (gy - m1 - xh * m2);
                            }
                        }
                        for (dst, s) in self.grad_buf(x).iter_mut().zip(gx) {
                            *dst += s;
                        }
                    }
                    if self.nodes[gain].requires_grad {
                        let mut gg = vec![0.0; d];
                        for r in 0..n {
                            for c2 in 0..d {
                                let xh = (xd[r * d + c2] - mean[r]) * inv_std[r];
                                gg[c2] += g[r * d + c2] * xh;
                            }
                        }
                        for (dst, s) in self.grad_buf(gain).iter_mut().zip(gg) {
                            *dst += s;
                        }
                    }
                    if self.nodes[bias].requires_grad {
                        let mut gb = vec![0.0; d];
                        for r in 0..n {
                            for c2 in 0..d {
                                gb[c2] += g[r * d + c2];
                            }
                        }
                        for (dst, s) in self.grad_buf(bias).iter_mut().zip(gb) {
                            *dst += s;
                        }
                    }
                }
                Op::ColNorm { x, gain, bias, mean, inv_std } => {
                    let (n, d) = self.shape(x);
                    let xd = self.nodes[x].data.clone();
                    let gv = self.nodes[gain].data.clone();
                    if self.nodes[x].requires_grad {
                        let mut gx = vec![0.0; n * d];
                        for c2 in 0..d {
                            let is = inv_std[c2];
                            let mu = mean[c2];
                            let mut m1 = 0.0;
                            let mut m2 = 0.0;
                            for r in 0..n {
                                let xh = (xd[r * d + c2] - mu) * is;
                                let gy = g[r * d + c2] * gv[c2];
                                m1 += gy;
                                m2 += gy * xh;
                            }
                            m1 /= n as f64;
                            m2 /= n as f64;
                            for r in 0..n {
                                let xh = (xd[r * d + c2] - mu) * is;
                                let gy = g[r * d + c2] * gv[c2];
                                gx[r * d + c2] = is * (gy - m1 - xh * m2);
                            }
                        }
                        for (dst, s) in self.grad_buf(x).iter_mut().zip(gx) {
                            *dst += s;
                        }
                    }
                    if self.nodes[gain].requires_grad {
                        let mut gg = vec![0.0; d];
                        for r in 0..n {
                            for c2 in 0..d {
                                let xh = (xd[r * d + c2] - mean[c2]) * inv_std[c2];
                                gg[c2] += g[r * d + c2] * xh;
                            }
                        }
                        for (dst, s) in self.grad_buf(gain).iter_mut().zip(gg) {
                            *dst += s;
                        }
                    }
                    if self.nodes[bias].requires_grad {
                        let mut gb = vec![0.0; d];
                        for r in 0..n {
                            for c2 in 0..d {
                                gb[c2] += g[r * d + c2];
                            }
                        }
                        for (dst, s) in self.grad_buf(bias).iter_mut().zip(gb) {
                            *dst += s;
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    if self.nodes[x].requires_grad {
                        let (n, d) = self.shape(x);
                        let len = self.nodes[id].cols;
                        let gx = self.grad_buf(x);
                        for r in 0..n {
                            for c2 in 0..len {
                                gx[r * d + start + c2] += g[r * len + c2];
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = self.nodes[id].cols;
                    let n = self.nodes[id].rows;
                    let mut off = 0;
                    for p in parts {
                        let (_, c2) = self.shape(p);
                        if self.nodes[p].requires_grad {
                            let gp = self.grad_buf(p);
                            for r in 0..n {
                                for j in 0..c2 {
                                    gp[r * c2 + j] += g[r * total + off + j];
                                }
                            }
                        }
                        off += c2;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite difference of a scalar-valued function of one leaf.
    fn finite_diff(
        data: &[f64],
        step: f64,
        mut f: impl FnMut(&[f64]) -> f64,
    ) -> Vec<f64> {
        let mut grad = vec![0.0; data.len()];
        let mut work = data.to_vec();
        for i in 0..data.len() {
            work[i] = data[i] + step;
            let fp = f(&work);
            work[i] = data[i] - step;
            let fm = f(&work);
            work[i] = data[i];
            grad[i] = (fp - fm) / (2.0 * step);
        }
        grad
    }

    fn assert_grad_close(analytic: &[f64], numeric: &[f64], rel_tol: f64) {
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            let denom = n.abs().max(1e-3);
            assert!(
                (a - n).abs() / denom < rel_tol || (a - n).abs() < 1e-8,
                "grad mismatch at {i}: analytic {a}, numeric {n}"
            );
        }
    }

    fn rng_data(seed: u64, n: usize) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let i2 = t.leaf(2, 2, vec![1.0, 0.0, 0.0, 1.0], false);
        let x = t.leaf(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], false);
        let y = t.matmul(i2, x).unwrap();
        assert_eq!(t.value(y), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_hand_case() {
        let mut t = Tape::new();
        let a = t.leaf(2, 2, vec![1.0, 2.0, 3.0, 4.0], false);
        let b = t.leaf(2, 1, vec![0.0, 1.0], false);
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(2, 3, vec![0.0; 6], false);
        let b = t.leaf(2, 2, vec![0.0; 4], false);
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("(2, 2)"), "{msg}");
    }

    #[test]
    fn matmul_gradient_of_sum_is_ones_bt() {
        // d/dA sum(A.B) = ones . B^T
        let mut t = Tape::new();
        let a_data = rng_data(1, 6);
        let b_data = rng_data(2, 12);
        let a = t.leaf(2, 3, a_data.clone(), true);
        let b = t.leaf(3, 4, b_data.clone(), false);
        let c = t.matmul(a, b).unwrap();
        let s = t.sum(c);
        t.backward(s).unwrap();
        let ga = t.grad(a).unwrap().to_vec();
        // expected: row r of grad = column sums of B rows
        let mut expected = vec![0.0; 6];
        for r in 0..2 {
            for k in 0..3 {
                expected[r * 3 + k] = (0..4).map(|j| b_data[k * 4 + j]).sum();
            }
        }
        assert_grad_close(&ga, &expected, 1e-12);
        // and against finite differences
        let fd = finite_diff(&a_data, 1e-6, |ad| {
            let mut t2 = Tape::new();
            let a2 = t2.leaf(2, 3, ad.to_vec(), false);
            let b2 = t2.leaf(3, 4, b_data.clone(), false);
            let c2 = t2.matmul(a2, b2).unwrap();
            let s2 = t2.sum(c2);
            t2.value(s2)[0]
        });
        assert_grad_close(&ga, &fd, 1e-5);
    }

    #[test]
    fn matmul_associativity() {
        let a = rng_data(10, 64);
        let b = rng_data(11, 64);
        let c = rng_data(12, 64);
        let mut t = Tape::new();
        let ta = t.leaf(8, 8, a, false);
        let tb = t.leaf(8, 8, b, false);
        let tc = t.leaf(8, 8, c, false);
        let ab = t.matmul(ta, tb).unwrap();
        let ab_c = t.matmul(ab, tc).unwrap();
        let bc = t.matmul(tb, tc).unwrap();
        let a_bc = t.matmul(ta, bc).unwrap();
        let max_diff = t
            .value(ab_c)
            .iter()
            .zip(t.value(a_bc))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-10, "associativity violated: {max_diff}");
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(1, 4, vec![3.0; 4], false);
        let g = t.leaf(1, 4, vec![1.0; 4], false);
        let b = t.leaf(1, 4, vec![0.0; 4], false);
        let y = t.layer_norm(x, g, b, 1e-5).unwrap();
        for v in t.value(y) {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_two_point_row() {
        let mut t = Tape::new();
        let x = t.leaf(1, 2, vec![1.0, 3.0], false);
        let g = t.leaf(1, 2, vec![1.0, 1.0], false);
        let b = t.leaf(1, 2, vec![0.0, 0.0], false);
        let y = t.layer_norm(x, g, b, 1e-14).unwrap();
        assert!((t.value(y)[0] + 1.0).abs() < 1e-6);
        assert!((t.value(y)[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_zero_gain_gives_bias() {
        let mut t = Tape::new();
        let x = t.leaf(2, 3, rng_data(3, 6), false);
        let g = t.leaf(1, 3, vec![0.0; 3], false);
        let b = t.leaf(1, 3, vec![0.5, -0.25, 2.0], false);
        let y = t.layer_norm(x, g, b, 1e-5).unwrap();
        for r in 0..2 {
            assert_eq!(&t.value(y)[r * 3..(r + 1) * 3], &[0.5, -0.25, 2.0]);
        }
    }

    #[test]
    fn gelu_values() {
        let mut t = Tape::new();
        let x = t.leaf(1, 2, vec![0.0, 50.0], false);
        let y = t.gelu(x);
        assert_eq!(t.value(y)[0], 0.0);
        assert!((t.value(y)[1] - 50.0).abs() < 1e-9);
    }

    #[test]
    fn gelu_gradient_matches_finite_difference() {
        let x0 = 0.5;
        let step = 1e-6;
        let fd = (gelu(x0 + step) - gelu(x0 - step)) / (2.0 * step);
        let an = gelu_grad(x0);
        assert!((fd - an).abs() / fd.abs() < 1e-6);
    }

    #[test]
    fn backward_sum_of_leaf_is_ones() {
        let mut t = Tape::new();
        let w = t.leaf(2, 2, rng_data(4, 4), true);
        let s = t.sum(w);
        t.backward(s).unwrap();
        assert_eq!(t.grad(w).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn backward_sum_of_square_is_2w() {
        let data = rng_data(5, 6);
        let mut t = Tape::new();
        let w = t.leaf(2, 3, data.clone(), true);
        let ww = t.mul(w, w).unwrap();
        let s = t.sum(ww);
        t.backward(s).unwrap();
        let g = t.grad(w).unwrap();
        for (gv, dv) in g.iter().zip(&data) {
            assert!((gv - 2.0 * dv).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_and_empty_and_repeat() {
        let mut t = Tape::new();
        assert!(matches!(t.backward(0).unwrap_err(), RheoError::EmptyTape));
        let w = t.leaf(2, 2, vec![1.0; 4], true);
        assert!(matches!(t.backward(w).unwrap_err(), RheoError::NonScalarLoss(2, 2)));
        let s = t.sum(w);
        t.backward(s).unwrap();
        assert!(matches!(t.backward(s).unwrap_err(), RheoError::BackwardRepeated));
        t.reset_grads();
        t.backward(s).unwrap();
    }

    /// Composite MLP gradient against central finite differences.
    #[test]
    fn mlp_gradient_matches_finite_difference() {
        let w1 = rng_data(20, 12); // 4 x 3
        let b1 = rng_data(21, 3);
        let w2 = rng_data(22, 6); // 3 x 2
        let x = rng_data(23, 8); // 2 x 4

        let run = |w1d: &[f64], b1d: &[f64], w2d: &[f64], grad: bool| {
            let mut t = Tape::new();
            let xi = t.leaf(2, 4, x.clone(), false);
            let w1i = t.leaf(4, 3, w1d.to_vec(), grad);
            let b1i = t.leaf(1, 3, b1d.to_vec(), grad);
            let w2i = t.leaf(3, 2, w2d.to_vec(), grad);
            let h = t.matmul(xi, w1i).unwrap();
            let h = t.add_row_bias(h, b1i).unwrap();
            let h = t.gelu(h);
            let o = t.matmul(h, w2i).unwrap();
            let oo = t.mul(o, o).unwrap();
            let s = t.sum(oo);
            (t, s, [w1i, b1i, w2i])
        };

        let (mut t, s, ids) = run(&w1, &b1, &w2, true);
        t.backward(s).unwrap();
        let analytic: Vec<Vec<f64>> = ids.iter().map(|&i| t.grad(i).unwrap().to_vec()).collect();

        let leaves: [&[f64]; 3] = [&w1, &b1, &w2];
        for (li, leaf) in leaves.iter().enumerate() {
            let fd = finite_diff(leaf, 1e-6, |pert| {
                let args: Vec<&[f64]> = (0..3).map(|j| if j == li { pert } else { leaves[j] }).collect();
                let (t2, s2, _) = run(args[0], args[1], args[2], false);
                t2.value(s2)[0]
            });
            assert_grad_close(&analytic[li], &fd, 1e-5);
        }
    }

    #[test]
    fn layer_norm_and_col_norm_gradients_match_finite_difference() {
        for col in [false, true] {
            let x = rng_data(30, 20); // 5 x 4
            let g = rng_data(31, 4).iter().map(|v| v + 1.5).collect::<Vec<_>>();
            let b = rng_data(32, 4);
            let run = |xd: &[f64], gd: &[f64], bd: &[f64], grad: bool| {
                let mut t = Tape::new();
                let xi = t.leaf(5, 4, xd.to_vec(), grad);
                let gi = t.leaf(1, 4, gd.to_vec(), grad);
                let bi = t.leaf(1, 4, bd.to_vec(), grad);
                let y = if col {
                    t.col_norm(xi, gi, bi, 1e-5).unwrap()
                } else {
                    t.layer_norm(xi, gi, bi, 1e-5).unwrap()
                };
                // weighted sum keeps the loss sensitive to every element
                let w: Vec<f64> = (0..20).map(|i| 0.1 * (i as f64) - 0.7).collect();
                let wi = t.leaf(5, 4, w, false);
                let p = t.mul(y, wi).unwrap();
                let s = t.sum(p);
                (t, s, [xi, gi, bi])
            };
            let (mut t, s, ids) = run(&x, &g, &b, true);
            t.backward(s).unwrap();
            let analytic: Vec<Vec<f64>> = ids.iter().map(|&i| t.grad(i).unwrap().to_vec()).collect();
            let leaves: [&[f64]; 3] = [&x, &g, &b];
            for (li, leaf) in leaves.iter().enumerate() {
                let fd = finite_diff(leaf, 1e-6, |pert| {
                    let args: Vec<&[f64]> = (0..3).map(|j| if j == li { pert } else { leaves[j] }).collect();
                    let (t2, s2, _) = run(args[0], args[1], args[2], false);
                    t2.value(s2)[0]
                });
                assert_grad_close(&analytic[li], &fd, 1e-4);
            }
        }
    }

    #[test]
    fn slice_concat_transpose_sqrt_gradients() {
        let x = rng_data(40, 12).iter().map(|v| v + 2.0).collect::<Vec<_>>(); // keep sqrt domain positive
        let run = |xd: &[f64], grad: bool| {
            let mut t = Tape::new();
            let xi = t.leaf(3, 4, xd.to_vec(), grad);
            let left = t.slice_cols(xi, 0, 2);
            let right = t.slice_cols(xi, 2, 2);
            let swapped = t.concat_cols(&[right, left]).unwrap();
            let tr = t.transpose(swapped);
            let sq = t.sqrt(tr);
            let s = t.sum(sq);
            (t, s, xi)
        };
        let (mut t, s, xi) = run(&x, true);
        t.backward(s).unwrap();
        let analytic = t.grad(xi).unwrap().to_vec();
        let fd = finite_diff(&x, 1e-6, |pert| {
            let (t2, s2, _) = run(pert, false);
            t2.value(s2)[0]
        });
        assert_grad_close(&analytic, &fd, 1e-5);
    }

    #[test]
    fn determinism_bitwise() {
        let make = || {
            let mut t = Tape::new();
            let a = t.leaf(4, 4, rng_data(50, 16), true);
            let b = t.leaf(4, 4, rng_data(51, 16), false);
            let c = t.matmul(a, b).unwrap();
            let g = t.gelu(c);
            let s = t.sum(g);
            t.backward(s).unwrap();
            (t.value(s)[0], t.grad(a).unwrap().to_vec())
        };
        let (v1, g1) = make();
        let (v2, g2) = make();
        assert_eq!(v1.to_bits(), v2.to_bits());
        assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
