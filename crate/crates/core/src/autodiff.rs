//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! Sized for the models in this crate: hidden vectors up to 128 components,
//! double precision throughout. A [`Tape`] records every forward operation;
//! [`Tape::backward`] replays the records in reverse and accumulates
//! gradients for every node, so a parameter used at many timesteps receives
//! the sum of all its contributions (what backpropagation through time
//! needs).
//!
//! [`Var`] is a cheap copyable handle into one tape. Handles are only valid
//! on the tape that created them; mixing tapes panics. Shape mismatches also
//! panic: both are programming errors, not data errors.

use crate::dist::{normal_cdf, normal_icdf, normal_pdf};

/// Dense tensor: scalar, vector, or row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Tensor {
    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: Shape::Scalar,
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Tensor {
            shape: Shape::Matrix(rows, cols),
            data,
        }
    }

    pub fn as_scalar(&self) -> f64 {
        assert_eq!(self.shape, Shape::Scalar, "tensor is not a scalar");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape_id: u64,
    idx: u32,
}

enum Op {
    Leaf,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    AddConst(u32),
    ScaleConst(u32, f64),
    ScalarMul(u32, u32),
    MatVec(u32, u32),
    Row(u32, usize),
    Tanh(u32),
    Exp(u32),
    Log(u32),
    Softplus(u32),
    NormalCdf(u32),
    NormalIcdf(u32),
    Softmax(u32),
    LogSoftmax(u32),
    Concat(u32, u32),
    Sum(u32),
    Dot(u32, u32),
    Index(u32, usize),
    Clamp(u32, f64, f64),
}

struct Node {
    value: Tensor,
    op: Op,
}

static TAPE_COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(1);

/// Records forward operations and replays them in reverse for gradients.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    tape_id: u64,
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, same layout as its value.
    pub fn get(&self, v: Var) -> &[f64] {
        assert_eq!(v.tape_id, self.tape_id, "Var belongs to a different tape");
        &self.grads[v.idx as usize]
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: TAPE_COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed),
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced on tape");
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node { value, op });
        Var {
            tape_id: self.id,
            idx,
        }
    }

    fn check(&self, v: Var) -> usize {
        assert_eq!(v.tape_id, self.id, "Var belongs to a different tape");
        v.idx as usize
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let i = self.check(v);
        &self.nodes[i].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v).as_scalar()
    }

    /// Records an input node. Leaves are the only nodes whose gradients are
    /// read back by callers.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.leaf(Tensor::scalar(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!(ta.shape, tb.shape, "add: shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let shape = ta.shape;
        self.push(Tensor { shape, data }, Op::Add(a.idx, b.idx))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!(ta.shape, tb.shape, "sub: shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect();
        let shape = ta.shape;
        self.push(Tensor { shape, data }, Op::Sub(a.idx, b.idx))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!(ta.shape, tb.shape, "mul: shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let shape = ta.shape;
        self.push(Tensor { shape, data }, Op::Mul(a.idx, b.idx))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!(ta.shape, tb.shape, "div: shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x / y).collect();
        let shape = ta.shape;
        self.push(Tensor { shape, data }, Op::Div(a.idx, b.idx))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let t = &self.nodes[ia].value;
        let out = Tensor {
            shape: t.shape,
            data: t.data.iter().map(|x| -x).collect(),
        };
        self.push(out, Op::Neg(a.idx))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let ia = self.check(a);
        let t = &self.nodes[ia].value;
        let out = Tensor {
            shape: t.shape,
            data: t.data.iter().map(|x| x + c).collect(),
        };
        self.push(out, Op::AddConst(a.idx))
    }

    pub fn scale_const(&mut self, a: Var, c: f64) -> Var {
        let ia = self.check(a);
        let t = &self.nodes[ia].value;
        let out = Tensor {
            shape: t.shape,
            data: t.data.iter().map(|x| x * c).collect(),
        };
        self.push(out, Op::ScaleConst(a.idx, c))
    }

    /// Broadcast product of a scalar node with any node.
    pub fn scalar_mul(&mut self, s: Var, v: Var) -> Var {
        let (is, iv) = (self.check(s), self.check(v));
        assert_eq!(
            self.nodes[is].value.shape,
            Shape::Scalar,
            "scalar_mul: first arg must be scalar"
        );
        let sv = self.nodes[is].value.data[0];
        let t = &self.nodes[iv].value;
        let out = Tensor {
            shape: t.shape,
            data: t.data.iter().map(|x| sv * x).collect(),
        };
        self.push(out, Op::ScalarMul(s.idx, v.idx))
    }

    #[allow(clippy::needless_range_loop)]
    pub fn matvec(&mut self, m: Var, v: Var) -> Var {
        let (im, iv) = (self.check(m), self.check(v));
        let (tm, tv) = (&self.nodes[im].value, &self.nodes[iv].value);
        let (rows, cols) = match tm.shape {
            Shape::Matrix(r, c) => (r, c),
            _ => panic!("matvec: first arg must be a matrix"),
        };
        let n = match tv.shape {
            Shape::Vector(n) => n,
            _ => panic!("matvec: second arg must be a vector"),
        };
        assert_eq!(cols, n, "matvec: inner dimension mismatch ({cols} vs {n})");
        let mut data = vec![0.0; rows];
        for r in 0..rows {
            let row = &tm.data[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for (w, x) in row.iter().zip(&tv.data) {
                acc += w * x;
            }
            data[r] = acc;
        }
        self.push(Tensor::vector(data), Op::MatVec(m.idx, v.idx))
    }

    /// Extracts row `r` of a matrix as a vector (embedding lookup).
    pub fn row(&mut self, m: Var, r: usize) -> Var {
        let im = self.check(m);
        let tm = &self.nodes[im].value;
        let (rows, cols) = match tm.shape {
            Shape::Matrix(rr, cc) => (rr, cc),
            _ => panic!("row: arg must be a matrix"),
        };
        assert!(r < rows, "row index {r} out of bounds ({rows} rows)");
        let data = tm.data[r * cols..(r + 1) * cols].to_vec();
        self.push(Tensor::vector(data), Op::Row(m.idx, r))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let t = &self.nodes[ia].value;
        let out = Tensor {
            shape: t.shape,
            data: t.data.iter().map(|x| x.tanh()).collect(),
        };
        self.push(out, Op::Tanh(a.idx))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let t = &self.nodes[ia].value;
        let out = Tensor {
            shape: t.shape,
            data: t.data.iter().map(|x| x.exp()).collect(),
        };
        self.push(out, Op::Exp(a.idx))
    }

    /// Natural log; arguments must be strictly positive.
    pub fn log(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let t = &self.nodes[ia].value;
        assert!(
            t.data.iter().all(|&x| x > 0.0),
            "log: argument outside open domain (0, inf)"
        );
        let out = Tensor {
            shape: t.shape,
            data: t.data.iter().map(|x| x.ln()).collect(),
        };
        self.push(out, Op::Log(a.idx))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let t = &self.nodes[ia].value;
        let out = Tensor {
            shape: t.shape,
            data: t.data.iter().map(|&x| softplus_stable(x)).collect(),
        };
        self.push(out, Op::Softplus(a.idx))
    }

    /// Standard normal CDF, elementwise.
    pub fn normal_cdf(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let t = &self.nodes[ia].value;
        let out = Tensor {
            shape: t.shape,
            data: t.data.iter().map(|&x| normal_cdf(x)).collect(),
        };
        self.push(out, Op::NormalCdf(a.idx))
    }

    /// Standard normal inverse CDF, elementwise; arguments in (0, 1).
    pub fn normal_icdf(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let t = &self.nodes[ia].value;
        assert!(
            t.data.iter().all(|&x| x > 0.0 && x < 1.0),
            "normal_icdf: argument outside open domain (0, 1)"
        );
        let out = Tensor {
            shape: t.shape,
            data: t.data.iter().map(|&x| normal_icdf(x)).collect(),
        };
        self.push(out, Op::NormalIcdf(a.idx))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let t = &self.nodes[ia].value;
        let out = Tensor {
            shape: t.shape,
            data: softmax_stable(&t.data),
        };
        self.push(out, Op::Softmax(a.idx))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let t = &self.nodes[ia].value;
        let out = Tensor {
            shape: t.shape,
            data: log_softmax_stable(&t.data),
        };
        self.push(out, Op::LogSoftmax(a.idx))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (na, nb) = match (ta.shape, tb.shape) {
            (Shape::Vector(x), Shape::Vector(y)) => (x, y),
            _ => panic!("concat: both args must be vectors"),
        };
        let mut data = Vec::with_capacity(na + nb);
        data.extend_from_slice(&ta.data);
        data.extend_from_slice(&tb.data);
        self.push(Tensor::vector(data), Op::Concat(a.idx, b.idx))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let s: f64 = self.nodes[ia].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a.idx))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!(ta.shape, tb.shape, "dot: shape mismatch");
        let s: f64 = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).sum();
        self.push(Tensor::scalar(s), Op::Dot(a.idx, b.idx))
    }

    /// Picks element `i` of a vector as a scalar.
    pub fn index(&mut self, a: Var, i: usize) -> Var {
        let ia = self.check(a);
        let t = &self.nodes[ia].value;
        let n = match t.shape {
            Shape::Vector(n) => n,
            _ => panic!("index: arg must be a vector"),
        };
        assert!(i < n, "index {i} out of bounds (len {n})");
        let x = t.data[i];
        self.push(Tensor::scalar(x), Op::Index(a.idx, i))
    }

    /// Saturating clamp; gradient passes through inside `[lo, hi]` and is
    /// zero outside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let ia = self.check(a);
        let t = &self.nodes[ia].value;
        let out = Tensor {
            shape: t.shape,
            data: t.data.iter().map(|x| x.clamp(lo, hi)).collect(),
        };
        self.push(out, Op::Clamp(a.idx, lo, hi))
    }

    /// Reverse pass from a scalar loss. Gradients accumulate (+=) for nodes
    /// used several times.
    pub fn backward(&mut self, loss: Var) -> Gradients {
        let il = self.check(loss);
        assert_eq!(
            self.nodes[il].value.shape,
            Shape::Scalar,
            "backward: loss must be scalar"
        );
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.shape.len()])
            .collect();
        grads[il][0] = 1.0;

        for i in (0..=il).rev() {
            // Split borrows: take the output gradient for node i, write into
            // inputs (always lower indices).
            let g = std::mem::take(&mut grads[i]);
            if g.iter().all(|&x| x == 0.0) {
                grads[i] = g;
                continue;
            }
            match self.nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    for (ga, &gi) in grads[a as usize].iter_mut().zip(&g) {
                        *ga += gi;
                    }
                    for (gb, &gi) in grads[b as usize].iter_mut().zip(&g) {
                        *gb += gi;
                    }
                }
                Op::Sub(a, b) => {
                    for (ga, &gi) in grads[a as usize].iter_mut().zip(&g) {
                        *ga += gi;
                    }
                    for (gb, &gi) in grads[b as usize].iter_mut().zip(&g) {
                        *gb -= gi;
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (
                        &self.nodes[a as usize].value.data,
                        &self.nodes[b as usize].value.data,
                    );
                    for k in 0..g.len() {
                        grads[a as usize][k] += g[k] * vb[k];
                    }
                    for k in 0..g.len() {
                        grads[b as usize][k] += g[k] * va[k];
                    }
                }
                Op::Div(a, b) => {
                    let (va, vb) = (
                        &self.nodes[a as usize].value.data,
                        &self.nodes[b as usize].value.data,
                    );
                    for k in 0..g.len() {
                        grads[a as usize][k] += g[k] / vb[k];
                    }
                    for k in 0..g.len() {
                        grads[b as usize][k] -= g[k] * va[k] / (vb[k] * vb[k]);
                    }
                }
                Op::Neg(a) => {
                    for (ga, &gi) in grads[a as usize].iter_mut().zip(&g) {
                        *ga -= gi;
                    }
                }
                Op::AddConst(a) => {
                    for (ga, &gi) in grads[a as usize].iter_mut().zip(&g) {
                        *ga += gi;
                    }
                }
                Op::ScaleConst(a, c) => {
                    for (ga, &gi) in grads[a as usize].iter_mut().zip(&g) {
                        *ga += c * gi;
                    }
                }
                Op::ScalarMul(s, v) => {
                    let sv = self.nodes[s as usize].value.data[0];
                    let vv = &self.nodes[v as usize].value.data;
                    let mut gs = 0.0;
                    for k in 0..g.len() {
                        gs += g[k] * vv[k];
                        grads[v as usize][k] += sv * g[k];
                    }
                    grads[s as usize][0] += gs;
                }
                Op::MatVec(m, v) => {
                    let (rows, cols) = match self.nodes[m as usize].value.shape {
                        Shape::Matrix(r, c) => (r, c),
                        _ => unreachable!(),
                    };
                    let mv = &self.nodes[m as usize].value.data;
                    let vv = &self.nodes[v as usize].value.data;
                    for r in 0..rows {
                        let gr = g[r];
                        for c in 0..cols {
                            grads[m as usize][r * cols + c] += gr * vv[c];
                            grads[v as usize][c] += gr * mv[r * cols + c];
                        }
                    }
                }
                Op::Row(m, r) => {
                    let cols = g.len();
                    for c in 0..cols {
                        grads[m as usize][r * cols + c] += g[c];
                    }
                }
                Op::Tanh(a) => {
                    let out = &self.nodes[i].value.data;
                    for k in 0..g.len() {
                        grads[a as usize][k] += g[k] * (1.0 - out[k] * out[k]);
                    }
                }
                Op::Exp(a) => {
                    let out = &self.nodes[i].value.data;
                    for k in 0..g.len() {
                        grads[a as usize][k] += g[k] * out[k];
                    }
                }
                Op::Log(a) => {
                    let va = &self.nodes[a as usize].value.data;
                    for k in 0..g.len() {
                        grads[a as usize][k] += g[k] / va[k];
                    }
                }
                Op::Softplus(a) => {
                    let va = &self.nodes[a as usize].value.data;
                    for k in 0..g.len() {
                        let sig = 1.0 / (1.0 + (-va[k]).exp());
                        grads[a as usize][k] += g[k] * sig;
                    }
                }
                Op::NormalCdf(a) => {
                    let va = &self.nodes[a as usize].value.data;
                    for k in 0..g.len() {
                        grads[a as usize][k] += g[k] * normal_pdf(va[k]);
                    }
                }
                Op::NormalIcdf(a) => {
                    let out = &self.nodes[i].value.data;
                    for k in 0..g.len() {
                        grads[a as usize][k] += g[k] / normal_pdf(out[k]);
                    }
                }
                Op::Softmax(a) => {
                    let out = &self.nodes[i].value.data;
                    let gdot: f64 = g.iter().zip(out).map(|(gi, oi)| gi * oi).sum();
                    for k in 0..g.len() {
                        grads[a as usize][k] += out[k] * (g[k] - gdot);
                    }
                }
                Op::LogSoftmax(a) => {
                    let out = &self.nodes[i].value.data;
                    let gsum: f64 = g.iter().sum();
                    for k in 0..g.len() {
                        grads[a as usize][k] += g[k] - out[k].exp() * gsum;
                    }
                }
                Op::Concat(a, b) => {
                    let na = self.nodes[a as usize].value.data.len();
                    for k in 0..na {
                        grads[a as usize][k] += g[k];
                    }
                    for k in na..g.len() {
                        grads[b as usize][k - na] += g[k];
                    }
                }
                Op::Sum(a) => {
                    let gi = g[0];
                    for ga in grads[a as usize].iter_mut() {
                        *ga += gi;
                    }
                }
                Op::Dot(a, b) => {
                    let gi = g[0];
                    let (va, vb) = (
                        &self.nodes[a as usize].value.data,
                        &self.nodes[b as usize].value.data,
                    );
                    for k in 0..va.len() {
                        grads[a as usize][k] += gi * vb[k];
                    }
                    for k in 0..vb.len() {
                        grads[b as usize][k] += gi * va[k];
                    }
                }
                Op::Index(a, idx) => {
                    grads[a as usize][idx] += g[0];
                }
                Op::Clamp(a, lo, hi) => {
                    let va = &self.nodes[a as usize].value.data;
                    for k in 0..g.len() {
                        if va[k] >= lo && va[k] <= hi {
                            grads[a as usize][k] += g[k];
                        }
                    }
                }
            }
            grads[i] = g;
        }
        Gradients {
            tape_id: self.id,
            grads,
        }
    }
}

pub fn softplus_stable(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn softmax_stable(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn log_softmax_stable(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = x.iter().map(|&v| (v - m).exp()).sum();
    let lz = z.ln() + m;
    x.iter().map(|&v| v - lz).collect()
}
