//! Reverse-mode differentiation over a linear tape.
//!
//! A [`Tape`] records every operation as it executes; [`Tape::backward`]
//! replays the record in reverse, accumulating vector-Jacobian products into
//! per-node gradient slots. The individual VJP rules are exposed as free
//! functions so they can be exercised in isolation.
//!
//! For every piecewise-defined operation (`abs`, `relu`, `sign`,
//! soft-threshold) the tape tracks how close the argument came to a kink and
//! which linear piece each element landed on. Finite-difference checks
//! compare the piece records of perturbed passes to recognise evaluations
//! whose difference quotient straddles a non-differentiable point.

use super::ops;
use super::{LinearParams, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(usize);

enum Op {
    Input,
    MatMul(Var, Var),
    SoftmaxRows(Var),
    AvgPool2d {
        x: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Abs(Var),
    Relu(Var),
    Sigmoid(Var),
    Sign(Var),
    Scale(Var, f64),
    Add(Var, Var),
    Mul(Var, Var),
    ReduceMean(Var, usize),
    SoftThreshold {
        x: Var,
        tau: Var,
    },
    Transpose(Var),
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<Var>),
    UpsampleNearest {
        x: Var,
        src: (usize, usize),
        dst: (usize, usize),
    },
    Reshape(Var),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Records a forward computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Tensor>,
    min_kink_margin: f64,
    pieces: Vec<u8>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            min_kink_margin: f64::INFINITY,
            pieces: Vec::new(),
        }
    }

    /// Smallest distance any piecewise operation's argument came to a point
    /// of non-differentiability during the forward passes recorded so far.
    /// `INFINITY` when no such operation ran.
    pub fn min_kink_margin(&self) -> f64 {
        self.min_kink_margin
    }

    /// Branch taken by every piecewise operation evaluated so far: one code
    /// per element in execution order. Two passes over the same graph stayed
    /// on the same linear piece everywhere iff their records are equal.
    pub fn piece_record(&self) -> &[u8] {
        &self.pieces
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn note_margin(&mut self, m: f64) {
        if m < self.min_kink_margin {
            self.min_kink_margin = m;
        }
    }

    fn record_sides(&mut self, x: Var) {
        let data = &self.nodes[x.0].value;
        for &v in data.data() {
            self.pieces.push(side_of_zero(v));
        }
    }

    fn record_zones(&mut self, x: Var, tau: Var) {
        let xs = &self.nodes[x.0].value;
        let ts = &self.nodes[tau.0].value;
        let cols = ts.data().len();
        for (i, &v) in xs.data().iter().enumerate() {
            let t = ts.data()[i % cols];
            self.pieces.push(if v > t {
                2
            } else if v < -t {
                0
            } else {
                1
            });
        }
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Op::Input, value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let value = ops::softmax_rows(self.value(x))?;
        Ok(self.push(Op::SoftmaxRows(x), value))
    }

    pub fn avg_pool_2d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let value = ops::avg_pool_2d(self.value(x), kernel, stride, pad)?;
        Ok(self.push(Op::AvgPool2d { x, kernel, stride, pad }, value))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let m = min_abs(self.value(x));
        self.note_margin(m);
        self.record_sides(x);
        let value = ops::abs(self.value(x));
        self.push(Op::Abs(x), value)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let m = min_abs(self.value(x));
        self.note_margin(m);
        self.record_sides(x);
        let value = ops::relu(self.value(x));
        self.push(Op::Relu(x), value)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = ops::sigmoid(self.value(x));
        self.push(Op::Sigmoid(x), value)
    }

    pub fn sign(&mut self, x: Var) -> Var {
        let m = min_abs(self.value(x));
        self.note_margin(m);
        self.record_sides(x);
        let value = ops::sign(self.value(x));
        self.push(Op::Sign(x), value)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = ops::scale(self.value(x), s);
        self.push(Op::Scale(x, s), value)
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        let value = ops::add(self.value(x), self.value(y))?;
        Ok(self.push(Op::Add(x, y), value))
    }

    pub fn mul(&mut self, x: Var, y: Var) -> Result<Var> {
        let value = ops::mul(self.value(x), self.value(y))?;
        Ok(self.push(Op::Mul(x, y), value))
    }

    pub fn reduce_mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = ops::reduce_mean(self.value(x), axis)?;
        Ok(self.push(Op::ReduceMean(x, axis), value))
    }

    pub fn soft_threshold(&mut self, x: Var, tau: Var) -> Result<Var> {
        let value = ops::soft_threshold(self.value(x), self.value(tau))?;
        let m = st_kink_margin(self.value(x), self.value(tau));
        self.note_margin(m);
        self.record_zones(x, tau);
        Ok(self.push(Op::SoftThreshold { x, tau }, value))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = ops::transpose(self.value(x))?;
        Ok(self.push(Op::Transpose(x), value))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = ops::slice_cols(self.value(x), start, len)?;
        Ok(self.push(Op::SliceCols { x, start, len }, value))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&v| &self.nodes[v.0].value).collect();
        let value = ops::concat_cols(&tensors)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    pub fn upsample_nearest(
        &mut self,
        x: Var,
        src: (usize, usize),
        dst: (usize, usize),
    ) -> Result<Var> {
        let value = ops::upsample_nearest(self.value(x), src, dst)?;
        Ok(self.push(Op::UpsampleNearest { x, src, dst }, value))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(Op::Reshape(x), value))
    }

    /// `x · W + b` as a matmul followed by a broadcast add, with the
    /// parameters as differentiable nodes.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xw = self.matmul(x, weight)?;
        self.add(xw, bias)
    }

    /// Registers `params` on the tape and applies them to `x`, returning the
    /// output together with the weight and bias nodes.
    pub fn linear_params(&mut self, x: Var, params: &LinearParams) -> Result<(Var, Var, Var)> {
        let w = self.input(params.weight.clone());
        let b = self.input(params.bias.clone());
        let y = self.linear(x, w, b)?;
        Ok((y, w, b))
    }

    /// Accumulates gradients of a scalar function whose gradient at `root` is
    /// `cotangent`, for every node the root depends on.
    pub fn backward(&mut self, root: Var, cotangent: &Tensor) -> Result<()> {
        if cotangent.shape() != self.value(root).shape() {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: self.value(root).shape.clone(),
                right: cotangent.shape.clone(),
            });
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape.clone()))
            .collect();
        grads[root.0] = cotangent.clone();
        for idx in (0..=root.0).rev() {
            if grads[idx].data.iter().all(|&g| g == 0.0) {
                continue;
            }
            let up = grads[idx].clone();
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::MatMul(a, b) => {
                    let (da, db) = matmul_vjp(self.value(*a), self.value(*b), &up)?;
                    accumulate(&mut grads[a.0], &da);
                    accumulate(&mut grads[b.0], &db);
                }
                Op::SoftmaxRows(x) => {
                    let dx = softmax_rows_vjp(&self.nodes[idx].value, &up)?;
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::AvgPool2d { x, kernel, stride, pad } => {
                    let dx = avg_pool_2d_vjp(self.value(*x).shape(), *kernel, *stride, *pad, &up)?;
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::Abs(x) => {
                    let s = ops::sign(self.value(*x));
                    accumulate(&mut grads[x.0], &ops::mul(&up, &s)?);
                }
                Op::Relu(x) => {
                    let mask = Tensor {
                        shape: up.shape.clone(),
                        data: self
                            .value(*x)
                            .data
                            .iter()
                            .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
                            .collect(),
                    };
                    accumulate(&mut grads[x.0], &ops::mul(&up, &mask)?);
                }
                Op::Sigmoid(x) => {
                    let s = &self.nodes[idx].value;
                    let ds = Tensor {
                        shape: s.shape.clone(),
                        data: s.data.iter().map(|&v| v * (1.0 - v)).collect(),
                    };
                    accumulate(&mut grads[x.0], &ops::mul(&up, &ds)?);
                }
                Op::Sign(x) => {
                    // flat almost everywhere: nothing flows back to x
                    let _ = x;
                }
                Op::Scale(x, s) => {
                    accumulate(&mut grads[x.0], &ops::scale(&up, *s));
                }
                Op::Add(x, y) => {
                    accumulate(&mut grads[x.0], &up);
                    let yshape = self.value(*y).shape().to_vec();
                    if yshape == up.shape {
                        accumulate(&mut grads[y.0], &up);
                    } else {
                        // broadcast over the leading axis: fold chunks in order
                        let inner: usize = yshape.iter().product();
                        let mut dy = Tensor::zeros(yshape);
                        for chunk in up.data.chunks(inner) {
                            for (g, &u) in dy.data.iter_mut().zip(chunk) {
                                *g += u;
                            }
                        }
                        accumulate(&mut grads[y.0], &dy);
                    }
                }
                Op::Mul(x, y) => {
                    let dx = ops::mul(&up, self.value(*y))?;
                    let dy = ops::mul(&up, self.value(*x))?;
                    accumulate(&mut grads[x.0], &dx);
                    accumulate(&mut grads[y.0], &dy);
                }
                Op::ReduceMean(x, axis) => {
                    let xshape = self.value(*x).shape().to_vec();
                    let extent = xshape[*axis];
                    let inner: usize = xshape[*axis + 1..].iter().product();
                    let outer: usize = xshape[..*axis].iter().product();
                    let mut dx = Tensor::zeros(xshape);
                    let inv = 1.0 / extent as f64;
                    for o in 0..outer {
                        for k in 0..extent {
                            let base = (o * extent + k) * inner;
                            for i in 0..inner {
                                dx.data[base + i] = up.data[o * inner + i] * inv;
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::SoftThreshold { x, tau } => {
                    let (dx, dtau) = soft_threshold_vjp(self.value(*x), self.value(*tau), &up)?;
                    accumulate(&mut grads[x.0], &dx);
                    accumulate(&mut grads[tau.0], &dtau);
                }
                Op::Transpose(x) => {
                    accumulate(&mut grads[x.0], &ops::transpose(&up)?);
                }
                Op::SliceCols { x, start, len } => {
                    let xshape = self.value(*x).shape().to_vec();
                    let (m, n) = (xshape[0], xshape[1]);
                    let mut dx = Tensor::zeros(xshape);
                    for i in 0..m {
                        for j in 0..*len {
                            dx.data[i * n + start + j] = up.data[i * len + j];
                        }
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let m = up.shape[0];
                    let total = up.shape[1];
                    let mut off = 0usize;
                    for p in parts {
                        let n = self.value(p).shape()[1];
                        let mut dp = Tensor::zeros(vec![m, n]);
                        for i in 0..m {
                            dp.data[i * n..(i + 1) * n]
                                .copy_from_slice(&up.data[i * total + off..i * total + off + n]);
                        }
                        accumulate(&mut grads[p.0], &dp);
                        off += n;
                    }
                }
                Op::UpsampleNearest { x, src, dst } => {
                    let c = self.value(*x).shape()[1];
                    let (sh, sw) = *src;
                    let (dh, dw) = *dst;
                    let mut dx = Tensor::zeros(vec![sh * sw, c]);
                    for i in 0..dh {
                        for j in 0..dw {
                            let srow = (i / 2) * sw + j / 2;
                            let drow = i * dw + j;
                            for ch in 0..c {
                                dx.data[srow * c + ch] += up.data[drow * c + ch];
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::Reshape(x) => {
                    let xshape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads[x.0], &up.reshape(xshape)?);
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient accumulated at `v` by the most recent [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Result<&Tensor> {
        self.grads.get(v.0).ok_or_else(|| {
            Error::Precondition("gradient requested before backward was run".into())
        })
    }
}

fn accumulate(dst: &mut Tensor, src: &Tensor) {
    debug_assert_eq!(dst.shape, src.shape);
    for (d, s) in dst.data.iter_mut().zip(&src.data) {
        *d += s;
    }
}

fn min_abs(x: &Tensor) -> f64 {
    x.data.iter().fold(f64::INFINITY, |m, &v| m.min(v.abs()))
}

fn side_of_zero(v: f64) -> u8 {
    if v > 0.0 {
        2
    } else if v < 0.0 {
        0
    } else {
        1
    }
}

fn st_kink_margin(x: &Tensor, tau: &Tensor) -> f64 {
    let cols = tau.data.len();
    x.data
        .iter()
        .enumerate()
        .fold(f64::INFINITY, |m, (i, &v)| m.min((v.abs() - tau.data[i % cols]).abs()))
}

/// VJP of `matmul`: `da = up · bᵀ`, `db = aᵀ · up`.
pub fn matmul_vjp(a: &Tensor, b: &Tensor, upstream: &Tensor) -> Result<(Tensor, Tensor)> {
    let da = ops::matmul(upstream, &ops::transpose(b)?)?;
    let db = ops::matmul(&ops::transpose(a)?, upstream)?;
    Ok((da, db))
}

/// VJP of row-wise softmax given its output `probs`:
/// `dx = p ⊙ (u − ⟨u, p⟩)` per row.
pub fn softmax_rows_vjp(probs: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if probs.shape != upstream.shape {
        return Err(Error::ShapeMismatch {
            op: "softmax_rows_vjp",
            left: probs.shape.clone(),
            right: upstream.shape.clone(),
        });
    }
    let (m, n) = (probs.shape[0], probs.shape[1]);
    let mut out = Tensor::zeros(probs.shape.clone());
    for i in 0..m {
        let p = probs.row(i);
        let u = &upstream.data[i * n..(i + 1) * n];
        let mut dot = 0.0;
        for j in 0..n {
            dot += u[j] * p[j];
        }
        let o = &mut out.data[i * n..(i + 1) * n];
        for j in 0..n {
            o[j] = p[j] * (u[j] - dot);
        }
    }
    Ok(out)
}

/// VJP of `avg_pool_2d`: each output cell routes `1/count` of its gradient to
/// every in-bounds input cell of its window.
pub fn avg_pool_2d_vjp(
    x_shape: &[usize],
    kernel: usize,
    stride: usize,
    pad: usize,
    upstream: &Tensor,
) -> Result<Tensor> {
    let (h, w, c) = (x_shape[0], x_shape[1], x_shape[2]);
    let oh = (h + 2 * pad - kernel) / stride + 1;
    let ow = (w + 2 * pad - kernel) / stride + 1;
    if upstream.shape() != [oh, ow, c] {
        return Err(Error::ShapeMismatch {
            op: "avg_pool_2d_vjp",
            left: vec![oh, ow, c],
            right: upstream.shape.clone(),
        });
    }
    let mut dx = Tensor::zeros(x_shape.to_vec());
    for oi in 0..oh {
        let r0 = (oi * stride) as isize - pad as isize;
        for oj in 0..ow {
            let c0 = (oj * stride) as isize - pad as isize;
            let mut cells = Vec::new();
            for dr in 0..kernel as isize {
                let r = r0 + dr;
                if r < 0 || r >= h as isize {
                    continue;
                }
                for dc in 0..kernel as isize {
                    let cc = c0 + dc;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    cells.push(r as usize * w + cc as usize);
                }
            }
            if cells.is_empty() {
                continue;
            }
            let inv = 1.0 / cells.len() as f64;
            for ch in 0..c {
                let g = upstream.data[(oi * ow + oj) * c + ch] * inv;
                for &cell in &cells {
                    dx.data[cell * c + ch] += g;
                }
            }
        }
    }
    Ok(dx)
}

/// VJP of `linear`: `dx = up · Wᵀ`, `dW = xᵀ · up`, `db` sums `up` over rows.
pub fn linear_vjp(x: &Tensor, weight: &Tensor, upstream: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (dx, dw) = matmul_vjp(x, weight, upstream)?;
    let n = upstream.shape[1];
    let mut db = Tensor::zeros(vec![n]);
    for chunk in upstream.data.chunks(n) {
        for (g, &u) in db.data.iter_mut().zip(chunk) {
            *g += u;
        }
    }
    Ok((dx, dw, db))
}

/// VJP of the soft-threshold. The dead zone `[-tau, tau]` (boundary included)
/// propagates nothing; outside it `d/dx = 1` and `d/dtau = -sign(x)`.
pub fn soft_threshold_vjp(x: &Tensor, tau: &Tensor, upstream: &Tensor) -> Result<(Tensor, Tensor)> {
    if x.shape != upstream.shape {
        return Err(Error::ShapeMismatch {
            op: "soft_threshold_vjp",
            left: x.shape.clone(),
            right: upstream.shape.clone(),
        });
    }
    let cols = tau.data.len();
    let mut dx = Tensor::zeros(x.shape.clone());
    let mut dtau = Tensor::zeros(tau.shape.clone());
    for (i, &v) in x.data.iter().enumerate() {
        let t = tau.data[i % cols];
        if v.abs() > t {
            dx.data[i] = upstream.data[i];
            dtau.data[i % cols] += -v.signum() * upstream.data[i];
        }
    }
    Ok((dx, dtau))
}
