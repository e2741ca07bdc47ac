//! Forward implementations of the primitive operations.
//!
//! Reductions use a fixed element order so every operation is bit-reproducible
//! across calls and across runs. Where an exactness law depends on it, the
//! order is documented on the operation.

use super::{LinearParams, Tensor};
use crate::error::{Error, Result};

fn require_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::ShapeMismatch {
            op,
            left: t.shape.clone(),
            right: vec![rank],
        });
    }
    Ok(())
}

/// `[m, k] · [k, n] -> [m, n]` with the inner sum accumulated left to right
/// over `k`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_rank("matmul", a, 2)?;
    require_rank("matmul", b, 2)?;
    if a.shape[1] != b.shape[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = Tensor::zeros(vec![m, n]);
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b.data[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Ok(out)
}

/// Row-wise softmax of a rank-2 tensor, stabilized by subtracting the row
/// maximum before exponentiation.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    require_rank("softmax_rows", x, 2)?;
    let (m, n) = (x.shape[0], x.shape[1]);
    if n == 0 {
        return Err(Error::Config("softmax_rows: empty rows".into()));
    }
    let mut out = Tensor::zeros(vec![m, n]);
    for i in 0..m {
        let row = x.row(i);
        let mut mx = f64::NEG_INFINITY;
        for &v in row {
            if v > mx {
                mx = v;
            }
        }
        let orow = &mut out.data[i * n..(i + 1) * n];
        let mut z = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - mx).exp();
            orow[j] = e;
            z += e;
        }
        for v in orow.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

/// 2-D average pooling over a `[H, W, C]` tensor with a square kernel.
///
/// Padding contributes nothing: each output is the mean over the in-bounds
/// cells only. The mean is computed relative to the window's first in-bounds
/// cell (`x0 + mean(x_i - x0)`), which makes a window of equal values average
/// to exactly that value — plain sum-then-divide does not have that property
/// in floating point. A window with no in-bounds cell (possible when the
/// padding exceeds the kernel) yields `0.0`.
pub fn avg_pool_2d(x: &Tensor, kernel: usize, stride: usize, pad: usize) -> Result<Tensor> {
    require_rank("avg_pool_2d", x, 3)?;
    if kernel == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "avg_pool_2d: kernel and stride must be positive, got kernel={} stride={}",
            kernel, stride
        )));
    }
    let (h, w, c) = (x.shape[0], x.shape[1], x.shape[2]);
    if kernel > h + 2 * pad || kernel > w + 2 * pad {
        return Err(Error::ShapeMismatch {
            op: "avg_pool_2d",
            left: vec![h + 2 * pad, w + 2 * pad],
            right: vec![kernel, kernel],
        });
    }
    let oh = (h + 2 * pad - kernel) / stride + 1;
    let ow = (w + 2 * pad - kernel) / stride + 1;
    let mut out = Tensor::zeros(vec![oh, ow, c]);
    for oi in 0..oh {
        let r0 = (oi * stride) as isize - pad as isize;
        for oj in 0..ow {
            let c0 = (oj * stride) as isize - pad as isize;
            for ch in 0..c {
                let mut anchor = f64::NAN;
                let mut acc = 0.0;
                let mut count = 0usize;
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
                        let v = x.data[(r as usize * w + cc as usize) * c + ch];
                        if count == 0 {
                            anchor = v;
                        } else {
                            acc += v - anchor;
                        }
                        count += 1;
                    }
                }
                out.data[(oi * ow + oj) * c + ch] = if count == 0 {
                    0.0
                } else {
                    anchor + acc / count as f64
                };
            }
        }
    }
    Ok(out)
}

pub(crate) fn linear_raw(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    require_rank("linear", x, 2)?;
    if x.shape[1] != weight.shape[0] {
        return Err(Error::ShapeMismatch {
            op: "linear",
            left: x.shape.clone(),
            right: weight.shape.clone(),
        });
    }
    let mut out = matmul(x, weight)?;
    let n_out = out.shape[1];
    for i in 0..out.shape[0] {
        let orow = &mut out.data[i * n_out..(i + 1) * n_out];
        for (j, v) in orow.iter_mut().enumerate() {
            *v += bias.data[j];
        }
    }
    Ok(out)
}

/// Affine map `x · W + b` over `[n, in]` activations; the bias broadcasts
/// over rows and is added after the full inner sum.
pub fn linear(x: &Tensor, params: &LinearParams) -> Result<Tensor> {
    linear_raw(x, &params.weight, &params.bias)
}

pub fn abs(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|v| v.abs()).collect(),
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
    }
}

pub(crate) fn sigmoid_value(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| sigmoid_value(v)).collect(),
    }
}

/// Mathematical sign: `-1`, `0`, or `1` (both zeros map to `0`).
pub fn sign(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect(),
    }
}

pub fn scale(x: &Tensor, s: f64) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|v| v * s).collect(),
    }
}

/// Elementwise sum. `y` must either match `x`'s shape or match `x` with the
/// leading axis dropped, in which case it broadcasts over that axis.
pub fn add(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.shape == y.shape {
        let data = x.data.iter().zip(&y.data).map(|(a, b)| a + b).collect();
        return Ok(Tensor {
            shape: x.shape.clone(),
            data,
        });
    }
    if x.rank() >= 1 && x.shape[1..] == y.shape[..] {
        let inner = y.data.len();
        let mut out = x.clone();
        for chunk in out.data.chunks_mut(inner) {
            for (v, b) in chunk.iter_mut().zip(&y.data) {
                *v += b;
            }
        }
        return Ok(out);
    }
    Err(Error::ShapeMismatch {
        op: "add",
        left: x.shape.clone(),
        right: y.shape.clone(),
    })
}

/// Elementwise product of two same-shape tensors.
pub fn mul(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.shape != y.shape {
        return Err(Error::ShapeMismatch {
            op: "mul",
            left: x.shape.clone(),
            right: y.shape.clone(),
        });
    }
    let data = x.data.iter().zip(&y.data).map(|(a, b)| a * b).collect();
    Ok(Tensor {
        shape: x.shape.clone(),
        data,
    })
}

/// Mean over one axis; the axis is dropped from the shape. Elements along the
/// reduced axis are summed in index order.
pub fn reduce_mean(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::Config(format!(
            "reduce_mean: axis {} out of range for shape {:?}",
            axis, x.shape
        )));
    }
    let extent = x.shape[axis];
    if extent == 0 {
        return Err(Error::Config("reduce_mean: empty axis".into()));
    }
    let outer: usize = x.shape[..axis].iter().product();
    let inner: usize = x.shape[axis + 1..].iter().product();
    let mut out_shape = x.shape.clone();
    out_shape.remove(axis);
    let mut out = Tensor::zeros(out_shape);
    for o in 0..outer {
        for k in 0..extent {
            let base = (o * extent + k) * inner;
            for i in 0..inner {
                out.data[o * inner + i] += x.data[base + i];
            }
        }
    }
    let inv = extent as f64;
    for v in out.data.iter_mut() {
        *v /= inv;
    }
    Ok(out)
}

/// Scalar soft-threshold: shrink `x` toward zero by `tau`, clamping the dead
/// zone `[-tau, tau]` to exactly zero.
pub fn st_value(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Soft-threshold of a `[N, C]` tensor with a per-channel threshold `tau`
/// (length `C`, broadcast over rows). All thresholds must be nonnegative.
pub fn soft_threshold(x: &Tensor, tau: &Tensor) -> Result<Tensor> {
    require_rank("soft_threshold", x, 2)?;
    if tau.rank() != 1 || tau.extent(0) != x.shape[1] {
        return Err(Error::ShapeMismatch {
            op: "soft_threshold",
            left: x.shape.clone(),
            right: tau.shape.clone(),
        });
    }
    if let Some(bad) = tau.data.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::Domain(format!(
            "soft_threshold: threshold must be nonnegative, got {}",
            bad
        )));
    }
    let cols = x.shape[1];
    let mut out = Tensor::zeros(x.shape.clone());
    for (o, (i, &v)) in out.data.iter_mut().zip(x.data.iter().enumerate()) {
        *o = st_value(v, tau.data[i % cols]);
    }
    Ok(out)
}

pub fn transpose(x: &Tensor) -> Result<Tensor> {
    require_rank("transpose", x, 2)?;
    let (m, n) = (x.shape[0], x.shape[1]);
    let mut out = Tensor::zeros(vec![n, m]);
    for i in 0..m {
        for j in 0..n {
            out.data[j * m + i] = x.data[i * n + j];
        }
    }
    Ok(out)
}

/// Contiguous column block `[start, start+len)` of a rank-2 tensor.
pub fn slice_cols(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    require_rank("slice_cols", x, 2)?;
    let (m, n) = (x.shape[0], x.shape[1]);
    if start + len > n {
        return Err(Error::ShapeMismatch {
            op: "slice_cols",
            left: x.shape.clone(),
            right: vec![start, len],
        });
    }
    let mut out = Tensor::zeros(vec![m, len]);
    for i in 0..m {
        out.data[i * len..(i + 1) * len].copy_from_slice(&x.data[i * n + start..i * n + start + len]);
    }
    Ok(out)
}

/// Concatenates rank-2 tensors with equal row counts along the column axis.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Config("concat_cols: no operands".into()));
    }
    let m = parts[0].shape[0];
    for p in parts {
        require_rank("concat_cols", p, 2)?;
        if p.shape[0] != m {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                left: parts[0].shape.clone(),
                right: p.shape.clone(),
            });
        }
    }
    let total: usize = parts.iter().map(|p| p.shape[1]).sum();
    let mut out = Tensor::zeros(vec![m, total]);
    for i in 0..m {
        let mut off = i * total;
        for p in parts {
            let n = p.shape[1];
            out.data[off..off + n].copy_from_slice(&p.data[i * n..(i + 1) * n]);
            off += n;
        }
    }
    Ok(out)
}

/// Nearest-neighbor upsampling of token rows from a source grid to a target
/// grid whose extents are exactly double-or-ceil related
/// (`src = ceil(dst / 2)` per axis): target cell `(i, j)` copies source cell
/// `(i / 2, j / 2)`, so each source cell replicates into a 2x2 block (edge
/// rows/columns replicate once when the target extent is odd).
pub fn upsample_nearest(
    x: &Tensor,
    src: (usize, usize),
    dst: (usize, usize),
) -> Result<Tensor> {
    require_rank("upsample_nearest", x, 2)?;
    let (sh, sw) = src;
    let (dh, dw) = dst;
    if x.shape[0] != sh * sw {
        return Err(Error::ShapeMismatch {
            op: "upsample_nearest",
            left: x.shape.clone(),
            right: vec![sh, sw],
        });
    }
    if sh != dh.div_ceil(2) || sw != dw.div_ceil(2) {
        return Err(Error::ShapeMismatch {
            op: "upsample_nearest",
            left: vec![sh, sw],
            right: vec![dh, dw],
        });
    }
    let c = x.shape[1];
    let mut out = Tensor::zeros(vec![dh * dw, c]);
    for i in 0..dh {
        for j in 0..dw {
            let srow = (i / 2) * sw + j / 2;
            let drow = i * dw + j;
            out.data[drow * c..(drow + 1) * c].copy_from_slice(&x.data[srow * c..(srow + 1) * c]);
        }
    }
    Ok(out)
}
