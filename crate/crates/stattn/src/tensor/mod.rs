//! Dense row-major `f64` tensors and the small operation set the rest of the
//! crate is built from.
//!
//! Everything here is deterministic: reductions run in a fixed order, so
//! repeated calls on identical inputs produce bit-identical outputs. Tensors
//! are immutable after construction; operations allocate fresh outputs, which
//! is what makes them safe to call from multiple threads without locks.

pub mod autodiff;
pub mod format;
pub mod gradcheck;
pub mod ops;

use crate::error::{Error, Result};
use rand_core::RngCore;

/// Dense tensor: a shape vector plus flat row-major `f64` storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, validating that every extent is positive and that
    /// `data` holds exactly the number of elements the shape implies.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Config(format!("shape {:?} has a zero extent", shape)));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Config(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    /// Samples every element i.i.d. uniform on `[lo, hi)`. The mapping from
    /// raw generator output to floats is done here (53-bit mantissa scaling)
    /// so results depend only on the generator stream, not on distribution
    /// internals of any external crate.
    pub fn uniform(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut impl RngCore) -> Self {
        let numel: usize = shape.iter().product();
        let span = hi - lo;
        let data = (0..numel)
            .map(|_| {
                let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                lo + span * u
            })
            .collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn extent(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Flat offset of a multi-index (row-major).
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, &ix) in index.iter().enumerate() {
            debug_assert!(ix < self.shape[i]);
            off = off * self.shape[i] + ix;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    /// Row `i` of a rank-2 tensor as a contiguous slice.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Same data, different shape (element counts must agree).
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape.clone(),
                right: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Axis permutation (a generalized transpose). `perm` must be a
    /// permutation of `0..rank`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Config(format!(
                "permute: {:?} is not a permutation of 0..{}",
                perm, r
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let mut out = Tensor::zeros(out_shape);
        let mut index = vec![0usize; r];
        for (flat, &v) in self.data.iter().enumerate() {
            // decode row-major multi-index of the source
            let mut rem = flat;
            for ax in (0..r).rev() {
                index[ax] = rem % self.shape[ax];
                rem /= self.shape[ax];
            }
            let mut off = 0;
            for (out_ax, &src_ax) in perm.iter().enumerate() {
                off = off * out.shape[out_ax] + index[src_ax];
            }
            out.data[off] = v;
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality (distinguishes `0.0` from `-0.0`, unlike `==`).
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Weight matrix plus bias for an affine map `x · W + b`.
///
/// The weight is stored `[in, out]` so a row of activations multiplies it
/// directly; the bias has length `out` and broadcasts over rows.
#[derive(Debug, Clone)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearParams {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.rank() != 1 || bias.extent(0) != weight.extent(1) {
            return Err(Error::ShapeMismatch {
                op: "linear-params",
                left: weight.shape.clone(),
                right: bias.shape.clone(),
            });
        }
        Ok(LinearParams { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        LinearParams {
            weight: Tensor::zeros(vec![in_dim, out_dim]),
            bias: Tensor::zeros(vec![out_dim]),
        }
    }

    /// Identity map; requires a square dimension.
    pub fn identity(dim: usize) -> Self {
        let mut weight = Tensor::zeros(vec![dim, dim]);
        for i in 0..dim {
            weight.data[i * dim + i] = 1.0;
        }
        LinearParams {
            weight,
            bias: Tensor::zeros(vec![dim]),
        }
    }

    /// The initialization used for randomized runs: weights i.i.d. uniform on
    /// `(-0.1, 0.1)`, biases zero.
    pub fn seeded(in_dim: usize, out_dim: usize, rng: &mut impl RngCore) -> Self {
        LinearParams {
            weight: Tensor::uniform(vec![in_dim, out_dim], -0.1, 0.1, rng),
            bias: Tensor::zeros(vec![out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.extent(0)
    }

    pub fn out_dim(&self) -> usize {
        self.weight.extent(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn construction_validates_element_count() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![], vec![0.0]).is_ok()); // rank-0 scalar
        assert!(Tensor::new(vec![2, 0], vec![]).is_err()); // extents must be positive
    }

    #[test]
    fn offsets_are_row_major() {
        let t = Tensor::new(vec![2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.at(&[0, 0]), 0.0);
        assert_eq!(t.at(&[0, 2]), 2.0);
        assert_eq!(t.at(&[1, 0]), 3.0);
        assert_eq!(t.row(1), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn permute_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Tensor::uniform(vec![2, 3, 4], -1.0, 1.0, &mut rng);
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.at(&[3, 1, 2]), t.at(&[1, 2, 3]));
        let back = p.permute(&[1, 2, 0]).unwrap();
        assert!(back.bit_eq(&t));
    }

    #[test]
    fn uniform_respects_range_and_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let t1 = Tensor::uniform(vec![64], -1.0, 1.0, &mut a);
        let t2 = Tensor::uniform(vec![64], -1.0, 1.0, &mut b);
        assert!(t1.bit_eq(&t2));
        assert!(t1.data().iter().all(|&v| (-1.0..1.0).contains(&v)));
    }

    #[test]
    fn linear_params_validate_shapes() {
        let w = Tensor::zeros(vec![3, 2]);
        let b = Tensor::zeros(vec![2]);
        assert!(LinearParams::new(w.clone(), b).is_ok());
        let bad = Tensor::zeros(vec![3]);
        assert!(LinearParams::new(w, bad).is_err());
    }
}
