//! Token-mixing attention with learned soft-threshold denoising.
//!
//! Two mechanisms over token rows `[N, C]` are provided: the quadratic
//! dot-product baseline ([`softmax_attention`]) and the factorized form
//! ([`factor_att`]) that reassociates the product so cost grows linearly in
//! the token count. The factorized form exposes its per-head context matrix,
//! from which a small shrinkage network derives per-channel soft thresholds;
//! [`st_attention`] is the full block: project, mix, denoise, add the value
//! shortcut, merge heads.
//!
//! Token-axis reductions inside [`factor_att`] iterate tokens in an order
//! determined by row *content*, not row position, so permuting the input
//! rows permutes the output rows bit-exactly.

pub mod flops;
pub mod traced;

use std::cmp::Ordering;

pub use crate::tensor::ops::{soft_threshold, st_value};
pub use flops::{flop_count, Mechanism};

use crate::error::{Error, Result};
use crate::tensor::{ops, LinearParams, Tensor};
use rand_core::RngCore;

/// Query/key/value projections (`[C, C]` each) plus the head count.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    wq: LinearParams,
    wk: LinearParams,
    wv: LinearParams,
    heads: usize,
}

impl AttentionParams {
    pub fn new(
        wq: LinearParams,
        wk: LinearParams,
        wv: LinearParams,
        heads: usize,
    ) -> Result<Self> {
        let c = wq.in_dim();
        for (name, p) in [("wq", &wq), ("wk", &wk), ("wv", &wv)] {
            if p.in_dim() != c || p.out_dim() != c {
                return Err(Error::Config(format!(
                    "attention projection {} must map {} -> {}, got {} -> {}",
                    name,
                    c,
                    c,
                    p.in_dim(),
                    p.out_dim()
                )));
            }
        }
        if heads == 0 || c % heads != 0 {
            return Err(Error::Config(format!(
                "head count {} must be positive and divide the channel width {}",
                heads, c
            )));
        }
        Ok(AttentionParams { wq, wk, wv, heads })
    }

    /// Random initialization: weights uniform on `(-0.1, 0.1)` drawn in the
    /// order wq, wk, wv; biases zero.
    pub fn seeded(embed_dim: usize, heads: usize, rng: &mut impl RngCore) -> Result<Self> {
        let wq = LinearParams::seeded(embed_dim, embed_dim, rng);
        let wk = LinearParams::seeded(embed_dim, embed_dim, rng);
        let wv = LinearParams::seeded(embed_dim, embed_dim, rng);
        AttentionParams::new(wq, wk, wv, heads)
    }

    pub fn wq(&self) -> &LinearParams {
        &self.wq
    }

    pub fn wk(&self) -> &LinearParams {
        &self.wk
    }

    pub fn wv(&self) -> &LinearParams {
        &self.wv
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn embed_dim(&self) -> usize {
        self.wq.in_dim()
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim() / self.heads
    }
}

/// The two dense layers of the shrinkage unit: `d -> d/r -> d` with a relu
/// between, plus the reduction ratio `r`.
#[derive(Debug, Clone)]
pub struct ShrinkageParams {
    pub(crate) fs1: LinearParams,
    pub(crate) fs2: LinearParams,
    reduction: usize,
}

impl ShrinkageParams {
    pub fn new(fs1: LinearParams, fs2: LinearParams, reduction: usize) -> Result<Self> {
        let d = fs1.in_dim();
        if reduction == 0 || d % reduction != 0 {
            return Err(Error::Config(format!(
                "shrinkage reduction {} must be positive and divide the head width {}",
                reduction, d
            )));
        }
        let bottleneck = d / reduction;
        if fs1.out_dim() != bottleneck || fs2.in_dim() != bottleneck || fs2.out_dim() != d {
            return Err(Error::Config(format!(
                "shrinkage layers must map {} -> {} -> {}, got {} -> {} and {} -> {}",
                d,
                bottleneck,
                d,
                fs1.in_dim(),
                fs1.out_dim(),
                fs2.in_dim(),
                fs2.out_dim()
            )));
        }
        Ok(ShrinkageParams { fs1, fs2, reduction })
    }

    /// Random initialization: weights uniform on `(-0.1, 0.1)` drawn fs1
    /// first, biases zero.
    pub fn seeded(head_dim: usize, reduction: usize, rng: &mut impl RngCore) -> Result<Self> {
        if reduction == 0 || head_dim % reduction != 0 || head_dim / reduction == 0 {
            return Err(Error::Config(format!(
                "shrinkage reduction {} incompatible with head width {}",
                reduction, head_dim
            )));
        }
        let fs1 = LinearParams::seeded(head_dim, head_dim / reduction, rng);
        let fs2 = LinearParams::seeded(head_dim / reduction, head_dim, rng);
        ShrinkageParams::new(fs1, fs2, reduction)
    }

    /// All-zero layers (useful for closed-form checks: zero z gives gates of
    /// exactly one half).
    pub fn zeros(head_dim: usize, reduction: usize) -> Result<Self> {
        ShrinkageParams::new(
            LinearParams::zeros(head_dim, head_dim / reduction.max(1)),
            LinearParams::zeros(head_dim / reduction.max(1), head_dim),
            reduction,
        )
    }

    pub fn fs1(&self) -> &LinearParams {
        &self.fs1
    }

    pub fn fs2(&self) -> &LinearParams {
        &self.fs2
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    pub fn head_dim(&self) -> usize {
        self.fs1.in_dim()
    }
}

/// The `d x d` matrix `Softmax(K)ᵀ V` shared by every query token of a head.
#[derive(Debug, Clone)]
pub struct ContextMatrix {
    ctx: Tensor,
}

impl ContextMatrix {
    pub fn new(ctx: Tensor) -> Result<Self> {
        if ctx.rank() != 2 || ctx.extent(0) != ctx.extent(1) {
            return Err(Error::ShapeMismatch {
                op: "context-matrix",
                left: ctx.shape().to_vec(),
                right: vec![ctx.extent(0), ctx.extent(0)],
            });
        }
        Ok(ContextMatrix { ctx })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.ctx
    }

    pub fn dim(&self) -> usize {
        self.ctx.extent(0)
    }
}

/// Per-channel gates `alpha` (each strictly inside `(0, 1)`) and thresholds
/// `tau = alpha ⊙ mean|ctx column|` (each nonnegative, strictly below that
/// mean wherever the mean is positive).
#[derive(Debug, Clone)]
pub struct ThresholdVector {
    alpha: Tensor,
    tau: Tensor,
}

impl ThresholdVector {
    pub fn new(alpha: Tensor, tau: Tensor) -> Result<Self> {
        if alpha.rank() != 1 || tau.rank() != 1 || alpha.extent(0) != tau.extent(0) {
            return Err(Error::ShapeMismatch {
                op: "threshold-vector",
                left: alpha.shape().to_vec(),
                right: tau.shape().to_vec(),
            });
        }
        if let Some(a) = alpha.data().iter().find(|a| !(0.0 < **a && **a < 1.0)) {
            return Err(Error::Domain(format!(
                "threshold gate {} outside the open interval (0, 1)",
                a
            )));
        }
        if let Some(t) = tau.data().iter().find(|t| !(**t >= 0.0)) {
            return Err(Error::Domain(format!("negative threshold {}", t)));
        }
        Ok(ThresholdVector { alpha, tau })
    }

    pub fn alpha(&self) -> &Tensor {
        &self.alpha
    }

    pub fn tau(&self) -> &Tensor {
        &self.tau
    }

    pub fn dim(&self) -> usize {
        self.tau.extent(0)
    }
}

fn check_qkv(op: &'static str, q: &Tensor, k: &Tensor, v: &Tensor) -> Result<()> {
    for t in [q, k, v] {
        if t.rank() != 2 || t.shape() != q.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: q.shape().to_vec(),
                right: t.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Projects token rows to per-head queries, keys and values, each `[h, N, d]`
/// with head `i` reading the contiguous channel block `[i·d, (i+1)·d)`.
pub fn project_qkv(m: &Tensor, p: &AttentionParams) -> Result<(Tensor, Tensor, Tensor)> {
    if m.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "project_qkv",
            left: m.shape().to_vec(),
            right: vec![2],
        });
    }
    let n = m.extent(0);
    let project = |w: &LinearParams| -> Result<Tensor> {
        ops::linear(m, w)?
            .reshape(vec![n, p.heads(), p.head_dim()])?
            .permute(&[1, 0, 2])
    };
    Ok((project(&p.wq)?, project(&p.wk)?, project(&p.wv)?))
}

/// Copies head `head` of a `[h, N, d]` projection out as `[N, d]`.
pub fn head_slice(t: &Tensor, head: usize) -> Result<Tensor> {
    if t.rank() != 3 || head >= t.extent(0) {
        return Err(Error::ShapeMismatch {
            op: "head_slice",
            left: t.shape().to_vec(),
            right: vec![head],
        });
    }
    let (n, d) = (t.extent(1), t.extent(2));
    Tensor::new(vec![n, d], t.data()[head * n * d..(head + 1) * n * d].to_vec())
}

/// Token indices ordered by row content — (K row, then V row), lexicographic
/// under the IEEE total order. Token sums taken in this order do not depend
/// on how the input rows were arranged; tokens tied here have identical
/// (K, V) rows, so their relative order cannot change any sum.
fn canonical_token_order(k: &Tensor, v: &Tensor) -> Vec<usize> {
    let n = k.extent(0);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        k.row(a)
            .iter()
            .zip(k.row(b))
            .chain(v.row(a).iter().zip(v.row(b)))
            .map(|(x, y)| x.total_cmp(y))
            .find(|c| *c != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    idx
}

/// Quadratic-cost baseline: `softmax_rows(QKᵀ/√d) · V`, computed one query
/// row at a time so no `N×N` matrix is materialized.
pub fn softmax_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    check_qkv("softmax_attention", q, k, v)?;
    let (n, d) = (q.extent(0), q.extent(1));
    let sqrt_d = (d as f64).sqrt();
    let mut out = Tensor::zeros(vec![n, d]);
    let mut scores = vec![0.0f64; n];
    for i in 0..n {
        let qrow = q.row(i);
        for (j, slot) in scores.iter_mut().enumerate() {
            let krow = k.row(j);
            let mut dot = 0.0;
            for a in 0..d {
                dot += qrow[a] * krow[a];
            }
            *slot = dot / sqrt_d;
        }
        let mut mx = f64::NEG_INFINITY;
        for &s in scores.iter() {
            if s > mx {
                mx = s;
            }
        }
        let mut z = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - mx).exp();
            z += *s;
        }
        let orow = &mut out.data[i * d..(i + 1) * d];
        for (j, &e) in scores.iter().enumerate() {
            let p = e / z;
            let vrow = &v.data[j * d..(j + 1) * d];
            for b in 0..d {
                orow[b] += p * vrow[b];
            }
        }
    }
    Ok(out)
}

/// Linear-cost mechanism: `(Q/√d) · (Softmax(K)ᵀ V)`, softmax over the token
/// axis per key column, no normalization denominator. Returns the output and
/// the context matrix `Softmax(K)ᵀ V` for the shrinkage unit.
pub fn factor_att(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, ContextMatrix)> {
    check_qkv("factor_att", q, k, v)?;
    let (n, d) = (q.extent(0), q.extent(1));
    let sqrt_d = (d as f64).sqrt();
    let order = canonical_token_order(k, v);

    // softmax over the token axis, streamed row-wise: the per-column maxima
    // are order-free, and visiting whole rows in canonical order keeps each
    // column's additions in that order while touching memory contiguously
    let mut s = Tensor::zeros(vec![n, d]);
    let mut mx = vec![f64::NEG_INFINITY; d];
    for t in 0..n {
        let krow = &k.data[t * d..(t + 1) * d];
        for (slot, &val) in mx.iter_mut().zip(krow) {
            if val > *slot {
                *slot = val;
            }
        }
    }
    let mut z = vec![0.0f64; d];
    for &t in &order {
        let krow = &k.data[t * d..(t + 1) * d];
        let srow = &mut s.data[t * d..(t + 1) * d];
        for a in 0..d {
            let e = (krow[a] - mx[a]).exp();
            srow[a] = e;
            z[a] += e;
        }
    }
    for srow in s.data.chunks_exact_mut(d) {
        for a in 0..d {
            srow[a] /= z[a];
        }
    }

    // ctx = Sᵀ V, accumulated token-by-token
    let mut ctx = Tensor::zeros(vec![d, d]);
    for &t in &order {
        let srow = &s.data[t * d..(t + 1) * d];
        let vrow = &v.data[t * d..(t + 1) * d];
        for (a, &sv) in srow.iter().enumerate() {
            let crow = &mut ctx.data[a * d..(a + 1) * d];
            for b in 0..d {
                crow[b] += sv * vrow[b];
            }
        }
    }

    let mut qs = q.clone();
    for val in qs.data.iter_mut() {
        *val /= sqrt_d;
    }
    let out = ops::matmul(&qs, &ctx)?;
    Ok((out, ContextMatrix::new(ctx)?))
}

/// Derives per-channel thresholds from a context matrix: with
/// `g_c = mean_i |ctx[i, c]|`, the gate is `alpha = sigmoid(FS(g))` (FS being
/// the two shrinkage layers with a relu between) and `tau_c = alpha_c · g_c`.
pub fn compute_thresholds(ctx: &ContextMatrix, s: &ShrinkageParams) -> Result<ThresholdVector> {
    let d = ctx.dim();
    if s.head_dim() != d {
        return Err(Error::Config(format!(
            "shrinkage unit expects width {}, context matrix is {}x{}",
            s.head_dim(),
            d,
            d
        )));
    }
    let g = ops::reduce_mean(&ops::abs(ctx.tensor()), 0)?;
    let hidden = ops::relu(&ops::linear(&g.reshape(vec![1, d])?, &s.fs1)?);
    let z = ops::linear(&hidden, &s.fs2)?;
    let alpha = ops::sigmoid(&z).reshape(vec![d])?;
    let tau = ops::mul(&alpha, &g)?;
    ThresholdVector::new(alpha, tau)
}

/// The full block over token rows `[N, C]`: per head, factorized attention
/// with its output soft-thresholded at that head's learned `tau`, plus the
/// projected-value shortcut; head outputs are re-concatenated channel-wise.
pub fn st_attention(m: &Tensor, p: &AttentionParams, shrink: &[ShrinkageParams]) -> Result<Tensor> {
    if shrink.len() != p.heads() {
        return Err(Error::Config(format!(
            "expected one shrinkage unit per head ({}), got {}",
            p.heads(),
            shrink.len()
        )));
    }
    let (q, k, v) = project_qkv(m, p)?;
    let (n, d, c) = (m.extent(0), p.head_dim(), p.embed_dim());
    let mut out = Tensor::zeros(vec![n, c]);
    for head in 0..p.heads() {
        let qh = head_slice(&q, head)?;
        let kh = head_slice(&k, head)?;
        let vh = head_slice(&v, head)?;
        let (att, ctx) = factor_att(&qh, &kh, &vh)?;
        let thresholds = compute_thresholds(&ctx, &shrink[head])?;
        let denoised = soft_threshold(&att, thresholds.tau())?;
        let oh = ops::add(&denoised, &vh)?;
        for i in 0..n {
            out.data[i * c + head * d..i * c + (head + 1) * d]
                .copy_from_slice(&oh.data[i * d..(i + 1) * d]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn identity_params(c: usize, heads: usize) -> AttentionParams {
        AttentionParams::new(
            LinearParams::identity(c),
            LinearParams::identity(c),
            LinearParams::identity(c),
            heads,
        )
        .unwrap()
    }

    #[test]
    fn projection_identity_single_head() {
        let m = Tensor::uniform(vec![3, 4], -1.0, 1.0, &mut rng(1));
        let (q, k, v) = project_qkv(&m, &identity_params(4, 1)).unwrap();
        for t in [&q, &k, &v] {
            assert_eq!(t.shape(), &[1, 3, 4]);
            assert!(head_slice(t, 0).unwrap().bit_eq(&m));
        }
    }

    #[test]
    fn projection_head_split_uses_contiguous_channel_blocks() {
        let m = Tensor::new(vec![2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let (q, _, _) = project_qkv(&m, &identity_params(4, 2)).unwrap();
        assert_eq!(q.shape(), &[2, 2, 2]);
        // head 0 reads channels {0,1}, head 1 reads {2,3}
        assert_eq!(head_slice(&q, 0).unwrap().data(), &[1.0, 2.0, 5.0, 6.0]);
        assert_eq!(head_slice(&q, 1).unwrap().data(), &[3.0, 4.0, 7.0, 8.0]);
    }

    #[test]
    fn projection_rejects_incompatible_heads() {
        assert!(AttentionParams::seeded(4, 3, &mut rng(0)).is_err());
        assert!(AttentionParams::seeded(4, 0, &mut rng(0)).is_err());
    }

    #[test]
    fn softmax_attention_single_token_is_value() {
        let q = Tensor::uniform(vec![1, 3], -1.0, 1.0, &mut rng(2));
        let k = Tensor::uniform(vec![1, 3], -1.0, 1.0, &mut rng(3));
        let v = Tensor::new(vec![1, 3], vec![3.0, -5.0, 0.25]).unwrap();
        assert!(softmax_attention(&q, &k, &v).unwrap().bit_eq(&v));
    }

    #[test]
    fn softmax_attention_zero_values_give_zero() {
        let q = Tensor::uniform(vec![4, 2], -1.0, 1.0, &mut rng(4));
        let k = Tensor::uniform(vec![4, 2], -1.0, 1.0, &mut rng(5));
        let v = Tensor::zeros(vec![4, 2]);
        let out = softmax_attention(&q, &k, &v).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn softmax_attention_zero_queries_average_values() {
        let q = Tensor::zeros(vec![3, 2]);
        let k = Tensor::uniform(vec![3, 2], -1.0, 1.0, &mut rng(6));
        let v = Tensor::uniform(vec![3, 2], -1.0, 1.0, &mut rng(7));
        let out = softmax_attention(&q, &k, &v).unwrap();
        let mean = ops::reduce_mean(&v, 0).unwrap();
        for i in 0..3 {
            for b in 0..2 {
                assert!((out.at(&[i, b]) - mean.at(&[b])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_attention_matches_composed_oracle_bitwise() {
        let q = Tensor::uniform(vec![5, 3], -2.0, 2.0, &mut rng(8));
        let k = Tensor::uniform(vec![5, 3], -2.0, 2.0, &mut rng(9));
        let v = Tensor::uniform(vec![5, 3], -2.0, 2.0, &mut rng(10));
        let sqrt_d = 3f64.sqrt();
        let mut scores = ops::matmul(&q, &ops::transpose(&k).unwrap()).unwrap();
        for s in scores.data.iter_mut() {
            *s /= sqrt_d;
        }
        let p = ops::softmax_rows(&scores).unwrap();
        let oracle = ops::matmul(&p, &v).unwrap();
        assert!(softmax_attention(&q, &k, &v).unwrap().bit_eq(&oracle));
    }

    #[test]
    fn factor_att_zero_queries_give_zero() {
        let q = Tensor::zeros(vec![4, 3]);
        let k = Tensor::uniform(vec![4, 3], -1.0, 1.0, &mut rng(11));
        let v = Tensor::uniform(vec![4, 3], -1.0, 1.0, &mut rng(12));
        let (out, _) = factor_att(&q, &k, &v).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn factor_att_single_token_hand_case() {
        // One token: the column softmax collapses to ones, ctx rows all equal
        // the value row, and Q = [[√2, 0]] scaled by 1/√2 picks it out exactly.
        let q = Tensor::new(vec![1, 2], vec![2f64.sqrt(), 0.0]).unwrap();
        let k = Tensor::new(vec![1, 2], vec![-7.3, 4.1]).unwrap();
        let v = Tensor::new(vec![1, 2], vec![3.0, 5.0]).unwrap();
        let (out, ctx) = factor_att(&q, &k, &v).unwrap();
        assert_eq!(out.data(), &[3.0, 5.0]);
        assert_eq!(ctx.tensor().data(), &[3.0, 5.0, 3.0, 5.0]);
    }

    #[test]
    fn factor_att_associativity_equivalence() {
        for seed in 0..20 {
            let mut r = rng(100 + seed);
            let n = 2 + (seed as usize % 15);
            let d = 1 + (seed as usize % 8);
            let q = Tensor::uniform(vec![n, d], -2.0, 2.0, &mut r);
            let k = Tensor::uniform(vec![n, d], -2.0, 2.0, &mut r);
            let v = Tensor::uniform(vec![n, d], -2.0, 2.0, &mut r);
            let (fast, _) = factor_att(&q, &k, &v).unwrap();
            // left-associated oracle: (Q/√d · Softmax(K)ᵀ) V
            let mut qs = q.clone();
            for val in qs.data.iter_mut() {
                *val /= (d as f64).sqrt();
            }
            let s = ops::transpose(&ops::softmax_rows(&ops::transpose(&k).unwrap()).unwrap())
                .unwrap();
            let left = ops::matmul(&ops::matmul(&qs, &ops::transpose(&s).unwrap()).unwrap(), &v)
                .unwrap();
            for (a, b) in fast.data().iter().zip(left.data()) {
                assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn thresholds_zero_shrinkage_hand_case() {
        let ctx = ContextMatrix::new(
            Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, -4.0]).unwrap(),
        )
        .unwrap();
        let s = ShrinkageParams::zeros(2, 2).unwrap();
        let tv = compute_thresholds(&ctx, &s).unwrap();
        // z = 0 → alpha exactly one half; column means of |ctx| are [2, 3]
        assert_eq!(tv.alpha().data(), &[0.5, 0.5]);
        assert_eq!(tv.tau().data(), &[1.0, 1.5]);
    }

    #[test]
    fn thresholds_vanish_on_zero_context() {
        let ctx = ContextMatrix::new(Tensor::zeros(vec![4, 4])).unwrap();
        let s = ShrinkageParams::seeded(4, 4, &mut rng(13)).unwrap();
        let tv = compute_thresholds(&ctx, &s).unwrap();
        assert!(tv.tau().data().iter().all(|&t| t == 0.0));
    }

    #[test]
    fn thresholds_reject_mismatched_widths() {
        let ctx = ContextMatrix::new(Tensor::zeros(vec![4, 4])).unwrap();
        let s = ShrinkageParams::seeded(8, 4, &mut rng(14)).unwrap();
        assert!(matches!(
            compute_thresholds(&ctx, &s),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn shrinkage_params_validate_layer_shapes() {
        assert!(ShrinkageParams::new(
            LinearParams::zeros(8, 2),
            LinearParams::zeros(2, 8),
            4
        )
        .is_ok());
        assert!(ShrinkageParams::new(
            LinearParams::zeros(8, 3),
            LinearParams::zeros(3, 8),
            4
        )
        .is_err());
        assert!(ShrinkageParams::new(
            LinearParams::zeros(8, 2),
            LinearParams::zeros(2, 6),
            4
        )
        .is_err());
        assert!(ShrinkageParams::seeded(8, 3, &mut rng(15)).is_err());
    }

    #[test]
    fn st_attention_zero_queries_pass_values_through() {
        let c = 4;
        let m = Tensor::uniform(vec![5, c], -1.0, 1.0, &mut rng(16));
        let mut r = rng(17);
        let p = AttentionParams::new(
            LinearParams::zeros(c, c),
            LinearParams::seeded(c, c, &mut r),
            LinearParams::seeded(c, c, &mut r),
            2,
        )
        .unwrap();
        let shrink = vec![
            ShrinkageParams::seeded(2, 2, &mut r).unwrap(),
            ShrinkageParams::seeded(2, 2, &mut r).unwrap(),
        ];
        let out = st_attention(&m, &p, &shrink).unwrap();
        let projected_v = ops::linear(&m, p.wv()).unwrap();
        assert!(out.bit_eq(&projected_v));
    }

    #[test]
    fn st_attention_zero_values_collapse_to_zero() {
        let c = 4;
        let mut r = rng(18);
        let m = Tensor::uniform(vec![3, c], -1.0, 1.0, &mut r);
        let p = AttentionParams::new(
            LinearParams::seeded(c, c, &mut r),
            LinearParams::seeded(c, c, &mut r),
            LinearParams::zeros(c, c),
            1,
        )
        .unwrap();
        let shrink = vec![ShrinkageParams::seeded(c, 4, &mut r).unwrap()];
        let out = st_attention(&m, &p, &shrink).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn st_attention_equals_manual_composition() {
        let c = 4;
        let mut r = rng(19);
        let m = Tensor::uniform(vec![4, c], -1.0, 1.0, &mut r);
        let p = AttentionParams::seeded(c, 1, &mut r).unwrap();
        let shrink = vec![ShrinkageParams::seeded(c, 4, &mut r).unwrap()];
        let fused = st_attention(&m, &p, &shrink).unwrap();

        let (q, k, v) = project_qkv(&m, &p).unwrap();
        let (qh, kh, vh) = (
            head_slice(&q, 0).unwrap(),
            head_slice(&k, 0).unwrap(),
            head_slice(&v, 0).unwrap(),
        );
        let (att, ctx) = factor_att(&qh, &kh, &vh).unwrap();
        let tv = compute_thresholds(&ctx, &shrink[0]).unwrap();
        let manual = ops::add(&soft_threshold(&att, tv.tau()).unwrap(), &vh).unwrap();
        assert!(fused.bit_eq(&manual));
    }

    #[test]
    fn st_attention_is_exactly_permutation_equivariant() {
        let (n, c) = (6, 4);
        let mut r = rng(20);
        let m = Tensor::uniform(vec![n, c], -1.0, 1.0, &mut r);
        let p = AttentionParams::seeded(c, 2, &mut r).unwrap();
        let shrink = vec![
            ShrinkageParams::seeded(2, 2, &mut r).unwrap(),
            ShrinkageParams::seeded(2, 2, &mut r).unwrap(),
        ];
        let perm = [4usize, 0, 5, 2, 1, 3];
        let mut pm = Tensor::zeros(vec![n, c]);
        for (dst, &src) in perm.iter().enumerate() {
            pm.data[dst * c..(dst + 1) * c].copy_from_slice(m.row(src));
        }
        let out = st_attention(&m, &p, &shrink).unwrap();
        let pout = st_attention(&pm, &p, &shrink).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(
                pout.row(dst)
                    .iter()
                    .map(|x| x.to_bits())
                    .collect::<Vec<_>>(),
                out.row(src).iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn st_attention_requires_one_shrinkage_unit_per_head() {
        let m = Tensor::zeros(vec![2, 4]);
        let p = AttentionParams::seeded(4, 2, &mut rng(21)).unwrap();
        let shrink = vec![ShrinkageParams::seeded(2, 2, &mut rng(22)).unwrap()];
        assert!(matches!(
            st_attention(&m, &p, &shrink),
            Err(Error::Config(_))
        ));
    }
}
