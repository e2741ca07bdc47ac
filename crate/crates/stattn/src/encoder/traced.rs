//! Tape-recorded encoder builders mirroring the fused forward functions, for
//! finite-difference verification of the end-to-end gradient.

use super::{EncoderParams, LevelParams};
use crate::attention::traced::st_attention_traced;
use crate::error::{Error, Result};
use crate::tensor::autodiff::{Tape, Var};

/// Pooled positional encoding on a token node whose rows came from `grid`.
pub fn ppe_traced(tape: &mut Tape, m: Var, grid: (usize, usize)) -> Result<Var> {
    let (h, w) = grid;
    let shape = tape.value(m).shape().to_vec();
    if shape.len() != 2 || shape[0] != h * w {
        return Err(Error::ShapeMismatch {
            op: "ppe-traced",
            left: shape,
            right: vec![h, w],
        });
    }
    let c = shape[1];
    let g = tape.reshape(m, vec![h, w, c])?;
    let pooled = tape.avg_pool_2d(g, 3, 1, 1)?;
    let flat = tape.reshape(pooled, vec![h * w, c])?;
    tape.add(flat, m)
}

/// One branch on the tape: encoding at entry, then residual attention and
/// feed-forward blocks per layer.
pub fn encoder_branch_traced(
    tape: &mut Tape,
    m: Var,
    grid: (usize, usize),
    level: &LevelParams,
) -> Result<Var> {
    let mut x = ppe_traced(tape, m, grid)?;
    for layer in level.layers() {
        let att = st_attention_traced(tape, x, layer.attention(), layer.shrinkage())?;
        let a = tape.add(x, att)?;
        let (z1, _, _) = tape.linear_params(a, layer.ffn1())?;
        let r = tape.relu(z1);
        let (z2, _, _) = tape.linear_params(r, layer.ffn2())?;
        x = tape.add(a, z2)?;
    }
    Ok(x)
}

/// Full encoder on the tape. `features` are rank-3 `[H, W, C_l]` nodes for
/// levels 3, 4, 5 in order; returns the aggregated per-level token nodes.
pub fn encoder_forward_traced(
    tape: &mut Tape,
    features: [Var; 3],
    p: &EncoderParams,
) -> Result<[Var; 3]> {
    let mut grids = Vec::with_capacity(3);
    let mut branches = Vec::with_capacity(3);
    for (&f, level) in features.iter().zip(p.levels()) {
        let shape = tape.value(f).shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "encoder-traced",
                left: shape,
                right: vec![3],
            });
        }
        let (h, w, c_l) = (shape[0], shape[1], shape[2]);
        let flat = tape.reshape(f, vec![h * w, c_l])?;
        let (m, _, _) = tape.linear_params(flat, level.embed())?;
        branches.push(encoder_branch_traced(tape, m, (h, w), level)?);
        grids.push((h, w));
    }
    let laterals = p.laterals();
    let (out5, _, _) = tape.linear_params(branches[2], &laterals[2])?;
    let up5 = tape.upsample_nearest(out5, grids[2], grids[1])?;
    let fused4 = tape.add(branches[1], up5)?;
    let (out4, _, _) = tape.linear_params(fused4, &laterals[1])?;
    let up4 = tape.upsample_nearest(out4, grids[1], grids[0])?;
    let fused3 = tape.add(branches[0], up4)?;
    let (out3, _, _) = tape.linear_params(fused3, &laterals[0])?;
    Ok([out3, out4, out5])
}

/// Concatenates any set of nodes into one `[1, total]` row so a multi-output
/// graph can be checked through a single root.
pub fn flatten_outputs(tape: &mut Tape, outputs: &[Var]) -> Result<Var> {
    let mut rows = Vec::with_capacity(outputs.len());
    for &v in outputs {
        let n = tape.value(v).numel();
        rows.push(tape.reshape(v, vec![1, n])?);
    }
    tape.concat_cols(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{
        encoder_forward, synth_features, EncoderConfig, EncoderParams, FeatureMap,
        pooling_positional_encoding, TokenSequence,
    };
    use crate::tensor::gradcheck::{grad_check, GradCheckOptions};
    use crate::tensor::Tensor;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn traced_ppe_matches_fused() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Tensor::uniform(vec![12, 3], -1.0, 1.0, &mut rng);
        let m = TokenSequence::new(t.clone(), (3, 4)).unwrap();
        let fused = pooling_positional_encoding(&m).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(t);
        let y = ppe_traced(&mut tape, x, (3, 4)).unwrap();
        assert!(tape.value(y).bit_eq(fused.tokens()));
    }

    #[test]
    fn traced_forward_agrees_with_fused() {
        let config = EncoderConfig {
            embed_dim: 4,
            heads: 2,
            reduction: 2,
            depth: 2,
        };
        let features = synth_features(21, (4, 4), (2, 3, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let p = EncoderParams::seeded(config, (2, 3, 4), &mut rng).unwrap();
        let fused = encoder_forward(&features, &p).unwrap();

        let mut tape = Tape::new();
        let vars = [
            tape.input(features[0].tensor().clone()),
            tape.input(features[1].tensor().clone()),
            tape.input(features[2].tensor().clone()),
        ];
        let outs = encoder_forward_traced(&mut tape, vars, &p).unwrap();
        for (v, f) in outs.iter().zip(&fused) {
            let diff: f64 = tape
                .value(*v)
                .data()
                .iter()
                .zip(f.tokens().data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-12, "traced/fused disagree by {}", diff);
        }
    }

    #[test]
    fn end_to_end_gradient_check_on_a_tiny_encoder() {
        let config = EncoderConfig {
            embed_dim: 4,
            heads: 1,
            reduction: 4,
            depth: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = EncoderParams::seeded(config, (2, 2, 2), &mut rng).unwrap();
        let mut checked = 0usize;
        for seed in 0..4u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let inputs = [
                Tensor::uniform(vec![2, 2, 2], -8.0, 8.0, &mut rng),
                Tensor::uniform(vec![1, 1, 2], -8.0, 8.0, &mut rng),
                Tensor::uniform(vec![1, 1, 2], -8.0, 8.0, &mut rng),
            ];
            let report = grad_check(
                |tape, vars| {
                    let outs =
                        encoder_forward_traced(tape, [vars[0], vars[1], vars[2]], &p)?;
                    flatten_outputs(tape, &outs)
                },
                &inputs,
                &GradCheckOptions {
                    seed,
                    h: 1e-6,
                    ..GradCheckOptions::default()
                },
            )
            .unwrap();
            checked += report.checked;
            assert!(
                report.max_rel_error <= 1e-5,
                "seed {}: max relative error {}",
                seed,
                report.max_rel_error
            );
        }
        assert!(checked >= 24, "too few coordinates survived: {}", checked);
    }

    #[test]
    fn traced_forward_rejects_flat_features() {
        let p = EncoderParams::seeded(
            EncoderConfig {
                embed_dim: 4,
                heads: 1,
                reduction: 4,
                depth: 1,
            },
            (2, 2, 2),
            &mut ChaCha8Rng::seed_from_u64(24),
        )
        .unwrap();
        let features = synth_features(25, (2, 2), (2, 2, 2)).unwrap();
        let mut tape = Tape::new();
        let flat = tape.input(
            features[0]
                .tensor()
                .clone()
                .reshape(vec![4, 2])
                .unwrap(),
        );
        let f4 = tape.input(features[1].tensor().clone());
        let f5 = tape.input(features[2].tensor().clone());
        assert!(encoder_forward_traced(&mut tape, [flat, f4, f5], &p).is_err());
        let _ = FeatureMap::new(3, features[0].tensor().clone()).unwrap();
    }
}
