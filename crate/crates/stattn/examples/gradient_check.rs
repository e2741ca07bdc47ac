//! Validating analytic gradients against central finite differences.
//!
//! Three situations: a composed attention block where kink screening is
//! automatic, an elementwise primitive where the caller states the kink band
//! as a coordinate predicate, and a degenerate check where every coordinate
//! is excluded — which errors rather than passing vacuously.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stattn::attention::traced::st_attention_traced;
use stattn::attention::{AttentionParams, ShrinkageParams};
use stattn::tensor::gradcheck::{grad_check, GradCheckOptions};
use stattn::tensor::Tensor;

fn main() -> stattn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = AttentionParams::seeded(4, 1, &mut rng)?;
    let shrink = vec![ShrinkageParams::seeded(4, 2, &mut rng)?];
    let x = Tensor::uniform(vec![3, 4], -8.0, 8.0, &mut rng);

    // the tape records which branch every piecewise operation took, so
    // coordinates whose probes cross a kink are dropped automatically
    let report = grad_check(
        |tape, vars| st_attention_traced(tape, vars[0], &params, &shrink),
        &[x],
        &GradCheckOptions {
            seed: 1,
            h: 1e-6,
            exclude: None,
        },
    )?;
    println!(
        "attention block: max rel error {:.2e} over {} coordinates ({} excluded, {} near a kink)",
        report.max_rel_error, report.checked, report.excluded, report.near_kink
    );

    // for a bare primitive the kink band is visible in the input itself
    let xs = Tensor::new(vec![1, 4], vec![2.0, -0.99999, 0.4, -3.0])?;
    let tau = Tensor::new(vec![4], vec![1.0; 4])?;
    let near = xs.clone();
    let band = move |i: usize, j: usize| i == 0 && (near.data()[j].abs() - 1.0).abs() < 1e-3;
    let report = grad_check(
        |tape, vars| tape.soft_threshold(vars[0], vars[1]),
        &[xs, tau],
        &GradCheckOptions {
            seed: 2,
            h: 1e-6,
            exclude: Some(&band),
        },
    )?;
    println!(
        "soft threshold:  max rel error {:.2e} over {} coordinates ({} excluded by the band)",
        report.max_rel_error, report.checked, report.excluded
    );

    let all = |_: usize, _: usize| true;
    let err = grad_check(
        |tape, vars| Ok(tape.abs(vars[0])),
        &[Tensor::filled(vec![2, 2], 1.0)],
        &GradCheckOptions {
            seed: 3,
            h: 1e-6,
            exclude: Some(&all),
        },
    )
    .unwrap_err();
    println!("excluding everything: {err}");
    Ok(())
}
