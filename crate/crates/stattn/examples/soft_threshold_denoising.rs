//! Channel-adaptive shrinkage: thresholds learned from the context matrix.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stattn::attention::{compute_thresholds, ContextMatrix, ShrinkageParams};
use stattn::tensor::{ops, Tensor};

fn main() -> stattn::Result<()> {
    let ctx = ContextMatrix::new(Tensor::new(
        vec![2, 2],
        vec![1.0, -2.0, 3.0, -4.0],
    )?)?;

    // all-zero gate parameters sit at the sigmoid midpoint, so each
    // threshold is exactly half the channel's mean magnitude
    let neutral = ShrinkageParams::zeros(2, 1)?;
    let th = compute_thresholds(&ctx, &neutral)?;
    println!("channel mean |ctx|: [2.0, 3.0]");
    println!("neutral gate alpha: {:?}", th.alpha().data());
    println!("neutral thresholds: {:?}", th.tau().data());

    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let learned = ShrinkageParams::seeded(2, 1, &mut rng)?;
    let th = compute_thresholds(&ctx, &learned)?;
    println!("seeded thresholds:  {:?}", th.tau().data());
    for (c, (&a, &t)) in th.alpha().data().iter().zip(th.tau().data()).enumerate() {
        assert!(0.0 < a && a < 1.0);
        println!("  channel {c}: alpha = {a:.4}, tau = {t:.4} (strictly below the mean)");
    }

    // small entries vanish, large ones shrink toward zero by tau, signs hold
    let x = Tensor::new(
        vec![4, 2],
        vec![0.3, -0.2, 2.5, -3.1, -0.9, 1.4, 4.0, -0.6],
    )?;
    let y = ops::soft_threshold(&x, th.tau())?;
    println!("\n{:>12} -> {:>12}", "noisy", "denoised");
    for (xr, yr) in x.data().chunks(2).zip(y.data().chunks(2)) {
        println!("{:>12?} -> {:>12?}", xr, yr);
    }
    let zeroed = y.data().iter().filter(|v| **v == 0.0).count();
    println!("{zeroed} of {} entries fell inside the dead zone", y.numel());
    Ok(())
}
