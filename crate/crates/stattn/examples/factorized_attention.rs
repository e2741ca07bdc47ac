//! Token mixing with the reassociated attention product.
//!
//! The factorized kernel computes `(Q/√d)·(Softmax(K)ᵀV)` by building the
//! small `d×d` context first, so its cost grows linearly in the token count.
//! This example evaluates the same expression with the opposite association
//! order, prints the largest gap, and tabulates the analytic flop counts of
//! both mechanisms as the token count doubles.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stattn::attention::{factor_att, flop_count, Mechanism};
use stattn::tensor::{ops, Tensor};

fn main() -> stattn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, d) = (12, 6);
    let q = Tensor::uniform(vec![n, d], -2.0, 2.0, &mut rng);
    let k = Tensor::uniform(vec![n, d], -2.0, 2.0, &mut rng);
    let v = Tensor::uniform(vec![n, d], -2.0, 2.0, &mut rng);

    let (fused, ctx) = factor_att(&q, &k, &v)?;

    // the same product, associated left to right instead
    let st = ops::softmax_rows(&ops::transpose(&k)?)?;
    let scaled_q = ops::scale(&q, 1.0 / (d as f64).sqrt());
    let left = ops::matmul(&ops::matmul(&scaled_q, &st)?, &v)?;

    let gap = fused
        .data()
        .iter()
        .zip(left.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    println!("N = {n}, d = {d}: |fused − left-associated| ≤ {gap:.2e}");
    println!(
        "context matrix is {:?} — independent of N, shared by every query row\n",
        ctx.tensor().shape()
    );

    println!("{:>6} {:>16} {:>16}", "N", "factorized", "dot-product");
    let (c, heads) = (64, 1);
    let mut prev: Option<(u64, u64)> = None;
    for n in [1024u64, 2048, 4096, 8192] {
        let fac = flop_count(Mechanism::Factorized, n as usize, c, heads)?;
        let dot = flop_count(Mechanism::DotProduct, n as usize, c, heads)?;
        match prev {
            Some((pf, pd)) => println!(
                "{n:>6} {fac:>16} {dot:>16}   (×{:.2}, ×{:.2})",
                fac as f64 / pf as f64,
                dot as f64 / pd as f64
            ),
            None => println!("{n:>6} {fac:>16} {dot:>16}"),
        }
        prev = Some((fac, dot));
    }
    Ok(())
}
