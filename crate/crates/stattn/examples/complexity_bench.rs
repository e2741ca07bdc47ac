//! Analytic operation counts next to measured wall-clock times.
//!
//! The flop table is exact and machine-independent; the timing section runs
//! a small grid and prints the same CSV the `bench` subcommand writes.

use stattn::attention::{flop_count, Mechanism};
use stattn::bench::{render_csv, run_bench, BenchPlan};

fn main() -> stattn::Result<()> {
    let (c, heads) = (64, 1);
    println!("exact flop counts at C = {c}, heads = {heads}:");
    println!("{:>6} {:>14} {:>14} {:>7}", "N", "factorized", "dot-product", "ratio");
    for n in [512usize, 1024, 2048, 4096] {
        let fac = flop_count(Mechanism::Factorized, n, c, heads)?;
        let dot = flop_count(Mechanism::DotProduct, n, c, heads)?;
        println!("{n:>6} {fac:>14} {dot:>14} {:>7.1}", dot as f64 / fac as f64);
    }
    println!("doubling N doubles the factorized count and quadruples the quadratic term\n");

    let plan = BenchPlan {
        mechanisms: vec![Mechanism::Factorized, Mechanism::DotProduct],
        n_list: vec![256, 512],
        c_list: vec![32],
        heads: 1,
        trials: 5,
        warmup: 1,
    };
    let records = run_bench(&plan)?;
    print!("{}", render_csv(&records));
    Ok(())
}
