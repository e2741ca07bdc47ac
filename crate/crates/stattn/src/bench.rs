//! Wall-clock microbenchmark comparing the two attention mechanisms, with
//! analytic flop counts carried alongside the measured times.
//!
//! Inputs are drawn from a fixed internal seed so repeated runs time the
//! same data; the flop column is analytic and therefore byte-stable across
//! runs even when the clock is not. Measurement is single-threaded: one
//! forward pass over all heads per trial, warmup passes discarded, mean and
//! standard deviation taken over the trial samples.

use std::fmt::Write as _;
use std::fs;
use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{factor_att, flop_count, softmax_attention, Mechanism};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Benchmark inputs are always drawn from this stream, keeping timings
/// comparable across invocations.
const INPUT_SEED: u64 = 0xBEC4_5EED;

/// Exact column set of the benchmark CSV.
pub const CSV_HEADER: &str = "mechanism,N,C,heads,trials,mean_ns,std_ns,flops";

/// One measured (mechanism, N, C) cell.
#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub mechanism: Mechanism,
    pub n: usize,
    pub c: usize,
    pub heads: usize,
    pub trials: usize,
    pub mean_ns: u64,
    pub std_ns: u64,
    pub flops: u64,
}

/// Grid of benchmark cells to measure.
#[derive(Debug, Clone)]
pub struct BenchPlan {
    pub mechanisms: Vec<Mechanism>,
    pub n_list: Vec<usize>,
    pub c_list: Vec<usize>,
    pub heads: usize,
    pub trials: usize,
    pub warmup: usize,
}

impl BenchPlan {
    fn validate(&self) -> Result<()> {
        if self.mechanisms.is_empty() || self.n_list.is_empty() || self.c_list.is_empty() {
            return Err(Error::Config(
                "benchmark needs at least one mechanism, one N and one C".into(),
            ));
        }
        if self.trials < 3 {
            return Err(Error::Config(format!(
                "need at least 3 trials, got {}",
                self.trials
            )));
        }
        if self.warmup < 1 {
            return Err(Error::Config(
                "need at least 1 warmup run".into(),
            ));
        }
        for &n in &self.n_list {
            if n == 0 {
                return Err(Error::Config("token counts must be positive".into()));
            }
        }
        for &c in &self.c_list {
            if c == 0 || self.heads == 0 || c % self.heads != 0 {
                return Err(Error::Config(format!(
                    "head count {} does not divide channel width {}",
                    self.heads, c
                )));
            }
        }
        Ok(())
    }
}

/// Runs the whole plan, mechanisms outermost, N then C within.
pub fn run_bench(plan: &BenchPlan) -> Result<Vec<BenchRecord>> {
    plan.validate()?;
    let mut records = Vec::new();
    for &mechanism in &plan.mechanisms {
        for &n in &plan.n_list {
            for &c in &plan.c_list {
                records.push(measure_one(
                    mechanism,
                    n,
                    c,
                    plan.heads,
                    plan.trials,
                    plan.warmup,
                )?);
            }
        }
    }
    Ok(records)
}

/// Times one cell: `trials` full forward passes (all heads) after `warmup`
/// discarded passes, on inputs drawn fresh from the fixed seed.
pub fn measure_one(
    mechanism: Mechanism,
    n: usize,
    c: usize,
    heads: usize,
    trials: usize,
    warmup: usize,
) -> Result<BenchRecord> {
    BenchPlan {
        mechanisms: vec![mechanism],
        n_list: vec![n],
        c_list: vec![c],
        heads,
        trials,
        warmup,
    }
    .validate()?;
    let d = c / heads;
    let mut rng = ChaCha8Rng::seed_from_u64(INPUT_SEED);
    let inputs: Vec<[Tensor; 3]> = (0..heads)
        .map(|_| {
            [
                Tensor::uniform(vec![n, d], -1.0, 1.0, &mut rng),
                Tensor::uniform(vec![n, d], -1.0, 1.0, &mut rng),
                Tensor::uniform(vec![n, d], -1.0, 1.0, &mut rng),
            ]
        })
        .collect();

    let run = |inputs: &[[Tensor; 3]]| -> Result<()> {
        for [q, k, v] in inputs {
            match mechanism {
                Mechanism::DotProduct => {
                    black_box(softmax_attention(black_box(q), k, v)?);
                }
                Mechanism::Factorized => {
                    black_box(factor_att(black_box(q), k, v)?);
                }
            }
        }
        Ok(())
    };

    for _ in 0..warmup {
        run(&inputs)?;
    }
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        run(&inputs)?;
        samples.push(start.elapsed().as_nanos() as u64);
    }

    let mean = samples.iter().sum::<u64>() as f64 / trials as f64;
    let var = samples
        .iter()
        .map(|&s| (s as f64 - mean).powi(2))
        .sum::<f64>()
        / trials as f64;
    Ok(BenchRecord {
        mechanism,
        n,
        c,
        heads,
        trials,
        mean_ns: mean.round() as u64,
        std_ns: var.sqrt().round() as u64,
        flops: flop_count(mechanism, n, c, heads)?,
    })
}

/// Renders records under [`CSV_HEADER`], one row per record.
pub fn render_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.mechanism.name(),
            r.n,
            r.c,
            r.heads,
            r.trials,
            r.mean_ns,
            r.std_ns,
            r.flops
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn write_csv(path: &Path, records: &[BenchRecord]) -> Result<()> {
    fs::write(path, render_csv(records))?;
    Ok(())
}
