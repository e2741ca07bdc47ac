//! Command-line surface: `verify`, `bench`, `eval`, and `forward`.
//!
//! Exit codes: 0 on success, 1 when a run completes but the result is a
//! failure (an invariant failed, evaluation undefined), 2 for usage,
//! parse, configuration, and I/O problems.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::Mechanism;
use crate::bench::{run_bench, write_csv, BenchPlan};
use crate::encoder::{
    encoder_forward, synth_features, EncoderConfig, EncoderParams, FeatureMap,
};
use crate::error::{Error, Result};
use crate::metrics;
use crate::tensor::format::{read_tensor, write_tensor};
use crate::verify::{run_invariants, FaultInjection};

#[derive(Debug, Parser)]
#[command(
    name = "stattn",
    version,
    about = "Soft-threshold factorized attention encoder: invariant suite, benchmark, evaluator, forward runner"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every library invariant and write a JSON report.
    Verify {
        /// Seed for all randomized instances.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Time attention mechanisms over a grid and write a CSV.
    Bench {
        /// Mechanisms to time, comma-separated.
        #[arg(
            long,
            value_parser = parse_mechanism,
            value_delimiter = ',',
            default_value = "dot_product,factorized"
        )]
        mech: Vec<Mechanism>,
        /// Token counts, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        /// Channel widths, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "64")]
        c: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        heads: usize,
        /// Timed passes per cell (at least 3).
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Discarded passes per cell before timing (at least 1).
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        /// CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a detections file against a ground-truth file.
    Eval {
        /// Detections JSON file.
        #[arg(long)]
        dets: PathBuf,
        /// Ground-truth JSON file.
        #[arg(long)]
        gts: PathBuf,
        /// Report path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the encoder and write the three per-level token files.
    Forward {
        /// Three rank-3 [H, W, C] tensor files, levels 3 4 5.
        #[arg(long, num_args = 3, conflicts_with = "synth")]
        features: Option<Vec<PathBuf>>,
        /// Draw synthetic features instead of reading files.
        #[arg(long)]
        synth: bool,
        /// Seed for the synthetic features.
        #[arg(long, default_value_t = 0, requires = "synth", conflicts_with = "features")]
        seed: u64,
        /// Level-3 grid as H,W.
        #[arg(
            long,
            value_parser = parse_base,
            default_value = "8,8",
            requires = "synth",
            conflicts_with = "features"
        )]
        base: (usize, usize),
        /// Per-level channels as c3,c4,c5.
        #[arg(
            long,
            value_parser = parse_channels,
            default_value = "4,8,16",
            requires = "synth",
            conflicts_with = "features"
        )]
        channels: (usize, usize, usize),
        /// Seed for parameter initialization.
        #[arg(long, default_value_t = 0)]
        params_seed: u64,
        /// Output prefix; files are {prefix}_level{3,4,5}.json.
        #[arg(long)]
        out_prefix: String,
    },
}

fn parse_mechanism(s: &str) -> std::result::Result<Mechanism, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_base(s: &str) -> std::result::Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected H,W, got '{}'", s));
    }
    let h = parts[0].trim().parse().map_err(|_| format!("bad height '{}'", parts[0]))?;
    let w = parts[1].trim().parse().map_err(|_| format!("bad width '{}'", parts[1]))?;
    Ok((h, w))
}

fn parse_channels(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected c3,c4,c5, got '{}'", s));
    }
    let mut out = [0usize; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| format!("bad channel count '{}'", part))?;
    }
    Ok((out[0], out[1], out[2]))
}

/// Executes a parsed command, returning the process exit code for
/// completed runs. Errors bubble up for the caller to map via
/// [`Error::exit_code`].
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Verify { seed, out } => cmd_verify(seed, &out),
        Command::Bench {
            mech,
            n,
            c,
            heads,
            trials,
            warmup,
            out,
        } => cmd_bench(mech, n, c, heads, trials, warmup, &out),
        Command::Eval { dets, gts, out } => cmd_eval(&dets, &gts, &out),
        Command::Forward {
            features,
            synth,
            seed,
            base,
            channels,
            params_seed,
            out_prefix,
        } => cmd_forward(features, synth, seed, base, channels, params_seed, &out_prefix),
    }
}

fn cmd_verify(seed: u64, out: &Path) -> Result<i32> {
    let report = run_invariants(seed, &FaultInjection::default(), true);
    fs::write(out, report.render())?;
    for inv in &report.invariants {
        if inv.passed {
            println!("[pass] {}", inv.name);
        } else {
            println!("[FAIL] {}: {}", inv.name, inv.detail);
        }
    }
    let total = report.invariants.len();
    if report.all_passed() {
        println!("all {} invariants passed", total);
        Ok(0)
    } else {
        let failed = report.invariants.iter().filter(|i| !i.passed).count();
        println!("{} of {} invariants failed", failed, total);
        Ok(1)
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    mechanisms: Vec<Mechanism>,
    n_list: Vec<usize>,
    c_list: Vec<usize>,
    heads: usize,
    trials: usize,
    warmup: usize,
    out: &Path,
) -> Result<i32> {
    let plan = BenchPlan {
        mechanisms,
        n_list,
        c_list,
        heads,
        trials,
        warmup,
    };
    let records = run_bench(&plan)?;
    write_csv(out, &records)?;
    println!("wrote {} measurements to {}", records.len(), out.display());
    Ok(0)
}

fn cmd_eval(dets_path: &Path, gts_path: &Path, out: &Path) -> Result<i32> {
    let mut dets = metrics::io::read_detections(dets_path)?;
    // matching requires descending scores; a stable sort keeps the file
    // order as the tie-break
    dets.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("scores are finite"));
    let gts = metrics::io::read_ground_truth(gts_path)?;
    let report = metrics::error_decomposition(&dets, &gts)?;
    metrics::io::write_report(out, &report)?;
    println!("ap50 {:.6}", report.ap50);
    println!("e_cls {:.6}", report.e_cls);
    println!("e_loc {:.6}", report.e_loc);
    println!("e_miss {:.6}", report.e_miss);
    Ok(0)
}

fn cmd_forward(
    features: Option<Vec<PathBuf>>,
    synth: bool,
    seed: u64,
    base: (usize, usize),
    channels: (usize, usize, usize),
    params_seed: u64,
    out_prefix: &str,
) -> Result<i32> {
    let maps: [FeatureMap; 3] = match features {
        Some(paths) => {
            let mut maps = Vec::with_capacity(3);
            for (i, path) in paths.iter().enumerate() {
                maps.push(FeatureMap::new(3 + i, read_tensor(path)?)?);
            }
            maps.try_into().expect("three files")
        }
        None => {
            if !synth {
                return Err(Error::Config(
                    "pass either --features F3 F4 F5 or --synth".into(),
                ));
            }
            synth_features(seed, base, channels)?
        }
    };
    let widths = (maps[0].channels(), maps[1].channels(), maps[2].channels());
    let mut rng = ChaCha8Rng::seed_from_u64(params_seed);
    let params = EncoderParams::seeded(EncoderConfig::default(), widths, &mut rng)?;
    let outputs = encoder_forward(&maps, &params)?;
    for (i, level) in outputs.iter().enumerate() {
        let path = format!("{}_level{}.json", out_prefix, 3 + i);
        write_tensor(Path::new(&path), level.tokens())?;
        println!(
            "level {}: {} tokens x {} channels -> {}",
            3 + i,
            level.len(),
            level.embed_dim(),
            path
        );
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_the_documented_invocations() {
        Cli::try_parse_from([
            "stattn", "verify", "--seed", "7", "--out", "report.json",
        ])
        .unwrap();
        let cli = Cli::try_parse_from([
            "stattn",
            "bench",
            "--mech",
            "dot_product,factorized",
            "--n",
            "1024,2048",
            "--c",
            "64",
            "--heads",
            "1",
            "--trials",
            "5",
            "--warmup",
            "2",
            "--out",
            "bench.csv",
        ])
        .unwrap();
        match cli.command {
            Command::Bench { mech, n, .. } => {
                assert_eq!(mech, vec![Mechanism::DotProduct, Mechanism::Factorized]);
                assert_eq!(n, vec![1024, 2048]);
            }
            _ => panic!("expected bench"),
        }
        Cli::try_parse_from([
            "stattn", "eval", "--dets", "d.json", "--gts", "g.json", "--out", "r.json",
        ])
        .unwrap();
        let cli = Cli::try_parse_from([
            "stattn",
            "forward",
            "--synth",
            "--seed",
            "11",
            "--base",
            "8,8",
            "--channels",
            "4,8,16",
            "--params-seed",
            "3",
            "--out-prefix",
            "out/enc",
        ])
        .unwrap();
        match cli.command {
            Command::Forward { base, channels, .. } => {
                assert_eq!(base, (8, 8));
                assert_eq!(channels, (4, 8, 16));
            }
            _ => panic!("expected forward"),
        }
    }

    #[test]
    fn rejects_conflicting_and_malformed_flags() {
        assert!(Cli::try_parse_from([
            "stattn", "forward", "--synth", "--features", "a", "b", "c", "--out-prefix", "x",
        ])
        .is_err());
        assert!(Cli::try_parse_from([
            "stattn", "bench", "--n", "16", "--mech", "fast", "--out", "b.csv",
        ])
        .is_err());
        assert!(Cli::try_parse_from(["stattn", "bench", "--out", "b.csv"]).is_err());
        assert!(parse_base("8").is_err());
        assert!(parse_channels("1,2").is_err());
        assert_eq!(parse_base("4,6").unwrap(), (4, 6));
    }
}
