use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use itt_core::harness::{self, bench, stats, train::scores_csv, Checkpoint};
use itt_core::{Error, Result};

#[derive(Parser)]
#[command(name = "itt", version, about = "Train and measure implicit two-tower ES policies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every seed of a config and write logs, checkpoints and scores.
    Train {
        config: PathBuf,
        /// Override `[run] out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and print the summary as JSON.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Monte Carlo checks of the ES gradient estimators.
    VerifyEs {
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-query cost of brute-force, SRP, RFT and one-tower selection.
    BenchSelect {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = [1024usize, 2048, 4096, 8192, 16384])]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Benchmark on `[-1, 1]^k` actions instead of the environment's.
        #[arg(long)]
        action_dim: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Paired t-test on two `seed,score` files.
    Ttest { a: PathBuf, b: PathBuf },
    /// Train several configs on shared seeds and tabulate scores and p-values.
    Compare {
        #[arg(required = true, num_args = 2..)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value = "compare")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Train { config, out } => {
            let mut cfg = harness::load_config(&config)?;
            if let Some(o) = out {
                cfg = cfg.with_out_dir(o);
            }
            let outcomes = harness::train(&cfg)?;
            print!("{}", scores_csv(&outcomes));
            eprintln!("wrote {}", cfg.run.out_dir.display());
        }
        Cmd::Eval {
            checkpoint,
            episodes,
            seed,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let summary = harness::evaluate(&ck, episodes, seed)?;
            println!("{}", serde_json::to_string(&summary).map_err(Error::from)?);
        }
        Cmd::VerifyEs { trials, seed } => {
            let rows = harness::verify_es(trials, seed)?;
            print!("{}", harness::verify_csv(&rows));
            if rows.iter().any(|r| !r.pass()) {
                eprintln!("some checks failed");
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::BenchSelect {
            config,
            n_list,
            trials,
            action_dim,
            seed,
        } => {
            let cfg = harness::load_config(&config)?;
            let rows = harness::bench_select(&cfg, action_dim, &n_list, trials, seed)?;
            print!("{}", bench::bench_csv(&rows));
            for b in ["brute", "srp", "rft", "iot"] {
                if let Some(s) = bench::log_log_slope(&rows, b) {
                    eprintln!("{b}: log-log slope {s:.3}");
                }
            }
        }
        Cmd::Ttest { a, b } => {
            let (xs, ys) = paired_files(&a, &b)?;
            let (t, p) = harness::paired_t_test(&xs, &ys)?;
            println!("n,t,p\n{},{t},{p}", xs.len());
        }
        Cmd::Compare { configs, out } => {
            let cfgs = configs
                .iter()
                .map(|c| harness::load_config(c))
                .collect::<Result<Vec<_>>>()?;
            let (rows, tests) = harness::compare(&cfgs, &out)?;
            print!("{}", stats::summary_csv(&rows));
            print!("{}", stats::tests_csv(&tests));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn paired_files(a: &Path, b: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let xs = stats::read_scores(a)?;
    let ys = stats::read_scores(b)?;
    let pairs: (Vec<f64>, Vec<f64>) = xs
        .iter()
        .filter_map(|(s, x)| ys.iter().find(|(t, _)| t == s).map(|(_, y)| (*x, *y)))
        .unzip();
    if pairs.0.len() != xs.len() || pairs.0.len() != ys.len() {
        eprintln!("warning: {} of {}/{} seeds paired", pairs.0.len(), xs.len(), ys.len());
    }
    Ok(pairs)
}
