use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kunet::config::RunConfig;
use kunet::runner;
use kunet_core::unet::Variant;

#[derive(Parser)]
#[command(
    name = "kunet",
    about = "Hierarchical kernel U-Net for time-series forecasting",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a config file, then evaluate on the test split.
    Train {
        /// key = value config file; omit to run on built-in defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override config fields, e.g. --set seed=7 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint on the configured dataset's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Finite-difference check of whole-model gradients on a tiny plan.
    Gradcheck {
        #[arg(long, default_value = "linear")]
        variant: String,
        #[arg(long, default_value_t = 8)]
        lookback: usize,
        #[arg(long, default_value_t = 2)]
        l_unit: usize,
        #[arg(long, default_value = "2,2")]
        l_multiples: String,
        #[arg(long, default_value_t = 4)]
        hidden: usize,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Parameter count, per-layer breakdown, and attention cost of a
    /// checkpoint.
    Report {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Parameter/attention-cost table over a binary plan family, innermost
    /// vs outermost transformer placement.
    Bench {
        #[arg(long, default_value_t = 4)]
        hidden: usize,
        #[arg(long, default_value_t = 4)]
        min_exp: u32,
        #[arg(long, default_value_t = 10)]
        max_exp: u32,
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
}

fn load_config(path: &Option<PathBuf>, sets: &[String]) -> kunet::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| kunet::Error::Config(format!("--set needs KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn parse_multiples(s: &str) -> kunet::Result<Vec<usize>> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| kunet::Error::Config(format!("bad multiple {p:?}")))
        })
        .collect()
}

fn run(cli: Cli) -> kunet::Result<bool> {
    match cli.cmd {
        Cmd::Train { config, set } => {
            let cfg = load_config(&config, &set)?;
            let artifacts = runner::run_train(&cfg)?;
            print!("{}", artifacts.metrics_text);
            println!("artifacts written to {}", artifacts.out_dir.display());
            Ok(true)
        }
        Cmd::Eval { checkpoint, config, set } => {
            let cfg = load_config(&config, &set)?;
            print!("{}", runner::run_eval(&checkpoint, &cfg)?);
            Ok(true)
        }
        Cmd::Gradcheck { variant, lookback, l_unit, l_multiples, hidden, seeds, tol } => {
            let variant = Variant::parse(&variant)?;
            let multiples = parse_multiples(&l_multiples)?;
            let outcome =
                runner::run_gradcheck(variant, lookback, l_unit, &multiples, hidden, seeds, tol)?;
            print!("{}", outcome.text);
            Ok(outcome.passed)
        }
        Cmd::Report { checkpoint } => {
            print!("{}", runner::run_report(&checkpoint)?);
            Ok(true)
        }
        Cmd::Bench { hidden, min_exp, max_exp, batch } => {
            let rows = runner::bench_rows(hidden, min_exp, max_exp, batch)?;
            print!("{}", runner::render_bench(&rows));
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
