//! Command-line front end.
//!
//! Exit codes: 0 success, 1 failed verification, 2 configuration error,
//! 3 solver error. `DELAY_IMPULSE_THREADS` caps the worker threads.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use delay_impulse::config::{AnyConfig, ModelConfig, SwingConfig};
use delay_impulse::lsmc::RegressionBasis;
use delay_impulse::report::{self, Mode, SolveOverrides};
use delay_impulse::verify::{self, Suite};
use delay_impulse::{swing, Error};

const THREADS_VAR: &str = "DELAY_IMPULSE_THREADS";

#[derive(Parser)]
#[command(name = "delay-impulse", version, about = "Impulse control with execution delay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a model file; writes report.json, fields.csv and strategy.csv.
    Solve {
        config: PathBuf,
        #[arg(long, default_value = "rn", value_parser = parse_mode)]
        mode: Mode,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Truncation tail target for --mode inf.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Largest accepted truncation horizon for --mode inf.
        #[arg(long)]
        tmax: Option<f64>,
    },
    /// Price a swing contract; also writes boundary.csv.
    PriceSwing {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a verification suite on the built-in fixtures.
    Verify {
        #[arg(long, value_parser = parse_suite)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the results as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regression Monte Carlo on paths sampled from a model or swing file.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Polynomial degree of the regression basis.
        #[arg(long, default_value_t = 2)]
        degree: usize,
        /// Write the results JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        _ => 3,
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_VAR} must be a positive integer, got {raw:?}")))?;
    if n == 0 {
        return Err(Error::Config(format!("{THREADS_VAR} must be positive")));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))
}

fn solve(config: PathBuf, mode: Mode, out: PathBuf, overrides: SolveOverrides) -> Result<(), Error> {
    let cfg = ModelConfig::load(&config)?;
    let (model, menu) = cfg.build()?;
    let output = report::solve_model(&model, &menu, mode, &cfg, overrides)?;
    output.write(&out)?;
    println!("mode {} value {}", mode.as_str(), output.summary.value);
    if let Some(inf) = &output.summary.infinite {
        println!(
            "T_trunc {} tail_bound {:e} iterations {}",
            inf.t_trunc, inf.tail_bound, inf.iterations
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn price_swing(config: PathBuf, out: PathBuf) -> Result<(), Error> {
    let cfg = SwingConfig::load(&config)?;
    let output = report::price_swing_config(&cfg)?;
    output.write(&out)?;
    println!("price {} rights {}", output.summary.price, output.summary.rights);
    println!("wrote {}", out.display());
    Ok(())
}

fn run_verify(suite: Suite, seed: u64, out: Option<PathBuf>) -> Result<bool, Error> {
    let results = verify::run_suite(suite, seed);
    for r in &results {
        println!("{}", r.line());
    }
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&results)?;
        std::fs::write(path, json)?;
    }
    Ok(results.iter().all(|r| r.passed))
}

fn simulate(config: PathBuf, paths: usize, seed: u64, degree: usize, out: Option<PathBuf>) -> Result<(), Error> {
    let (model, menu, depth) = match AnyConfig::load(&config)? {
        AnyConfig::Model(cfg) => {
            let (model, menu) = cfg.build()?;
            (model, menu, cfg.max_impulses)
        }
        AnyConfig::Swing(cfg) => {
            let grid = cfg.grid()?;
            let (model, menu) = swing::swing_model(grid, &cfg.contract)?;
            (model, menu, Some(swing::max_exercises(&grid, &cfg.contract)))
        }
    };
    let summary = report::simulate_model(&model, &menu, depth, paths, seed, RegressionBasis::with_degree(degree))?;
    let json = serde_json::to_string_pretty(&summary)?;
    match out {
        Some(path) => {
            std::fs::write(&path, json)?;
            println!(
                "in-sample {} out-of-sample {} +- {} (exact {})",
                summary.value_insample, summary.value_oos, summary.stderr, summary.exact_value
            );
        }
        None => println!("{json}"),
    }
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(&e));
    }
    let result = match cli.command {
        Command::Solve {
            config,
            mode,
            out,
            epsilon,
            tmax,
        } => solve(config, mode, out, SolveOverrides { epsilon, t_max: tmax }),
        Command::PriceSwing { config, out } => price_swing(config, out),
        Command::Verify { suite, seed, out } => match run_verify(suite, seed, out) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::Simulate {
            config,
            paths,
            seed,
            degree,
            out,
        } => simulate(config, paths, seed, degree, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
