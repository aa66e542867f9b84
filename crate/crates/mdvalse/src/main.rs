use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mdvalse::bench::{run_benchmark, BenchmarkConfig};
use mdvalse::error::Result;
use mdvalse::inference::{estimate, EstimateOptions, EstimationResult};
use mdvalse::scenario::{generate, ScenarioConfig};
use mdvalse::selfcheck::run_selfcheck;
use mdvalse::tensor::{read_tensor, write_tensor};

/// Estimation of superimposed D-dimensional complex sinusoids from a noisy
/// tensor, with synthetic-data generation and benchmarking.
#[derive(Parser)]
#[command(name = "mdvalse", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic measurement tensor and its ground truth.
    Simulate(SimulateArgs),
    /// Estimate sinusoid count, frequencies and weights from a tensor file.
    Estimate(EstimateArgs),
    /// Run a seeded Monte-Carlo sweep and emit a CSV.
    Benchmark(BenchmarkArgs),
    /// Run the independent oracle suite.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config JSON (dims, k, weight_model, snr_db, seed, ...).
    #[arg(long)]
    config: PathBuf,
    /// Output tensor file.
    #[arg(long)]
    out: PathBuf,
    /// Output ground-truth JSON.
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Input tensor file.
    input: PathBuf,
    /// Frequency-grid oversampling factor for initialization.
    #[arg(long, default_value_t = EstimateOptions::default().gamma)]
    gamma: f64,
    /// Component budget (default: smallest tensor dimension).
    #[arg(long)]
    n_components: Option<usize>,
    /// Relative reconstruction-change stopping tolerance.
    #[arg(long, default_value_t = EstimateOptions::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = EstimateOptions::default().max_iters)]
    max_iters: usize,
    /// Laplace matching constant for posterior concentrations.
    #[arg(long, default_value_t = EstimateOptions::default().kappa_const)]
    kappa_const: f64,
    /// Write the result JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Benchmark config JSON (dims, k, snr_db_list, n_trials, base_seed, ...).
    #[arg(long)]
    config: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelfcheckArgs {
    /// Negative control: corrupt the greedy support answer so the
    /// enumeration check must fail.
    #[arg(long, hide = true)]
    tamper_support: bool,
}

fn result_json(res: &EstimationResult) -> serde_json::Value {
    json!({
        "k_hat": res.k_hat,
        "components": res.components.iter().map(|c| json!({
            "w_re": c.weight.re,
            "w_im": c.weight.im,
            "theta": c.theta,
            "kappa": c.kappa,
        })).collect::<Vec<_>>(),
        "nu": res.params.nu,
        "rho": res.params.rho,
        "tau": res.params.tau,
        "iterations": res.iterations,
        "converged": res.converged,
        "trace": res.trace,
    })
}

fn cmd_simulate(args: &SimulateArgs) -> Result<ExitCode> {
    let cfg: ScenarioConfig = serde_json::from_str(&std::fs::read_to_string(&args.config)?)?;
    let sc = generate(&cfg)?;
    write_tensor(&args.out, &sc.y)?;
    std::fs::write(&args.truth, serde_json::to_string_pretty(&sc.truth)?)?;
    eprintln!(
        "wrote {} ({} entries) and {}",
        args.out.display(),
        sc.y.shape().len(),
        args.truth.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_estimate(args: &EstimateArgs) -> Result<ExitCode> {
    let y = read_tensor(&args.input)?;
    let opts = EstimateOptions {
        gamma: args.gamma,
        n_components: args.n_components,
        tol: args.tol,
        max_iters: args.max_iters,
        kappa_const: args.kappa_const,
    };
    let res = estimate(&y, &opts)?;
    let out = serde_json::to_string_pretty(&result_json(&res))?;
    match &args.out {
        Some(p) => std::fs::write(p, out)?,
        None => println!("{out}"),
    }
    if let Some(msg) = &res.failure {
        eprintln!("estimation aborted: {msg}");
        return Ok(ExitCode::FAILURE);
    }
    Ok(if res.converged { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<ExitCode> {
    let cfg: BenchmarkConfig = serde_json::from_str(&std::fs::read_to_string(&args.config)?)?;
    let out = run_benchmark(&cfg)?;
    match &args.out {
        Some(p) => std::fs::write(p, &out.csv)?,
        None => print!("{}", out.csv),
    }
    for s in &out.summaries {
        eprintln!(
            "snr {} dB: P(correct order) = {}, mean NMSE = {} dB",
            s.snr_db, s.summary.p_correct, s.summary.mean_nmse_db
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_selfcheck(args: &SelfcheckArgs) -> ExitCode {
    let report = run_selfcheck(args.tamper_support);
    for c in &report.checks {
        println!("{}: {} ({})", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
    }
    for line in &report.info {
        println!("info: {line}");
    }
    if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Selfcheck(a) => return cmd_selfcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
