//! Monte-Carlo benchmark harness: seeded independent trials over an SNR grid,
//! run in parallel, emitted as a deterministic CSV with per-SNR aggregates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{estimate, EstimateOptions};
use crate::metrics::{aggregate, freq_mse_db, nmse_db, Summary, TrialOutcome, DB_FLOOR};
use crate::scenario::{generate, ScenarioConfig, WeightModel};

/// Benchmark sweep description (JSON-loadable).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub dims: Vec<usize>,
    pub k: usize,
    pub weight_model: WeightModel,
    pub snr_db_list: Vec<f64>,
    pub n_trials: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub min_sep: Option<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub n_components: Option<usize>,
    /// When false the `runtime_s` column is left empty so repeated runs are
    /// byte-identical.
    #[serde(default)]
    pub include_runtime: bool,
}

fn default_gamma() -> f64 {
    EstimateOptions::default().gamma
}

/// One SNR point's aggregate.
#[derive(Debug, Clone)]
pub struct SnrSummary {
    pub snr_db: f64,
    pub summary: Summary,
}

/// Full benchmark output: the CSV text plus structured aggregates.
#[derive(Debug, Clone)]
pub struct BenchmarkOutput {
    pub csv: String,
    pub summaries: Vec<SnrSummary>,
}

fn run_trial(cfg: &BenchmarkConfig, snr_db: f64, trial: usize) -> Result<TrialOutcome> {
    let scenario_cfg = ScenarioConfig {
        dims: cfg.dims.clone(),
        k: cfg.k,
        weight_model: cfg.weight_model,
        snr_db: Some(snr_db),
        seed: cfg.base_seed + trial as u64,
        frequencies: None,
        min_sep: cfg.min_sep,
    };
    let sc = generate(&scenario_cfg)?;
    let opts = EstimateOptions {
        gamma: cfg.gamma,
        n_components: cfg.n_components,
        ..EstimateOptions::default()
    };
    let t0 = std::time::Instant::now();
    let res = estimate(&sc.y, &opts)?;
    let runtime_s = t0.elapsed().as_secs_f64();
    let nmse = if sc.clean.norm_sqr() > 0.0 {
        nmse_db(&res.x_hat, &sc.clean)?
    } else if res.x_hat.norm_sqr() == 0.0 {
        DB_FLOOR
    } else {
        0.0
    };
    let freq_mse = if res.k_hat == cfg.k && cfg.k > 0 {
        let est: Vec<Vec<f64>> = res.components.iter().map(|c| c.theta.clone()).collect();
        Some(freq_mse_db(&est, &sc.truth.frequencies)?)
    } else {
        None
    };
    Ok(TrialOutcome {
        k_true: cfg.k,
        k_hat: res.k_hat,
        nmse_db: nmse,
        freq_mse_db: freq_mse,
        runtime_s,
        iterations: res.iterations,
    })
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("MDVALSE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("MDVALSE_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(Error::Config("MDVALSE_THREADS must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Run the sweep. Trials are parallel but the output ordering and content are
/// deterministic: each trial depends only on `base_seed + trial_index`, and
/// rows are emitted grouped by SNR in trial order.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkOutput> {
    if cfg.n_trials == 0 || cfg.snr_db_list.is_empty() {
        return Err(Error::Config("need at least one trial and one SNR point".into()));
    }
    let pool = thread_pool()?;
    let mut csv = String::from("trial,snr_db,k_true,k_hat,nmse_db,freq_mse_db,iterations,runtime_s\n");
    let mut summaries = Vec::new();
    for &snr_db in &cfg.snr_db_list {
        let trials: Vec<Result<TrialOutcome>> = pool.install(|| {
            (0..cfg.n_trials)
                .into_par_iter()
                .map(|t| run_trial(cfg, snr_db, t))
                .collect()
        });
        let trials: Vec<TrialOutcome> = trials.into_iter().collect::<Result<_>>()?;
        for (t, out) in trials.iter().enumerate() {
            let runtime = if cfg.include_runtime { out.runtime_s.to_string() } else { String::new() };
            csv.push_str(&format!(
                "{t},{snr_db},{},{},{},{},{},{runtime}\n",
                out.k_true,
                out.k_hat,
                out.nmse_db,
                opt_field(out.freq_mse_db),
                out.iterations
            ));
        }
        let summary = aggregate(&trials)?;
        let mean_runtime =
            if cfg.include_runtime { summary.mean_runtime_s.to_string() } else { String::new() };
        csv.push_str(&format!(
            "# snr_db={snr_db} n_trials={} p_correct={} mean_freq_mse_db={} mean_nmse_db={} mean_runtime_s={mean_runtime}\n",
            summary.n_trials,
            summary.p_correct,
            opt_field(summary.mean_freq_mse_db),
            summary.mean_nmse_db
        ));
        summaries.push(SnrSummary { snr_db, summary });
    }
    Ok(BenchmarkOutput { csv, summaries })
}
