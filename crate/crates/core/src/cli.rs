//! Batch commands behind the `ddsls` binary. Each command reads an
//! [`ExperimentConfig`], writes its tables into the output directory and
//! returns a JSON summary for stdout.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{
    bootstrap_epsilon, empirical_tail, hankel_norm_samples, implied_epsilon, lipschitz_bound_at, noise_hankel_norm,
    percentile, sample_complexity, suboptimality_bound, tail_bound_matrix, BoundInputs,
};
use crate::blockops::Vector;
use crate::config::{EpsilonRule, EpsilonSource, ExperimentConfig};
use crate::error::{Error, Result};
use crate::experiments::{compare_controllers, derive_seed, summarize, TrialRecord};
use crate::io::{fmt_f64, write_csv, write_json};
use crate::lqg::optimal_responses;
use crate::lti::{average, gaussian_input, generate_ensemble, simulate_averaged, EnsembleOptions};
use crate::synth::{synthesize, true_cost, DataHankels, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Synth,
    Bounds,
    Mpc,
    Concentration,
    Bootstrap,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Self::Simulate,
        Self::Synth,
        Self::Bounds,
        Self::Mpc,
        Self::Concentration,
        Self::Bootstrap,
    ];
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Simulate => "simulate",
            Self::Synth => "synth",
            Self::Bounds => "bounds",
            Self::Mpc => "mpc",
            Self::Concentration => "concentration",
            Self::Bootstrap => "bootstrap",
        })
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown command {s:?}")))
    }
}

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trials: Option<usize>,
    pub mode: Option<Mode>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
        if let Some(seed) = self.seed {
            cfg.sampling.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(trials) = self.trials {
            cfg.sampling.trials = trials;
        }
        if let Some(mode) = self.mode {
            cfg.synthesis.mode = mode;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// JSON error record written on failure.
pub fn error_record(err: &Error) -> Value {
    json!({ "error": err.kind(), "message": err.to_string() })
}

pub fn run(cmd: Command, cfg: &ExperimentConfig) -> Result<Value> {
    let out = cfg.output_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("config.json"), cfg)?;
    match cmd {
        Command::Simulate => cmd_simulate(cfg, out),
        Command::Synth => cmd_synth(cfg, out),
        Command::Bounds => cmd_bounds(cfg, out),
        Command::Mpc => cmd_mpc(cfg, out),
        Command::Concentration => cmd_concentration(cfg, out),
        Command::Bootstrap => cmd_bootstrap(cfg, out),
    }
}

fn first_size(cfg: &ExperimentConfig) -> usize {
    cfg.sampling.sample_sizes()[0]
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

/// Ensemble of the first configured size under the recorded seed.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let sys = cfg.system()?;
    let ens = generate_ensemble(
        &sys,
        cfg.horizons.data_len,
        first_size(cfg),
        cfg.sampling.seed,
        &EnsembleOptions::default(),
    )?;
    let dir = out.join("ensemble");
    ens.write_dir(&dir, sys.noise_variance())?;
    to_value(&ens.manifest(sys.noise_variance()))
}

/// One synthesis on averaged data. Noiseless mode draws its data from the
/// noise-free plant.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let sys = cfg.system()?;
    let weights = cfg.cost_weights(&sys)?;
    let mode = cfg.synthesis.mode;
    let data_sys = match mode {
        Mode::Noiseless => sys.with_noise_std(0.0)?,
        _ => sys.clone(),
    };
    let horizon = cfg.horizons.horizon;
    let ens = generate_ensemble(
        &data_sys,
        cfg.horizons.data_len,
        first_size(cfg),
        cfg.sampling.seed,
        &EnsembleOptions::default(),
    )?;
    let avg = average(&ens)?;
    let data = DataHankels::from_trajectory(&avg, horizon)?;
    let epsilon = match (mode, cfg.synthesis.eps) {
        (Mode::Robust, EpsilonSource::Value(v)) => Some(v),
        (Mode::Robust, EpsilonSource::Rule(EpsilonRule::True)) => Some(noise_hankel_norm(avg.w(), horizon)?),
        (Mode::Robust, EpsilonSource::Rule(EpsilonRule::Bootstrap)) => {
            let opts = cfg.bootstrap_options(derive_seed(cfg.sampling.seed, 1, 0));
            Some(bootstrap_epsilon(&ens, horizon, &opts)?.epsilon)
        }
        _ => None,
    };
    let deployed = data.without_noise();
    let result = synthesize(&deployed, &weights, mode, epsilon.unwrap_or(0.0), &cfg.synth_options())?;
    result.write_dir(&out.join("synthesis"), &deployed)?;
    let jstar = optimal_responses(&sys, &weights, horizon)?.cost;
    let jhat = true_cost(&result.controller, &sys, &weights)?;
    Ok(json!({
        "summary": to_value(&result.summary(&deployed))?,
        "jstar": jstar,
        "jhat": jhat,
    }))
}

/// Bound table over an ε grid for data of the first configured size.
pub fn cmd_bounds(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let sys = cfg.system()?;
    let weights = cfg.cost_weights(&sys)?;
    let samples = first_size(cfg);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.sampling.seed);
    let u = gaussian_input(sys.input_dim(), cfg.horizons.data_len, &mut rng);
    let traj = simulate_averaged(&sys, &Vector::zeros(sys.state_dim()), &u, samples, &mut rng)?;
    let inputs = BoundInputs::from_model(&sys, &weights, &traj, cfg.horizons.horizon, 0.0)?;
    let eps_max = inputs.eps_max();
    let grid: Vec<f64> = if cfg.analysis.eps_grid.is_empty() {
        (0..=10).map(|k| eps_max * k as f64 / 10.0).collect()
    } else {
        cfg.analysis.eps_grid.clone()
    };
    let params = cfg.tail_params(samples)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &eps in &grid {
        let b = suboptimality_bound(&inputs.with_epsilon(eps));
        rows.push(vec![
            fmt_f64(eps),
            fmt_f64(b.eps_max),
            fmt_f64(b.value),
            b.certified.to_string(),
            fmt_f64(tail_bound_matrix(eps, &params)?),
            fmt_f64(lipschitz_bound_at(eps, &params)?),
        ]);
    }
    write_csv(
        &out.join("bounds.csv"),
        &["epsilon", "eps_max", "bound", "certified", "tail_matrix", "tail_lipschitz"],
        &rows,
    )?;
    let delta = cfg.analysis.delta;
    let summary = json!({
        "inputs": to_value(&inputs)?,
        "eps_max": eps_max,
        "delta": delta,
        "N": samples,
        "implied_epsilon": implied_epsilon(delta, &params)?,
        "sample_complexity": sample_complexity(
            delta,
            inputs.gstar_norm,
            inputs.horizon,
            inputs.toep_norm,
            sys.state_dim(),
            inputs.data_len,
            sys.noise_variance(),
        )?,
    });
    write_json(&out.join("bounds.json"), &summary)?;
    Ok(summary)
}

/// Controller comparison; one CSV per `(controller, N)` plus a summary.
pub fn cmd_mpc(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let setup = cfg.setup()?;
    let records = compare_controllers(&setup, &cfg.sampling.sample_sizes(), cfg.sampling.trials, cfg.sampling.seed)?;
    let summary = summarize(&records);
    for g in &summary {
        let rows: Vec<Vec<String>> = records
            .iter()
            .filter(|r| r.samples == g.samples && r.controller == g.controller)
            .map(TrialRecord::csv_row)
            .collect();
        let name = format!("mpc_{}_N{}.csv", g.controller, g.samples);
        write_csv(&out.join(name), &TrialRecord::CSV_HEADER, &rows)?;
    }
    let value = to_value(&summary)?;
    write_json(&out.join("mpc_summary.json"), &summary)?;
    Ok(value)
}

/// Empirical tail of `‖H_L(w̄)‖₂` against both bounds, per ensemble size.
pub fn cmd_concentration(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let horizon = cfg.horizons.horizon;
    let points = cfg.analysis.tail_points.max(2);
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (k, &samples) in cfg.sampling.sample_sizes().iter().enumerate() {
        let params = cfg.tail_params(samples)?;
        let seed = derive_seed(cfg.sampling.seed, samples as u64, k as u64);
        let norms = hankel_norm_samples(&params, horizon, cfg.sampling.trials, seed)?;
        let lo = norms.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = norms.iter().copied().fold(0.0, f64::max);
        for i in 0..points {
            let t = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            rows.push(vec![
                samples.to_string(),
                fmt_f64(t),
                fmt_f64(empirical_tail(&norms, t)),
                fmt_f64(tail_bound_matrix(t, &params)?),
                fmt_f64(lipschitz_bound_at(t, &params)?),
            ]);
        }
        summary.push(json!({
            "N": samples,
            "trials": norms.len(),
            "median": percentile(&norms, 50.0)?,
            "p95": percentile(&norms, 95.0)?,
            "implied_epsilon": implied_epsilon(cfg.analysis.delta, &params)?,
        }));
    }
    write_csv(
        &out.join("concentration.csv"),
        &["N", "t", "empirical", "tail_matrix", "tail_lipschitz"],
        &rows,
    )?;
    let value = Value::Array(summary);
    write_json(&out.join("concentration.json"), &value)?;
    Ok(value)
}

#[derive(Debug, Clone, Copy, Serialize)]
struct BootstrapRow {
    samples: usize,
    trial: usize,
    estimate: f64,
    actual: f64,
}

/// Bootstrapped ε̂ against the realized `‖H_L(w̄)‖₂`, per ensemble size.
pub fn cmd_bootstrap(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let sys = cfg.system()?;
    let horizon = cfg.horizons.horizon;
    let jobs: Vec<(usize, usize)> = cfg
        .sampling
        .sample_sizes()
        .into_iter()
        .flat_map(|n| (0..cfg.sampling.trials).map(move |t| (n, t)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(samples, trial)| {
            let seed = derive_seed(cfg.sampling.seed, samples as u64, trial as u64);
            let ens = generate_ensemble(&sys, cfg.horizons.data_len, samples, seed, &EnsembleOptions::default())?;
            let actual = noise_hankel_norm(average(&ens)?.w(), horizon)?;
            let est = bootstrap_epsilon(&ens, horizon, &cfg.bootstrap_options(derive_seed(seed, 1, 0)))?;
            Ok(BootstrapRow {
                samples,
                trial,
                estimate: est.epsilon,
                actual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.samples.to_string(),
                r.trial.to_string(),
                fmt_f64(r.estimate),
                fmt_f64(r.actual),
                (r.actual <= r.estimate).to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("bootstrap.csv"),
        &["N", "trial", "estimate", "actual", "covered"],
        &rows,
    )?;
    let mut summary = Vec::new();
    for samples in cfg.sampling.sample_sizes() {
        let group: Vec<&BootstrapRow> = results.iter().filter(|r| r.samples == samples).collect();
        let estimates: Vec<f64> = group.iter().map(|r| r.estimate).collect();
        let actuals: Vec<f64> = group.iter().map(|r| r.actual).collect();
        let covered = group.iter().filter(|r| r.actual <= r.estimate).count();
        summary.push(json!({
            "N": samples,
            "trials": group.len(),
            "coverage": covered as f64 / group.len() as f64,
            "median_estimate": percentile(&estimates, 50.0)?,
            "actual_p95": percentile(&actuals, cfg.bootstrap.percentile)?,
        }));
    }
    let value = Value::Array(summary);
    write_json(&out.join("bootstrap.json"), &value)?;
    Ok(value)
}
