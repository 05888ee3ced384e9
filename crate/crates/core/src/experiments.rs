//! Receding-horizon evaluation of synthesized controllers and the
//! comparison protocol: the optimal controller `K⋆`, robust controllers
//! with a bootstrapped (`K_B`) and a true (`K_T`) noise level, and the
//! naive controller (`K_N`) that ignores the noise.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{bootstrap_epsilon, noise_hankel_norm, suboptimality_bound, BootstrapOptions, BoundInputs, SuboptimalityBound};
use crate::blockops::{CostWeights, LtvOperator, Vector};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::lqg::optimal_responses;
use crate::lti::{average, gaussian_input, gaussian_matrix, generate_ensemble, simulate_averaged, EnsembleOptions, LtiSystem};
use crate::synth::{synth_naive, synth_robust, true_cost, DataHankels, Structure, SynthOptions};

/// State norm beyond which a run is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Deterministic per-trial seed derived from a base seed and two indices
/// (SplitMix64 finalizer over the mixed words).
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub steps: usize,
    pub plant: LtiSystem,
    pub weights: CostWeights,
    pub controller: LtvOperator,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunStats {
    /// `Σ x'Qx + u'Ru` over the run; infinite on divergence.
    pub cost: f64,
    /// `‖x_{[0,H-1]}‖₂`; infinite on divergence.
    pub state_norm: f64,
    /// `‖u_{[0,H-1]}‖₂`; infinite on divergence.
    pub input_norm: f64,
    pub diverged: bool,
}

impl RunStats {
    /// Record for a controller that could not be synthesized.
    pub fn infeasible() -> Self {
        Self {
            cost: f64::INFINITY,
            state_norm: f64::INFINITY,
            input_norm: f64::INFINITY,
            diverged: false,
        }
    }
}

/// Runs the plant from `x(0) = 0` for `steps` steps, applying the first
/// gain of the finite-horizon controller at every step, with fresh
/// `w(t) ~ N(0, σ² I)`.
pub fn mpc_run(cfg: &MpcConfig) -> Result<RunStats> {
    if cfg.steps == 0 {
        return Err(Error::InvalidArgument("MPC horizon must be at least 1".into()));
    }
    let (n, m) = (cfg.plant.state_dim(), cfg.plant.input_dim());
    let k = &cfg.controller;
    if k.block_rows() != m || k.block_cols() != n {
        return Err(Error::Dimension(format!(
            "controller blocks are {}x{}, plant needs {m}x{n}",
            k.block_rows(),
            k.block_cols()
        )));
    }
    if cfg.weights.state_dim() != n || cfg.weights.input_dim() != m {
        return Err(Error::Dimension("cost weights and plant disagree".into()));
    }
    let gain = k.block(0, 0);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let noise = gaussian_matrix(&mut rng, n, cfg.steps, cfg.plant.noise_std());
    let (q, r) = (cfg.weights.q(), cfg.weights.r());
    let mut x = Vector::zeros(n);
    let (mut cost, mut xs, mut us) = (0.0, 0.0, 0.0);
    for t in 0..cfg.steps {
        let u = &gain * &x;
        cost += x.dot(&(q * &x)) + u.dot(&(r * &u));
        xs += x.norm_squared();
        us += u.norm_squared();
        x = cfg.plant.a() * &x + cfg.plant.b() * &u + noise.column(t);
        if !(x.norm() <= DIVERGENCE_THRESHOLD) {
            return Ok(RunStats {
                cost: f64::INFINITY,
                state_norm: f64::INFINITY,
                input_norm: f64::INFINITY,
                diverged: true,
            });
        }
    }
    Ok(RunStats {
        cost,
        state_norm: xs.sqrt(),
        input_norm: us.sqrt(),
        diverged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ControllerKind {
    #[serde(rename = "optimal")]
    Optimal,
    #[serde(rename = "bootstrap")]
    Bootstrap,
    #[serde(rename = "true")]
    TrueEpsilon,
    #[serde(rename = "naive")]
    Naive,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [Self::Optimal, Self::Bootstrap, Self::TrueEpsilon, Self::Naive];
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Optimal => "optimal",
            Self::Bootstrap => "bootstrap",
            Self::TrueEpsilon => "true",
            Self::Naive => "naive",
        })
    }
}

/// Settings shared by the comparison and the pipeline runs.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub plant: LtiSystem,
    pub weights: CostWeights,
    pub horizon: usize,
    pub data_len: usize,
    pub mpc_steps: usize,
    /// Options for the robust controllers.
    pub synth: SynthOptions,
    /// Parameter structure of the naive controller; the experiments leave
    /// it unrestricted ([`Structure::Full`]).
    pub naive_structure: Structure,
    pub bootstrap: BootstrapOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub samples: usize,
    pub trial: usize,
    pub controller: ControllerKind,
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    /// Synthesis error kind, when synthesis failed.
    pub failure: Option<String>,
    pub stats: RunStats,
    /// Unsquared batch cost of the controller on the true plant.
    pub jhat: f64,
    pub jstar: f64,
    pub bound: Option<SuboptimalityBound>,
}

impl TrialRecord {
    pub fn relative_gap(&self) -> f64 {
        (self.jhat - self.jstar) / self.jstar
    }

    pub const CSV_HEADER: [&'static str; 14] = [
        "N",
        "trial",
        "controller",
        "epsilon",
        "gamma",
        "failure",
        "cost",
        "state_norm",
        "input_norm",
        "diverged",
        "jhat",
        "jstar",
        "bound",
        "certified",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        vec![
            self.samples.to_string(),
            self.trial.to_string(),
            self.controller.to_string(),
            opt(self.epsilon),
            opt(self.gamma),
            self.failure.clone().unwrap_or_default(),
            fmt_f64(self.stats.cost),
            fmt_f64(self.stats.state_norm),
            fmt_f64(self.stats.input_norm),
            self.stats.diverged.to_string(),
            fmt_f64(self.jhat),
            fmt_f64(self.jstar),
            opt(self.bound.map(|b| b.value)),
            self.bound.map(|b| b.certified.to_string()).unwrap_or_default(),
        ]
    }
}

/// One comparison trial at ensemble size `samples`: build the averaged
/// data, synthesize the three data-driven controllers and run every
/// controller in closed loop under the same noise.
pub fn comparison_trial(setup: &ExperimentSetup, samples: usize, trial: usize, seed: u64) -> Result<Vec<TrialRecord>> {
    let trial_seed = derive_seed(seed, samples as u64, trial as u64);
    let ens = generate_ensemble(&setup.plant, setup.data_len, samples, trial_seed, &EnsembleOptions::default())?;
    let avg = average(&ens)?;
    let data = DataHankels::from_trajectory(&avg, setup.horizon)?;
    let deployed = data.without_noise();
    let optimal = optimal_responses(&setup.plant, &setup.weights, setup.horizon)?;
    let jstar = optimal.cost;
    let eps_true = noise_hankel_norm(avg.w(), setup.horizon)?;
    let eps_boot = if samples >= 2 {
        let opts = BootstrapOptions {
            seed: derive_seed(trial_seed, 1, 0),
            ..setup.bootstrap
        };
        Some(bootstrap_epsilon(&ens, setup.horizon, &opts)?.epsilon)
    } else {
        None
    };
    let mpc_seed = derive_seed(trial_seed, 2, 0);
    let naive_opts = SynthOptions {
        structure: setup.naive_structure,
        ..setup.synth
    };

    let mut out = Vec::with_capacity(4);
    for kind in ControllerKind::ALL {
        let (epsilon, synthesized) = match kind {
            ControllerKind::Optimal => (None, Ok((optimal.controller.clone(), None))),
            ControllerKind::Naive => (
                None,
                synth_naive(&deployed, &setup.weights, &naive_opts).map(|r| (r.controller, None)),
            ),
            ControllerKind::Bootstrap => match eps_boot {
                Some(eps) => (
                    Some(eps),
                    synth_robust(&deployed, &setup.weights, eps, &setup.synth).map(|r| (r.controller, r.gamma)),
                ),
                None => (
                    None,
                    Err(Error::InvalidArgument("bootstrap needs at least 2 trajectories".into())),
                ),
            },
            ControllerKind::TrueEpsilon => (
                Some(eps_true),
                synth_robust(&deployed, &setup.weights, eps_true, &setup.synth).map(|r| (r.controller, r.gamma)),
            ),
        };
        let record = match synthesized {
            Ok((controller, gamma)) => {
                let stats = mpc_run(&MpcConfig {
                    steps: setup.mpc_steps,
                    plant: setup.plant.clone(),
                    weights: setup.weights.clone(),
                    controller: controller.clone(),
                    seed: mpc_seed,
                })?;
                let jhat = true_cost(&controller, &setup.plant, &setup.weights).unwrap_or(f64::INFINITY);
                let bound = if kind == ControllerKind::TrueEpsilon {
                    let inputs = BoundInputs::from_model(&setup.plant, &setup.weights, &avg, setup.horizon, eps_true)?;
                    Some(suboptimality_bound(&inputs))
                } else {
                    None
                };
                TrialRecord {
                    samples,
                    trial,
                    controller: kind,
                    epsilon,
                    gamma,
                    failure: None,
                    stats,
                    jhat,
                    jstar,
                    bound,
                }
            }
            Err(e) => {
                log::info!("N={samples} trial {trial}: {kind} synthesis failed: {e}");
                TrialRecord {
                    samples,
                    trial,
                    controller: kind,
                    epsilon,
                    gamma: None,
                    failure: Some(e.kind().to_string()),
                    stats: RunStats::infeasible(),
                    jhat: f64::INFINITY,
                    jstar,
                    bound: None,
                }
            }
        };
        out.push(record);
    }
    Ok(out)
}

/// Every trial for every ensemble size, run concurrently.
pub fn compare_controllers(
    setup: &ExperimentSetup,
    sample_sizes: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<TrialRecord>> {
    let jobs: Vec<(usize, usize)> = sample_sizes
        .iter()
        .flat_map(|&n| (0..trials).map(move |t| (n, t)))
        .collect();
    let nested = jobs
        .par_iter()
        .map(|&(n, t)| comparison_trial(setup, n, t, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(nested.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Linear-interpolated quartiles; infinite values sort last.
pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        if lo == hi || v[lo] == v[hi] {
            v[lo]
        } else {
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        }
    };
    Some(Quartiles {
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub samples: usize,
    pub controller: ControllerKind,
    pub trials: usize,
    pub failures: usize,
    pub diverged: usize,
    pub cost: Option<Quartiles>,
    pub state_norm: Option<Quartiles>,
    pub input_norm: Option<Quartiles>,
}

impl GroupSummary {
    pub fn divergence_fraction(&self) -> f64 {
        self.diverged as f64 / self.trials.max(1) as f64
    }
}

/// Medians and quartiles per `(N, controller)`, in the order of first
/// appearance.
pub fn summarize(records: &[TrialRecord]) -> Vec<GroupSummary> {
    let mut keys: Vec<(usize, ControllerKind)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.samples, r.controller)) {
            keys.push((r.samples, r.controller));
        }
    }
    keys.into_iter()
        .map(|(samples, controller)| {
            let group: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.samples == samples && r.controller == controller)
                .collect();
            let col = |f: fn(&RunStats) -> f64| quartiles(&group.iter().map(|r| f(&r.stats)).collect::<Vec<_>>());
            GroupSummary {
                samples,
                controller,
                trials: group.len(),
                failures: group.iter().filter(|r| r.failure.is_some()).count(),
                diverged: group.iter().filter(|r| r.stats.diverged).count(),
                cost: col(|s| s.cost),
                state_norm: col(|s| s.state_norm),
                input_norm: col(|s| s.input_norm),
            }
        })
        .collect()
}

/// Outcome of one synthesis-and-evaluate run with the true noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineRecord {
    pub seed: u64,
    pub epsilon: f64,
    pub gamma: f64,
    /// Robust objective `f(γ)/(1-γ)`.
    pub objective: f64,
    pub jhat: f64,
    pub jstar: f64,
    pub bound: SuboptimalityBound,
}

impl PipelineRecord {
    pub fn relative_gap(&self) -> f64 {
        (self.jhat - self.jstar) / self.jstar
    }
}

/// Draws averaged data for `samples` trajectories directly (fresh Gaussian
/// input, `x(0) = 0`), synthesizes the robust controller with
/// `ε = ‖H_L(w̄)‖₂`, and evaluates it against the bound.
pub fn pipeline_run(setup: &ExperimentSetup, samples: usize, seed: u64) -> Result<PipelineRecord> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let u = gaussian_input(setup.plant.input_dim(), setup.data_len, &mut rng);
    let x0 = Vector::zeros(setup.plant.state_dim());
    let traj = simulate_averaged(&setup.plant, &x0, &u, samples, &mut rng)?;
    let data = DataHankels::from_trajectory(&traj, setup.horizon)?;
    let epsilon = noise_hankel_norm(traj.w(), setup.horizon)?;
    let res = synth_robust(&data.without_noise(), &setup.weights, epsilon, &setup.synth)?;
    let jhat = true_cost(&res.controller, &setup.plant, &setup.weights)?;
    let inputs = BoundInputs::from_model(&setup.plant, &setup.weights, &traj, setup.horizon, epsilon)?;
    Ok(PipelineRecord {
        seed,
        epsilon,
        gamma: res.gamma.unwrap_or(0.0),
        objective: res.objective,
        jhat,
        jstar: inputs.jstar,
        bound: suboptimality_bound(&inputs),
    })
}
