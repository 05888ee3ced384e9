//! JSON experiment configuration. Every section has defaults matching the
//! benchmark experiments, so `{}` is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{BootstrapMode, BootstrapOptions, TailParams};
use crate::blockops::CostWeights;
use crate::error::{Error, Result};
use crate::experiments::ExperimentSetup;
use crate::io::{matrix_from_rows, matrix_to_rows};
use crate::lqg::dare;
use crate::lti::{laplacian_benchmark, LtiSystem};
use crate::synth::{Mode, Structure, SynthOptions};

/// Row-major matrix as nested JSON arrays.
pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub weights: WeightsConfig,
    pub horizons: Horizons,
    pub sampling: Sampling,
    pub synthesis: SynthesisConfig,
    pub bootstrap: BootstrapConfig,
    pub analysis: AnalysisConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            weights: WeightsConfig::default(),
            horizons: Horizons::default(),
            sampling: Sampling::default(),
            synthesis: SynthesisConfig::default(),
            bootstrap: BootstrapConfig::default(),
            analysis: AnalysisConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    pub sigma2: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let sys = laplacian_benchmark();
        Self {
            a: matrix_to_rows(sys.a()),
            b: matrix_to_rows(sys.b()),
            sigma2: sys.noise_variance(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalRule {
    /// `Q_F = P⋆`, the stabilizing DARE solution.
    Dare,
    /// `Q_F = Q`.
    Running,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Terminal {
    Rule(TerminalRule),
    Matrix(Rows),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
    pub terminal: Terminal,
}

fn scaled_identity(n: usize, s: f64) -> Rows {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { s } else { 0.0 }).collect())
        .collect()
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self {
            q: scaled_identity(3, 1e-3),
            r: scaled_identity(3, 1.0),
            terminal: Terminal::Rule(TerminalRule::Dare),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Horizons {
    /// Synthesis horizon.
    #[serde(rename = "L")]
    pub horizon: usize,
    /// Length of each recorded trajectory.
    #[serde(rename = "T")]
    pub data_len: usize,
    /// Closed-loop simulation length.
    #[serde(rename = "H")]
    pub mpc_steps: usize,
}

impl Default for Horizons {
    fn default() -> Self {
        Self {
            horizon: 10,
            data_len: 45,
            mpc_steps: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sampling {
    /// Single ensemble size; ignored when `N_list` is present.
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(rename = "N_list")]
    pub sample_list: Option<Vec<usize>>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            samples: None,
            sample_list: Some(vec![8, 32, 128]),
            trials: 10,
            seed: 0,
        }
    }
}

impl Sampling {
    pub fn sample_sizes(&self) -> Vec<usize> {
        match (&self.sample_list, self.samples) {
            (Some(list), _) => list.clone(),
            (None, Some(n)) => vec![n],
            (None, None) => vec![8],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsilonRule {
    /// Bootstrapped percentile from the ensemble.
    Bootstrap,
    /// `‖H_L(w̄)‖₂` of the recorded averaged noise.
    True,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSource {
    Rule(EpsilonRule),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub mode: Mode,
    pub eps: EpsilonSource,
    pub structure: Structure,
    /// Structure used for the naive controller in the MPC comparison.
    pub naive_structure: Structure,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Robust,
            eps: EpsilonSource::Rule(EpsilonRule::True),
            structure: Structure::BlockDiagonal,
            naive_structure: Structure::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub percentile: f64,
    pub mode: BootstrapMode,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        let d = BootstrapOptions::default();
        Self {
            resamples: d.resamples,
            percentile: d.percentile,
            mode: d.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Failure probability for the sample-size and ε levels.
    pub delta: f64,
    /// ε values tabulated by `bounds`; empty means an automatic grid up to
    /// the precondition.
    pub eps_grid: Vec<f64>,
    /// Number of thresholds in the concentration table.
    pub tail_points: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            eps_grid: Vec::new(),
            tail_points: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.horizons;
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if h.horizon == 0 || h.data_len <= h.horizon {
            return bad(format!("need 1 <= L < T, got L={} T={}", h.horizon, h.data_len));
        }
        if h.mpc_steps == 0 {
            return bad("H must be positive".into());
        }
        if !(self.system.sigma2 >= 0.0) || !self.system.sigma2.is_finite() {
            return bad(format!("sigma2 must be finite and nonnegative, got {}", self.system.sigma2));
        }
        if self.sampling.trials == 0 {
            return bad("trials must be positive".into());
        }
        let sizes = self.sampling.sample_sizes();
        if sizes.is_empty() || sizes.contains(&0) {
            return bad(format!("ensemble sizes must be positive, got {sizes:?}"));
        }
        if let EpsilonSource::Value(v) = self.synthesis.eps {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("eps must be finite and nonnegative, got {v}"));
            }
        }
        if !(self.analysis.delta > 0.0 && self.analysis.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.analysis.delta));
        }
        if !(self.bootstrap.percentile > 0.0 && self.bootstrap.percentile <= 100.0) || self.bootstrap.resamples == 0 {
            return bad("bootstrap needs resamples >= 1 and a percentile in (0, 100]".into());
        }
        Ok(())
    }

    pub fn system(&self) -> Result<LtiSystem> {
        LtiSystem::new(
            matrix_from_rows(&self.system.a)?,
            matrix_from_rows(&self.system.b)?,
            self.system.sigma2.sqrt(),
        )
    }

    pub fn cost_weights(&self, sys: &LtiSystem) -> Result<CostWeights> {
        let q = matrix_from_rows(&self.weights.q)?;
        let r = matrix_from_rows(&self.weights.r)?;
        match &self.weights.terminal {
            Terminal::Rule(TerminalRule::Running) => CostWeights::running(q, r),
            Terminal::Rule(TerminalRule::Dare) => {
                let p = dare(sys, &q, &r)?;
                CostWeights::new(q, r, p)
            }
            Terminal::Matrix(rows) => CostWeights::new(q, r, matrix_from_rows(rows)?),
        }
    }

    pub fn bootstrap_options(&self, seed: u64) -> BootstrapOptions {
        BootstrapOptions {
            resamples: self.bootstrap.resamples,
            percentile: self.bootstrap.percentile,
            mode: self.bootstrap.mode,
            seed,
        }
    }

    pub fn synth_options(&self) -> SynthOptions {
        SynthOptions {
            structure: self.synthesis.structure,
            ..SynthOptions::default()
        }
    }

    pub fn tail_params(&self, samples: usize) -> Result<TailParams> {
        Ok(TailParams {
            n: self.system()?.state_dim(),
            data_len: self.horizons.data_len,
            samples,
            sigma2: self.system.sigma2,
        })
    }

    pub fn setup(&self) -> Result<ExperimentSetup> {
        let plant = self.system()?;
        let weights = self.cost_weights(&plant)?;
        Ok(ExperimentSetup {
            plant,
            weights,
            horizon: self.horizons.horizon,
            data_len: self.horizons.data_len,
            mpc_steps: self.horizons.mpc_steps,
            synth: self.synth_options(),
            naive_structure: self.synthesis.naive_structure,
            bootstrap: self.bootstrap_options(self.sampling.seed),
        })
    }
}
