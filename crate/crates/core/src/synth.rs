//! Controller synthesis from trajectory data.
//!
//! The decision variable `Ĝ` is an `L x L` block matrix with `W x n` blocks
//! (`W = T - L + 1` data columns). Responses are read off as
//! `Φ_x = [H_x, Z H_x, ..., Z^{L-1} H_x] Ĝ` and likewise for `Φ_u`, where
//! `H_x`, `H_u` are the order-`L` Hankel matrices of the state and input
//! records. Causality and the identity diagonal of `Φ_x` are enforced by
//! `Ĝ(i, j) = 0` for `i < j` and `H_1(x) Ĝ(i, j) = δ_ij I`.
//!
//! With block-diagonal structure every block column is an independent
//! problem; with full structure the lower triangle of `Ĝ` is free.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::blockops::{block_diag, hstack, max_abs, shift_down, spectral_norm, vstack, CostWeights, LtvOperator, Mat};
use crate::error::{Error, Result};
use crate::hankel::{build_hankel, forward_noise_hankel, stacked_rank_of, HankelMatrix};
use crate::io::{fmt_f64, write_csv, write_json, write_matrix_csv};
use crate::lti::{LtiSystem, Trajectory};
use crate::sls::{recover_controller, responses_from_controller, sls_cost, Perturbation, SystemResponsePair};
use crate::solver::{
    eq_ls, gamma_search, AffineConstraintSet, AffineGroup, GammaEvaluation, InnerProblem, PreparedProblem, SearchOptions,
    SolveReport, SolveStatus,
};

/// Block-structure tolerance on `Ĝ`.
pub const STRUCTURE_TOL: f64 = 1e-6;

/// Hankel matrices of one (possibly averaged) trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DataHankels {
    hx: HankelMatrix,
    hu: HankelMatrix,
    h1x: Mat,
    hw: Option<HankelMatrix>,
}

impl DataHankels {
    pub fn new(hx: HankelMatrix, hu: HankelMatrix, hw: Option<HankelMatrix>) -> Result<Self> {
        if hx.order() != hu.order() || hx.width() != hu.width() {
            return Err(Error::Dimension(format!(
                "state Hankel is order {} with {} columns, input Hankel is order {} with {} columns",
                hx.order(),
                hx.width(),
                hu.order(),
                hu.width()
            )));
        }
        if let Some(w) = &hw {
            if w.order() != hx.order() || w.width() != hx.width() || w.block() != hx.block() {
                return Err(Error::Dimension("noise Hankel does not match the state Hankel".into()));
            }
        }
        let h1x = hx.top_block();
        Ok(Self { hx, hu, h1x, hw })
    }

    /// Builds all matrices of order `horizon`, including the recorded noise.
    pub fn from_trajectory(traj: &Trajectory, horizon: usize) -> Result<Self> {
        let hx = build_hankel(traj.x(), horizon)?;
        let hu = build_hankel(traj.u(), horizon)?;
        let hw = forward_noise_hankel(traj.w(), horizon)?;
        Self::new(hx, hu, Some(hw))
    }

    /// Same data with the noise record dropped, as at deployment.
    pub fn without_noise(&self) -> Self {
        Self { hw: None, ..self.clone() }
    }

    pub fn hx(&self) -> &HankelMatrix {
        &self.hx
    }

    pub fn hu(&self) -> &HankelMatrix {
        &self.hu
    }

    pub fn h1x(&self) -> &Mat {
        &self.h1x
    }

    pub fn hw(&self) -> Option<&HankelMatrix> {
        self.hw.as_ref()
    }

    pub fn horizon(&self) -> usize {
        self.hx.order()
    }

    pub fn width(&self) -> usize {
        self.hx.width()
    }

    pub fn state_dim(&self) -> usize {
        self.hx.block()
    }

    pub fn input_dim(&self) -> usize {
        self.hu.block()
    }

    /// Errors unless `[H_1(x); H_L(u)]` has full row rank.
    pub fn require_rank(&self) -> Result<()> {
        let r = stacked_rank_of(&self.hx, &self.hu)?;
        if r.full {
            Ok(())
        } else {
            Err(Error::NotPersistentlyExciting(format!(
                "stacked data rank {} < n + mL = {}",
                r.rank, r.required
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Structure {
    #[default]
    #[serde(rename = "blockdiag")]
    BlockDiagonal,
    #[serde(rename = "full")]
    Full,
}

impl FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blockdiag" | "blockdiagonal" | "block-diagonal" => Ok(Self::BlockDiagonal),
            "full" => Ok(Self::Full),
            _ => Err(Error::InvalidArgument(format!("unknown structure {s:?}"))),
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::BlockDiagonal => "blockdiag",
            Self::Full => "full",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Noiseless,
    Robust,
    Naive,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noiseless" => Ok(Self::Noiseless),
            "robust" => Ok(Self::Robust),
            "naive" => Ok(Self::Naive),
            _ => Err(Error::InvalidArgument(format!("unknown synthesis mode {s:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Noiseless => "noiseless",
            Self::Robust => "robust",
            Self::Naive => "naive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SynthOptions {
    pub structure: Structure,
    pub search: SearchOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Timings {
    pub build_s: f64,
    pub solve_s: f64,
    pub assemble_s: f64,
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub mode: Mode,
    pub structure: Structure,
    pub epsilon: Option<f64>,
    /// Full `LW x Ln` parameter matrix.
    pub ghat: Mat,
    /// `None` unless the robust program was solved.
    pub gamma: Option<f64>,
    pub responses: SystemResponsePair,
    pub controller: LtvOperator,
    /// `f(γ)/(1-γ)` for the robust program, `f` otherwise.
    pub objective: f64,
    pub inner_objective: f64,
    pub reports: Vec<SolveReport>,
    pub evaluations: Vec<GammaEvaluation>,
    pub timings: Timings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residuals {
    pub structure: f64,
    pub primal: f64,
    pub dual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// JSON record of a synthesis run.
#[derive(Debug, Clone, Serialize)]
pub struct SynthesisSummary {
    pub mode: Mode,
    pub structure: Structure,
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    pub objective: f64,
    pub inner_objective: f64,
    pub ghat_norm: f64,
    pub residuals: Residuals,
    pub timings: Timings,
}

impl SynthesisResult {
    pub fn ghat_norm(&self) -> f64 {
        spectral_norm(&self.ghat)
    }

    pub fn horizon(&self) -> usize {
        self.responses.horizon()
    }

    pub fn status(&self) -> SolveStatus {
        if self.reports.iter().any(|r| r.status == SolveStatus::MaxIter) {
            SolveStatus::MaxIter
        } else {
            SolveStatus::Optimal
        }
    }

    pub fn summary(&self, data: &DataHankels) -> SynthesisSummary {
        let last = |v: &Vec<f64>| v.last().copied().unwrap_or(0.0);
        SynthesisSummary {
            mode: self.mode,
            structure: self.structure,
            epsilon: self.epsilon,
            gamma: self.gamma,
            objective: self.objective,
            inner_objective: self.inner_objective,
            ghat_norm: self.ghat_norm(),
            residuals: Residuals {
                structure: structure_residual(data, &self.ghat).unwrap_or(f64::INFINITY),
                primal: self.reports.iter().map(|r| last(&r.primal_residuals)).fold(0.0, f64::max),
                dual: self.reports.iter().map(|r| last(&r.dual_residuals)).fold(0.0, f64::max),
                iterations: self.reports.iter().map(|r| r.iterations).sum::<usize>()
                    + self.evaluations.iter().map(|e| e.iterations).sum::<usize>(),
                status: self.status(),
            },
            timings: self.timings,
        }
    }

    /// Writes `synthesis.json`, `ghat.csv`, `phi_x.csv`, `phi_u.csv`,
    /// `controller.csv` and, for robust runs, `gamma_search.csv`.
    pub fn write_dir(&self, dir: &Path, data: &DataHankels) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("synthesis.json"), &self.summary(data))?;
        write_matrix_csv(&dir.join("ghat.csv"), &self.ghat)?;
        write_matrix_csv(&dir.join("phi_x.csv"), self.responses.phi_x().dense())?;
        write_matrix_csv(&dir.join("phi_u.csv"), self.responses.phi_u().dense())?;
        write_matrix_csv(&dir.join("controller.csv"), self.controller.dense())?;
        if !self.evaluations.is_empty() {
            let rows: Vec<Vec<String>> = self
                .evaluations
                .iter()
                .map(|e| {
                    vec![
                        fmt_f64(e.gamma),
                        fmt_f64(e.inner),
                        fmt_f64(e.objective),
                        e.iterations.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &dir.join("gamma_search.csv"),
                &["gamma", "inner", "objective", "iterations"],
                &rows,
            )?;
        }
        Ok(())
    }
}

/// `[H, Z H, ..., Z^{L-1} H]` for an order-`L` Hankel matrix; `offset`
/// adds `offset` extra shifts to every block.
fn shift_stack(h: &HankelMatrix, offset: usize) -> Mat {
    let parts: Vec<Mat> = (0..h.order())
        .map(|i| shift_down(h.dense(), i + offset, h.block()))
        .collect();
    let refs: Vec<&Mat> = parts.iter().collect();
    hstack(&refs)
}

fn check_weights(data: &DataHankels, weights: &CostWeights) -> Result<()> {
    if weights.state_dim() != data.state_dim() || weights.input_dim() != data.input_dim() {
        return Err(Error::Dimension("cost weights and data dimensions disagree".into()));
    }
    Ok(())
}

/// Inner problems of the synthesis program: one per block column in
/// block-diagonal mode, a single `L`-group problem in full mode.
pub fn build_problems(data: &DataHankels, weights: &CostWeights, structure: Structure) -> Result<Vec<InnerProblem>> {
    check_weights(data, weights)?;
    let (l, n, w) = (data.horizon(), data.state_dim(), data.width());
    let sqrt_w = weights.lifted_sqrt(l);
    let identity = Mat::identity(n, n);
    match structure {
        Structure::BlockDiagonal => (0..l)
            .map(|j| {
                let x = shift_down(data.hx.dense(), j, n);
                let u = shift_down(data.hu.dense(), j, data.input_dim());
                let cost = &sqrt_w * vstack(&[&x, &u]);
                let group = AffineGroup {
                    lhs: data.h1x.clone(),
                    rhs: identity.clone(),
                };
                InnerProblem::new(vec![cost], AffineConstraintSet::new(w, vec![group])?, None)
            })
            .collect(),
        Structure::Full => {
            let cost = &sqrt_w * vstack(&[&shift_stack(&data.hx, 0), &shift_stack(&data.hu, 0)]);
            let groups = (0..l)
                .map(|j| {
                    let rows = j * w + (l - j) * n;
                    let mut lhs = Mat::zeros(rows, l * w);
                    let mut rhs = Mat::zeros(rows, n);
                    for i in 0..j {
                        lhs.view_mut((i * w, i * w), (w, w)).fill_with_identity();
                    }
                    for i in j..l {
                        let r = j * w + (i - j) * n;
                        lhs.view_mut((r, i * w), (n, w)).copy_from(&data.h1x);
                        if i == j {
                            rhs.view_mut((r, 0), (n, n)).copy_from(&identity);
                        }
                    }
                    AffineGroup { lhs, rhs }
                })
                .collect();
            let constraints = AffineConstraintSet::new(l * w, groups)?;
            Ok(vec![InnerProblem::new(vec![cost; l], constraints, None)?])
        }
    }
}

fn assemble_ghat(data: &DataHankels, structure: Structure, solutions: &[&Mat]) -> Mat {
    match structure {
        Structure::BlockDiagonal => {
            let blocks: Vec<Mat> = solutions.iter().map(|s| (*s).clone()).collect();
            block_diag(&blocks)
        }
        Structure::Full => {
            debug_assert_eq!(solutions.len(), 1);
            let mut g = solutions[0].clone();
            zero_upper(&mut g, data.width(), data.state_dim());
            g
        }
    }
}

fn zero_upper(g: &mut Mat, w: usize, n: usize) {
    let l = g.ncols() / n;
    for j in 0..l {
        for i in 0..j {
            g.view_mut((i * w, j * n), (w, n)).fill(0.0);
        }
    }
}

fn check_ghat_shape(data: &DataHankels, ghat: &Mat) -> Result<()> {
    let (l, n, w) = (data.horizon(), data.state_dim(), data.width());
    if ghat.shape() != (l * w, l * n) {
        return Err(Error::Dimension(format!(
            "parameter must be {}x{}, got {}x{}",
            l * w,
            l * n,
            ghat.nrows(),
            ghat.ncols()
        )));
    }
    Ok(())
}

/// Largest violation of the block structure: entries of `Ĝ(i, j)` for
/// `i < j` and of `H_1(x) Ĝ(i, j) - δ_ij I` for `i ≥ j`.
pub fn structure_residual(data: &DataHankels, ghat: &Mat) -> Result<f64> {
    check_ghat_shape(data, ghat)?;
    let (l, n, w) = (data.horizon(), data.state_dim(), data.width());
    let mut worst = 0.0_f64;
    for j in 0..l {
        for i in 0..l {
            let block = ghat.view((i * w, j * n), (w, n));
            let r = if i < j {
                max_abs(&block.into_owned())
            } else {
                let mut top = &data.h1x * block;
                if i == j {
                    top -= Mat::identity(n, n);
                }
                max_abs(&top)
            };
            worst = worst.max(r);
        }
    }
    Ok(worst)
}

/// `Φ̂_x = [H_x, ..., Z^{L-1} H_x] Ĝ` and `Φ̂_u` likewise.
pub fn assemble_responses(data: &DataHankels, ghat: &Mat) -> Result<SystemResponsePair> {
    let resid = structure_residual(data, ghat)?;
    if !(resid <= STRUCTURE_TOL) {
        return Err(Error::Structure(format!(
            "parameter violates the block structure by {resid:e}"
        )));
    }
    let (l, n, m) = (data.horizon(), data.state_dim(), data.input_dim());
    let mut g = ghat.clone();
    zero_upper(&mut g, data.width(), n);
    let phi_x = shift_stack(&data.hx, 0) * &g;
    let phi_u = shift_stack(&data.hu, 0) * &g;
    SystemResponsePair::new(
        LtvOperator::causal(l, n, n, phi_x)?,
        LtvOperator::causal(l, m, n, phi_u)?,
    )
}

/// `Δ = [Z H_w, Z² H_w, ..., Z^L H_w] Ĝ`, the achievability defect of the
/// assembled responses in terms of the recorded noise.
pub fn assemble_delta(hw: &HankelMatrix, ghat: &Mat) -> Result<Perturbation> {
    let (l, n, w) = (hw.order(), hw.block(), hw.width());
    if ghat.shape() != (l * w, l * n) {
        return Err(Error::Dimension(format!(
            "parameter must be {}x{}, got {}x{}",
            l * w,
            l * n,
            ghat.nrows(),
            ghat.ncols()
        )));
    }
    let mut g = ghat.clone();
    zero_upper(&mut g, w, n);
    let delta = shift_stack(hw, 1) * g;
    Perturbation::new(LtvOperator::strictly_causal(l, n, n, delta)?)
}

/// Solver output before assembly.
struct Solved {
    epsilon: Option<f64>,
    gamma: Option<f64>,
    objective: f64,
    inner_objective: f64,
    reports: Vec<SolveReport>,
    evaluations: Vec<GammaEvaluation>,
}

fn finish(data: &DataHankels, mode: Mode, structure: Structure, solved: Solved, mut timings: Timings) -> Result<SynthesisResult> {
    let start = Instant::now();
    let solutions: Vec<&Mat> = solved.reports.iter().map(|r| &r.solution).collect();
    let ghat = assemble_ghat(data, structure, &solutions);
    let responses = assemble_responses(data, &ghat)?;
    let controller = recover_controller(&responses)?;
    timings.assemble_s = start.elapsed().as_secs_f64();
    Ok(SynthesisResult {
        mode,
        structure,
        epsilon: solved.epsilon,
        ghat,
        gamma: solved.gamma,
        responses,
        controller,
        objective: solved.objective,
        inner_objective: solved.inner_objective,
        reports: solved.reports,
        evaluations: solved.evaluations,
        timings,
    })
}

fn least_squares(data: &DataHankels, weights: &CostWeights, opts: &SynthOptions, mode: Mode) -> Result<SynthesisResult> {
    data.require_rank()?;
    let start = Instant::now();
    let problems = build_problems(data, weights, opts.structure)?;
    let build_s = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let reports = problems.iter().map(eq_ls).collect::<Result<Vec<_>>>()?;
    if let Some(r) = reports.iter().find(|r| r.status == SolveStatus::Infeasible) {
        return Err(Error::Infeasible(format!(
            "data cannot meet the structural constraints (objective {})",
            r.objective
        )));
    }
    let solve_s = start.elapsed().as_secs_f64();
    let f = reports.iter().map(|r| r.objective.powi(2)).sum::<f64>().sqrt();
    let timings = Timings {
        build_s,
        solve_s,
        assemble_s: 0.0,
    };
    let solved = Solved {
        epsilon: None,
        gamma: None,
        objective: f,
        inner_objective: f,
        reports,
        evaluations: Vec::new(),
    };
    finish(data, mode, opts.structure, solved, timings)
}

/// Exact synthesis from noiseless data: the least-squares program over all
/// data-parameterized responses. The objective equals the optimal
/// unsquared LQ cost when the data are noiseless and rich enough.
pub fn synth_noiseless(data: &DataHankels, weights: &CostWeights, opts: &SynthOptions) -> Result<SynthesisResult> {
    least_squares(data, weights, opts, Mode::Noiseless)
}

/// The noiseless program applied to noisy data, ignoring the noise.
pub fn synth_naive(data: &DataHankels, weights: &CostWeights, opts: &SynthOptions) -> Result<SynthesisResult> {
    least_squares(data, weights, opts, Mode::Naive)
}

/// Robust synthesis for noise Hankel norm at most `epsilon`.
pub fn synth_robust(
    data: &DataHankels,
    weights: &CostWeights,
    epsilon: f64,
    opts: &SynthOptions,
) -> Result<SynthesisResult> {
    data.require_rank()?;
    let start = Instant::now();
    let problems = build_problems(data, weights, opts.structure)?
        .iter()
        .map(PreparedProblem::new)
        .collect::<Result<Vec<_>>>()?;
    let build_s = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let search = gamma_search(&problems, epsilon, data.horizon(), &opts.search)?;
    let solve_s = start.elapsed().as_secs_f64();
    let timings = Timings {
        build_s,
        solve_s,
        assemble_s: 0.0,
    };
    let solved = Solved {
        epsilon: Some(epsilon),
        gamma: Some(search.gamma),
        objective: search.objective,
        inner_objective: search.inner_objective,
        reports: search.reports,
        evaluations: search.evaluations,
    };
    finish(data, Mode::Robust, opts.structure, solved, timings)
}

/// Dispatches on `mode`; `epsilon` is only read in robust mode.
pub fn synthesize(
    data: &DataHankels,
    weights: &CostWeights,
    mode: Mode,
    epsilon: f64,
    opts: &SynthOptions,
) -> Result<SynthesisResult> {
    match mode {
        Mode::Noiseless => synth_noiseless(data, weights, opts),
        Mode::Naive => synth_naive(data, weights, opts),
        Mode::Robust => synth_robust(data, weights, epsilon, opts),
    }
}

/// Unsquared cost of the synthesized controller in closed loop with the
/// true plant. Uses the model; for verification only.
pub fn true_cost(controller: &LtvOperator, sys: &LtiSystem, weights: &CostWeights) -> Result<f64> {
    let phi = responses_from_controller(sys, controller, controller.horizon())?;
    sls_cost(&phi, weights)
}
