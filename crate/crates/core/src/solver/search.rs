//! Outer search of the robust program over `γ ∈ [0, 1)`.
//!
//! For a noise level `ε` and horizon `L`, `f(γ)` is the inner optimal value
//! with spectral bound `τ = γ / (√L ε)` and the search minimizes
//! `h(γ) = f(γ) / (1 - γ)`. Several independent problems may share the
//! bound (one per block column in block-diagonal synthesis); their values
//! combine as `f² = Σ f_j²`.
//!
//! `f` is nonincreasing, so `h` is a nonincreasing factor times an
//! increasing one and need not be unimodal in general. The search scans a
//! uniform grid over the feasible range and refines by golden section
//! around the best grid point. Scanning uses a looser ADMM tolerance; the
//! selected point is re-solved at full tolerance from its warm state.

use rayon::prelude::*;
use serde::Serialize;

use super::admm::AdmmOptions;
use super::{PreparedProblem, SolveReport, SolveStatus, WarmStart};
use crate::blockops::{spectral_norm, Mat};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub grid_points: usize,
    pub refine_iters: usize,
    /// Golden-section stops once the bracket is narrower than this fraction
    /// of its upper end.
    pub refine_tol: f64,
    /// ADMM tolerance while scanning; the selected `γ` is re-solved at
    /// `admm.tol`.
    pub search_tol: f64,
    pub admm: AdmmOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            grid_points: 16,
            refine_iters: 40,
            refine_tol: 1e-4,
            search_tol: 1e-5,
            admm: AdmmOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaEvaluation {
    pub gamma: f64,
    /// Inner optimal value `f(γ)`; infinite when infeasible.
    pub inner: f64,
    /// `f(γ) / (1 - γ)`.
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub gamma: f64,
    pub objective: f64,
    pub inner_objective: f64,
    /// One report per problem at the selected `γ`.
    pub reports: Vec<SolveReport>,
    /// Every evaluated point, in evaluation order.
    pub evaluations: Vec<GammaEvaluation>,
}

impl SearchResult {
    pub fn solutions(&self) -> Vec<&Mat> {
        self.reports.iter().map(|r| &r.solution).collect()
    }

    pub fn total_iterations(&self) -> usize {
        self.evaluations.iter().map(|e| e.iterations).sum()
    }

    pub fn status(&self) -> SolveStatus {
        if self.reports.iter().any(|r| r.status == SolveStatus::MaxIter) {
            SolveStatus::MaxIter
        } else {
            SolveStatus::Optimal
        }
    }
}

struct Evaluator<'a> {
    problems: &'a [PreparedProblem],
    scale: f64,
    opts: &'a SearchOptions,
    warm: Vec<Option<WarmStart>>,
    evaluations: Vec<GammaEvaluation>,
    best: Option<Best>,
}

struct Best {
    gamma: f64,
    objective: f64,
    warm: Vec<Option<WarmStart>>,
}

impl Evaluator<'_> {
    /// Solves every problem at `γ`, warm-started from `warm`. Returns the
    /// reports, `f(γ)`, the iteration count and the new warm states.
    fn solve(
        &self,
        gamma: f64,
        admm: &AdmmOptions,
        warm: &[Option<WarmStart>],
    ) -> (Vec<SolveReport>, f64, usize, Vec<Option<WarmStart>>) {
        let tau = gamma * self.scale;
        let results: Vec<(SolveReport, Option<WarmStart>)> = self
            .problems
            .par_iter()
            .zip(warm.par_iter())
            .map(|(p, w)| p.solve_ball(tau, admm, w.as_ref()))
            .collect();
        let mut reports = Vec::with_capacity(results.len());
        let mut next = warm.to_vec();
        let mut sq = 0.0;
        let mut iterations = 0;
        let mut feasible = true;
        for (j, (rep, w)) in results.into_iter().enumerate() {
            if rep.status == SolveStatus::Infeasible {
                feasible = false;
            }
            iterations += rep.iterations;
            sq += rep.objective * rep.objective;
            if w.is_some() {
                next[j] = w;
            }
            reports.push(rep);
        }
        let inner = if feasible { sq.sqrt() } else { f64::INFINITY };
        (reports, inner, iterations, next)
    }

    /// Evaluates `h(γ)` at the scan tolerance and keeps the best point.
    fn eval(&mut self, gamma: f64) -> f64 {
        let admm = AdmmOptions {
            tol: self.opts.search_tol.max(self.opts.admm.tol),
            ..self.opts.admm
        };
        let (_, inner, iterations, warm) = self.solve(gamma, &admm, &self.warm);
        let objective = inner / (1.0 - gamma);
        self.evaluations.push(GammaEvaluation {
            gamma,
            inner,
            objective,
            iterations,
        });
        let better = self.best.as_ref().is_none_or(|b| objective < b.objective);
        if objective.is_finite() && better {
            self.best = Some(Best {
                gamma,
                objective,
                warm: warm.clone(),
            });
        }
        self.warm = warm;
        objective
    }
}

/// Minimizes `f(γ)/(1-γ)` over `γ ∈ [0, 1)`.
///
/// With `ε = 0` the spectral constraint is vacuous; the result is the
/// unconstrained least-squares solution with `γ = 0`.
pub fn gamma_search(
    problems: &[PreparedProblem],
    epsilon: f64,
    horizon: usize,
    opts: &SearchOptions,
) -> Result<SearchResult> {
    if problems.is_empty() {
        return Err(Error::InvalidArgument("gamma search needs at least one problem".into()));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be finite and >= 0")));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if problems.iter().any(|p| !p.is_feasible()) {
        return Err(Error::Infeasible("affine constraints cannot be met by the data".into()));
    }
    if epsilon == 0.0 {
        let reports: Vec<SolveReport> = problems.iter().map(PreparedProblem::eq_ls).collect();
        let inner = reports.iter().map(|r| r.objective.powi(2)).sum::<f64>().sqrt();
        return Ok(SearchResult {
            gamma: 0.0,
            objective: inner,
            inner_objective: inner,
            evaluations: vec![GammaEvaluation {
                gamma: 0.0,
                inner,
                objective: inner,
                iterations: 0,
            }],
            reports,
        });
    }

    let root_l = (horizon as f64).sqrt();
    let floor = problems
        .iter()
        .map(PreparedProblem::feasibility_floor)
        .fold(0.0, f64::max);
    let gamma_lo = floor * root_l * epsilon;
    if gamma_lo >= 1.0 {
        return Err(Error::EpsilonTooLarge(format!(
            "epsilon {epsilon:e} needs gamma >= {gamma_lo:.6} for any feasible parameter"
        )));
    }
    let ls_norm = problems
        .iter()
        .map(|p| spectral_norm(&p.least_squares_point()))
        .fold(0.0, f64::max);
    let gamma_hi = (ls_norm * root_l * epsilon).min(1.0);

    let mut ev = Evaluator {
        problems,
        scale: 1.0 / (root_l * epsilon),
        opts,
        warm: vec![None; problems.len()],
        evaluations: Vec::new(),
        best: None,
    };

    // Grid over the open interval (γ_lo, γ_hi), plus γ_hi itself when it is
    // below one: beyond it the ball is inactive and h only grows.
    let g = opts.grid_points.max(1);
    let mut grid: Vec<f64> = (1..=g)
        .map(|k| gamma_lo + (gamma_hi - gamma_lo) * k as f64 / (g + 1) as f64)
        .collect();
    if gamma_hi < 1.0 {
        grid.push(gamma_hi);
    }
    let values: Vec<f64> = grid.iter().map(|&gm| ev.eval(gm)).collect();
    let (best_idx, _) = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| {
            Error::EpsilonTooLarge(format!("epsilon {epsilon:e}: every gamma on the grid is infeasible"))
        })?;

    let mut a = if best_idx == 0 { gamma_lo } else { grid[best_idx - 1] };
    let mut b = if best_idx + 1 < grid.len() {
        grid[best_idx + 1]
    } else {
        gamma_hi.min(1.0 - f64::EPSILON)
    };
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = ev.eval(c);
    let mut fd = ev.eval(d);
    for _ in 0..opts.refine_iters {
        if b - a < opts.refine_tol * b {
            break;
        }
        // Infeasible points sit at the low end of the range, so an infinite
        // value moves the bracket up.
        if fc <= fd && fc.is_finite() {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = ev.eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = ev.eval(d);
        }
    }

    let best = ev.best.take().expect("a finite grid value was found");
    let gamma = best.gamma;
    let (reports, inner, iterations, _) = ev.solve(gamma, &opts.admm, &best.warm);
    let objective = inner / (1.0 - gamma);
    ev.evaluations.push(GammaEvaluation {
        gamma,
        inner,
        objective,
        iterations,
    });
    let evaluations = ev.evaluations;
    Ok(SearchResult {
        gamma,
        objective,
        inner_objective: inner,
        reports,
        evaluations,
    })
}
