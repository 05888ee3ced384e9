//! ADMM for `min ‖C X‖_F² s.t. X ∈ affine set, ‖X‖₂ ≤ τ`.
//!
//! Splitting `X = Z` with `X` carrying the affine set and the objective and
//! `Z` carrying the ball. The `X` update is solved exactly in nullspace
//! coordinates using the eigendecomposition of `NᵀCᵀCN` computed once per
//! problem, so changing the penalty only rescales a diagonal.

use super::{InnerProblem, PreparedProblem, SolveReport, SolveStatus};
use crate::blockops::{hstack, spectral_norm, svd, Mat, Vector};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial penalty parameter.
    pub rho: f64,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 50_000,
            rho: 1.0,
        }
    }
}

/// Iterate state carried between related solves.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub z: Mat,
    pub u: Mat,
    pub rho: f64,
}

/// Euclidean projection onto `{X : ‖X‖₂ ≤ τ}`: singular values are clamped
/// at `τ`. Matrices already inside the ball up to rounding are returned
/// unchanged.
pub fn project_spectral_ball(m: &Mat, tau: f64) -> Mat {
    if m.is_empty() {
        return m.clone();
    }
    let dec = svd(m, false);
    if dec.s.iter().all(|&s| s <= tau * (1.0 + 1e-12)) {
        return m.clone();
    }
    let clamped = dec.s.map(|s| s.min(tau));
    &dec.u * Mat::from_diagonal(&clamped) * dec.v.transpose()
}

/// Solves the problem's spectral-ball program; without a bound this is
/// [`super::eq_ls`].
pub fn spectral_admm(problem: &InnerProblem, opts: &AdmmOptions) -> Result<SolveReport> {
    let prepared = PreparedProblem::new(problem)?;
    match problem.spectral_bound() {
        None => Ok(prepared.eq_ls()),
        Some(tau) => Ok(prepared.solve_ball(tau, opts, None).0),
    }
}

/// Factor by which the penalty is changed in residual balancing.
const RHO_STEP: f64 = 2.0;
/// Residual ratio that triggers a penalty change.
const RHO_RATIO: f64 = 10.0;

impl PreparedProblem {
    /// Relative slack below the feasibility floor treated as infeasible.
    const FLOOR_SLACK: f64 = 1e-12;

    fn infeasible(&self) -> SolveReport {
        SolveReport {
            solution: self.base_point(),
            objective: f64::INFINITY,
            primal_residuals: Vec::new(),
            dual_residuals: Vec::new(),
            iterations: 0,
            status: SolveStatus::Infeasible,
        }
    }

    /// Solves with spectral bound `tau`. Returns the report and the final
    /// iterate for warm-starting a nearby solve.
    pub fn solve_ball(&self, tau: f64, opts: &AdmmOptions, warm: Option<&WarmStart>) -> (SolveReport, Option<WarmStart>) {
        if !self.is_feasible() || !(tau > 0.0) {
            return (self.infeasible(), None);
        }
        let ls = self.least_squares_point();
        if spectral_norm(&ls) <= tau {
            let report = SolveReport {
                objective: self.objective(&ls),
                solution: ls,
                primal_residuals: Vec::new(),
                dual_residuals: Vec::new(),
                iterations: 0,
                status: SolveStatus::Optimal,
            };
            return (report, None);
        }
        if tau < self.feasibility_floor() * (1.0 - Self::FLOOR_SLACK) {
            return (self.infeasible(), None);
        }

        let (rows, cols) = (self.rows(), self.cols());
        let (mut z, mut u, mut rho) = match warm {
            Some(w) if w.z.shape() == (rows, cols) && w.u.shape() == (rows, cols) => {
                (project_spectral_ball(&w.z, tau), w.u.clone(), w.rho)
            }
            _ => (project_spectral_ball(&ls, tau), Mat::zeros(rows, cols), opts.rho),
        };
        let mut primal = Vec::new();
        let mut dual = Vec::new();
        let mut status = SolveStatus::MaxIter;
        let mut iterations = 0;
        for it in 1..=opts.max_iter {
            iterations = it;
            let x = self.x_update(&(&z - &u), rho);
            let z_prev = z;
            z = project_spectral_ball(&(&x + &u), tau);
            u += &x - &z;

            let r = (&x - &z).norm();
            let s = rho * (&z - &z_prev).norm();
            primal.push(r);
            dual.push(s);
            let r_tol = opts.tol * x.norm().max(1.0);
            let s_tol = opts.tol * (rho * u.norm()).max(1.0);
            if r <= r_tol && s <= s_tol {
                status = SolveStatus::Optimal;
                break;
            }
            if r > RHO_RATIO * s {
                rho *= RHO_STEP;
                u /= RHO_STEP;
            } else if s > RHO_RATIO * r {
                rho /= RHO_STEP;
                u *= RHO_STEP;
            }
        }
        let solution = self.project_affine(&z);
        let report = SolveReport {
            objective: self.objective(&solution),
            solution,
            primal_residuals: primal,
            dual_residuals: dual,
            iterations,
            status,
        };
        (report, Some(WarmStart { z, u, rho }))
    }

    /// `argmin ‖C X‖² + (ρ/2)‖X - V‖²` over the affine set.
    fn x_update(&self, v: &Mat, rho: f64) -> Mat {
        let mut col = 0;
        let parts: Vec<Mat> = self
            .groups()
            .iter()
            .map(|g| {
                let vj = v.columns(col, g.width).into_owned();
                col += g.width;
                if g.null.ncols() == 0 {
                    return g.base.clone();
                }
                let rhs = g.null.transpose() * vj * rho - &g.cross * 2.0;
                let coords = g.eig_vectors.transpose() * rhs;
                let scale = Vector::from_iterator(
                    g.eig_values.len(),
                    g.eig_values.iter().map(|&l| 1.0 / (2.0 * l + rho)),
                );
                let scaled = Mat::from_diagonal(&scale) * coords;
                let y = &g.eig_vectors * scaled;
                &g.base + &g.null * y
            })
            .collect();
        let refs: Vec<&Mat> = parts.iter().collect();
        hstack(&refs)
    }
}
