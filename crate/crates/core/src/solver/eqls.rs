use super::{InnerProblem, PreparedProblem, SolveReport, SolveStatus};
use crate::error::Result;

/// Minimizes `‖C X‖_F` over the affine set alone (any spectral bound on the
/// problem is ignored). Among several minimizers the one of least Frobenius
/// norm is returned.
pub fn eq_ls(problem: &InnerProblem) -> Result<SolveReport> {
    let prepared = PreparedProblem::new(problem)?;
    Ok(prepared.eq_ls())
}

impl PreparedProblem {
    pub fn eq_ls(&self) -> SolveReport {
        if !self.is_feasible() {
            return SolveReport {
                solution: self.base_point(),
                objective: f64::INFINITY,
                primal_residuals: Vec::new(),
                dual_residuals: Vec::new(),
                iterations: 0,
                status: SolveStatus::Infeasible,
            };
        }
        let solution = self.least_squares_point();
        SolveReport {
            objective: self.objective(&solution),
            solution,
            primal_residuals: Vec::new(),
            dual_residuals: Vec::new(),
            iterations: 0,
            status: SolveStatus::Optimal,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::super::{AffineConstraintSet, AffineGroup};
    use super::*;
    use crate::blockops::{max_abs, pinv, Mat};

    #[test]
    fn zero_cost_gives_minimum_norm_point() {
        let prob = random_identity_problem(1, 2, 8, 3);
        let h = prob.constraints().groups()[0].lhs.clone();
        let zero = InnerProblem::new(vec![Mat::zeros(3, 8)], prob.constraints().clone(), None).unwrap();
        let rep = eq_ls(&zero).unwrap();
        assert!(max_abs(&(rep.solution - pinv(&h))) < 1e-12);
        assert_eq!(rep.objective, 0.0);
    }

    #[test]
    fn no_constraints_gives_zero() {
        let set = AffineConstraintSet::new(
            4,
            vec![AffineGroup {
                lhs: Mat::zeros(0, 4),
                rhs: Mat::zeros(0, 2),
            }],
        )
        .unwrap();
        let c = Mat::from_fn(5, 4, |i, j| (i + 2 * j) as f64);
        let rep = eq_ls(&InnerProblem::new(vec![c], set, None).unwrap()).unwrap();
        assert_eq!(max_abs(&rep.solution), 0.0);
    }

    #[test]
    fn matches_dense_kkt_oracle() {
        for seed in 0..20 {
            // n = 2, L = 3, T = 15: 13 data columns, (n + m) L = 9 cost rows.
            // With 9 cost rows the minimizer is not unique; with 20 it is.
            for rows in [9, 20] {
                let prob = random_identity_problem(seed, 2, 13, rows);
                let rep = eq_ls(&prob).unwrap();
                let oracle = kkt_solution(&prob);
                let fo = prob.objective(&oracle);
                assert!((rep.objective - fo).abs() <= 1e-8 * fo.max(1.0), "seed {seed}");
                assert!(prob.constraints().residual(&rep.solution) < 1e-9);
                if rows == 20 {
                    assert!(max_abs(&(&rep.solution - &oracle)) < 1e-8, "seed {seed}");
                }
            }
        }
    }
}
