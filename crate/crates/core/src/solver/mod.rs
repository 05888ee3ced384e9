//! Frobenius least squares over an affine set, optionally intersected with
//! a spectral-norm ball, and the outer scalar search of the robust program.
//!
//! A problem is a list of groups. Group `j` owns a block of columns `X_j`
//! of the decision matrix `X = [X_0 ... X_{k-1}]`, a cost map `C_j` and an
//! affine constraint `E_j X_j = F_j`; the objective is
//! `sqrt(Σ_j ‖C_j X_j‖_F²)` and the optional ball is `‖X‖₂ ≤ τ`.
//!
//! Each group is handled in nullspace coordinates `X_j = X⁰_j + N_j Y_j`,
//! with `X⁰_j = E_j⁺ F_j` and `N_j` an orthonormal basis of `ker E_j`.

mod admm;
mod eqls;
mod search;

pub use admm::{project_spectral_ball, spectral_admm, AdmmOptions, WarmStart};
pub use eqls::eq_ls;
pub use search::{gamma_search, GammaEvaluation, SearchOptions, SearchResult};

use serde::Serialize;

use crate::blockops::{hstack, max_abs, nullspace, pinv, spectral_norm, symmetric_eigen, Mat};
use crate::error::{Error, Result};

/// One affine equality `E X_j = F` on a block of columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGroup {
    pub lhs: Mat,
    pub rhs: Mat,
}

/// Affine constraints for every column block of the decision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineConstraintSet {
    rows: usize,
    groups: Vec<AffineGroup>,
}

impl AffineConstraintSet {
    /// Every group constrains an `rows x rhs.ncols()` block of columns.
    pub fn new(rows: usize, groups: Vec<AffineGroup>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidArgument("constraint set needs at least one group".into()));
        }
        for (j, g) in groups.iter().enumerate() {
            if g.lhs.ncols() != rows || g.lhs.nrows() != g.rhs.nrows() {
                return Err(Error::Dimension(format!(
                    "group {j}: E is {}x{}, F is {}x{}, variable has {rows} rows",
                    g.lhs.nrows(),
                    g.lhs.ncols(),
                    g.rhs.nrows(),
                    g.rhs.ncols()
                )));
            }
        }
        Ok(Self { rows, groups })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn groups(&self) -> &[AffineGroup] {
        &self.groups
    }

    /// Largest entry of `E_j X_j - F_j` over all groups.
    pub fn residual(&self, x: &Mat) -> f64 {
        let mut col = 0;
        let mut worst = 0.0_f64;
        for g in &self.groups {
            let k = g.rhs.ncols();
            let r = &g.lhs * x.columns(col, k) - &g.rhs;
            worst = worst.max(max_abs(&r));
            col += k;
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerProblem {
    costs: Vec<Mat>,
    constraints: AffineConstraintSet,
    spectral_bound: Option<f64>,
}

impl InnerProblem {
    /// `costs[j]` is the cost map of group `j`; `spectral_bound = None`
    /// leaves the ball out.
    pub fn new(costs: Vec<Mat>, constraints: AffineConstraintSet, spectral_bound: Option<f64>) -> Result<Self> {
        if costs.len() != constraints.groups().len() {
            return Err(Error::Dimension(format!(
                "{} cost maps for {} constraint groups",
                costs.len(),
                constraints.groups().len()
            )));
        }
        if costs.iter().any(|c| c.ncols() != constraints.rows()) {
            return Err(Error::Dimension("cost maps must act on the variable rows".into()));
        }
        if let Some(tau) = spectral_bound {
            if !(tau > 0.0) {
                return Err(Error::InvalidArgument(format!("spectral bound {tau} must be positive")));
            }
        }
        Ok(Self {
            costs,
            constraints,
            spectral_bound,
        })
    }

    pub fn costs(&self) -> &[Mat] {
        &self.costs
    }

    pub fn constraints(&self) -> &AffineConstraintSet {
        &self.constraints
    }

    pub fn spectral_bound(&self) -> Option<f64> {
        self.spectral_bound
    }

    pub fn with_bound(&self, spectral_bound: Option<f64>) -> Result<Self> {
        Self::new(self.costs.clone(), self.constraints.clone(), spectral_bound)
    }

    /// `sqrt(Σ_j ‖C_j X_j‖_F²)`.
    pub fn objective(&self, x: &Mat) -> f64 {
        let mut col = 0;
        let mut acc = 0.0;
        for (c, g) in self.costs.iter().zip(self.constraints.groups()) {
            let k = g.rhs.ncols();
            acc += (c * x.columns(col, k)).norm_squared();
            col += k;
        }
        acc.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub solution: Mat,
    pub objective: f64,
    pub primal_residuals: Vec<f64>,
    pub dual_residuals: Vec<f64>,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// Per-group factorizations shared by the least-squares and ADMM solvers.
#[derive(Debug, Clone)]
pub(crate) struct PreparedGroup {
    width: usize,
    cost: Mat,
    /// Minimum-norm affine point `E⁺F`.
    base: Mat,
    /// Orthonormal basis of `ker E`.
    null: Mat,
    /// Eigenvectors and eigenvalues of `Nᵀ Cᵀ C N`.
    eig_vectors: Mat,
    eig_values: Vec<f64>,
    /// `Nᵀ Cᵀ C X⁰`.
    cross: Mat,
    /// Unconstrained minimizer over the affine set.
    least_squares: Mat,
}

/// Precomputed form of an [`InnerProblem`], reusable across spectral bounds.
#[derive(Debug, Clone)]
pub struct PreparedProblem {
    rows: usize,
    groups: Vec<PreparedGroup>,
    feasible: bool,
}

/// Relative tolerance deciding whether `E X⁰ = F` is attainable.
const FEASIBILITY_TOL: f64 = 1e-8;

impl PreparedProblem {
    pub fn new(problem: &InnerProblem) -> Result<Self> {
        let rows = problem.constraints().rows();
        let mut feasible = true;
        let mut groups = Vec::with_capacity(problem.costs().len());
        for (c, g) in problem.costs().iter().zip(problem.constraints().groups()) {
            let base = pinv(&g.lhs) * &g.rhs;
            let miss = max_abs(&(&g.lhs * &base - &g.rhs));
            if miss > FEASIBILITY_TOL * (1.0 + max_abs(&g.rhs)) {
                feasible = false;
            }
            let null = nullspace(&g.lhs);
            let cn = c * &null;
            let gram = cn.transpose() * &cn;
            let (eig_vectors, eig_values) = if gram.is_empty() {
                (Mat::zeros(0, 0), Vec::new())
            } else {
                let (vals, vecs) = symmetric_eigen(&gram);
                (vecs, vals.iter().map(|&l| l.max(0.0)).collect())
            };
            let cross = cn.transpose() * (c * &base);
            let y = -(pinv(&cn) * (c * &base));
            let least_squares = &base + &null * y;
            groups.push(PreparedGroup {
                width: g.rhs.ncols(),
                cost: c.clone(),
                base,
                null,
                eig_vectors,
                eig_values,
                cross,
                least_squares,
            });
        }
        Ok(Self {
            rows,
            groups,
            feasible,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.groups.iter().map(|g| g.width).sum()
    }

    pub fn is_feasible(&self) -> bool {
        self.feasible
    }

    pub(crate) fn groups(&self) -> &[PreparedGroup] {
        &self.groups
    }

    fn assemble(&self, parts: impl Iterator<Item = Mat>) -> Mat {
        let parts: Vec<Mat> = parts.collect();
        let refs: Vec<&Mat> = parts.iter().collect();
        hstack(&refs)
    }

    /// Minimum-norm point of the affine set.
    pub fn base_point(&self) -> Mat {
        self.assemble(self.groups.iter().map(|g| g.base.clone()))
    }

    /// Unconstrained minimizer over the affine set (minimum-norm among
    /// minimizers).
    pub fn least_squares_point(&self) -> Mat {
        self.assemble(self.groups.iter().map(|g| g.least_squares.clone()))
    }

    /// Spectral norm of the minimum-norm affine point. Every affine point has
    /// spectral norm at least this large when each `F_j` stacks identity and
    /// zero blocks against constraint rows that act on disjoint row blocks,
    /// which is the structure produced by the synthesis front end.
    pub fn feasibility_floor(&self) -> f64 {
        spectral_norm(&self.base_point())
    }

    /// Orthogonal projection onto the affine set: `X⁰ + N Nᵀ Z` per group.
    pub fn project_affine(&self, z: &Mat) -> Mat {
        let mut col = 0;
        let parts = self.groups.iter().map(|g| {
            let zj = z.columns(col, g.width).into_owned();
            col += g.width;
            &g.base + &g.null * (g.null.transpose() * zj)
        });
        let parts: Vec<Mat> = parts.collect();
        let refs: Vec<&Mat> = parts.iter().collect();
        hstack(&refs)
    }

    pub fn objective(&self, x: &Mat) -> f64 {
        let mut col = 0;
        let mut acc = 0.0;
        for g in &self.groups {
            acc += (&g.cost * x.columns(col, g.width)).norm_squared();
            col += g.width;
        }
        acc.sqrt()
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Mat {
        Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    /// Single-group problem `min ‖C G‖ s.t. H G = I` with random data.
    pub fn random_identity_problem(seed: u64, n: usize, p: usize, c_rows: usize) -> InnerProblem {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let h = gaussian(n, p, &mut rng);
        let c = gaussian(c_rows, p, &mut rng);
        let set = AffineConstraintSet::new(
            p,
            vec![AffineGroup {
                lhs: h,
                rhs: Mat::identity(n, n),
            }],
        )
        .unwrap();
        InnerProblem::new(vec![c], set, None).unwrap()
    }

    /// Dense KKT solve `[2CᵀC Eᵀ; E 0][x; λ] = [0; f]` column by column,
    /// through a pseudoinverse.
    pub fn kkt_solution(problem: &InnerProblem) -> Mat {
        let rows = problem.constraints().rows();
        let mut parts = Vec::new();
        for (c, g) in problem.costs().iter().zip(problem.constraints().groups()) {
            let k = g.lhs.nrows();
            let mut kkt = Mat::zeros(rows + k, rows + k);
            kkt.view_mut((0, 0), (rows, rows)).copy_from(&(c.transpose() * c * 2.0));
            kkt.view_mut((0, rows), (rows, k)).copy_from(&g.lhs.transpose());
            kkt.view_mut((rows, 0), (k, rows)).copy_from(&g.lhs);
            let mut rhs = Mat::zeros(rows + k, g.rhs.ncols());
            rhs.view_mut((rows, 0), (k, g.rhs.ncols())).copy_from(&g.rhs);
            let sol = pinv(&kkt) * rhs;
            parts.push(sol.rows(0, rows).into_owned());
        }
        let refs: Vec<&Mat> = parts.iter().collect();
        hstack(&refs)
    }
}
