//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use ddsls::blockops::{hstack, pinv, svd, Mat};
use ddsls::solver::InnerProblem;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn column_blocks(problem: &InnerProblem) -> Vec<(usize, usize)> {
    let mut col = 0;
    problem
        .constraints()
        .groups()
        .iter()
        .map(|g| {
            let k = g.rhs.ncols();
            col += k;
            (col - k, k)
        })
        .collect()
}

/// Dense KKT system `[2CᵀC Eᵀ; E 0][X; Λ] = [0; F]` per group, solved with
/// a pseudoinverse.
pub fn kkt_solution(problem: &InnerProblem) -> Mat {
    let rows = problem.constraints().rows();
    let parts: Vec<Mat> = problem
        .costs()
        .iter()
        .zip(problem.constraints().groups())
        .map(|(c, g)| {
            let k = g.lhs.nrows();
            let mut kkt = Mat::zeros(rows + k, rows + k);
            kkt.view_mut((0, 0), (rows, rows)).copy_from(&(c.transpose() * c * 2.0));
            kkt.view_mut((0, rows), (rows, k)).copy_from(&g.lhs.transpose());
            kkt.view_mut((rows, 0), (k, rows)).copy_from(&g.lhs);
            let mut rhs = Mat::zeros(rows + k, g.rhs.ncols());
            rhs.view_mut((rows, 0), (k, g.rhs.ncols())).copy_from(&g.rhs);
            (pinv(&kkt) * rhs).rows(0, rows).into_owned()
        })
        .collect();
    let refs: Vec<&Mat> = parts.iter().collect();
    hstack(&refs)
}

/// Long-run accelerated projected gradient for
/// `min Σ‖C_j X_j‖_F² s.t. E_j X_j = F_j, ‖X‖₂ ≤ τ`.
///
/// The projection onto the intersection of the affine set and the ball is
/// computed by Dykstra's alternating projections.
pub struct FirstOrderOracle<'a> {
    problem: &'a InnerProblem,
    tau: f64,
    blocks: Vec<(usize, usize)>,
    pinvs: Vec<Mat>,
    grams: Vec<Mat>,
    step: f64,
}

impl<'a> FirstOrderOracle<'a> {
    pub fn new(problem: &'a InnerProblem, tau: f64) -> Self {
        let pinvs = problem.constraints().groups().iter().map(|g| pinv(&g.lhs)).collect();
        let grams: Vec<Mat> = problem.costs().iter().map(|c| c.transpose() * c).collect();
        let lipschitz = grams
            .iter()
            .map(|g| 2.0 * svd(g, false).s.max())
            .fold(0.0, f64::max);
        Self {
            problem,
            tau,
            blocks: column_blocks(problem),
            pinvs,
            grams,
            step: 1.0 / lipschitz,
        }
    }

    fn project_affine(&self, v: &Mat) -> Mat {
        let mut x = v.clone();
        for ((g, p), &(c0, k)) in self.problem.constraints().groups().iter().zip(&self.pinvs).zip(&self.blocks) {
            let vj = v.columns(c0, k);
            let fix = p * (&g.lhs * vj - &g.rhs);
            x.columns_mut(c0, k).copy_from(&(vj - fix));
        }
        x
    }

    fn project_ball(&self, v: &Mat) -> Mat {
        let d = svd(v, false);
        if d.s.iter().all(|&s| s <= self.tau) {
            return v.clone();
        }
        let clamped = d.s.map(|s| s.min(self.tau));
        &d.u * Mat::from_diagonal(&clamped) * d.v.transpose()
    }

    /// Dykstra's method; ends with an affine projection so the constraints
    /// hold exactly and the ball up to the stopping tolerance.
    pub fn project(&self, v: &Mat) -> Mat {
        let mut x = v.clone();
        let mut p = Mat::zeros(v.nrows(), v.ncols());
        let mut q = p.clone();
        for _ in 0..2000 {
            let y = self.project_affine(&(&x + &p));
            p = &x + &p - &y;
            let next = self.project_ball(&(&y + &q));
            q = &y + &q - &next;
            let change = (&next - &x).norm();
            x = next;
            if change <= 1e-14 * x.norm().max(1.0) {
                break;
            }
        }
        self.project_affine(&x)
    }

    fn gradient(&self, x: &Mat) -> Mat {
        let mut g = Mat::zeros(x.nrows(), x.ncols());
        for (gram, &(c0, k)) in self.grams.iter().zip(&self.blocks) {
            g.columns_mut(c0, k).copy_from(&(gram * x.columns(c0, k) * 2.0));
        }
        g
    }

    pub fn objective(&self, x: &Mat) -> f64 {
        self.problem.objective(x)
    }

    /// FISTA with function-value restarts, from `start`. Stops after
    /// `iterations` steps or once a window of 500 steps improves the
    /// objective by less than a relative 1e-14.
    pub fn solve(&self, start: &Mat, iterations: usize) -> Mat {
        let mut x = self.project(start);
        let mut y = x.clone();
        let mut t = 1.0_f64;
        let mut fx = self.objective(&x);
        let mut checkpoint = fx;
        for it in 1..=iterations {
            if it % 500 == 0 {
                if checkpoint - fx <= 1e-14 * fx {
                    break;
                }
                checkpoint = fx;
            }
            let next = self.project(&(&y - self.gradient(&y) * self.step));
            let fnext = self.objective(&next);
            if fnext > fx {
                // Restart momentum.
                t = 1.0;
                y = x.clone();
                continue;
            }
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            y = &next + (&next - &x) * ((t - 1.0) / t_next);
            x = next;
            fx = fnext;
            t = t_next;
        }
        x
    }
}
