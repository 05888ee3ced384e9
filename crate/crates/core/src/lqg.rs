//! Model-based reference solutions: finite-horizon and stationary Riccati
//! equations, optimal responses and cost, and the data parameterization of
//! the optimal responses.

use crate::blockops::{spectral_norm, symmetrize, vstack, CostWeights, LtvOperator, Mat, block_diag, pinv};
use crate::error::{Error, Result};
use crate::hankel::{stacked_rank_of, HankelMatrix};
use crate::lti::LtiSystem;
use crate::sls::{responses_from_controller, sls_cost, SystemResponsePair};

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    /// Feedback gains `K_0, ..., K_{L-1}` with `u(t) = K_t x(t)`.
    pub gains: Vec<Mat>,
    /// Cost-to-go matrices `P_0, ..., P_{L-1}`, with `P_{L-1} = Q_F`.
    pub value: Vec<Mat>,
}

impl RiccatiSolution {
    pub fn controller(&self) -> Result<LtvOperator> {
        LtvOperator::block_diagonal(&self.gains)
    }

    /// `Σ_t tr(P_t)`: the optimal expected cost for unit noise variance
    /// with `x(0)` and every `w(t)` standard normal.
    pub fn expected_cost(&self) -> f64 {
        self.value.iter().map(|p| p.trace()).sum()
    }
}

fn check_dims(sys: &LtiSystem, weights: &CostWeights) -> Result<()> {
    if weights.state_dim() != sys.state_dim() || weights.input_dim() != sys.input_dim() {
        return Err(Error::Dimension(format!(
            "weights are for n={}, m={} but the system has n={}, m={}",
            weights.state_dim(),
            weights.input_dim(),
            sys.state_dim(),
            sys.input_dim()
        )));
    }
    Ok(())
}

/// `-(R + BᵀPB)^{-1} BᵀPA`.
pub fn optimal_gain(sys: &LtiSystem, r: &Mat, p: &Mat) -> Result<Mat> {
    let (a, b) = (sys.a(), sys.b());
    let btp = b.transpose() * p;
    let s = symmetrize(&(r + &btp * b));
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("R + BᵀPB is not positive definite".into()))?;
    Ok(-chol.solve(&(btp * a)))
}

/// One Riccati step `Q + AᵀPA + AᵀPB K` with `K` the optimal gain for `P`.
fn riccati_step(sys: &LtiSystem, q: &Mat, r: &Mat, p: &Mat) -> Result<(Mat, Mat)> {
    let k = optimal_gain(sys, r, p)?;
    let a = sys.a();
    let at_p = a.transpose() * p;
    let next = q + &at_p * a + at_p * sys.b() * &k;
    Ok((symmetrize(&next), k))
}

pub fn riccati_finite(sys: &LtiSystem, weights: &CostWeights, horizon: usize) -> Result<RiccatiSolution> {
    check_dims(sys, weights)?;
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let mut value = vec![Mat::zeros(n, n); horizon];
    let mut gains = vec![Mat::zeros(m, n); horizon];
    value[horizon - 1] = weights.q_final().clone();
    for t in (0..horizon - 1).rev() {
        let (p, k) = riccati_step(sys, weights.q(), weights.r(), &value[t + 1])?;
        value[t] = p;
        gains[t] = k;
    }
    Ok(RiccatiSolution { gains, value })
}

const DARE_TOL: f64 = 1e-12;
const DARE_MAX_ITER: usize = 100_000;

/// Stationary Riccati solution by fixed-point iteration from `P = Q`.
pub fn dare(sys: &LtiSystem, q: &Mat, r: &Mat) -> Result<Mat> {
    let weights = CostWeights::running(q.clone(), r.clone())?;
    check_dims(sys, &weights)?;
    let mut p = weights.q().clone();
    let mut rel = f64::INFINITY;
    for _ in 0..DARE_MAX_ITER {
        let (next, _) = riccati_step(sys, weights.q(), weights.r(), &p)?;
        let diff = (&next - &p).norm();
        let scale = next.norm();
        p = next;
        rel = if scale > 0.0 { diff / scale } else { diff };
        if rel <= DARE_TOL {
            return Ok(p);
        }
        if !rel.is_finite() {
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: DARE_MAX_ITER,
        residual: rel,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalSolution {
    pub riccati: RiccatiSolution,
    pub controller: LtvOperator,
    pub responses: SystemResponsePair,
    /// Optimal value of the response-space cost, `sls_cost(Φ⋆)`.
    pub cost: f64,
}

pub fn optimal_responses(sys: &LtiSystem, weights: &CostWeights, horizon: usize) -> Result<OptimalSolution> {
    let riccati = riccati_finite(sys, weights, horizon)?;
    let controller = riccati.controller()?;
    let responses = responses_from_controller(sys, &controller, horizon)?;
    let cost = sls_cost(&responses, weights)?;
    Ok(OptimalSolution {
        riccati,
        controller,
        responses,
        cost,
    })
}

/// Block-diagonal data parameterization of a set of responses: block `k`
/// maps data columns to the responses of column `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GStar {
    pub blocks: Vec<Mat>,
    pub assembled: Mat,
}

impl GStar {
    pub fn norm(&self) -> f64 {
        self.blocks.iter().map(spectral_norm).fold(0.0, f64::max)
    }
}

/// For each `k`, the minimum-norm `G_k` with
/// `[H_{L-k}(x); H_{L-k}(u)] G_k` equal to block rows `k..L-1` of column `k`
/// of `[Φ_x; Φ_u]`, where `H_{L-k}` keeps the first `L-k` block rows of the
/// order-`L` data matrices.
pub fn recover_gstar(hx: &HankelMatrix, hu: &HankelMatrix, phi: &SystemResponsePair) -> Result<GStar> {
    let l = hx.order();
    let (n, m) = (hx.block(), hu.block());
    if phi.horizon() != l || phi.state_dim() != n || phi.input_dim() != m {
        return Err(Error::Dimension("responses and data disagree in horizon or dimensions".into()));
    }
    let rank = stacked_rank_of(hx, hu)?;
    if !rank.full {
        return Err(Error::NotPersistentlyExciting(format!(
            "data not PE of order n+L: stacked rank {} < {}",
            rank.rank, rank.required
        )));
    }
    let mut blocks = Vec::with_capacity(l);
    for k in 0..l {
        let rows = l - k;
        let data_x = hx.dense().rows(0, n * rows).into_owned();
        let data_u = hu.dense().rows(0, m * rows).into_owned();
        let target_x = phi.phi_x().dense().view((k * n, k * n), (n * rows, n)).into_owned();
        let target_u = phi.phi_u().dense().view((k * m, k * n), (m * rows, n)).into_owned();
        let data = vstack(&[&data_x, &data_u]);
        let target = vstack(&[&target_x, &target_u]);
        blocks.push(pinv(&data) * target);
    }
    let assembled = block_diag(&blocks);
    Ok(GStar { blocks, assembled })
}
