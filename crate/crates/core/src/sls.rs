//! Closed-loop system responses over a finite horizon.
//!
//! With lifted dynamics `𝒜 = I_L ⊗ A`, `ℬ = I_L ⊗ B` and block downshift `Z`,
//! a causal controller `u = K x` produces state and input responses
//! `Φ_x = (I - Z(𝒜 + ℬK))^{-1}` and `Φ_u = K Φ_x` to the lifted noise
//! `(x(0), w(0), ..., w(L-2))`.

use crate::blockops::{
    block_downshift, hstack, kron, lower_block_inverse, max_abs, obs_stack, shift_down,
    toeplitz_stack, unit_lower_block_inverse, vstack, CostWeights, LtvOperator, Mat, Vector,
};
use crate::error::{Error, Result};
use crate::hankel::{build_hankel, forward_noise_hankel};
use crate::lti::{LtiSystem, Trajectory};

/// Tolerance for the identity diagonal of a state response.
const DIAGONAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemResponsePair {
    phi_x: LtvOperator,
    phi_u: LtvOperator,
}

impl SystemResponsePair {
    pub fn new(phi_x: LtvOperator, phi_u: LtvOperator) -> Result<Self> {
        let (l, n) = (phi_x.horizon(), phi_x.block_rows());
        if phi_x.block_cols() != n || phi_u.horizon() != l || phi_u.block_cols() != n {
            return Err(Error::Dimension(format!(
                "responses need Φ_x with {n}x{n} blocks and Φ_u with n={n} block columns over horizon {l}"
            )));
        }
        let eye = Mat::identity(n, n);
        for i in 0..l {
            let gap = max_abs(&(phi_x.block(i, i) - &eye));
            if gap > DIAGONAL_TOL {
                return Err(Error::Structure(format!(
                    "Φ_x diagonal block {i} differs from identity by {gap:e}"
                )));
            }
        }
        Ok(Self { phi_x, phi_u })
    }

    pub fn phi_x(&self) -> &LtvOperator {
        &self.phi_x
    }

    pub fn phi_u(&self) -> &LtvOperator {
        &self.phi_u
    }

    pub fn horizon(&self) -> usize {
        self.phi_x.horizon()
    }

    pub fn state_dim(&self) -> usize {
        self.phi_x.block_rows()
    }

    pub fn input_dim(&self) -> usize {
        self.phi_u.block_rows()
    }

    /// `[Φ_x; Φ_u]`.
    pub fn stacked(&self) -> Mat {
        vstack(&[self.phi_x.dense(), self.phi_u.dense()])
    }

    /// Responses restricted to a noise input, `([Φ_x; Φ_u] w)`.
    pub fn apply(&self, w: &Vector) -> (Vector, Vector) {
        (self.phi_x.dense() * w, self.phi_u.dense() * w)
    }
}

/// Strictly causal perturbation `Δ` of the achievability constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    delta: LtvOperator,
}

impl Perturbation {
    pub fn new(delta: LtvOperator) -> Result<Self> {
        if delta.block_rows() != delta.block_cols() {
            return Err(Error::Dimension("perturbation blocks must be square".into()));
        }
        let dense = delta.dense().clone();
        let op = LtvOperator::strictly_causal(delta.horizon(), delta.block_rows(), delta.block_cols(), dense)?;
        Ok(Self { delta: op })
    }

    pub fn operator(&self) -> &LtvOperator {
        &self.delta
    }

    pub fn dense(&self) -> &Mat {
        self.delta.dense()
    }

    pub fn spectral_norm(&self) -> f64 {
        self.delta.spectral_norm()
    }
}

fn lifted(m: &Mat, horizon: usize) -> Mat {
    kron(&Mat::identity(horizon, horizon), m)
}

fn check_controller(sys: &LtiSystem, k: &LtvOperator, horizon: usize) -> Result<()> {
    if k.horizon() != horizon || k.block_rows() != sys.input_dim() || k.block_cols() != sys.state_dim() {
        return Err(Error::Dimension(format!(
            "controller must have horizon {horizon} and {}x{} blocks, got horizon {} with {}x{} blocks",
            sys.input_dim(),
            sys.state_dim(),
            k.horizon(),
            k.block_rows(),
            k.block_cols()
        )));
    }
    if !k.is_causal(0.0) {
        return Err(Error::Structure("controller is not causal".into()));
    }
    Ok(())
}

pub fn responses_from_controller(sys: &LtiSystem, k: &LtvOperator, horizon: usize) -> Result<SystemResponsePair> {
    check_controller(sys, k, horizon)?;
    let n = sys.state_dim();
    let closed = lifted(sys.a(), horizon) + lifted(sys.b(), horizon) * k.dense();
    let m = Mat::identity(n * horizon, n * horizon) - shift_down(&closed, 1, n);
    let phi_x = unit_lower_block_inverse(&m, n)?;
    let phi_u = k.dense() * &phi_x;
    SystemResponsePair::new(
        LtvOperator::causal(horizon, n, n, phi_x)?,
        LtvOperator::causal(horizon, sys.input_dim(), n, phi_u)?,
    )
}

fn check_pair_against(sys: &LtiSystem, phi: &SystemResponsePair) -> Result<()> {
    if phi.state_dim() != sys.state_dim() || phi.input_dim() != sys.input_dim() {
        return Err(Error::Dimension("responses and system dimensions disagree".into()));
    }
    Ok(())
}

/// `[(I - Z𝒜)  -Zℬ] [Φ_x; Φ_u] - I`; zero for achievable responses, and
/// the perturbation `Δ` for approximate ones.
pub fn achievability_defect(phi: &SystemResponsePair, sys: &LtiSystem) -> Result<Mat> {
    check_pair_against(sys, phi)?;
    let (l, n) = (phi.horizon(), phi.state_dim());
    let za = shift_down(&lifted(sys.a(), l), 1, n);
    let zb = shift_down(&lifted(sys.b(), l), 1, n);
    let lhs = phi.phi_x().dense() - za * phi.phi_x().dense() - zb * phi.phi_u().dense();
    Ok(lhs - Mat::identity(n * l, n * l))
}

pub fn achievability_residual(phi: &SystemResponsePair, sys: &LtiSystem) -> Result<f64> {
    Ok(max_abs(&achievability_defect(phi, sys)?))
}

/// `K = Φ_u Φ_x^{-1}`.
pub fn recover_controller(phi: &SystemResponsePair) -> Result<LtvOperator> {
    let inv = lower_block_inverse(phi.phi_x().dense(), phi.state_dim())?;
    let k = phi.phi_u().dense() * inv;
    LtvOperator::causal(phi.horizon(), phi.input_dim(), phi.state_dim(), k)
}

/// `‖blkdiag(𝒬^{1/2}, ℛ^{1/2}) [Φ_x; Φ_u]‖_F`, the unsquared cost for unit
/// noise variance.
pub fn sls_cost(phi: &SystemResponsePair, weights: &CostWeights) -> Result<f64> {
    if weights.state_dim() != phi.state_dim() || weights.input_dim() != phi.input_dim() {
        return Err(Error::Dimension("cost weights and responses disagree".into()));
    }
    let w = weights.lifted_sqrt(phi.horizon());
    Ok((w * phi.stacked()).norm())
}

/// Converts an [`sls_cost`] value into expected quadratic cost under noise
/// with standard deviation `noise_std`.
pub fn expected_quadratic_cost(cost: f64, noise_std: f64) -> f64 {
    (noise_std * cost).powi(2)
}

/// Steps the plant under an LTV controller: `u(t) = Σ_{s≤t} K(t,s) x(s)`,
/// `x(t+1) = A x(t) + B u(t) + w(t)`. `noise` is the lifted vector
/// `(x(0), w(0), ..., w(L-2))`.
pub fn simulate_closed_loop(sys: &LtiSystem, k: &LtvOperator, noise: &Vector) -> Result<(Vector, Vector)> {
    let l = k.horizon();
    check_controller(sys, k, l)?;
    let (n, m) = (sys.state_dim(), sys.input_dim());
    if noise.len() != n * l {
        return Err(Error::Dimension(format!("noise must have length {}", n * l)));
    }
    let mut x = Vector::zeros(n * l);
    let mut u = Vector::zeros(m * l);
    x.rows_mut(0, n).copy_from(&noise.rows(0, n));
    for t in 0..l {
        let mut ut = Vector::zeros(m);
        for s in 0..=t {
            ut += k.block(t, s) * x.rows(s * n, n);
        }
        u.rows_mut(t * m, m).copy_from(&ut);
        if t + 1 < l {
            let next = sys.a() * x.rows(t * n, n) + sys.b() * &ut + noise.rows((t + 1) * n, n);
            x.rows_mut((t + 1) * n, n).copy_from(&next);
        }
    }
    Ok((x, u))
}

/// `𝒲(t) = Σ_{k<t} A^{t-1-k} w(k)` for `t = 0..count-1`, as columns.
pub fn accumulated_noise(a: &Mat, driving: &Mat, count: usize) -> Mat {
    let n = a.nrows();
    let mut out = Mat::zeros(n, count);
    for t in 1..count {
        let next = a * out.column(t - 1) + driving.column(t - 1);
        out.set_column(t, &next);
    }
    out
}

/// Largest entry of
/// `H_L(x̃) - H_L(x) - 𝒯_L(I) H_L(w) - 𝒪_L(A) 𝒲` for a noisy trajectory
/// `x̃` and the noiseless trajectory `x` sharing its input and initial state.
pub fn hankel_decomposition_residual(
    sys: &LtiSystem,
    noiseless: &Trajectory,
    noisy: &Trajectory,
    horizon: usize,
) -> Result<f64> {
    if noiseless.u() != noisy.u() {
        return Err(Error::Mismatch("trajectories must share the input".into()));
    }
    if noiseless.x0() != noisy.x0() {
        return Err(Error::Mismatch("trajectories must share the initial state".into()));
    }
    let hx_noisy = build_hankel(noisy.x(), horizon)?;
    let hx = build_hankel(noiseless.x(), horizon)?;
    let hw = forward_noise_hankel(noisy.w(), horizon)?;
    let n = sys.state_dim();
    let width = hx.width();
    let acc = accumulated_noise(sys.a(), &noisy.driving_noise(), width);
    let toep = toeplitz_stack(sys.a(), &Mat::identity(n, n), horizon);
    let obs = obs_stack(sys.a(), horizon);
    let r = hx_noisy.dense() - hx.dense() - toep * hw.dense() - obs * acc;
    Ok(max_abs(&r))
}

/// The lifted noise vector `(x(0), w(0), ..., w(L-2))` from the first `L`
/// stored samples of a trajectory.
pub fn lifted_noise(traj: &Trajectory, horizon: usize) -> Result<Vector> {
    if horizon > traj.horizon() {
        return Err(Error::Dimension("horizon exceeds trajectory length".into()));
    }
    Ok(traj.w().window(0, horizon))
}

/// `[I - Z𝒜, -Zℬ]`, the achievability map.
pub fn achievability_map(sys: &LtiSystem, horizon: usize) -> Mat {
    let n = sys.state_dim();
    let z = block_downshift(horizon, n);
    let left = Mat::identity(n * horizon, n * horizon) - &z * lifted(sys.a(), horizon);
    let right = -(&z * lifted(sys.b(), horizon));
    hstack(&[&left, &right])
}
