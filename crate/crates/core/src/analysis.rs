//! Closed-form bound evaluators and the statistics used to check them:
//! the noise-level precondition and suboptimality bound of the robust
//! program, two tail bounds on the averaged-noise Hankel norm, the sample
//! size that makes the precondition hold with high probability, and a
//! bootstrap estimate of the noise level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::blockops::{obs_stack, pinv, spectral_norm, toeplitz_stack, vstack, CostWeights, Mat, Vector};
use crate::error::{Error, Result};
use crate::hankel::{build_hankel, forward_noise_hankel, Signal};
use crate::lqg::{optimal_responses, recover_gstar};
use crate::lti::{gaussian_matrix, simulate, Ensemble, LtiSystem, Trajectory};

/// Norms entering the suboptimality bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub gstar_norm: f64,
    pub epsilon: f64,
    pub horizon: usize,
    /// Data length `T`.
    pub data_len: usize,
    /// `‖𝒪_L(A)‖₂`.
    pub obs_norm: f64,
    /// `‖𝒯_{T-L+1}(I)‖₂`.
    pub toep_norm: f64,
    /// Per-step state-weight norm: `‖Q^{1/2}‖_F` without a terminal weight,
    /// `‖𝒬^{1/2}‖_F / √L` with one.
    pub qhalf_frob: f64,
    /// Optimal unsquared cost.
    pub jstar: f64,
}

impl BoundInputs {
    /// Computes every norm from the model and the noiseless counterpart of
    /// `traj` (same initial state and input).
    pub fn from_model(
        sys: &LtiSystem,
        weights: &CostWeights,
        traj: &Trajectory,
        horizon: usize,
        epsilon: f64,
    ) -> Result<Self> {
        let t = traj.horizon();
        if horizon == 0 || horizon > t {
            return Err(Error::Dimension(format!("horizon {horizon} must lie in 1..={t}")));
        }
        let n = sys.state_dim();
        let clean = simulate(sys, &traj.x0(), traj.u(), &Mat::zeros(n, t - 1))?;
        let hx = build_hankel(clean.x(), horizon)?;
        let hu = build_hankel(clean.u(), horizon)?;
        let opt = optimal_responses(sys, weights, horizon)?;
        let gstar = recover_gstar(&hx, &hu, &opt.responses)?;
        Ok(Self {
            gstar_norm: gstar.norm(),
            epsilon,
            horizon,
            data_len: t,
            obs_norm: spectral_norm(&obs_stack(sys.a(), horizon)),
            toep_norm: spectral_norm(&toeplitz_stack(sys.a(), &Mat::identity(n, n), t - horizon + 1)),
            qhalf_frob: weights.lifted_q_half_frobenius_per_step(horizon),
            jstar: opt.cost,
        })
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    pub fn eps_max(&self) -> f64 {
        eps_precondition(self.gstar_norm, self.horizon, self.toep_norm)
    }
}

/// Largest noise level for which the optimal parameter, corrected for the
/// noise, is feasible for the robust program:
/// `min{1/(3√L‖G⋆‖), 1/(2‖G⋆‖‖𝒯‖)}`. Infinite when `gstar_norm` is zero.
pub fn eps_precondition(gstar_norm: f64, horizon: usize, toep_norm: f64) -> f64 {
    if gstar_norm == 0.0 {
        log::warn!("zero parameter norm: noise-level precondition is vacuous");
        return f64::INFINITY;
    }
    let a = 1.0 / (3.0 * (horizon as f64).sqrt() * gstar_norm);
    let b = 1.0 / (2.0 * gstar_norm * toep_norm);
    a.min(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuboptimalityBound {
    /// Bound on `(Ĵ - J⋆)/J⋆`.
    pub value: f64,
    /// The noise level meets the precondition and `T ≥ 2L + 1`.
    pub certified: bool,
    pub eps_max: f64,
}

/// `6‖G⋆‖ε (2√L + ‖𝒯‖ + L(1 + ‖𝒪‖)‖Q^{1/2}‖_F ‖𝒯‖ / J⋆)`.
pub fn suboptimality_bound(b: &BoundInputs) -> SuboptimalityBound {
    let l = b.horizon as f64;
    let inner = 2.0 * l.sqrt() + b.toep_norm + l * (1.0 + b.obs_norm) * b.qhalf_frob * b.toep_norm / b.jstar;
    let value = 6.0 * b.gstar_norm * b.epsilon * inner;
    let eps_max = b.eps_max();
    SuboptimalityBound {
        value,
        certified: b.epsilon <= eps_max && b.data_len > 2 * b.horizon,
        eps_max,
    }
}

/// Parameters of the averaged-noise tail bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailParams {
    pub n: usize,
    /// Data length `T`.
    pub data_len: usize,
    /// Number of averaged trajectories.
    pub samples: usize,
    pub sigma2: f64,
}

impl TailParams {
    fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.n == 0 || self.data_len == 0 {
            return Err(Error::InvalidArgument("tail parameters need n, T, N >= 1".into()));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma2 {} must be finite and >= 0", self.sigma2)));
        }
        Ok(())
    }
}

/// `min(1, 2nT exp(-t²N / (2σ²nT)))`, a bound on `P[‖H_L(w̄)‖₂ ≥ t]`.
pub fn tail_bound_matrix(t: f64, p: &TailParams) -> Result<f64> {
    p.validate()?;
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("threshold {t} must be >= 0")));
    }
    let nt = (p.n * p.data_len) as f64;
    let exponent = if p.sigma2 == 0.0 {
        if t > 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    } else {
        -t * t * p.samples as f64 / (2.0 * p.sigma2 * nt)
    };
    Ok((2.0 * nt * exponent.exp()).min(1.0))
}

/// Bound from Gaussian Lipschitz concentration, stated at the shifted
/// threshold `t + σT/√N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzTail {
    pub threshold: f64,
    pub probability: f64,
}

/// `P[‖H_L(w̄)‖₂ ≥ t + σT/√N] ≤ exp(-t²N/(σ²T))`.
pub fn tail_bound_lipschitz(t: f64, p: &TailParams) -> Result<LipschitzTail> {
    p.validate()?;
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("threshold {t} must be >= 0")));
    }
    let n = p.samples as f64;
    let tt = p.data_len as f64;
    let shift = p.sigma2.sqrt() * tt / n.sqrt();
    let probability = if p.sigma2 == 0.0 {
        if t > 0.0 {
            0.0
        } else {
            1.0
        }
    } else {
        (-t * t * n / (p.sigma2 * tt)).exp().min(1.0)
    };
    Ok(LipschitzTail {
        threshold: t + shift,
        probability,
    })
}

/// The Lipschitz bound on `P[‖H_L(w̄)‖₂ ≥ s]` for an unshifted threshold
/// `s`; trivial (one) below the shift.
pub fn lipschitz_bound_at(s: f64, p: &TailParams) -> Result<f64> {
    let shift = tail_bound_lipschitz(0.0, p)?.threshold;
    if s <= shift {
        return Ok(1.0);
    }
    Ok(tail_bound_lipschitz(s - shift, p)?.probability)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta {delta} must lie in (0, 1)")));
    }
    Ok(())
}

/// Noise level exceeded with probability at most `δ`, from inverting
/// [`tail_bound_matrix`]: `sqrt(2σ²nT/N · log(2nT/δ))`.
pub fn implied_epsilon(delta: f64, p: &TailParams) -> Result<f64> {
    check_delta(delta)?;
    p.validate()?;
    let nt = (p.n * p.data_len) as f64;
    Ok((2.0 * p.sigma2 * nt / p.samples as f64 * (2.0 * nt / delta).ln()).sqrt())
}

/// Smallest `N` with
/// `N ≥ 2σ²nT log(2nT/δ) max{9L‖G⋆‖², 4‖G⋆‖²‖𝒯‖²}`, and at least one.
pub fn sample_complexity(
    delta: f64,
    gstar_norm: f64,
    horizon: usize,
    toep_norm: f64,
    n: usize,
    data_len: usize,
    sigma2: f64,
) -> Result<u64> {
    check_delta(delta)?;
    let nt = (n * data_len) as f64;
    let g2 = gstar_norm * gstar_norm;
    let factor = (9.0 * horizon as f64 * g2).max(4.0 * g2 * toep_norm * toep_norm);
    let raw = 2.0 * sigma2 * nt * (2.0 * nt / delta).ln() * factor;
    if !raw.is_finite() || raw > u64::MAX as f64 {
        return Err(Error::InvalidArgument(format!("sample size {raw:e} is not representable")));
    }
    Ok((raw.ceil() as u64).max(1))
}

/// `‖H_L(w)‖₂` for a stored noise record, using the same alignment as the
/// perturbation identity.
pub fn noise_hankel_norm(stored: &Signal, horizon: usize) -> Result<f64> {
    Ok(forward_noise_hankel(stored, horizon)?.spectral_norm())
}

/// Draws the averaged noise record of `samples` trajectories directly:
/// i.i.d. `N(0, σ²/N)` entries, with the initial-state slot left at zero.
pub fn sample_averaged_noise(p: &TailParams, rng: &mut ChaCha20Rng) -> Result<Signal> {
    p.validate()?;
    let std = (p.sigma2 / p.samples as f64).sqrt();
    let mut w = Mat::zeros(p.n, p.data_len);
    if p.data_len > 1 {
        w.columns_mut(1, p.data_len - 1)
            .copy_from(&gaussian_matrix(rng, p.n, p.data_len - 1, std));
    }
    Signal::new(w)
}

/// `‖H_L(w̄)‖₂` for `trials` independent averaged-noise draws. Trial `i`
/// uses ChaCha20 stream `i` of `seed`.
pub fn hankel_norm_samples(p: &TailParams, horizon: usize, trials: usize, seed: u64) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            noise_hankel_norm(&sample_averaged_noise(p, &mut rng)?, horizon)
        })
        .collect()
}

/// Fraction of `samples` at or above `t`.
pub fn empirical_tail(samples: &[f64], t: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|&&s| s >= t).count() as f64 / samples.len() as f64
}

/// Nearest-rank percentile (`pct` in `(0, 100]`).
pub fn percentile(values: &[f64], pct: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("percentile of an empty sample".into()));
    }
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::InvalidArgument(format!("percentile {pct} must lie in (0, 100]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((pct / 100.0) * v.len() as f64).ceil() as usize;
    Ok(v[rank.clamp(1, v.len()) - 1])
}

/// What the bootstrap resamples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BootstrapMode {
    /// Noise estimated from the members' deviations from the ensemble mean.
    /// The deviations obey the plant dynamics without the shared input, so a
    /// pooled one-step regression of the deviations recovers per-member
    /// noise up to the regression error. No model is used.
    #[default]
    StateDeviation,
    /// The members' recorded noise, for validation.
    RecordedNoise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub percentile: f64,
    pub mode: BootstrapMode,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            resamples: 1000,
            percentile: 95.0,
            mode: BootstrapMode::StateDeviation,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapEstimate {
    pub epsilon: f64,
    /// Statistic of every resample.
    pub statistics: Vec<f64>,
}

/// Per-member noise records (stored alignment, first slot zero) centered
/// on the ensemble mean.
fn centered_noise(ens: &Ensemble, mode: BootstrapMode) -> Result<Vec<Mat>> {
    let members = ens.members();
    let k = members.len() as f64;
    let mean = |get: &dyn Fn(&Trajectory) -> &Mat| -> Mat {
        let mut acc = get(&members[0]).clone();
        for m in &members[1..] {
            acc += get(m);
        }
        acc / k
    };
    match mode {
        BootstrapMode::RecordedNoise => {
            let wbar = mean(&|t: &Trajectory| t.w().samples());
            Ok(members
                .iter()
                .map(|m| {
                    let mut d = m.w().samples() - &wbar;
                    d.column_mut(0).fill(0.0);
                    d
                })
                .collect())
        }
        BootstrapMode::StateDeviation => {
            let xbar = mean(&|t: &Trajectory| t.x().samples());
            let ubar = mean(&|t: &Trajectory| t.u().samples());
            let dx: Vec<Mat> = members.iter().map(|m| m.x().samples() - &xbar).collect();
            let du: Vec<Mat> = members.iter().map(|m| m.u().samples() - &ubar).collect();
            let (n, t) = (dx[0].nrows(), dx[0].ncols());
            if t < 2 {
                return Err(Error::InvalidArgument("bootstrap needs trajectories of length >= 2".into()));
            }
            let next: Vec<Mat> = dx.iter().map(|d| d.columns(1, t - 1).into_owned()).collect();
            let regressors: Vec<Mat> = dx
                .iter()
                .zip(&du)
                .map(|(x, u)| vstack(&[&x.columns(0, t - 1).into_owned(), &u.columns(0, t - 1).into_owned()]))
                .collect();
            let next_all = crate::blockops::hstack(&next.iter().collect::<Vec<_>>());
            let reg_all = crate::blockops::hstack(&regressors.iter().collect::<Vec<_>>());
            let theta = &next_all * pinv(&reg_all);
            Ok(next
                .iter()
                .zip(&regressors)
                .map(|(y, z)| {
                    let mut w = Mat::zeros(n, t);
                    w.columns_mut(1, t - 1).copy_from(&(y - &theta * z));
                    w
                })
                .collect())
        }
    }
}

/// Bootstrap estimate of `‖H_L(w̄)‖₂` for the ensemble average: resample
/// members with replacement, average their centered noise estimates, and
/// take the requested nearest-rank percentile of the Hankel norm.
pub fn bootstrap_epsilon(ens: &Ensemble, horizon: usize, opts: &BootstrapOptions) -> Result<BootstrapEstimate> {
    let n_members = ens.len();
    if n_members < 2 {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs at least 2 trajectories, got {n_members}"
        )));
    }
    if opts.resamples == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one resample".into()));
    }
    let noise = centered_noise(ens, opts.mode)?;
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut statistics = Vec::with_capacity(opts.resamples);
    let shape = noise[0].shape();
    for _ in 0..opts.resamples {
        let mut acc = Mat::zeros(shape.0, shape.1);
        for _ in 0..n_members {
            acc += &noise[rng.random_range(0..n_members)];
        }
        acc /= n_members as f64;
        statistics.push(noise_hankel_norm(&Signal::new(acc)?, horizon)?);
    }
    Ok(BootstrapEstimate {
        epsilon: percentile(&statistics, opts.percentile)?,
        statistics,
    })
}

/// Sample variance of every entry of the averaged noise over `trials`
/// direct draws, pooled over entries. Used to check `Var(w̄) = σ²/N`.
pub fn averaged_noise_variance(p: &TailParams, trials: usize, seed: u64) -> Result<f64> {
    if trials < 2 {
        return Err(Error::InvalidArgument("variance needs at least two trials".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let cells = p.n * (p.data_len - 1);
    let mut sum = Vector::zeros(cells);
    let mut sumsq = Vector::zeros(cells);
    for _ in 0..trials {
        let w = sample_averaged_noise(p, &mut rng)?;
        let v = Vector::from_iterator(cells, w.samples().columns(1, p.data_len - 1).iter().copied());
        sumsq += v.component_mul(&v);
        sum += v;
    }
    let k = trials as f64;
    let var = sumsq.iter().zip(sum.iter()).map(|(s2, s)| (s2 - s * s / k) / (k - 1.0)).sum::<f64>();
    Ok(var / cells as f64)
}
