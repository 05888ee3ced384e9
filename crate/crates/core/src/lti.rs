//! Linear time-invariant plant `x(t+1) = A x(t) + B u(t) + w(t)`, noisy
//! simulation, ensembles sharing one input, and trajectory averaging.
//!
//! Noise records follow the convention `w(-1) = x(0)`: the stored noise
//! signal of a length-`T` trajectory is `(x(0), w(0), ..., w(T-2))`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::blockops::{Mat, Vector};
use crate::error::{Error, Result};
use crate::hankel::Signal;
use crate::io::{fmt_f64, parse_f64, write_atomic, write_json};

#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: Mat,
    b: Mat,
    noise_std: f64,
}

impl LtiSystem {
    pub fn new(a: Mat, b: Mat, noise_std: f64) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() {
            return Err(Error::Dimension(format!(
                "A must be n x n and B n x m, got {}x{} and {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise std {noise_std} must be finite and >= 0")));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("A and B must be finite".into()));
        }
        Ok(Self { a, b, noise_std })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_std * self.noise_std
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn with_noise_std(&self, noise_std: f64) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), noise_std)
    }
}

/// Three-node graph Laplacian system that is slightly unstable, with full
/// actuation and noise variance 0.1.
pub fn laplacian_benchmark() -> LtiSystem {
    let a = Mat::from_row_slice(3, 3, &[1.01, 0.01, 0.0, 0.01, 1.01, 0.01, 0.0, 0.01, 1.01]);
    LtiSystem::new(a, Mat::identity(3, 3), 0.1_f64.sqrt()).expect("benchmark system is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    x: Signal,
    u: Signal,
    w: Signal,
}

impl Trajectory {
    /// `w` is the stored noise record `(x(0), w(0), ..., w(T-2))`.
    pub fn new(x: Signal, u: Signal, w: Signal) -> Result<Self> {
        let t = x.horizon();
        if u.horizon() != t || w.horizon() != t || w.dim() != x.dim() {
            return Err(Error::Dimension(format!(
                "trajectory signals disagree: x {}x{}, u {}x{}, w {}x{}",
                x.dim(),
                t,
                u.dim(),
                u.horizon(),
                w.dim(),
                w.horizon()
            )));
        }
        if t == 0 {
            return Err(Error::InvalidArgument("trajectory horizon must be positive".into()));
        }
        let gap = (x.samples().column(0) - w.samples().column(0)).amax();
        if gap > 1e-12 * (1.0 + x.samples().column(0).amax()) {
            return Err(Error::Mismatch("stored noise must start with x(0)".into()));
        }
        Ok(Self { x, u, w })
    }

    pub fn x(&self) -> &Signal {
        &self.x
    }

    pub fn u(&self) -> &Signal {
        &self.u
    }

    /// Stored noise record, starting with `x(0)`.
    pub fn w(&self) -> &Signal {
        &self.w
    }

    pub fn horizon(&self) -> usize {
        self.x.horizon()
    }

    pub fn x0(&self) -> Vector {
        self.x.sample(0)
    }

    /// Driving noise `w(0), ..., w(T-2)` as an `n x (T-1)` matrix.
    pub fn driving_noise(&self) -> Mat {
        let t = self.horizon();
        self.w.samples().columns(1, t - 1).into_owned()
    }

    /// Largest entry of `x(t+1) - A x(t) - B u(t) - w(t)` over the record.
    pub fn dynamics_residual(&self, sys: &LtiSystem) -> f64 {
        let (x, u, w) = (self.x.samples(), self.u.samples(), self.w.samples());
        let mut worst = 0.0_f64;
        for t in 0..self.horizon().saturating_sub(1) {
            let r = x.column(t + 1) - sys.a() * x.column(t) - sys.b() * u.column(t) - w.column(t + 1);
            worst = worst.max(r.amax());
        }
        worst
    }

    /// One row per time step: `t, x..., u..., w...` where the `w` columns of
    /// row `t` hold `w(t-1)`.
    pub fn to_csv(&self) -> Result<String> {
        let (n, m) = (self.x.dim(), self.u.dim());
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.extend((1..=n).map(|i| format!("w{i}")));
        wtr.write_record(&header)?;
        for t in 0..self.horizon() {
            let mut row = vec![t.to_string()];
            row.extend(self.x.samples().column(t).iter().map(|&v| fmt_f64(v)));
            row.extend(self.u.samples().column(t).iter().map(|&v| fmt_f64(v)));
            row.extend(self.w.samples().column(t).iter().map(|&v| fmt_f64(v)));
            wtr.write_record(&row)?;
        }
        let bytes = wtr
            .into_inner()
            .map_err(|e| Error::InvalidArgument(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(text: &str, n: usize, m: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        if headers.len() != 1 + 2 * n + m {
            return Err(Error::Dimension(format!(
                "expected {} columns for n={n}, m={m}, found {}",
                1 + 2 * n + m,
                headers.len()
            )));
        }
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| parse_f64(s.trim()))
                .collect::<Result<Vec<_>>>()?;
            cols.push(vals);
        }
        let t = cols.len();
        let pick = |off: usize, dim: usize| Mat::from_fn(dim, t, |i, k| cols[k][off + i]);
        Self::new(
            Signal::new(pick(0, n))?,
            Signal::new(pick(n, m))?,
            Signal::new(pick(n + m, n))?,
        )
    }
}

/// `rows x cols` matrix of i.i.d. `N(0, std²)` samples.
pub fn gaussian_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize, std: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        std * z
    })
}

/// Rolls the dynamics forward. `noise` holds `w(0), ..., w(T-2)` as columns.
pub fn simulate(sys: &LtiSystem, x0: &Vector, u: &Signal, noise: &Mat) -> Result<Trajectory> {
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let t = u.horizon();
    if x0.len() != n || u.dim() != m || t == 0 || noise.shape() != (n, t - 1) {
        return Err(Error::Dimension(format!(
            "simulate needs x0 of length {n}, an {m}-dimensional input and {n}x{} noise; got {}, {}x{}, {}x{}",
            t.saturating_sub(1),
            x0.len(),
            u.dim(),
            t,
            noise.nrows(),
            noise.ncols()
        )));
    }
    let mut x = Mat::zeros(n, t);
    let mut w = Mat::zeros(n, t);
    x.set_column(0, x0);
    w.set_column(0, x0);
    w.columns_mut(1, t - 1).copy_from(noise);
    for k in 0..t - 1 {
        let next = sys.a() * x.column(k) + sys.b() * u.samples().column(k) + noise.column(k);
        x.set_column(k + 1, &next);
    }
    Trajectory::new(Signal::new(x)?, u.clone(), Signal::new(w)?)
}

/// Simulates with fresh noise `w(t) ~ N(0, σ² I)`.
pub fn simulate_noisy(sys: &LtiSystem, x0: &Vector, u: &Signal, rng: &mut ChaCha20Rng) -> Result<Trajectory> {
    let noise = gaussian_matrix(rng, sys.state_dim(), u.horizon().saturating_sub(1), sys.noise_std());
    simulate(sys, x0, u, &noise)
}

/// Draws the average of `members` trajectories that share `x0` and `u`
/// directly, sampling the averaged noise from `N(0, σ²/members · I)`.
/// Distributionally identical to averaging an ensemble, at the cost of one
/// simulation.
pub fn simulate_averaged(
    sys: &LtiSystem,
    x0: &Vector,
    u: &Signal,
    members: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Trajectory> {
    if members == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let std = sys.noise_std() / (members as f64).sqrt();
    let noise = gaussian_matrix(rng, sys.state_dim(), u.horizon().saturating_sub(1), std);
    simulate(sys, x0, u, &noise)
}

/// i.i.d. standard normal input of the given dimension and horizon.
pub fn gaussian_input(m: usize, horizon: usize, rng: &mut ChaCha20Rng) -> Signal {
    Signal::new(gaussian_matrix(rng, m, horizon, 1.0)).expect("gaussian samples are finite")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputPolicy {
    /// Every member replays the first member's input.
    #[default]
    Replay,
    /// Every member draws its own input; for diagnostics only.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnsembleOptions {
    pub x0: Option<Vector>,
    pub input: InputPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<Trajectory>,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "N")]
    pub members: usize,
    pub sigma2: f64,
    pub seed: u64,
}

impl Ensemble {
    pub fn new(members: Vec<Trajectory>, seed: u64) -> Result<Self> {
        let first = members.first().ok_or(Error::EmptyEnsemble)?;
        let shape = (first.x().dim(), first.u().dim(), first.horizon());
        if members
            .iter()
            .any(|t| (t.x().dim(), t.u().dim(), t.horizon()) != shape)
        {
            return Err(Error::Mismatch("ensemble members have different shapes".into()));
        }
        Ok(Self { members, seed })
    }

    pub fn members(&self) -> &[Trajectory] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn shares_input(&self) -> bool {
        let u0 = self.members[0].u();
        self.members.iter().all(|t| t.u() == u0)
    }

    pub fn manifest(&self, sigma2: f64) -> EnsembleManifest {
        let first = &self.members[0];
        EnsembleManifest {
            n: first.x().dim(),
            m: first.u().dim(),
            horizon: first.horizon(),
            members: self.len(),
            sigma2,
            seed: self.seed,
        }
    }

    /// Writes `member_XXXX.csv` files and `manifest.json` into `dir`.
    pub fn write_dir(&self, dir: &Path, sigma2: f64) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, t) in self.members.iter().enumerate() {
            write_atomic(&dir.join(member_file(i)), t.to_csv()?.as_bytes())?;
        }
        write_json(&dir.join("manifest.json"), &self.manifest(sigma2))
    }

    pub fn read_dir(dir: &Path) -> Result<(Self, EnsembleManifest)> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: EnsembleManifest = serde_json::from_str(&text)?;
        let mut members = Vec::with_capacity(manifest.members);
        for i in 0..manifest.members {
            let p = dir.join(member_file(i));
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            members.push(Trajectory::from_csv(&text, manifest.n, manifest.m)?);
        }
        Ok((Self::new(members, manifest.seed)?, manifest))
    }
}

fn member_file(i: usize) -> String {
    format!("member_{i:04}.csv")
}

/// Member `i` draws from ChaCha20 stream `i + 1` of `seed`; the shared
/// input comes from stream 0.
pub fn generate_ensemble(
    sys: &LtiSystem,
    horizon: usize,
    members: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<Ensemble> {
    if members == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let n = sys.state_dim();
    let x0 = opts.x0.clone().unwrap_or_else(|| Vector::zeros(n));
    let mut input_rng = ChaCha20Rng::seed_from_u64(seed);
    input_rng.set_stream(0);
    let shared = gaussian_input(sys.input_dim(), horizon, &mut input_rng);
    let trajectories = (0..members)
        .map(|i| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let u = match opts.input {
                InputPolicy::Replay => shared.clone(),
                InputPolicy::Independent => gaussian_input(sys.input_dim(), horizon, &mut rng),
            };
            simulate_noisy(sys, &x0, &u, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(trajectories, seed)
}

/// Coordinate-wise mean of the members' state, input and noise records.
pub fn average(ens: &Ensemble) -> Result<Trajectory> {
    let first = ens.members().first().ok_or(Error::EmptyEnsemble)?;
    let k = ens.len() as f64;
    let mut x = first.x().samples().clone();
    let mut u = first.u().samples().clone();
    let mut w = first.w().samples().clone();
    for t in &ens.members()[1..] {
        x += t.x().samples();
        u += t.u().samples();
        w += t.w().samples();
    }
    Trajectory::new(
        Signal::new(x / k)?,
        Signal::new(u / k)?,
        Signal::new(w / k)?,
    )
}
