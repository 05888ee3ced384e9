//! Dense matrix helpers and the structured block operators shared by every
//! other module: Kronecker products, the block downshift `Z`, the horizontal
//! shift stack `[I Z ... Z^{L-1}]`, observability and Toeplitz stacks, and
//! block-lower-triangular (causal) operators.
//!
//! Spectral norms, ranks and pseudoinverses all go through the SVD. Rank
//! decisions use the threshold `max(rows, cols) * eps * sigma_max`.
//! Decompositions are delegated to `faer`; nalgebra's SVD loses accuracy on
//! matrices with clustered singular values.

use faer::Side;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Block-diagonal matrix with the given blocks along the diagonal.
pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Vertical concatenation. All parts must share a column count.
pub fn vstack(parts: &[&Mat]) -> Mat {
    let cols = parts.first().map_or(0, |p| p.ncols());
    assert!(parts.iter().all(|p| p.ncols() == cols), "vstack: column mismatch");
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.nrows()).copy_from(*p);
        r += p.nrows();
    }
    out
}

/// Horizontal concatenation. All parts must share a row count.
pub fn hstack(parts: &[&Mat]) -> Mat {
    let rows = parts.first().map_or(0, |p| p.nrows());
    assert!(parts.iter().all(|p| p.nrows() == rows), "hstack: row mismatch");
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for p in parts {
        out.columns_mut(c, p.ncols()).copy_from(*p);
        c += p.ncols();
    }
    out
}

/// `nL x nL` block downshift: `I_n` on the first block subdiagonal.
pub fn block_downshift(horizon: usize, block: usize) -> Mat {
    let dim = horizon * block;
    let mut z = Mat::zeros(dim, dim);
    for k in 1..horizon {
        for d in 0..block {
            z[(k * block + d, (k - 1) * block + d)] = 1.0;
        }
    }
    z
}

/// Applies `Z^shift` to a matrix with `block`-row blocks without forming `Z`.
pub fn shift_down(m: &Mat, shift: usize, block: usize) -> Mat {
    let rows = m.nrows();
    let mut out = Mat::zeros(rows, m.ncols());
    let offset = shift * block;
    if offset < rows {
        out.rows_mut(offset, rows - offset)
            .copy_from(&m.rows(0, rows - offset));
    }
    out
}

/// Horizontal stack `[I Z Z^2 ... Z^{L-1}]` of size `nL x nL·L`.
pub fn z_stack(horizon: usize, block: usize) -> Mat {
    let dim = horizon * block;
    let eye = Mat::identity(dim, dim);
    let mut out = Mat::zeros(dim, dim * horizon);
    for k in 0..horizon {
        out.columns_mut(k * dim, dim)
            .copy_from(&shift_down(&eye, k, block));
    }
    out
}

/// Observability-style stack `[I; A; A^2; ...; A^{L-1}]`.
pub fn obs_stack(a: &Mat, horizon: usize) -> Mat {
    assert!(a.is_square(), "obs_stack: A must be square");
    let n = a.nrows();
    let mut out = Mat::zeros(n * horizon, n);
    let mut power = Mat::identity(n, n);
    for k in 0..horizon {
        out.rows_mut(k * n, n).copy_from(&power);
        power = a * &power;
    }
    out
}

/// Strictly lower block Toeplitz stack with block `(i, j) = A^{i-j-1} X` for
/// `i > j` and zeros on and above the diagonal.
pub fn toeplitz_stack(a: &Mat, x: &Mat, horizon: usize) -> Mat {
    assert!(a.is_square(), "toeplitz_stack: A must be square");
    assert_eq!(a.nrows(), x.nrows(), "toeplitz_stack: X rows must match A");
    let (n, q) = x.shape();
    let mut out = Mat::zeros(n * horizon, q * horizon);
    // powers[k] = A^k X
    let mut powers = Vec::with_capacity(horizon);
    let mut cur = x.clone();
    for _ in 0..horizon.saturating_sub(1) {
        powers.push(cur.clone());
        cur = a * &cur;
    }
    for i in 1..horizon {
        for j in 0..i {
            out.view_mut((i * n, j * q), (n, q))
                .copy_from(&powers[i - j - 1]);
        }
    }
    out
}

fn to_faer(m: &Mat) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> Mat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Singular value decomposition `m = u diag(s) vᵀ` with `s` nonincreasing.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub s: Vector,
    pub v: Mat,
}

impl Svd {
    pub fn recompose(&self) -> Mat {
        &self.u * Mat::from_diagonal(&self.s) * self.v.transpose()
    }
}

/// Thin SVD. `full` returns square `u` and `v` instead.
///
/// # Panics
/// If the decomposition fails to converge, which only happens for
/// non-finite input.
pub fn svd(m: &Mat, full: bool) -> Svd {
    let (rows, cols) = m.shape();
    if m.is_empty() {
        let (ur, vr) = if full { (rows, cols) } else { (0, 0) };
        return Svd {
            u: Mat::identity(rows, ur),
            s: Vector::zeros(0),
            v: Mat::identity(cols, vr),
        };
    }
    let f = to_faer(m);
    let dec = if full { f.svd() } else { f.thin_svd() }.expect("svd of a finite matrix converges");
    let d = dec.S().column_vector();
    Svd {
        u: from_faer(dec.U()),
        s: Vector::from_fn(d.nrows(), |k, _| d[k]),
        v: from_faer(dec.V()),
    }
}

/// Eigenvalues (nondecreasing) and orthonormal eigenvectors of the
/// symmetric part of `m`.
pub fn symmetric_eigen(m: &Mat) -> (Vector, Mat) {
    if m.is_empty() {
        return (Vector::zeros(0), Mat::zeros(m.nrows(), 0));
    }
    let f = to_faer(&symmetrize(m));
    let dec = f
        .self_adjoint_eigen(Side::Lower)
        .expect("eigendecomposition of a finite symmetric matrix converges");
    let d = dec.S().column_vector();
    (Vector::from_fn(d.nrows(), |k, _| d[k]), from_faer(dec.U()))
}

pub fn singular_values(m: &Mat) -> Vector {
    if m.is_empty() {
        return Vector::zeros(0);
    }
    let sv = to_faer(m).singular_values().expect("svd of a finite matrix converges");
    Vector::from_vec(sv)
}

/// Spectral norm (largest singular value). Zero for empty matrices.
///
/// Taken as the square root of the top eigenvalue of the smaller Gram
/// matrix, which is accurate relative to the norm itself and several times
/// cheaper than an SVD.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    let ev = to_faer(&gram)
        .self_adjoint_eigenvalues(Side::Lower)
        .expect("eigendecomposition of a finite symmetric matrix converges");
    ev.into_iter().fold(0.0, f64::max).sqrt()
}

pub fn frobenius_norm(m: &Mat) -> f64 {
    m.norm()
}

/// Largest absolute entry.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Rank threshold shared by every rank decision in the crate.
pub fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

pub fn numerical_rank(m: &Mat) -> usize {
    let sv = singular_values(m);
    if sv.is_empty() {
        return 0;
    }
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    let tol = rank_tolerance(m.nrows(), m.ncols(), smax);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Moore-Penrose pseudoinverse via SVD, truncating with the shared rank rule.
pub fn pinv(m: &Mat) -> Mat {
    let (rows, cols) = m.shape();
    if m.is_empty() {
        return Mat::zeros(cols, rows);
    }
    let dec = svd(m, false);
    let smax = dec.s.max();
    let tol = rank_tolerance(rows, cols, smax);
    let mut out = Mat::zeros(cols, rows);
    for (k, &s) in dec.s.iter().enumerate() {
        if s > tol && s > 0.0 {
            out += (dec.v.column(k) / s) * dec.u.column(k).transpose();
        }
    }
    out
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn nullspace(m: &Mat) -> Mat {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Mat::zeros(0, 0);
    }
    if rows == 0 || max_abs(m) == 0.0 {
        return Mat::identity(cols, cols);
    }
    let dec = svd(m, true);
    let tol = rank_tolerance(rows, cols, dec.s.max());
    let null_idx: Vec<usize> = (0..cols).filter(|&k| k >= dec.s.len() || dec.s[k] <= tol).collect();
    let mut basis = Mat::zeros(cols, null_idx.len());
    for (c, &k) in null_idx.iter().enumerate() {
        basis.set_column(c, &dec.v.column(k));
    }
    basis
}

/// Symmetric PSD square root; tiny negative eigenvalues are clamped to zero.
pub fn psd_sqrt(m: &Mat) -> Mat {
    if m.is_empty() {
        return m.clone();
    }
    let (vals, vecs) = symmetric_eigen(m);
    let d = vals.map(|l| l.max(0.0).sqrt());
    &vecs * Mat::from_diagonal(&d) * vecs.transpose()
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    symmetric_eigen(m).0.min()
}

fn is_symmetric(m: &Mat, rel_tol: f64) -> bool {
    let scale = max_abs(m).max(1.0);
    max_abs(&(m - m.transpose())) <= rel_tol * scale
}

/// Inverse of a block-lower-triangular matrix whose diagonal blocks are the
/// identity, by forward block substitution.
pub fn unit_lower_block_inverse(m: &Mat, block: usize) -> Result<Mat> {
    if !m.is_square() || block == 0 || !m.nrows().is_multiple_of(block) {
        return Err(Error::Dimension(format!(
            "unit lower inverse needs a square matrix tiled by {block}x{block} blocks, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let horizon = m.nrows() / block;
    let mut inv = Mat::zeros(m.nrows(), m.ncols());
    for j in 0..horizon {
        inv.view_mut((j * block, j * block), (block, block))
            .fill_with_identity();
        for i in (j + 1)..horizon {
            let mut acc = Mat::zeros(block, block);
            for k in j..i {
                let mik = m.view((i * block, k * block), (block, block));
                let xkj = inv.view((k * block, j * block), (block, block));
                acc -= mik * xkj;
            }
            inv.view_mut((i * block, j * block), (block, block))
                .copy_from(&acc);
        }
    }
    Ok(inv)
}

/// Inverse of a block-lower-triangular matrix with invertible diagonal
/// blocks, by forward block substitution.
pub fn lower_block_inverse(m: &Mat, block: usize) -> Result<Mat> {
    if !m.is_square() || block == 0 || !m.nrows().is_multiple_of(block) {
        return Err(Error::Dimension(format!(
            "lower block inverse needs a square matrix tiled by {block}x{block} blocks, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let horizon = m.nrows() / block;
    let mut diag_inv = Vec::with_capacity(horizon);
    for i in 0..horizon {
        let d = m.view((i * block, i * block), (block, block)).into_owned();
        let inv = d.try_inverse().ok_or_else(|| {
            Error::InvalidArgument(format!("diagonal block {i} is singular"))
        })?;
        diag_inv.push(inv);
    }
    let mut inv = Mat::zeros(m.nrows(), m.ncols());
    for (j, dj) in diag_inv.iter().enumerate() {
        inv.view_mut((j * block, j * block), (block, block))
            .copy_from(dj);
        for (i, di) in diag_inv.iter().enumerate().skip(j + 1) {
            let mut acc = Mat::zeros(block, block);
            for k in j..i {
                let mik = m.view((i * block, k * block), (block, block));
                let xkj = inv.view((k * block, j * block), (block, block));
                acc -= mik * xkj;
            }
            let blk = di * acc;
            inv.view_mut((i * block, j * block), (block, block))
                .copy_from(&blk);
        }
    }
    Ok(inv)
}

/// Tolerance used when validating block-triangular structure of computed
/// operators.
const STRUCTURE_TOL: f64 = 1e-9;

/// Block-lower-triangular (causal) linear operator over a horizon `L`, with
/// `p x q` blocks, stored densely as a `pL x qL` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LtvOperator {
    horizon: usize,
    block_rows: usize,
    block_cols: usize,
    dense: Mat,
}

impl LtvOperator {
    /// Wraps a dense matrix as a causal operator. Blocks above the diagonal
    /// must vanish to within a small relative tolerance; they are then set to
    /// exact zeros.
    pub fn causal(horizon: usize, block_rows: usize, block_cols: usize, dense: Mat) -> Result<Self> {
        let mut op = Self::checked(horizon, block_rows, block_cols, dense)?;
        op.enforce_zero_blocks(|i, j| j > i, "causal")?;
        Ok(op)
    }

    /// Like [`LtvOperator::causal`] but the diagonal blocks must vanish too.
    pub fn strictly_causal(
        horizon: usize,
        block_rows: usize,
        block_cols: usize,
        dense: Mat,
    ) -> Result<Self> {
        let mut op = Self::checked(horizon, block_rows, block_cols, dense)?;
        op.enforce_zero_blocks(|i, j| j >= i, "strictly causal")?;
        Ok(op)
    }

    pub fn zeros(horizon: usize, block_rows: usize, block_cols: usize) -> Self {
        Self {
            horizon,
            block_rows,
            block_cols,
            dense: Mat::zeros(horizon * block_rows, horizon * block_cols),
        }
    }

    pub fn identity(horizon: usize, block: usize) -> Self {
        Self {
            horizon,
            block_rows: block,
            block_cols: block,
            dense: Mat::identity(horizon * block, horizon * block),
        }
    }

    /// Memoryless (block-diagonal) operator from per-step blocks.
    pub fn block_diagonal(blocks: &[Mat]) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::InvalidArgument("block_diagonal needs at least one block".into()))?;
        let (p, q) = first.shape();
        if blocks.iter().any(|b| b.shape() != (p, q)) {
            return Err(Error::Dimension("block_diagonal blocks must share a shape".into()));
        }
        Ok(Self {
            horizon: blocks.len(),
            block_rows: p,
            block_cols: q,
            dense: block_diag(blocks),
        })
    }

    fn checked(horizon: usize, block_rows: usize, block_cols: usize, dense: Mat) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if dense.shape() != (horizon * block_rows, horizon * block_cols) {
            return Err(Error::Dimension(format!(
                "operator with horizon {horizon} and {block_rows}x{block_cols} blocks must be {}x{}, got {}x{}",
                horizon * block_rows,
                horizon * block_cols,
                dense.nrows(),
                dense.ncols()
            )));
        }
        if dense.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("operator has non-finite entries".into()));
        }
        Ok(Self {
            horizon,
            block_rows,
            block_cols,
            dense,
        })
    }

    fn enforce_zero_blocks(&mut self, zero: impl Fn(usize, usize) -> bool, what: &str) -> Result<()> {
        let tol = STRUCTURE_TOL * max_abs(&self.dense).max(1.0);
        let (p, q) = (self.block_rows, self.block_cols);
        for i in 0..self.horizon {
            for j in 0..self.horizon {
                if !zero(i, j) {
                    continue;
                }
                let mut view = self.dense.view_mut((i * p, j * q), (p, q));
                let worst = view.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
                if worst > tol {
                    return Err(Error::Structure(format!(
                        "operator is not {what}: block ({i},{j}) has entry {worst:e}"
                    )));
                }
                view.fill(0.0);
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn block_rows(&self) -> usize {
        self.block_rows
    }

    pub fn block_cols(&self) -> usize {
        self.block_cols
    }

    pub fn dense(&self) -> &Mat {
        &self.dense
    }

    pub fn into_dense(self) -> Mat {
        self.dense
    }

    pub fn block(&self, i: usize, j: usize) -> Mat {
        self.dense
            .view((i * self.block_rows, j * self.block_cols), (self.block_rows, self.block_cols))
            .into_owned()
    }

    /// Block column `j` as a `pL x q` matrix.
    pub fn block_column(&self, j: usize) -> Mat {
        self.dense.columns(j * self.block_cols, self.block_cols).into_owned()
    }

    pub fn is_causal(&self, tol: f64) -> bool {
        self.blocks_below(tol, |i, j| j > i)
    }

    pub fn is_strictly_causal(&self, tol: f64) -> bool {
        self.blocks_below(tol, |i, j| j >= i)
    }

    fn blocks_below(&self, tol: f64, zero: impl Fn(usize, usize) -> bool) -> bool {
        (0..self.horizon).all(|i| {
            (0..self.horizon)
                .filter(|&j| zero(i, j))
                .all(|j| max_abs(&self.block(i, j)) <= tol)
        })
    }

    pub fn spectral_norm(&self) -> f64 {
        spectral_norm(&self.dense)
    }
}

/// Quadratic cost weights `(Q, R, Q_F)`. The lifted state weight is
/// `I_L ⊗ Q` with `Q_F` installed as its last diagonal block; the lifted input
/// weight is `I_L ⊗ R`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    q: Mat,
    r: Mat,
    q_final: Mat,
}

impl CostWeights {
    pub fn new(q: Mat, r: Mat, q_final: Mat) -> Result<Self> {
        if !q.is_square() || !r.is_square() || q_final.shape() != q.shape() {
            return Err(Error::Dimension(
                "Q and Q_F must be n x n and R must be m x m".into(),
            ));
        }
        for (name, m) in [("Q", &q), ("R", &r), ("Q_F", &q_final)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} has non-finite entries")));
            }
            if !is_symmetric(m, 1e-12) {
                return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
            }
        }
        for (name, m) in [("Q", &q), ("Q_F", &q_final)] {
            if min_eigenvalue(m) < -1e-10 * max_abs(m).max(1.0) {
                return Err(Error::InvalidArgument(format!("{name} is not positive semidefinite")));
            }
        }
        if r.nrows() > 0 && min_eigenvalue(&r) <= 0.0 {
            return Err(Error::InvalidArgument("R must be positive definite".into()));
        }
        Ok(Self {
            q: symmetrize(&q),
            r: symmetrize(&r),
            q_final: symmetrize(&q_final),
        })
    }

    /// Weights without a distinct terminal cost (`Q_F = Q`).
    pub fn running(q: Mat, r: Mat) -> Result<Self> {
        let qf = q.clone();
        Self::new(q, r, qf)
    }

    pub fn q(&self) -> &Mat {
        &self.q
    }

    pub fn r(&self) -> &Mat {
        &self.r
    }

    pub fn q_final(&self) -> &Mat {
        &self.q_final
    }

    pub fn with_terminal(&self, q_final: Mat) -> Result<Self> {
        Self::new(self.q.clone(), self.r.clone(), q_final)
    }

    pub fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.r.nrows()
    }

    /// Lifted state weight (`nL x nL`).
    pub fn lifted_q(&self, horizon: usize) -> Mat {
        let mut blocks = vec![self.q.clone(); horizon];
        if let Some(last) = blocks.last_mut() {
            *last = self.q_final.clone();
        }
        block_diag(&blocks)
    }

    /// Lifted input weight (`mL x mL`).
    pub fn lifted_r(&self, horizon: usize) -> Mat {
        kron(&Mat::identity(horizon, horizon), &self.r)
    }

    /// `blkdiag(𝒬^{1/2}, ℛ^{1/2})`, the left factor of the cost functional.
    pub fn lifted_sqrt(&self, horizon: usize) -> Mat {
        let qs = psd_sqrt(&self.q);
        let qfs = psd_sqrt(&self.q_final);
        let rs = psd_sqrt(&self.r);
        let mut blocks = vec![qs; horizon];
        if let Some(last) = blocks.last_mut() {
            *last = qfs;
        }
        blocks.extend(std::iter::repeat_n(rs, horizon));
        block_diag(&blocks)
    }

    /// `‖Q^{1/2}‖_F = sqrt(tr Q)`.
    pub fn q_half_frobenius(&self) -> f64 {
        self.q.trace().max(0.0).sqrt()
    }

    /// `‖𝒬^{1/2}‖_F / sqrt(L)`: equals `‖Q^{1/2}‖_F` when `Q_F = Q`, and is
    /// the per-step equivalent once a terminal weight is installed.
    pub fn lifted_q_half_frobenius_per_step(&self, horizon: usize) -> f64 {
        let total = (horizon.saturating_sub(1)) as f64 * self.q.trace() + self.q_final.trace();
        (total.max(0.0) / horizon as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn benchmark_a() -> Mat {
        Mat::from_row_slice(3, 3, &[1.01, 0.01, 0.0, 0.01, 1.01, 0.01, 0.0, 0.01, 1.01])
    }

    fn mat_from(rows: usize, cols: usize, vals: &[f64]) -> Mat {
        Mat::from_row_slice(rows, cols, vals)
    }

    #[test]
    fn downshift_small_cases() {
        assert_eq!(block_downshift(1, 3), Mat::zeros(3, 3));
        assert_eq!(block_downshift(2, 1), mat_from(2, 2, &[0.0, 0.0, 1.0, 0.0]));
    }

    #[test]
    fn downshift_is_nilpotent() {
        let z = block_downshift(5, 2);
        let mut p = Mat::identity(10, 10);
        for k in 0..5 {
            if k > 0 {
                assert!(max_abs(&p) > 0.0, "Z^{k} must not vanish yet");
            }
            p = &z * p;
        }
        assert_eq!(p, Mat::zeros(10, 10));
    }

    #[test]
    fn shift_down_matches_explicit_power() {
        let m = Mat::from_fn(8, 3, |i, j| (i * 3 + j) as f64 + 0.5);
        let z = block_downshift(4, 2);
        let mut zk = Mat::identity(8, 8);
        for k in 0..5 {
            assert_eq!(shift_down(&m, k, 2), &zk * &m);
            zk = &z * zk;
        }
    }

    #[test]
    fn z_stack_small_cases() {
        assert_eq!(z_stack(1, 3), Mat::identity(3, 3));
        let expect = mat_from(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(z_stack(2, 1), expect);
    }

    #[test]
    fn z_stack_norm_bounded_by_sqrt_horizon() {
        for l in 1..=6 {
            for n in 1..=3 {
                let s = spectral_norm(&z_stack(l, n));
                assert!(s <= (l as f64).sqrt() + 1e-12, "L={l} n={n} norm {s}");
                // The first block row collects one identity per term.
                assert_abs_diff_eq!(s, (l as f64).sqrt(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn obs_stack_examples() {
        let o = obs_stack(&Mat::zeros(2, 2), 3);
        assert_eq!(o.rows(0, 2), Mat::identity(2, 2));
        assert_eq!(o.rows(2, 4), Mat::zeros(4, 2));
        assert_abs_diff_eq!(spectral_norm(&o), 1.0, epsilon = 1e-14);

        let o = obs_stack(&Mat::identity(1, 1), 4);
        assert_eq!(o, Mat::from_element(4, 1, 1.0));
        assert_abs_diff_eq!(spectral_norm(&o), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn obs_stack_benchmark_system_exceeds_one() {
        let a = benchmark_a();
        let o = obs_stack(&a, 10);
        // Oracle: explicit power accumulation and the Gram matrix sum.
        let mut gram = Mat::zeros(3, 3);
        let mut p = Mat::identity(3, 3);
        for _ in 0..10 {
            gram += p.transpose() * &p;
            p = &a * p;
        }
        let expect = gram.symmetric_eigenvalues().max().sqrt();
        let s = spectral_norm(&o);
        assert_abs_diff_eq!(s, expect, epsilon = 1e-10);
        assert!(s > 1.0);
    }

    #[test]
    fn toeplitz_examples() {
        let a = benchmark_a();
        assert_eq!(toeplitz_stack(&a, &Mat::identity(3, 3), 1), Mat::zeros(3, 3));

        let t = toeplitz_stack(&Mat::zeros(2, 2), &Mat::identity(2, 2), 3);
        assert_eq!(t, block_downshift(3, 2));
        assert_abs_diff_eq!(spectral_norm(&t), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn toeplitz_blocks_follow_power_pattern() {
        let a = benchmark_a();
        let x = Mat::from_row_slice(3, 2, &[1.0, 2.0, 0.0, -1.0, 0.5, 0.25]);
        let l = 5;
        let t = toeplitz_stack(&a, &x, l);
        for i in 0..l {
            for j in 0..l {
                let blk = t.view((i * 3, j * 2), (3, 2)).into_owned();
                if i > j {
                    let mut p = x.clone();
                    for _ in 0..(i - j - 1) {
                        p = &a * p;
                    }
                    assert_abs_diff_eq!(blk, p, epsilon = 1e-14);
                } else {
                    assert_eq!(blk, Mat::zeros(3, 2));
                }
            }
        }
    }

    #[test]
    fn toeplitz_benchmark_norm_for_bounds() {
        // T = 45, L = 10 gives a 36-block stack. Oracle: same SVD on an
        // independently accumulated Neumann-series form sum_k Z^k (I ⊗ A^{k-1}).
        let a = benchmark_a();
        let h = 36;
        let t = toeplitz_stack(&a, &Mat::identity(3, 3), h);
        let z = block_downshift(h, 3);
        let mut acc = Mat::zeros(3 * h, 3 * h);
        let mut zk = z.clone();
        let mut ak = Mat::identity(3, 3);
        for _ in 1..h {
            acc += &zk * kron(&Mat::identity(h, h), &ak);
            zk = &z * zk;
            ak = &a * ak;
        }
        assert_abs_diff_eq!(t, acc, epsilon = 1e-9);
        let s = spectral_norm(&t);
        assert!(s > 20.0 && s.is_finite(), "unexpected norm {s}");
    }

    #[test]
    fn downshift_commutes_with_toeplitz_rows() {
        let a = benchmark_a();
        let x = Mat::identity(3, 3);
        for l in 1..=6 {
            let t = toeplitz_stack(&a, &x, l);
            let lhs = block_downshift(l, 3) * &t;
            assert_eq!(lhs, shift_down(&t, 1, 3));
        }
    }

    #[test]
    fn pinv_and_rank() {
        let m = mat_from(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert_eq!(numerical_rank(&m), 1);
        let p = pinv(&m);
        assert_abs_diff_eq!(&m * &p * &m, m, epsilon = 1e-12);
        assert_eq!(numerical_rank(&Mat::zeros(3, 3)), 0);
    }

    #[test]
    fn nullspace_is_orthonormal_complement() {
        let m = mat_from(2, 4, &[1.0, 0.0, 1.0, 2.0, 0.0, 1.0, -1.0, 0.5]);
        let n = nullspace(&m);
        assert_eq!(n.shape(), (4, 2));
        assert!(max_abs(&(&m * &n)) < 1e-12);
        assert_abs_diff_eq!(n.transpose() * &n, Mat::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn unit_lower_inverse_matches_general_inverse() {
        let l = 4;
        let b = 2;
        let mut m = Mat::from_fn(l * b, l * b, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        for i in 0..l {
            for j in i..l {
                let fill = if i == j { Mat::identity(b, b) } else { Mat::zeros(b, b) };
                m.view_mut((i * b, j * b), (b, b)).copy_from(&fill);
            }
        }
        let inv = unit_lower_block_inverse(&m, b).unwrap();
        assert_abs_diff_eq!(&m * &inv, Mat::identity(l * b, l * b), epsilon = 1e-10);
        let op = LtvOperator::causal(l, b, b, inv).unwrap();
        for i in 0..l {
            assert_eq!(op.block(i, i), Mat::identity(b, b));
        }
    }

    #[test]
    fn ltv_operator_rejects_noncausal() {
        let mut m = Mat::zeros(4, 4);
        m[(0, 3)] = 1.0;
        assert!(matches!(LtvOperator::causal(2, 2, 2, m), Err(Error::Structure(_))));
        assert!(matches!(
            LtvOperator::strictly_causal(2, 2, 2, Mat::identity(4, 4)),
            Err(Error::Structure(_))
        ));
        assert!(matches!(
            LtvOperator::causal(2, 2, 2, Mat::zeros(3, 4)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn cost_weights_validation_and_lifting() {
        let q = Mat::identity(2, 2) * 2.0;
        let r = Mat::identity(1, 1);
        let qf = Mat::identity(2, 2) * 5.0;
        let w = CostWeights::new(q.clone(), r.clone(), qf).unwrap();
        let lq = w.lifted_q(3);
        assert_eq!(lq[(0, 0)], 2.0);
        assert_eq!(lq[(5, 5)], 5.0);
        let s = w.lifted_sqrt(3);
        assert_eq!(s.shape(), (9, 9));
        assert_abs_diff_eq!(s[(4, 4)], 5.0_f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(s[(8, 8)], 1.0, epsilon = 1e-12);

        assert!(CostWeights::running(q.clone(), Mat::zeros(1, 1)).is_err());
        let asym = mat_from(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(CostWeights::running(asym, r).is_err());
    }

    fn small_matrix(max: usize) -> impl Strategy<Value = Mat> {
        (1..=max, 1..=max).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-2.0..2.0_f64, r * c)
                .prop_map(move |v| Mat::from_row_slice(r, c, &v))
        })
    }

    #[test]
    fn lower_inverse_with_general_diagonal() {
        let mut m = Mat::from_fn(6, 6, |i, j| ((i * 5 + j * 2) % 7) as f64 * 0.3 - 1.0);
        for i in 0..3 {
            for j in (i + 1)..3 {
                m.view_mut((i * 2, j * 2), (2, 2)).fill(0.0);
            }
            m.view_mut((i * 2, i * 2), (2, 2))
                .copy_from(&(Mat::identity(2, 2) * (2.0 + i as f64)));
        }
        let inv = lower_block_inverse(&m, 2).unwrap();
        assert_abs_diff_eq!(&m * &inv, Mat::identity(6, 6), epsilon = 1e-12);
        assert!(lower_block_inverse(&Mat::zeros(4, 4), 2).is_err());
    }

    proptest! {
        #[test]
        fn spectral_norm_matches_top_singular_value(a in small_matrix(8), b in small_matrix(8)) {
            // Products of random factors include rank-deficient shapes.
            let m = if a.ncols() == b.nrows() { &a * &b } else { a };
            let sv = singular_values(&m).max();
            prop_assert!((spectral_norm(&m) - sv).abs() <= 1e-13 * sv.max(1e-300));
        }

        #[test]
        fn kron_norm_is_multiplicative(a in small_matrix(4), b in small_matrix(4)) {
            let lhs = spectral_norm(&kron(&a, &b));
            let rhs = spectral_norm(&a) * spectral_norm(&b);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs));
        }

        #[test]
        fn unit_lower_inverse_stays_unit_lower(vals in proptest::collection::vec(-1.0..1.0_f64, 36), l in 1usize..=3) {
            let b = 2;
            let dim = l * b;
            let mut m = Mat::identity(dim, dim);
            for i in 0..dim {
                for j in 0..dim {
                    if i / b > j / b {
                        m[(i, j)] = vals[(i * dim + j) % vals.len()];
                    }
                }
            }
            let inv = unit_lower_block_inverse(&m, b).unwrap();
            let op = LtvOperator::causal(l, b, b, inv.clone()).unwrap();
            for i in 0..l {
                prop_assert_eq!(op.block(i, i), Mat::identity(b, b));
            }
            prop_assert!(max_abs(&(&m * &inv - Mat::identity(dim, dim))) < 1e-10);
        }
    }
}
