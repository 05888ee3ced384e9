//! Signals, block-Hankel matrices, persistency of excitation, and
//! trajectory reconstruction from data.

use crate::blockops::{numerical_rank, pinv, vstack, Mat, Vector};
use crate::error::{Error, Result};

/// A sampled vector signal, stored as a `dim x T` matrix with one column per
/// time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal(Mat);

impl Signal {
    pub fn new(samples: Mat) -> Result<Self> {
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("signal has non-finite samples".into()));
        }
        Ok(Self(samples))
    }

    pub fn zeros(dim: usize, horizon: usize) -> Self {
        Self(Mat::zeros(dim, horizon))
    }

    /// Scalar signal from a slice.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(Mat::from_row_slice(1, values.len(), values))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.0.ncols()
    }

    pub fn sample(&self, t: usize) -> Vector {
        self.0.column(t).into_owned()
    }

    pub fn samples(&self) -> &Mat {
        &self.0
    }

    pub fn into_samples(self) -> Mat {
        self.0
    }

    /// Stacked window `σ(t), ..., σ(t+len-1)` as one vector.
    pub fn window(&self, t: usize, len: usize) -> Vector {
        let p = self.dim();
        let mut out = Vector::zeros(p * len);
        for k in 0..len {
            out.rows_mut(k * p, p).copy_from(&self.0.column(t + k));
        }
        out
    }
}

/// Order-`L` block-Hankel matrix of a signal: column `t` is the stacked
/// window `σ(t..t+L-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelMatrix {
    order: usize,
    block: usize,
    dense: Mat,
}

impl HankelMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Per-sample dimension of the source signal.
    pub fn block(&self) -> usize {
        self.block
    }

    pub fn width(&self) -> usize {
        self.dense.ncols()
    }

    pub fn dense(&self) -> &Mat {
        &self.dense
    }

    /// First block row, i.e. the order-1 Hankel matrix with the same number
    /// of columns as this one.
    pub fn top_block(&self) -> Mat {
        self.dense.rows(0, self.block).into_owned()
    }

    pub fn spectral_norm(&self) -> f64 {
        crate::blockops::spectral_norm(&self.dense)
    }
}

pub fn build_hankel(signal: &Signal, order: usize) -> Result<HankelMatrix> {
    let horizon = signal.horizon();
    if order == 0 || order > horizon {
        return Err(Error::Dimension(format!(
            "Hankel order {order} needs 1 <= order <= T = {horizon}"
        )));
    }
    let p = signal.dim();
    let width = horizon - order + 1;
    let mut dense = Mat::zeros(p * order, width);
    for t in 0..width {
        dense.set_column(t, &signal.window(t, order));
    }
    Ok(HankelMatrix {
        order,
        block: p,
        dense,
    })
}

/// Hankel matrix of the driving noise aligned with the state data.
///
/// `stored` holds `(x(0), w(0), ..., w(T-2))`. Column `t` of the result is
/// `(w(t), ..., w(t+L-1))`, so that with `x` the state record,
/// `H_L(x)` row block `k+1` minus the dynamics applied to row block `k`
/// equals row block `k` of this matrix. The unrecorded sample `w(T-1)` is
/// set to zero; it only ever enters through the last block row, which the
/// downshift discards.
pub fn forward_noise_hankel(stored: &Signal, order: usize) -> Result<HankelMatrix> {
    let horizon = stored.horizon();
    if horizon == 0 {
        return Err(Error::Dimension("noise signal is empty".into()));
    }
    let mut shifted = Mat::zeros(stored.dim(), horizon);
    shifted
        .columns_mut(0, horizon - 1)
        .copy_from(&stored.samples().columns(1, horizon - 1));
    build_hankel(&Signal(shifted), order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeReport {
    pub persistently_exciting: bool,
    pub rank: usize,
    pub required: usize,
    /// The horizon is too short for the Hankel matrix to have full row rank.
    pub horizon_infeasible: bool,
}

/// Persistency of excitation of the given order: full row rank of the
/// order-`k` Hankel matrix.
pub fn is_pe(signal: &Signal, order: usize) -> PeReport {
    let p = signal.dim();
    let required = p * order;
    let horizon = signal.horizon();
    if order == 0 || order > horizon || horizon - order + 1 < required {
        return PeReport {
            persistently_exciting: false,
            rank: 0,
            required,
            horizon_infeasible: true,
        };
    }
    let h = build_hankel(signal, order).expect("order checked against horizon");
    let rank = numerical_rank(h.dense());
    PeReport {
        persistently_exciting: rank == required,
        rank,
        required,
        horizon_infeasible: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackedRank {
    pub rank: usize,
    pub required: usize,
    pub full: bool,
}

fn check_pair(hx: &HankelMatrix, hu: &HankelMatrix) -> Result<()> {
    if hx.order() != hu.order() || hx.width() != hu.width() {
        return Err(Error::Dimension(format!(
            "state and input Hankel matrices disagree: order {} vs {}, width {} vs {}",
            hx.order(),
            hu.order(),
            hx.width(),
            hu.width()
        )));
    }
    Ok(())
}

/// `[H_1(x); H_L(u)]` with `T-L+1` columns.
pub fn stacked_data(hx: &HankelMatrix, hu: &HankelMatrix) -> Result<Mat> {
    check_pair(hx, hu)?;
    Ok(vstack(&[&hx.top_block(), hu.dense()]))
}

/// Rank of `[H_1(x); H_L(u)]`; full when it equals `n + mL`.
pub fn stacked_rank(x: &Signal, u: &Signal, order: usize) -> Result<StackedRank> {
    if x.horizon() != u.horizon() {
        return Err(Error::Dimension(format!(
            "state horizon {} differs from input horizon {}",
            x.horizon(),
            u.horizon()
        )));
    }
    let hx = build_hankel(x, order)?;
    let hu = build_hankel(u, order)?;
    stacked_rank_of(&hx, &hu)
}

pub fn stacked_rank_of(hx: &HankelMatrix, hu: &HankelMatrix) -> Result<StackedRank> {
    let stack = stacked_data(hx, hu)?;
    let required = hx.block() + hu.block() * hu.order();
    let rank = numerical_rank(&stack);
    Ok(StackedRank {
        rank,
        required,
        full: rank == required,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub g: Vector,
    pub states: Vector,
    pub inputs: Vector,
}

/// Minimum-norm combination of data columns matching an initial state and
/// an input sequence, together with the trajectory it produces.
pub fn reconstruct(
    x0: &Vector,
    inputs: &Vector,
    hx: &HankelMatrix,
    hu: &HankelMatrix,
) -> Result<Reconstruction> {
    let rank = stacked_rank_of(hx, hu)?;
    if x0.len() != hx.block() || inputs.len() != hu.dense().nrows() {
        return Err(Error::Dimension(format!(
            "target needs an {}-vector initial state and an {}-vector input",
            hx.block(),
            hu.dense().nrows()
        )));
    }
    if !rank.full {
        return Err(Error::NotPersistentlyExciting(format!(
            "stacked data rank {} < {}",
            rank.rank, rank.required
        )));
    }
    let stack = stacked_data(hx, hu)?;
    let mut target = Vector::zeros(x0.len() + inputs.len());
    target.rows_mut(0, x0.len()).copy_from(x0);
    target.rows_mut(x0.len(), inputs.len()).copy_from(inputs);
    let g = pinv(&stack) * target;
    Ok(Reconstruction {
        states: hx.dense() * &g,
        inputs: hu.dense() * &g,
        g,
    })
}
