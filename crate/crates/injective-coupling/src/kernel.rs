//! Martingale kernels attached to a point `x`, and the sampled form of a
//! quantile-lifted coupling consumed by the verifier.

use serde::Serialize;

/// The conditional law of `Y` given `X = x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `delta_x`.
    Identity { x: f64 },
    /// `w_lo delta_lo + w_hi delta_hi` with barycentre `x`.
    TwoPoint {
        x: f64,
        lo: f64,
        hi: f64,
        w_lo: f64,
        w_hi: f64,
    },
}

impl Kernel {
    /// The martingale two-point law on `{lo, hi}` centred at `x`; collapses
    /// to `delta_x` when the two points coincide.
    pub fn two_point(x: f64, lo: f64, hi: f64) -> Kernel {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Kernel::Identity { x };
        }
        let w_lo = ((hi - x) / (hi - lo)).clamp(0.0, 1.0);
        Kernel::TwoPoint {
            x,
            lo,
            hi,
            w_lo,
            w_hi: 1.0 - w_lo,
        }
    }

    pub fn x(&self) -> f64 {
        match *self {
            Kernel::Identity { x } | Kernel::TwoPoint { x, .. } => x,
        }
    }

    /// `(lower, upper)` support points (equal for the identity).
    pub fn branches(&self) -> (f64, f64) {
        match *self {
            Kernel::Identity { x } => (x, x),
            Kernel::TwoPoint { lo, hi, .. } => (lo, hi),
        }
    }

    /// Support points with weights.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match *self {
            Kernel::Identity { x } => vec![(x, 1.0)],
            Kernel::TwoPoint {
                lo, hi, w_lo, w_hi, ..
            } => vec![(lo, w_lo), (hi, w_hi)],
        }
    }

    pub fn mean(&self) -> f64 {
        self.atoms().iter().map(|(y, w)| y * w).sum()
    }

    /// `|E[Y] - x|`.
    pub fn residual(&self) -> f64 {
        (self.mean() - self.x()).abs()
    }
}

/// One sampled point of a lifted coupling: a cell of quantile mass `weight`
/// whose source point and kernel are evaluated at the cell midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub weight: f64,
    pub kernel: Kernel,
}

/// Sampled part of a coupling (one block or one identity band).
#[derive(Debug, Clone, Serialize)]
pub struct SampledPart {
    pub block_id: usize,
    pub mass: f64,
    /// Identity bands only need a nondecreasing `x`.
    pub identity: bool,
    /// Cells in order of the part's internal mass coordinate.
    pub cells: Vec<Cell>,
}

/// A coupling discretised for verification.
#[derive(Debug, Clone, Serialize)]
pub struct SampledCoupling {
    pub parts: Vec<SampledPart>,
    pub dropped_mass: f64,
}

/// Number of cells for a part of mass `m` out of `total`, for a grid of
/// `grid_n` cells over the whole coupling.
pub fn cells_for(m: f64, total: f64, grid_n: usize) -> usize {
    if total <= 0.0 {
        return 0;
    }
    ((grid_n as f64 * m / total).ceil() as usize).max(64)
}
