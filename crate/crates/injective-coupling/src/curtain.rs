//! The left-curtain functions `R`, `S`, the curtain kernel, the block
//! partition of the mass axis, and the simple-left-curtain classification.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::injective::find_anchor;
use crate::kernel::{Cell, Kernel, SampledCoupling, SampledPart};
use crate::measures::Measure;
use crate::shadow::{Pair, StopResult, StopStatus, SCAN_CELLS};

/// Blocks lighter than this fraction of the total mass are dropped.
pub const EPS_BLOCK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurtainSample {
    pub u: f64,
    pub g: f64,
    pub r: f64,
    pub s: f64,
}

/// Left-curtain functions of a pair, evaluated on demand.
#[derive(Debug, Clone)]
pub struct Curtain {
    pair: Pair,
    tol: f64,
}

impl Curtain {
    pub fn new(pair: Pair) -> Self {
        let span = {
            let (a, b) = pair.nu().support().expect("nonzero pair");
            (b - a).max(1.0)
        };
        Curtain {
            pair,
            tol: 1e-10 * span,
        }
    }

    pub fn pair(&self) -> &Pair {
        &self.pair
    }

    pub fn mass(&self) -> f64 {
        self.pair.mass()
    }

    /// `(G(u), R(u), S(u))`.
    pub fn eval(&self, u: f64) -> Result<CurtainSample> {
        let env = self.pair.envelope(0.0, u)?;
        let g = self.pair.g_left(u);
        let (r, _) = env.tangent_extent(g)?;
        let (_, s) = env.contact_bounds(g)?;
        Ok(CurtainSample { u, g, r, s })
    }

    pub fn r(&self, u: f64) -> Result<f64> {
        Ok(self.eval(u)?.r)
    }

    pub fn s(&self, u: f64) -> Result<f64> {
        Ok(self.eval(u)?.s)
    }

    /// Curtain kernel: mass on `R(u)` and `S(u)` with barycentre `G(u)`.
    pub fn kernel(&self, u: f64) -> Result<Kernel> {
        if !(u > 0.0 && u < self.mass()) {
            return Err(Error::Domain(format!(
                "curtain kernel needs u in (0, {}), got {u}",
                self.mass()
            )));
        }
        let c = self.eval(u)?;
        Ok(Kernel::two_point(c.g, c.r, c.s))
    }

    /// Samples at `n` cell midpoints of `(0, mass)`.
    pub fn table(&self, n: usize) -> Result<Vec<CurtainSample>> {
        let m = self.mass();
        (0..n)
            .into_par_iter()
            .map(|i| self.eval((i as f64 + 0.5) * m / n as f64))
            .collect()
    }

    /// `inf{u : S(u) >= y}` by bisection (S is nondecreasing).
    pub fn s_inverse(&self, y: f64) -> Result<f64> {
        let m = self.mass();
        let (mut lo, mut hi) = (0.0, m);
        if self.s(m)? < y {
            return Ok(m);
        }
        while hi - lo > self.pair.mass_tol() {
            let mid = 0.5 * (lo + hi);
            if self.s(mid)? >= y {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// Image of the quantile slab `(a, b)` under the curtain coupling,
    /// `S^nu(mu_b) - S^nu(mu_a)`.
    pub fn image(&self, a: f64, b: f64) -> Result<Measure> {
        let hi = self.pair.shadow_measure(0.0, b)?;
        if a <= 0.0 {
            return Ok(hi);
        }
        Ok(hi.difference(&self.pair.shadow_measure(0.0, a)?))
    }

    /// [`Curtain::image`] translated so that its barycentre matches the
    /// slab's. Shadows preserve the mean; this removes the rounding left by
    /// the tangent positions so that sub-blocks stay in convex order.
    pub fn image_centred(&self, a: f64, b: f64) -> Result<Measure> {
        let img = self.image(a, b)?;
        let m = img.total_mass();
        if m <= 0.0 {
            return Ok(img);
        }
        let slab = self.pair.mu().quantile_integral(b) - self.pair.mu().quantile_integral(a.max(0.0));
        let shift = (slab - img.first_moment()) / m;
        Ok(if shift != 0.0 { img.translated(shift) } else { img })
    }

    /// Whether `S(u) > G(u+)`, i.e. `u` lies in the set `A_<`.
    fn strictly_above(&self, u: f64) -> bool {
        match self.eval(u) {
            Ok(c) => c.s > self.pair.g_plus(u) + self.tol,
            Err(_) => false,
        }
    }

    /// Moves `u` onto a mass breakpoint of `mu` lying within `1e-9` of the
    /// total mass, so that slabs cut there do not pick up rounding slivers.
    pub fn snap(&self, u: f64) -> f64 {
        let reach = 1e-9 * self.mass();
        self.pair
            .mu()
            .mass_breakpoints()
            .into_iter()
            .chain([0.0, self.mass()])
            .filter(|b| (b - u).abs() <= reach)
            .min_by(|a, b| (a - u).abs().total_cmp(&(b - u).abs()))
            .unwrap_or(u)
    }

    fn scan_grid(&self) -> Vec<f64> {
        let m = self.mass();
        let mut g: Vec<f64> = (1..SCAN_CELLS)
            .map(|i| i as f64 * m / SCAN_CELLS as f64)
            .collect();
        g.extend(self.pair.mu().mass_breakpoints());
        g.retain(|&u| u > 0.0 && u < m);
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    }

    fn refine(&self, mut lo: f64, mut hi: f64, lo_value: bool) -> f64 {
        while hi - lo > self.pair.mass_tol() {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.strictly_above(mid) == lo_value {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Maximal open intervals of `A_< = {u : S(u) > G(u+)}`.
    pub fn excursion_intervals(&self) -> Vec<(f64, f64)> {
        let grid = self.scan_grid();
        let flags: Vec<bool> = grid.par_iter().map(|&u| self.strictly_above(u)).collect();
        let m = self.mass();
        let mut out = Vec::new();
        let mut i = 0;
        while i < grid.len() {
            if !flags[i] {
                i += 1;
                continue;
            }
            let start = i;
            while i < grid.len() && flags[i] {
                i += 1;
            }
            let left = if start == 0 {
                0.0
            } else {
                self.refine(grid[start - 1], grid[start], false)
            };
            let right = if i == grid.len() {
                m
            } else {
                self.refine(grid[i - 1], grid[i], true)
            };
            out.push((self.snap(left), self.snap(right)));
        }
        out
    }

    /// The curtain coupling as a single sampled part.
    pub fn sampled(&self, grid_n: usize) -> Result<SampledCoupling> {
        let m = self.mass();
        let n = grid_n.max(1);
        let cells = (0..n)
            .into_par_iter()
            .map(|i| {
                let u = (i as f64 + 0.5) * m / n as f64;
                Ok(Cell {
                    weight: m / n as f64,
                    kernel: self.kernel(u)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SampledCoupling {
            parts: vec![SampledPart {
                block_id: 0,
                mass: m,
                identity: false,
                cells,
            }],
            dropped_mass: 0.0,
        })
    }
}

/// One block `J_k` of the partition with its marginals.
#[derive(Debug, Clone)]
pub struct Block {
    pub intervals: Vec<(f64, f64)>,
    pub mass: f64,
    pub mu: Measure,
    pub nu: Measure,
}

#[derive(Debug, Clone)]
pub struct BlockPartition {
    pub blocks: Vec<Block>,
    /// Quantile set on which the curtain kernel is the identity.
    pub identity_intervals: Vec<(f64, f64)>,
    /// `mu` restricted (through its quantile) to the identity set.
    pub identity: Measure,
    /// Mass of blocks dropped for being lighter than the block floor.
    pub dropped_mass: f64,
}

fn subtract_intervals(base: (f64, f64), holes: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut holes: Vec<(f64, f64)> = holes.to_vec();
    holes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    let mut cur = base.0;
    for (a, b) in holes {
        if b <= cur {
            continue;
        }
        if a > cur {
            out.push((cur, a.min(base.1)));
        }
        cur = cur.max(b);
        if cur >= base.1 {
            break;
        }
    }
    if cur < base.1 {
        out.push((cur, base.1));
    }
    out.retain(|(a, b)| b > a);
    out
}

/// Splits `(0, mass)` into blocks from the nested sets `A_k` of the curtain.
pub fn partition_blocks(curtain: &Curtain, eps_block: f64) -> Result<BlockPartition> {
    let pair = curtain.pair();
    let m = pair.mass();
    let tol = 1e3 * pair.mass_tol();
    let runs = curtain.excursion_intervals();
    let mut sets: Vec<(f64, f64)> = Vec::with_capacity(runs.len());
    for &(_, v) in &runs {
        let back = (1e-9 * m).min(0.5 * v);
        let alpha = curtain.r(v - back)?;
        let t = curtain.snap(curtain.s_inverse(alpha)?).min(v);
        sets.push((t, v));
    }
    // J_k = A_k minus the sets strictly nested inside it
    let mut blocks = Vec::new();
    let mut dropped = 0.0;
    let mut covered = Vec::new();
    let single = sets.len() == 1 && sets[0].0 <= tol && sets[0].1 >= m - tol;
    for (k, &(t, v)) in sets.iter().enumerate() {
        let nested: Vec<(f64, f64)> = sets
            .iter()
            .enumerate()
            .filter(|&(j, &(tj, vj))| j != k && tj >= t - tol && vj <= v + tol && (tj, vj) != (t, v))
            .map(|(_, &s)| s)
            .collect();
        let intervals = if single {
            vec![(0.0, m)]
        } else {
            subtract_intervals((t, v), &nested)
        };
        let mass: f64 = intervals.iter().map(|(a, b)| b - a).sum();
        covered.extend(intervals.iter().copied());
        if mass < eps_block * m {
            dropped += mass;
            continue;
        }
        let (mu, nu) = if single {
            (pair.mu().clone(), pair.nu().clone())
        } else {
            let mu = pair.mu().restrict_quantile_set(&intervals)?;
            let parts = intervals
                .iter()
                .map(|&(a, b)| curtain.image(a, b))
                .collect::<Result<Vec<_>>>()?;
            (mu, Measure::sum(&parts))
        };
        blocks.push(Block {
            intervals,
            mass,
            mu,
            nu,
        });
    }
    let identity_intervals = subtract_intervals((0.0, m), &covered)
        .into_iter()
        .filter(|(a, b)| b - a > tol)
        .collect::<Vec<_>>();
    let identity = pair.mu().restrict_quantile_set(&identity_intervals)?;
    Ok(BlockPartition {
        blocks,
        identity_intervals,
        identity,
        dropped_mass: dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlcClass {
    pub is_slc: bool,
    pub u0: f64,
    pub is_kstar: bool,
    pub w_bar: StopResult,
}

/// Checks `S = G` on `(0, u_0]` and `S > G(.+)` beyond, with `u_0` from the
/// anchor, and decides membership of the `w_bar_{u0,u0} > u0` class.
pub fn classify_slc(curtain: &Curtain) -> Result<SlcClass> {
    let pair = curtain.pair();
    let m = pair.mass();
    let anchor = find_anchor(pair.mu(), pair.nu())?;
    let u0 = anchor.u0;
    let guard = 1e-6 * m;
    let grid = curtain.scan_grid();
    let ok: Vec<bool> = grid
        .par_iter()
        .filter(|&&u| (u - u0).abs() > guard)
        .map(|&u| curtain.strictly_above(u) == (u > u0))
        .collect();
    let is_slc = ok.iter().all(|&b| b);
    if u0 <= pair.mass_tol() {
        return Ok(SlcClass {
            is_slc,
            u0: 0.0,
            is_kstar: true,
            w_bar: StopResult {
                w: m,
                status: StopStatus::Convention,
            },
        });
    }
    let w_bar = pair.w_bar(u0, u0)?;
    Ok(SlcClass {
        is_slc,
        u0,
        is_kstar: w_bar.status != StopStatus::Degenerate && w_bar.w > u0 + 2.0 * pair.mass_tol(),
        w_bar,
    })
}
