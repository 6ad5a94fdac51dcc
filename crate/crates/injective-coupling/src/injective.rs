//! The alternating construction of an injective martingale coupling, the
//! reduction of simple-left-curtain blocks to the constructible class, and
//! the assembly of the full coupling.

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curtain::{classify_slc, partition_blocks, Curtain};
use crate::error::{Error, Result};
use crate::kernel::{cells_for, Cell, Kernel, SampledCoupling, SampledPart};
use crate::measures::Measure;
use crate::potential::irreducible_decompose;
use crate::shadow::{ArrowResult, Pair, StopStatus};

/// Relative tolerance for comparing densities of `mu` and `nu`.
const DENSITY_RTOL: f64 = 1e-9;
/// Relative mass below which an atom or density excess is ignored when
/// locating the anchor.
const ANCHOR_MASS_TOL: f64 = 1e-8;
/// Maximum nesting of the reduction (grave remainders and ring re-splits).
const MAX_DEPTH: usize = 6;
/// Smallest remainder, relative to the block mass, that ring reduction
/// keeps splitting; what is left is dropped.
pub const RING_MASS_FLOOR: f64 = 1e-6;

/// Tunables of the construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildConfig {
    /// Tail mass (relative to the total) below which an infinite alternating
    /// sequence is truncated, and ring reduction stops.
    pub eps_term: f64,
    /// Relative mass below which a curtain block is dropped.
    pub eps_block: f64,
    /// Length ratio between consecutive rings of the reduction.
    pub ring_factor: f64,
    /// Hard cap on alternating steps.
    pub max_steps: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            eps_term: 1e-8,
            eps_block: crate::curtain::EPS_BLOCK,
            ring_factor: 0.5,
            max_steps: 200,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_term > 0.0 && self.eps_block > 0.0) {
            return Err(Error::Validation("tolerances must be positive".into()));
        }
        if !(self.ring_factor > 0.0 && self.ring_factor < 1.0) {
            return Err(Error::Validation("ring factor must lie in (0, 1)".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Validation("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Starting point of the construction: `mu <= nu` on `(-inf, a0)` with `a0`
/// maximal, `mu = nu` on `(a1, a0)`, and `u0 = mu((-inf, a0))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Anchor {
    pub u0: f64,
    pub a0: f64,
    pub a1: f64,
}

fn densities_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= DENSITY_RTOL * a.max(b)
}

/// Locates the anchor by exact comparison of atoms and densities on the
/// common refinement of the two measures.
pub fn find_anchor(mu: &Measure, nu: &Measure) -> Result<Anchor> {
    let mut knots: Vec<f64> = mu.knots().iter().chain(nu.knots()).copied().collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let atom_floor = ANCHOR_MASS_TOL * mu.total_mass();
    let mut a0_idx = None;
    for (i, &x) in knots.iter().enumerate() {
        if mu.atom_at(x) > atom_floor {
            a0_idx = Some(i);
            break;
        }
        if let Some(&y) = knots.get(i + 1) {
            let mid = 0.5 * (x + y);
            let (dm, dn) = (mu.density_at(mid), nu.density_at(mid));
            // excesses carrying less than the floor are rounding slivers
            if dm > dn && !densities_equal(dm, dn) && (dm - dn) * (y - x) > atom_floor {
                a0_idx = Some(i);
                break;
            }
        }
    }
    let i0 = a0_idx.ok_or_else(|| {
        Error::Precondition("mu <= nu everywhere: the marginals coincide".into())
    })?;
    let a0 = knots[i0];
    let mut i1 = i0;
    while i1 > 0 {
        let (l, r) = (knots[i1 - 1], knots[i1]);
        let mid = 0.5 * (l + r);
        let (dm, dn) = (mu.density_at(mid), nu.density_at(mid));
        if dm <= 0.0 || !densities_equal(dm, dn) || (i1 < i0 && mu.atom_at(r) > atom_floor) {
            break;
        }
        i1 -= 1;
    }
    Ok(Anchor {
        u0: mu.cdf_below(a0),
        a0,
        a1: knots[i1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Termination {
    /// The sequence reached both `0` and the full mass.
    Finite,
    /// Both tails fell below the termination mass; their sum is dropped.
    Truncated { dropped: f64 },
}

/// Output of the alternating construction on a pair of the constructible
/// class.
#[derive(Debug, Clone)]
pub struct AlternatingBuild {
    pair: Pair,
    pub anchor: Anchor,
    /// `u_0, u_1, ...`: even entries decrease, odd entries increase.
    pub u: Vec<f64>,
    /// Cumulative branch ends `v_j = |u_{j+1} - u_j|`.
    pub v: Vec<f64>,
    pub stops: Vec<StopStatus>,
    pub termination: Termination,
    /// Per parity flip, the mismatch of the two arrow evaluations on the
    /// shared envelope.
    pub boundary_mismatch: Vec<f64>,
}

impl AlternatingBuild {
    pub fn pair(&self) -> &Pair {
        &self.pair
    }

    pub fn branch_count(&self) -> usize {
        self.v.len()
    }

    /// Mass covered by the built branches.
    pub fn extent(&self) -> f64 {
        self.v.last().copied().unwrap_or(0.0)
    }

    pub fn dropped_mass(&self) -> f64 {
        match self.termination {
            Termination::Finite => 0.0,
            Termination::Truncated { dropped } => dropped,
        }
    }

    fn branch_of_mass(&self, v: f64) -> Result<usize> {
        let ext = self.extent();
        if !(v >= 0.0 && v <= ext) {
            return Err(Error::Domain(format!("mass {v} outside [0, {ext}]")));
        }
        Ok(self.v.partition_point(|&vj| vj < v).min(self.v.len() - 1))
    }

    /// The folding map from the construction's mass coordinate to `u`.
    pub fn phi(&self, v: f64) -> Result<f64> {
        let j = self.branch_of_mass(v)?;
        Ok(if j % 2 == 0 { self.u[j] + v } else { self.u[j] - v })
    }

    /// Branch holding the mass `u`, if any.
    pub fn branch_of(&self, u: f64) -> Option<usize> {
        let tol = self.pair.mass_tol();
        (0..self.v.len()).find(|&j| {
            let (a, b) = self.branch_range(j);
            u >= a - tol && u <= b + tol
        })
    }

    /// `u`-range of branch `j` (closure).
    pub fn branch_range(&self, j: usize) -> (f64, f64) {
        if j == 0 {
            (self.u[0], self.u[1])
        } else if j % 2 == 1 {
            (self.u[j + 1], self.u[j - 1])
        } else {
            (self.u[j - 1], self.u[j + 1])
        }
    }

    /// Arrow evaluation defining `(M, N)` on branch `j`.
    pub fn arrows(&self, j: usize, u: f64) -> Result<ArrowResult> {
        let p = &self.pair;
        if j == 0 {
            p.arrows_right(self.u[0], self.u[0], u)
        } else if j % 2 == 1 {
            p.arrows_left(self.u[j - 1], self.u[j], u)
        } else {
            p.arrows_right(self.u[j], self.u[j - 1], u)
        }
    }

    /// Kernel at mass `u`, with the branch-parity quantile as source point.
    pub fn kernel_at(&self, u: f64) -> Result<Kernel> {
        let j = self
            .branch_of(u)
            .ok_or_else(|| Error::Domain(format!("u = {u} outside the built domain")))?;
        let a = self.arrows(j, u)?;
        Ok(Kernel::two_point(a.z, a.m, a.n))
    }

    /// `(u, kernel)` at the construction's mass coordinate `v`.
    pub fn kernel_at_mass(&self, v: f64) -> Result<(f64, Kernel)> {
        let j = self.branch_of_mass(v)?;
        let u = if j % 2 == 0 { self.u[j] + v } else { self.u[j] - v };
        let u = u.clamp(0.0, self.pair.mass());
        let a = self.arrows(j, u)?;
        Ok((u, Kernel::two_point(a.z, a.m, a.n)))
    }

    /// Cells at `n` uniform midpoints of the built mass range.
    pub fn sample(&self, n: usize) -> Result<Vec<Cell>> {
        let ext = self.extent();
        let w = ext / n as f64;
        (0..n)
            .into_par_iter()
            .map(|i| {
                let (_, kernel) = self.kernel_at_mass((i as f64 + 0.5) * w)?;
                Ok(Cell { weight: w, kernel })
            })
            .collect()
    }
}

/// One sampled row of a branch table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchRow {
    pub branch: usize,
    /// The construction's mass coordinate.
    pub v: f64,
    /// `phi(v)`, the mass coordinate of the source.
    pub u: f64,
    pub x: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "N")]
    pub n: f64,
    #[serde(rename = "wM")]
    pub w_m: f64,
    #[serde(rename = "wN")]
    pub w_n: f64,
}

impl AlternatingBuild {
    /// Rows at `n` uniform midpoints of the built mass range.
    pub fn branch_table(&self, n: usize) -> Result<Vec<BranchRow>> {
        let w = self.extent() / n as f64;
        (0..n)
            .into_par_iter()
            .map(|i| {
                let v = (i as f64 + 0.5) * w;
                let branch = self.branch_of_mass(v)?;
                let (u, k) = self.kernel_at_mass(v)?;
                let (m, n) = k.branches();
                let (w_m, w_n) = match k {
                    Kernel::Identity { .. } => (1.0, 0.0),
                    Kernel::TwoPoint { w_lo, w_hi, .. } => (w_lo, w_hi),
                };
                Ok(BranchRow {
                    branch,
                    v,
                    u,
                    x: k.x(),
                    m,
                    n,
                    w_m,
                    w_n,
                })
            })
            .collect()
    }
}

fn stop_ok(status: StopStatus, step: usize) -> Result<()> {
    if status == StopStatus::Degenerate {
        return Err(Error::Internal(format!(
            "alternating construction stalled at step {step}"
        )));
    }
    Ok(())
}

/// Runs the alternating construction on a pair with `w_bar(u0,u0) > u0`.
pub fn build_alternating(pair: &Pair, anchor: Anchor, cfg: &BuildConfig) -> Result<AlternatingBuild> {
    let m = pair.mass();
    let tol = pair.mass_tol();
    let eps_term = cfg.eps_term * m;
    let first = if anchor.u0 <= tol {
        pair.w_bar(0.0, 0.0)?
    } else {
        pair.w_bar(anchor.u0, anchor.u0)?
    };
    if first.status == StopStatus::Degenerate {
        return Err(Error::Precondition(format!(
            "pair outside the constructible class: w_bar(u0,u0) = u0 = {}",
            anchor.u0
        )));
    }
    let mut u = vec![anchor.u0, first.w];
    let mut stops = vec![first.status];
    let termination;
    loop {
        let k = u.len() - 1;
        let lo = u[if k % 2 == 0 { k } else { k - 1 }];
        let hi = u[if k % 2 == 1 { k } else { k - 1 }];
        if lo <= tol && hi >= m - tol {
            termination = Termination::Finite;
            break;
        }
        if lo < eps_term && m - hi < eps_term {
            termination = Termination::Truncated {
                dropped: lo + (m - hi),
            };
            break;
        }
        if k >= cfg.max_steps {
            return Err(Error::Internal(format!(
                "alternating construction did not terminate within {} steps (tails {lo}, {})",
                cfg.max_steps,
                m - hi
            )));
        }
        let next = if k % 2 == 1 {
            pair.w_under(u[k - 1], u[k])?
        } else {
            pair.w_bar(u[k], u[k - 1])?
        };
        stop_ok(next.status, k + 1)?;
        debug!("u_{} = {} ({:?})", k + 1, next.w, next.status);
        u.push(next.w);
        stops.push(next.status);
    }
    let v: Vec<f64> = u.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let mut build = AlternatingBuild {
        pair: pair.clone(),
        anchor,
        u,
        v,
        stops,
        termination,
        boundary_mismatch: Vec::new(),
    };
    for j in 1..build.v.len() {
        let end = build.arrows(j - 1, build.u[j])?;
        let start = build.arrows(j, build.u[j - 1])?;
        let gap = (end.m - start.m).abs().max((end.n - start.n).abs());
        if gap > 1e-6 {
            warn!("boundary mismatch {gap:e} at parity flip {j}");
        }
        build.boundary_mismatch.push(gap);
    }
    Ok(build)
}

/// One constructed piece of the coupling.
#[derive(Debug, Clone)]
pub enum PartKind {
    Alternating(Box<AlternatingBuild>),
    /// Stay-put mass coupled by the identity kernel.
    Identity(Measure),
}

#[derive(Debug, Clone)]
pub struct CouplingPart {
    pub block_id: usize,
    pub mass: f64,
    pub kind: PartKind,
}

/// A full injective quantile-lifted coupling as a list of parts.
#[derive(Debug, Clone)]
pub struct InjectiveCoupling {
    pub parts: Vec<CouplingPart>,
    pub dropped_mass: f64,
    pub total_mass: f64,
}

impl InjectiveCoupling {
    /// Concatenates parts, checking that their masses add up.
    pub fn assemble(parts: Vec<CouplingPart>, dropped_mass: f64, total_mass: f64) -> Result<Self> {
        let sum: f64 = parts.iter().map(|p| p.mass).sum::<f64>() + dropped_mass;
        if (sum - total_mass).abs() > 1e-6 * total_mass.max(1.0) {
            return Err(Error::Internal(format!(
                "parts carry mass {sum}, expected {total_mass}"
            )));
        }
        Ok(InjectiveCoupling {
            parts,
            dropped_mass,
            total_mass,
        })
    }

    pub fn alternating(&self) -> impl Iterator<Item = &AlternatingBuild> {
        self.parts.iter().filter_map(|p| match &p.kind {
            PartKind::Alternating(b) => Some(b.as_ref()),
            PartKind::Identity(_) => None,
        })
    }

    /// Discretises every part on a share of `grid_n` midpoint cells.
    pub fn discretize(&self, grid_n: usize) -> Result<SampledCoupling> {
        let mut parts = Vec::with_capacity(self.parts.len());
        for p in &self.parts {
            let n = cells_for(p.mass, self.total_mass, grid_n);
            let (identity, cells) = match &p.kind {
                PartKind::Alternating(b) => (false, b.sample(n)?),
                PartKind::Identity(m) => (true, identity_cells(m, n)),
            };
            parts.push(SampledPart {
                block_id: p.block_id,
                mass: p.mass,
                identity,
                cells,
            });
        }
        Ok(SampledCoupling {
            parts,
            dropped_mass: self.dropped_mass,
        })
    }
}

fn identity_cells(m: &Measure, n: usize) -> Vec<Cell> {
    let mass = m.total_mass();
    let w = mass / n as f64;
    (0..n)
        .map(|i| Cell {
            weight: w,
            kernel: Kernel::Identity {
                x: m.quantile_left((i as f64 + 0.5) * w),
            },
        })
        .collect()
}

struct Builder<'a> {
    cfg: &'a BuildConfig,
    total: f64,
    parts: Vec<CouplingPart>,
    dropped: f64,
    next_id: usize,
}

impl Builder<'_> {
    fn push_identity(&mut self, m: Measure) {
        let mass = m.total_mass();
        if mass <= 0.0 {
            return;
        }
        let block_id = self.next_id;
        self.next_id += 1;
        self.parts.push(CouplingPart {
            block_id,
            mass,
            kind: PartKind::Identity(m),
        });
    }

    fn push_build(&mut self, b: AlternatingBuild) {
        self.dropped += b.dropped_mass();
        let block_id = self.next_id;
        self.next_id += 1;
        self.parts.push(CouplingPart {
            block_id,
            mass: b.extent(),
            kind: PartKind::Alternating(Box::new(b)),
        });
    }

    /// Couples one curtain block, reducing it first when needed.
    fn block(&mut self, mu: Measure, nu: Measure, depth: usize) -> Result<()> {
        let mass = mu.total_mass();
        if mass < self.cfg.eps_block * self.total {
            self.dropped += mass;
            return Ok(());
        }
        if depth > MAX_DEPTH {
            return Err(Error::Internal(format!(
                "reduction nested deeper than {MAX_DEPTH} levels"
            )));
        }
        let pair = Pair::new(mu, nu)?;
        let anchor = find_anchor(pair.mu(), pair.nu())?;
        let tol = pair.mass_tol();
        let kstar = anchor.u0 <= tol || {
            let w = pair.w_bar(anchor.u0, anchor.u0)?;
            w.status != StopStatus::Degenerate && w.w > anchor.u0 + 2.0 * tol
        };
        if kstar {
            // the termination mass is relative to the whole problem
            let cfg = BuildConfig {
                eps_term: self.cfg.eps_term * self.total / mass,
                ..*self.cfg
            };
            let b = build_alternating(&pair, anchor, &cfg)?;
            info!(
                "block {}: mass {mass}, {} branches, {:?}",
                self.next_id,
                b.branch_count(),
                b.termination
            );
            self.push_build(b);
            return Ok(());
        }
        self.reduce(pair, anchor, depth)
    }

    fn reduce(&mut self, pair: Pair, anchor: Anchor, depth: usize) -> Result<()> {
        if anchor.a1 < anchor.a0 {
            let band = pair.mu().restrict_open(anchor.a1, anchor.a0);
            debug!("identity band ({}, {}) of mass {}", anchor.a1, anchor.a0, band.total_mass());
            let mu = pair.mu().difference(&band);
            let nu = pair.nu().difference(&band);
            self.push_identity(band);
            return self.block(mu, nu, depth + 1);
        }
        let curtain = Curtain::new(pair);
        let class = classify_slc(&curtain)?;
        if !class.is_slc {
            warn!("reducing a block that does not look simple-left-curtain");
        }
        let rings = reduce_slc_to_kstar(&curtain, anchor.u0, self.cfg)?;
        self.dropped += rings.remainder;
        for (mu, nu) in rings.rings {
            self.block(mu, nu, depth + 1)?;
        }
        Ok(())
    }
}

/// Couples an irreducible pair through one explicit reduction step (the
/// common-band split when `a1 < a0`, the ring decomposition otherwise), each
/// resulting piece then going through the regular block pipeline. The
/// regular pipeline only reduces blocks outside the constructible class;
/// this entry point exercises the reduction on any simple-left-curtain pair.
pub fn build_reduced(mu: &Measure, nu: &Measure, cfg: &BuildConfig) -> Result<InjectiveCoupling> {
    cfg.validate()?;
    let total = mu.total_mass();
    let pair = Pair::new(mu.clone(), nu.clone())?;
    let anchor = find_anchor(mu, nu)?;
    let mut b = Builder {
        cfg,
        total,
        parts: Vec::new(),
        dropped: 0.0,
        next_id: 0,
    };
    b.reduce(pair, anchor, 0)?;
    InjectiveCoupling::assemble(b.parts, b.dropped, total)
}

/// Rings of a simple-left-curtain block and the central mass left over.
#[derive(Debug, Clone)]
pub struct RingReduction {
    pub rings: Vec<(Measure, Measure)>,
    /// Quantile sets of the rings.
    pub ring_sets: Vec<Vec<(f64, f64)>>,
    pub remainder: f64,
}

/// Splits a block into nested rings `J_k \ J_{k+1}` around `u0`, with
/// `J(v) = [S^-1(R(v)), v]` and each ring's length a fixed fraction of the
/// previous interval.
pub fn reduce_slc_to_kstar(curtain: &Curtain, u0: f64, cfg: &BuildConfig) -> Result<RingReduction> {
    let pair = curtain.pair();
    let m = pair.mass();
    let tol = pair.mass_tol();
    let inner = |v: f64| -> Result<f64> { curtain.s_inverse(curtain.r(v)?) };
    let (mut lo, mut hi) = (0.0, m);
    let mut out = RingReduction {
        rings: Vec::new(),
        ring_sets: Vec::new(),
        remainder: 0.0,
    };
    let mut guard = 0;
    // below this the ring widths approach the resolution of the image positions
    let floor = cfg.eps_term.max(RING_MASS_FLOOR) * m;
    while hi - lo >= floor {
        guard += 1;
        if guard > 200 {
            return Err(Error::Internal("ring reduction did not converge".into()));
        }
        let target = cfg.ring_factor * (hi - lo);
        // largest v in (u0, hi) with f(v) = v - S^-1(R(v)) <= target
        let (mut a, mut b) = (u0, hi);
        while b - a > tol {
            let mid = 0.5 * (a + b);
            if mid - inner(mid)? <= target {
                a = mid;
            } else {
                b = mid;
            }
        }
        let new_hi = a.max(u0);
        let new_lo = inner(new_hi)?.clamp(lo, new_hi);
        let mut set = Vec::new();
        if new_lo > lo {
            set.push((lo, new_lo));
        }
        if hi > new_hi {
            set.push((new_hi, hi));
        }
        if (new_lo - lo) + (hi - new_hi) <= tol {
            break;
        }
        let mu = pair.mu().restrict_quantile_set(&set)?;
        let parts = set
            .iter()
            .map(|&(a, b)| curtain.image_centred(a, b))
            .collect::<Result<Vec<_>>>()?;
        out.rings.push((mu, Measure::sum(&parts)));
        out.ring_sets.push(set);
        lo = new_lo;
        hi = new_hi;
    }
    out.remainder = hi - lo;
    Ok(out)
}

/// Builds the injective coupling of `mu <=_cx nu` with `nu` atom-free.
pub fn build_injective(mu: &Measure, nu: &Measure, cfg: &BuildConfig) -> Result<InjectiveCoupling> {
    cfg.validate()?;
    if !nu.atom_free() {
        return Err(Error::Precondition("the target measure must be atom-free".into()));
    }
    if mu.is_zero() {
        return Err(Error::Precondition("empty source measure".into()));
    }
    let total = mu.total_mass();
    let decomposition = irreducible_decompose(mu, nu)?;
    let mut b = Builder {
        cfg,
        total,
        parts: Vec::new(),
        dropped: 0.0,
        next_id: 0,
    };
    b.push_identity(decomposition.stay_put);
    for comp in decomposition.components {
        if comp.mu.total_mass() < cfg.eps_block * total {
            b.dropped += comp.mu.total_mass();
            continue;
        }
        let curtain = Curtain::new(Pair::new(comp.mu, comp.nu)?);
        let partition = partition_blocks(&curtain, cfg.eps_block)?;
        b.dropped += partition.dropped_mass;
        b.push_identity(partition.identity);
        for block in partition.blocks {
            b.block(block.mu, block.nu, 0)?;
        }
    }
    InjectiveCoupling::assemble(b.parts, b.dropped, total)
}
