//! Independent checks of a sampled coupling: marginals, martingale property,
//! injectivity (structural certificate and empirical preimage count), and
//! the closed-form reference family for the uniform pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::SampledCoupling;
use crate::measures::{kolmogorov_distance, Atom, Measure};

/// Relative slack for the monotone-branch certificate.
pub const MONOTONE_TOL: f64 = 1e-9;
/// Martingale residual threshold.
pub const RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Number of mass cells used to discretise the coupling.
    pub grid_n: usize,
    /// Number of target buckets for the empirical preimage count.
    pub y_grid_n: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            grid_n: 10_000,
            y_grid_n: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InjectivityReport {
    /// Adjacent sample pairs breaking the monotone-branch certificate.
    pub monotonicity_violations: usize,
    pub certificate: bool,
    pub max_multiplicity: usize,
    /// Fraction of target buckets reached from two or more source clusters.
    pub multi_bucket_fraction: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerificationReport {
    pub grid_n: usize,
    pub y_grid_n: usize,
    pub kolmogorov_mu: f64,
    pub kolmogorov_nu: f64,
    pub dropped_mass: f64,
    /// `5 / grid_n + dropped_mass`.
    pub marginal_tolerance: f64,
    pub max_martingale_residual: f64,
    pub injectivity: InjectivityReport,
    pub passed: bool,
}

fn weighted(points: impl Iterator<Item = (f64, f64)>) -> Result<Measure> {
    let atoms = points
        .filter(|&(_, w)| w > 0.0)
        .map(|(x, mass)| Atom { x, mass })
        .collect();
    Measure::new(atoms, vec![])
}

/// Kolmogorov distances of the sampled first and second marginals from
/// `mu` and `nu`.
pub fn verify_marginals(c: &SampledCoupling, mu: &Measure, nu: &Measure) -> Result<(f64, f64)> {
    let cells = || c.parts.iter().flat_map(|p| p.cells.iter());
    let first = weighted(cells().map(|cell| (cell.kernel.x(), cell.weight)))?;
    let second = weighted(
        cells().flat_map(|cell| {
            cell.kernel
                .atoms()
                .into_iter()
                .map(move |(y, w)| (y, w * cell.weight))
        }),
    )?;
    Ok((kolmogorov_distance(&first, mu), kolmogorov_distance(&second, nu)))
}

/// Largest `|E[Y | cell] - x|` over all cells.
pub fn verify_martingale(c: &SampledCoupling) -> f64 {
    c.parts
        .iter()
        .flat_map(|p| p.cells.iter())
        .map(|cell| cell.kernel.residual())
        .fold(0.0, f64::max)
}

/// Counts breaks of the certificate: within each non-identity part the lower
/// branch must not increase, the upper branch must not decrease, and the
/// first lower point must not exceed the first upper point. Identity parts
/// need a nondecreasing source point only.
fn certificate_violations(c: &SampledCoupling) -> usize {
    let mut bad = 0;
    for p in &c.parts {
        let scale = p
            .cells
            .iter()
            .map(|cell| {
                let (l, h) = cell.kernel.branches();
                l.abs().max(h.abs())
            })
            .fold(1.0, f64::max);
        let tol = MONOTONE_TOL * scale;
        if p.identity {
            bad += p
                .cells
                .windows(2)
                .filter(|w| w[1].kernel.x() < w[0].kernel.x() - tol)
                .count();
            continue;
        }
        if let Some(first) = p.cells.first() {
            let (l, h) = first.kernel.branches();
            if l > h + tol {
                bad += 1;
            }
        }
        for w in p.cells.windows(2) {
            let (l0, h0) = w[0].kernel.branches();
            let (l1, h1) = w[1].kernel.branches();
            if l1 > l0 + tol {
                bad += 1;
            }
            if h1 < h0 - tol {
                bad += 1;
            }
        }
    }
    bad
}

#[derive(Debug, Clone, Copy)]
struct Cluster {
    lo: f64,
    hi: f64,
}

/// Maximum number of clusters overlapping at a single point, where ranges
/// meeting only at an endpoint do not count as overlapping.
fn overlap_depth(clusters: &[Cluster]) -> usize {
    let mut ends: Vec<f64> = clusters.iter().flat_map(|c| [c.lo, c.hi]).collect();
    ends.sort_by(f64::total_cmp);
    ends.dedup();
    let mut probes = ends.clone();
    probes.extend(ends.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    probes
        .iter()
        .map(|&y| {
            clusters
                .iter()
                .filter(|c| (c.lo < y && y < c.hi) || (c.lo == c.hi && c.lo == y))
                .count()
        })
        .max()
        .unwrap_or(0)
}

/// Certificate plus empirical preimage multiplicity over `y_grid_n` target
/// buckets spanning the support of `nu`.
pub fn verify_injectivity(c: &SampledCoupling, nu: &Measure, y_grid_n: usize) -> InjectivityReport {
    let violations = certificate_violations(c);
    let (ya, yb) = nu.support().unwrap_or((0.0, 1.0));
    let n = y_grid_n.max(1);
    let width = (yb - ya) / n as f64;
    let bucket = |y: f64| -> usize { (((y - ya) / width).floor().max(0.0) as usize).min(n - 1) };
    let mut buckets: Vec<Vec<Cluster>> = vec![Vec::new(); n];
    for p in &c.parts {
        for side in 0..2 {
            // runs of consecutive cells landing in one bucket form a cluster
            let mut current: Option<(usize, Cluster)> = None;
            for cell in &p.cells {
                let atoms = cell.kernel.atoms();
                let hit = match (side, atoms.as_slice()) {
                    (0, [(y, w)]) if *w > 0.0 => Some(*y),
                    (0, [(y, w), _]) if *w > 0.0 => Some(*y),
                    (1, [_, (y, w)]) if *w > 0.0 => Some(*y),
                    _ => None,
                };
                match (hit, current.as_mut()) {
                    (Some(y), Some((b, cl))) if bucket(y) == *b => {
                        cl.lo = cl.lo.min(y);
                        cl.hi = cl.hi.max(y);
                    }
                    (Some(y), _) => {
                        if let Some((b, cl)) = current.take() {
                            buckets[b].push(cl);
                        }
                        current = Some((bucket(y), Cluster { lo: y, hi: y }));
                    }
                    (None, _) => {
                        if let Some((b, cl)) = current.take() {
                            buckets[b].push(cl);
                        }
                    }
                }
            }
            if let Some((b, cl)) = current.take() {
                buckets[b].push(cl);
            }
        }
    }
    let depths: Vec<usize> = buckets.iter().map(|b| overlap_depth(b)).collect();
    let max_multiplicity = depths.iter().copied().max().unwrap_or(0);
    let multi = depths.iter().filter(|&&d| d >= 2).count();
    let multi_bucket_fraction = multi as f64 / n as f64;
    let certificate = violations == 0;
    InjectivityReport {
        monotonicity_violations: violations,
        certificate,
        max_multiplicity,
        multi_bucket_fraction,
        passed: certificate && multi_bucket_fraction <= 2.0 / n as f64,
    }
}

/// Full report for a sampled coupling.
pub fn verify_sampled(
    c: &SampledCoupling,
    mu: &Measure,
    nu: &Measure,
    cfg: &VerifyConfig,
) -> Result<VerificationReport> {
    let (kolmogorov_mu, kolmogorov_nu) = verify_marginals(c, mu, nu)?;
    let max_martingale_residual = verify_martingale(c);
    let injectivity = verify_injectivity(c, nu, cfg.y_grid_n);
    let marginal_tolerance = 5.0 / cfg.grid_n as f64 + c.dropped_mass;
    let passed = kolmogorov_mu <= marginal_tolerance
        && kolmogorov_nu <= marginal_tolerance
        && max_martingale_residual <= RESIDUAL_TOL
        && injectivity.passed;
    Ok(VerificationReport {
        grid_n: cfg.grid_n,
        y_grid_n: cfg.y_grid_n,
        kolmogorov_mu,
        kolmogorov_nu,
        dropped_mass: c.dropped_mass,
        marginal_tolerance,
        max_martingale_residual,
        injectivity,
        passed,
    })
}

/// Closed-form injective coupling of `U[-1,1]` into `U[-2,2]` with split
/// point `a`: returns `(f(x), h(x))`.
pub fn hn_reference(a: f64, x: f64) -> Result<(f64, f64)> {
    if !(a.abs() <= 1.0 && x.abs() <= 1.0) {
        return Err(Error::Domain(format!(
            "reference family needs |a|, |x| <= 1, got a = {a}, x = {x}"
        )));
    }
    let h = (2.0 * x + a + (4.0 + a * a - 4.0 * a * x).sqrt()) / 2.0;
    Ok((2.0 * x + a - h, h))
}

/// Mass and mean balance of the reference family at `(a, x)`: the source
/// mass on `[-1, x)` against the target mass on `[-2, f) u [a, h)`.
pub fn hn_moment_residuals(a: f64, x: f64) -> Result<(f64, f64)> {
    let (f, h) = hn_reference(a, x)?;
    let mass = (x + 1.0) / 2.0 - ((f + 2.0) / 4.0 + (h - a) / 4.0);
    let mean = (x * x - 1.0) / 4.0 - ((f * f - 4.0) / 8.0 + (h * h - a * a) / 8.0);
    Ok((mass.abs(), mean.abs()))
}

/// `(x, f, h)` rows on `n + 1` equally spaced `x` in `[-1, 1]`.
pub fn hn_table(a: f64, n: usize) -> Result<Vec<(f64, f64, f64)>> {
    let n = n.max(1);
    (0..=n)
        .map(|i| {
            let x = (-1.0 + 2.0 * i as f64 / n as f64).clamp(-1.0, 1.0);
            let (f, h) = hn_reference(a, x)?;
            Ok((x, f, h))
        })
        .collect()
}
