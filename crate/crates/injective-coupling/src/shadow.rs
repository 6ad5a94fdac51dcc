//! The two-parameter potential `E_{v,u}`, shadow measures of left parcels
//! `mu_u - mu_v`, the arrow functions and the stopping masses `w_bar`,
//! `w_under`, plus an independent atom-by-atom shadow oracle.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hull::{ConvexEnvelope, SegmentKind};
use crate::measures::{Measure, Piece, EPS_U};
use crate::potential::{call_potential, check_convex_order, put_potential, PotentialFn};

/// Number of grid cells used by the stopping-mass scans.
pub const SCAN_CELLS: usize = 2048;

/// A pair `mu <=_cx nu` with cached potentials.
#[derive(Debug, Clone)]
pub struct Pair {
    mu: Measure,
    nu: Measure,
    p_mu: PotentialFn,
    c_mu: PotentialFn,
    p_nu: PotentialFn,
    mass: f64,
    pred_tol: f64,
    mass_tol: f64,
}

/// Result of an arrow evaluation: the linear span `(m, n)` of the envelope
/// around the quantile `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArrowResult {
    pub m: f64,
    pub n: f64,
    pub z: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopStatus {
    /// A genuine crossing strictly inside the scanned range.
    Found,
    /// No crossing before the end of the range; the empty-set convention applies.
    Convention,
    /// The crossing sits at the starting mass itself.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StopResult {
    pub w: f64,
    pub status: StopStatus,
}

impl Pair {
    pub fn new(mu: Measure, nu: Measure) -> Result<Self> {
        let verdict = check_convex_order(&mu, &nu);
        if !verdict.holds() {
            return Err(Error::ConvexOrder(format!("{verdict:?}")));
        }
        if mu.is_zero() {
            return Err(Error::Precondition("empty pair".into()));
        }
        let mass = mu.total_mass();
        let span = {
            let (a, b) = nu.support().expect("nonzero");
            let (c, d) = mu.support().expect("nonzero");
            (b.max(d) - a.min(c)).max(1.0)
        };
        Ok(Pair {
            p_mu: put_potential(&mu),
            c_mu: call_potential(&mu),
            p_nu: put_potential(&nu),
            mass,
            pred_tol: 1e-12 * span,
            mass_tol: EPS_U * mass,
            mu,
            nu,
        })
    }

    pub fn mu(&self) -> &Measure {
        &self.mu
    }

    pub fn nu(&self) -> &Measure {
        &self.nu
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Absolute tolerance on mass coordinates.
    pub fn mass_tol(&self) -> f64 {
        self.mass_tol
    }

    fn clamp_mass(&self, w: f64, what: &str) -> Result<f64> {
        if !(w >= -self.mass_tol && w <= self.mass + self.mass_tol) {
            return Err(Error::Domain(format!(
                "{what} = {w} outside [0, {}]",
                self.mass
            )));
        }
        Ok(w.clamp(0.0, self.mass))
    }

    /// Left-continuous quantile of `mu`.
    pub fn g_left(&self, u: f64) -> f64 {
        self.mu.quantile_left(u)
    }

    /// Right-continuous quantile of `mu`.
    pub fn g_right(&self, u: f64) -> f64 {
        self.mu.quantile_right(u)
    }

    /// `G(u+)`, with `+inf` at full mass.
    pub fn g_plus(&self, u: f64) -> f64 {
        if u >= self.mass {
            f64::INFINITY
        } else {
            self.mu.quantile_right(u)
        }
    }

    /// `G(u-)`, with `-inf` at zero.
    pub fn g_minus(&self, u: f64) -> f64 {
        if u <= 0.0 {
            f64::NEG_INFINITY
        } else {
            self.mu.quantile_left(u)
        }
    }

    /// `E_{v,u} = P_nu - P_{mu_u} + C_{mu_v}` for `0 <= v <= u <= mass`.
    pub fn e_fn(&self, v: f64, u: f64) -> Result<PotentialFn> {
        let v = self.clamp_mass(v, "v")?;
        let u = self.clamp_mass(u, "u")?;
        if v > u + self.mass_tol {
            return Err(Error::Domain(format!("E requires v <= u, got v={v}, u={u}")));
        }
        let v = v.min(u);
        let gu = (u > 0.0).then(|| self.mu.quantile_left(u));
        let gv = (v > 0.0).then(|| self.mu.quantile_left(v));
        let mut knots: Vec<f64> = self
            .p_nu
            .knots()
            .iter()
            .chain(self.p_mu.knots())
            .copied()
            .collect();
        knots.extend(gu);
        knots.extend(gv);
        let (p_mu, c_mu, p_nu) = (&self.p_mu, &self.c_mu, &self.p_nu);
        let rest = self.mass - v;
        let c_gv = gv.map(|g| c_mu.eval(g)).unwrap_or(0.0);
        let p_gu = gu.map(|g| p_mu.eval(g)).unwrap_or(0.0);
        Ok(PotentialFn::tabulate(
            knots,
            |k| {
                let (mut val, mut slope) = (p_nu.eval(k), p_nu.deriv_right(k));
                if let Some(g) = gu {
                    if k < g {
                        val -= p_mu.eval(k);
                        slope -= p_mu.deriv_right(k);
                    } else {
                        val -= p_gu + u * (k - g);
                        slope -= u;
                    }
                }
                if let Some(g) = gv {
                    if k < g {
                        val += c_mu.eval(k) - c_gv - (g - k) * rest;
                        slope += c_mu.deriv_right(k) + rest;
                    }
                }
                (val, slope)
            },
            |m| {
                let mut a = p_nu.curvature_at(m);
                if gu.is_some_and(|g| m < g) {
                    a -= p_mu.curvature_at(m);
                }
                if gv.is_some_and(|g| m < g) {
                    a += p_mu.curvature_at(m);
                }
                a
            },
            -v,
        ))
    }

    pub fn envelope(&self, v: f64, u: f64) -> Result<ConvexEnvelope> {
        ConvexEnvelope::new(self.e_fn(v, u)?)
    }

    /// The shadow of the parcel `mu_u - mu_v` in `nu`, read off the envelope
    /// of `E_{v,u}`: `nu` on chords, `mu_u - mu_v` on contact stretches.
    pub fn shadow_measure(&self, v: f64, u: f64) -> Result<Measure> {
        if u - v <= self.mass_tol {
            self.e_fn(v, u)?; // argument validation
            return Ok(Measure::zero());
        }
        let env = self.envelope(v, u)?;
        let mut parts = Vec::new();
        let mut pieces = Vec::new();
        for s in env.segments() {
            match s.kind {
                SegmentKind::Chord => parts.push(self.nu.restrict_open(s.x0, s.x1)),
                SegmentKind::Contact => {
                    if !(s.x0.is_finite() && s.x1.is_finite()) || s.x1 <= s.x0 {
                        continue;
                    }
                    let mid = 0.5 * (s.x0 + s.x1);
                    let d = self.nu.density_at(mid) - 2.0 * s.a;
                    if d > 0.0 {
                        pieces.push(Piece {
                            left: s.x0,
                            right: s.x1,
                            mass: d * (s.x1 - s.x0),
                        });
                    }
                }
            }
        }
        parts.push(Measure::from_parts(vec![], pieces));
        Ok(Measure::sum(&parts))
    }

    /// `(m_{v,u}(l), n_{v,u}(l))` from the envelope of `E_{v,l}` at `G->(l)`.
    pub fn arrows_right(&self, v: f64, u: f64, l: f64) -> Result<ArrowResult> {
        if v > u + self.mass_tol || u > l + self.mass_tol {
            return Err(Error::Domain(format!(
                "right arrows need v <= u <= l, got ({v}, {u}, {l})"
            )));
        }
        let l = self.clamp_mass(l, "l")?;
        let env = self.envelope(v.min(l), l)?;
        let z = self.mu.quantile_left(l);
        let (m, n) = env.tangent_extent(z)?;
        Ok(ArrowResult {
            m,
            n,
            z,
            slope: env.deriv_right(z),
        })
    }

    /// `(m_{u,v}(l), n_{u,v}(l))` from the envelope of `E_{l,v}` at `G<-(l)`.
    pub fn arrows_left(&self, u: f64, v: f64, l: f64) -> Result<ArrowResult> {
        if l > u + self.mass_tol || u > v + self.mass_tol {
            return Err(Error::Domain(format!(
                "left arrows need l <= u <= v, got ({l}, {u}, {v})"
            )));
        }
        let l = self.clamp_mass(l, "l")?;
        let env = self.envelope(l, v.max(l))?;
        let z = self.mu.quantile_right(l);
        let (m, n) = env.tangent_extent(z)?;
        Ok(ArrowResult {
            m,
            n,
            z,
            slope: env.deriv_left(z),
        })
    }

    /// Grid for the stopping-mass scans: uniform cells plus every mass at
    /// which the quantile of `mu` changes regime.
    fn scan_grid(&self, lo: f64, hi: f64) -> Vec<f64> {
        let step = self.mass / SCAN_CELLS as f64;
        let mut g: Vec<f64> = (0..=SCAN_CELLS).map(|i| i as f64 * step).collect();
        g.extend(self.mu.mass_breakpoints());
        // masses at which the quantile crosses a knot of nu: the stopping
        // predicates can hold on short stretches ending there
        let nudge = 1e3 * self.mass_tol;
        for &k in self.nu.knots() {
            let w = self.mu.cdf_below(k);
            g.extend([w - nudge, w]);
        }
        g.push(self.mass);
        // breakpoints within rounding of an end would only probe the
        // numerically degenerate sliver there
        let tol = self.mass_tol;
        g.retain(|&w| w > lo + tol && w < hi - tol);
        g.push(hi);
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    }

    fn bisect(&self, mut lo: f64, mut hi: f64, pred_lo: bool, pred: impl Fn(f64) -> bool) -> (f64, f64) {
        // invariant: pred(lo) == pred_lo, pred(hi) == !pred_lo
        let tol = self.mass_tol;
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if pred(mid) == pred_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo, hi)
    }

    /// `w_bar_{v,u} = inf{w in (u, mass] : n_{v,u}(w) <= G(w+)}`.
    pub fn w_bar(&self, v: f64, u: f64) -> Result<StopResult> {
        let u = self.clamp_mass(u, "u")?;
        let v = self.clamp_mass(v, "v")?.min(u);
        if u >= self.mass - self.mass_tol {
            return Ok(StopResult {
                w: self.mass,
                status: StopStatus::Convention,
            });
        }
        let pred = |w: f64| -> bool {
            match self.arrows_right(v, u, w) {
                Ok(a) => a.n <= self.g_plus(w) + self.pred_tol,
                Err(_) => false,
            }
        };
        let mut prev = u;
        for w in self.scan_grid(u, self.mass) {
            if pred(w) {
                let (_, hi) = self.bisect(prev, w, false, pred);
                let status = if hi <= u + 2.0 * self.mass_tol {
                    StopStatus::Degenerate
                } else if hi >= self.mass - 2.0 * self.mass_tol {
                    return Ok(StopResult {
                        w: self.mass,
                        status: StopStatus::Convention,
                    });
                } else {
                    StopStatus::Found
                };
                return Ok(StopResult { w: hi, status });
            }
            prev = w;
        }
        Ok(StopResult {
            w: self.mass,
            status: StopStatus::Convention,
        })
    }

    /// `w_under_{u,v} = sup{w in [0, u) : m_{u,v}(w) >= G(w-)}`.
    pub fn w_under(&self, u: f64, v: f64) -> Result<StopResult> {
        let u = self.clamp_mass(u, "u")?;
        let v = self.clamp_mass(v, "v")?.max(u);
        if u <= self.mass_tol {
            return Ok(StopResult {
                w: 0.0,
                status: StopStatus::Convention,
            });
        }
        let pred = |w: f64| -> bool {
            match self.arrows_left(u, v, w) {
                Ok(a) => a.m >= self.g_minus(w) - self.pred_tol,
                Err(_) => false,
            }
        };
        let mut grid = self.scan_grid(0.0, u);
        grid.pop(); // drop u itself
        grid.insert(0, 0.0);
        let mut prev = u;
        for &w in grid.iter().rev() {
            if pred(w) {
                let (lo, _) = self.bisect(w, prev, true, pred);
                let status = if lo >= u - 2.0 * self.mass_tol {
                    StopStatus::Degenerate
                } else if lo <= 2.0 * self.mass_tol {
                    return Ok(StopResult {
                        w: 0.0,
                        status: StopStatus::Convention,
                    });
                } else {
                    StopStatus::Found
                };
                return Ok(StopResult { w: lo, status });
            }
            prev = w;
        }
        Ok(StopResult {
            w: 0.0,
            status: StopStatus::Convention,
        })
    }

    /// Independent shadow: splits `mu_u - mu_v` into `n_atoms` equal-mass
    /// atoms at slab barycentres and embeds them one by one, each into a
    /// quantile window of the remaining `nu` with matching mass and mean.
    pub fn shadow_oracle_atomic(&self, v: f64, u: f64, n_atoms: usize) -> Result<Measure> {
        let u = self.clamp_mass(u, "u")?;
        let v = self.clamp_mass(v, "v")?;
        if v > u {
            return Err(Error::Domain(format!("oracle requires v <= u, got v={v}, u={u}")));
        }
        if u - v <= self.mass_tol || n_atoms == 0 {
            return Ok(Measure::zero());
        }
        let w = (u - v) / n_atoms as f64;
        let mut avail = QuantileWindows::new(&self.nu);
        let mut removed = Vec::with_capacity(n_atoms);
        for i in 0..n_atoms {
            let a = v + i as f64 * w;
            let b = if i + 1 == n_atoms { u } else { a + w };
            let x = (self.mu.quantile_integral(b) - self.mu.quantile_integral(a)) / (b - a);
            removed.extend(avail.take_window(b - a, x));
        }
        removed.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(removed.len());
        for (a, b) in removed {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        self.nu.restrict_quantile_set(&merged)
    }
}

/// Unused parts of `nu`, kept as disjoint intervals of `nu`'s mass coordinate.
struct QuantileWindows<'a> {
    nu: &'a Measure,
    /// Disjoint sorted intervals `(a, b)` in original coordinates.
    free: Vec<(f64, f64)>,
}

impl<'a> QuantileWindows<'a> {
    fn new(nu: &'a Measure) -> Self {
        QuantileWindows {
            nu,
            free: vec![(0.0, nu.total_mass())],
        }
    }

    /// Map from remaining coordinate `r` to original coordinate.
    fn to_original(&self, prefix: &[f64], r: f64) -> f64 {
        let i = prefix.partition_point(|&p| p <= r).saturating_sub(1).min(self.free.len() - 1);
        let (a, b) = self.free[i];
        (a + (r - prefix[i])).min(b)
    }

    /// `int_0^r G_nu(to_original(s)) ds`.
    fn integral(&self, prefix: &[f64], cum: &[f64], r: f64) -> f64 {
        let i = prefix.partition_point(|&p| p <= r).saturating_sub(1).min(self.free.len() - 1);
        let a = self.free[i].0;
        let x = self.to_original(prefix, r);
        cum[i] + self.nu.quantile_integral(x) - self.nu.quantile_integral(a)
    }

    /// Removes the window of remaining mass `w` whose barycentre is `x` and
    /// returns it as original-coordinate intervals.
    fn take_window(&mut self, w: f64, x: f64) -> Vec<(f64, f64)> {
        let mut prefix = Vec::with_capacity(self.free.len() + 1);
        let mut cum = Vec::with_capacity(self.free.len() + 1);
        let (mut p, mut c) = (0.0, 0.0);
        for &(a, b) in &self.free {
            prefix.push(p);
            cum.push(c);
            p += b - a;
            c += self.nu.quantile_integral(b) - self.nu.quantile_integral(a);
        }
        let total = p;
        let w = w.min(total);
        let mean = |r: f64| {
            (self.integral(&prefix, &cum, r + w) - self.integral(&prefix, &cum, r)) / w
        };
        let (mut lo, mut hi) = (0.0, total - w);
        for _ in 0..200 {
            if hi - lo <= 1e-15 * total.max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mean(mid) < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let r0 = 0.5 * (lo + hi);
        let (o0, o1) = (self.to_original(&prefix, r0), self.to_original(&prefix, r0 + w));
        let mut taken = Vec::new();
        let mut next = Vec::with_capacity(self.free.len() + 1);
        for &(a, b) in &self.free {
            let (ca, cb) = (a.max(o0), b.min(o1));
            if ca < cb {
                taken.push((ca, cb));
                if a < ca {
                    next.push((a, ca));
                }
                if cb < b {
                    next.push((cb, b));
                }
            } else {
                next.push((a, b));
            }
        }
        self.free = next;
        taken
    }
}
