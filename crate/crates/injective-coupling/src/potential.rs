//! Exact piecewise-quadratic potentials: put and call prices of a measure,
//! the dispersion `D = P_nu - P_mu`, convex-order checks and the
//! irreducible decomposition of a pair.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{Measure, EPS_U};

/// Relative tolerance on mass and mean when matching two measures.
pub const MOMENT_TOL: f64 = 1e-10;
/// Relative tolerance on potential values (negativity and zero detection).
pub const EPS_D: f64 = 1e-12;

/// A continuous piecewise-quadratic function stored in local form.
///
/// On `[knots[i], knots[i+1])` the function is
/// `values[i] + slopes[i] * t + curv[i] * t^2` with `t = x - knots[i]`;
/// to the right of the last knot it is affine with slope `slopes[n-1]`,
/// to the left of the first knot affine with slope `left_slope`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialFn {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    curv: Vec<f64>,
    left_slope: f64,
}

/// One quadratic piece `y0 + s0 (x - x0) + a (x - x0)^2` on `[x0, x1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPiece {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub s0: f64,
    pub a: f64,
}

impl QuadPiece {
    pub fn eval(&self, x: f64) -> f64 {
        let t = x - self.x0;
        self.y0 + t * (self.s0 + self.a * t)
    }

    pub fn slope(&self, x: f64) -> f64 {
        self.s0 + 2.0 * self.a * (x - self.x0)
    }

    pub fn y1(&self) -> f64 {
        self.eval(self.x1)
    }

    pub fn s1(&self) -> f64 {
        self.slope(self.x1)
    }
}

impl PotentialFn {
    /// Builds a function from local data. `curv` has one entry per bounded cell.
    pub fn from_parts(
        knots: Vec<f64>,
        values: Vec<f64>,
        slopes: Vec<f64>,
        curv: Vec<f64>,
        left_slope: f64,
    ) -> Result<Self> {
        let n = knots.len();
        if n == 0 || values.len() != n || slopes.len() != n || curv.len() + 1 != n {
            return Err(Error::Internal(format!(
                "inconsistent potential tables: {} knots, {} values, {} slopes, {} cells",
                n,
                values.len(),
                slopes.len(),
                curv.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Internal("potential knots not strictly increasing".into()));
        }
        Ok(PotentialFn {
            knots,
            values,
            slopes,
            curv,
            left_slope,
        })
    }

    /// Tabulates a function from point queries on a knot set.
    ///
    /// `at(x)` returns `(value, right slope)` and `cell(mid)` the quadratic
    /// coefficient on the cell containing `mid`.
    pub fn tabulate(
        knots: Vec<f64>,
        at: impl Fn(f64) -> (f64, f64),
        cell: impl Fn(f64) -> f64,
        left_slope: f64,
    ) -> Self {
        let mut knots = knots;
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        if knots.is_empty() {
            knots.push(0.0);
        }
        let (values, slopes): (Vec<f64>, Vec<f64>) = knots.iter().map(|&x| at(x)).unzip();
        let curv = knots
            .windows(2)
            .map(|w| cell(0.5 * (w[0] + w[1])))
            .collect();
        PotentialFn {
            knots,
            values,
            slopes,
            curv,
            left_slope,
        }
    }

    /// `sum_j c_j f_j` on the union of the knot sets.
    pub fn linear_combination(terms: &[(f64, &PotentialFn)]) -> Self {
        let knots: Vec<f64> = terms
            .iter()
            .flat_map(|(_, f)| f.knots.iter().copied())
            .collect();
        Self::tabulate(
            knots,
            |x| {
                terms.iter().fold((0.0, 0.0), |(v, s), (c, f)| {
                    (v + c * f.eval(x), s + c * f.deriv_right(x))
                })
            },
            |m| terms.iter().map(|(c, f)| c * f.curvature_at(m)).sum(),
            terms.iter().map(|(c, f)| c * f.left_slope).sum(),
        )
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn left_slope(&self) -> f64 {
        self.left_slope
    }

    pub fn right_slope(&self) -> f64 {
        self.slopes[self.slopes.len() - 1]
    }

    /// Bounded quadratic pieces between consecutive knots.
    pub fn pieces(&self) -> impl Iterator<Item = QuadPiece> + '_ {
        (0..self.curv.len()).map(move |i| QuadPiece {
            x0: self.knots[i],
            x1: self.knots[i + 1],
            y0: self.values[i],
            s0: self.slopes[i],
            a: self.curv[i],
        })
    }

    /// Global coefficients `(a, b, c)` of `a k^2 + b k + c` on cell `i`.
    pub fn coefficients(&self, i: usize) -> (f64, f64, f64) {
        let x0 = self.knots[i];
        let a = self.curv.get(i).copied().unwrap_or(0.0);
        let s = self.slopes[i];
        let y = self.values[i];
        (a, s - 2.0 * a * x0, y - s * x0 + a * x0 * x0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k0 = self.knots[0];
        if x < k0 {
            return self.values[0] + self.left_slope * (x - k0);
        }
        let i = self.knots.partition_point(|&k| k <= x) - 1;
        let t = x - self.knots[i];
        let a = self.curv.get(i).copied().unwrap_or(0.0);
        self.values[i] + t * (self.slopes[i] + a * t)
    }

    pub fn deriv_right(&self, x: f64) -> f64 {
        if x < self.knots[0] {
            return self.left_slope;
        }
        let i = self.knots.partition_point(|&k| k <= x) - 1;
        let a = self.curv.get(i).copied().unwrap_or(0.0);
        self.slopes[i] + 2.0 * a * (x - self.knots[i])
    }

    pub fn deriv_left(&self, x: f64) -> f64 {
        if x <= self.knots[0] {
            return self.left_slope;
        }
        let i = self.knots.partition_point(|&k| k < x) - 1;
        let a = self.curv.get(i).copied().unwrap_or(0.0);
        self.slopes[i] + 2.0 * a * (x - self.knots[i])
    }

    /// Half the second derivative on the open cell containing `x`.
    pub fn curvature_at(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if x <= self.knots[0] || x >= self.knots[n - 1] {
            return 0.0;
        }
        let i = self.knots.partition_point(|&k| k <= x) - 1;
        self.curv[i]
    }

    /// Knots and interior critical points of convex pieces, with values:
    /// the only places where a local minimum can sit.
    pub fn minimum_candidates(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = self
            .knots
            .iter()
            .zip(&self.values)
            .map(|(&x, &y)| (x, y))
            .collect();
        for p in self.pieces() {
            if p.a > 0.0 {
                let t = -p.s0 / (2.0 * p.a);
                if t > 0.0 && p.x0 + t < p.x1 {
                    let x = p.x0 + t;
                    out.push((x, p.eval(x)));
                }
            }
        }
        out
    }

    /// Minimum over candidates, `(argmin, min)`.
    pub fn minimum(&self) -> (f64, f64) {
        self.minimum_candidates()
            .into_iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("potential has at least one knot")
    }

    /// Largest absolute knot value, used to scale tolerances.
    pub fn value_scale(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Put potential `P(k) = int (k - z)^+ m(dz)`.
pub fn put_potential(m: &Measure) -> PotentialFn {
    let knots = m.knots().to_vec();
    if knots.is_empty() {
        return PotentialFn::tabulate(vec![0.0], |_| (0.0, 0.0), |_| 0.0, 0.0);
    }
    let n = knots.len();
    let mut values = vec![0.0; n];
    let mut slopes = vec![0.0; n];
    let mut curv = vec![0.0; n - 1];
    for i in 0..n {
        slopes[i] = m.cdf(knots[i]);
        if i + 1 < n {
            let h = knots[i + 1] - knots[i];
            let d = m.density_at(0.5 * (knots[i] + knots[i + 1]));
            curv[i] = 0.5 * d;
            values[i + 1] = values[i] + slopes[i] * h + curv[i] * h * h;
        }
    }
    PotentialFn {
        knots,
        values,
        slopes,
        curv,
        left_slope: 0.0,
    }
}

/// Call potential `C(k) = int (z - k)^+ m(dz)`, accumulated from the right.
pub fn call_potential(m: &Measure) -> PotentialFn {
    let knots = m.knots().to_vec();
    if knots.is_empty() {
        return PotentialFn::tabulate(vec![0.0], |_| (0.0, 0.0), |_| 0.0, 0.0);
    }
    let n = knots.len();
    let mass = m.total_mass();
    let mut values = vec![0.0; n];
    let mut slopes = vec![0.0; n];
    let mut curv = vec![0.0; n - 1];
    for i in (0..n).rev() {
        slopes[i] = -(mass - m.cdf(knots[i])).max(0.0);
        if i + 1 < n {
            let h = knots[i + 1] - knots[i];
            let d = m.density_at(0.5 * (knots[i] + knots[i + 1]));
            curv[i] = 0.5 * d;
            let upper = (mass - m.cdf_below(knots[i + 1])).max(0.0);
            values[i] = values[i + 1] + h * upper + curv[i] * h * h;
        }
    }
    PotentialFn {
        knots,
        values,
        slopes,
        curv,
        left_slope: -mass,
    }
}

/// `(P(k), C(k))` for a finite strike.
pub fn put_call(m: &Measure, k: f64) -> Result<(f64, f64)> {
    if !k.is_finite() {
        return Err(Error::Domain(format!("strike {k} is not finite")));
    }
    Ok((put_potential(m).eval(k), call_potential(m).eval(k)))
}

fn span(mu: &Measure, nu: &Measure) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for m in [mu, nu] {
        if let Some((a, b)) = m.support() {
            lo = lo.min(a);
            hi = hi.max(b);
        }
    }
    if hi > lo {
        hi - lo
    } else {
        0.0
    }
}

fn moment_scales(mu: &Measure, nu: &Measure) -> (f64, f64) {
    let mass = mu.total_mass().max(nu.total_mass()).max(1.0);
    let mut reach: f64 = 1.0;
    for m in [mu, nu] {
        if let Some((a, b)) = m.support() {
            reach = reach.max(a.abs()).max(b.abs());
        }
    }
    (mass, reach)
}

/// Dispersion `D = P_nu - P_mu`. Requires equal mass and mean.
pub fn dispersion(mu: &Measure, nu: &Measure) -> Result<PotentialFn> {
    let (mass_scale, reach) = moment_scales(mu, nu);
    let dm = nu.total_mass() - mu.total_mass();
    if dm.abs() > MOMENT_TOL * mass_scale {
        return Err(Error::ConvexOrder(format!(
            "mass mismatch: nu - mu = {dm:e}"
        )));
    }
    let d1 = nu.first_moment() - mu.first_moment();
    if d1.abs() > MOMENT_TOL * mass_scale * reach {
        return Err(Error::ConvexOrder(format!(
            "first-moment mismatch: nu - mu = {d1:e}"
        )));
    }
    Ok(PotentialFn::linear_combination(&[
        (1.0, &put_potential(nu)),
        (-1.0, &put_potential(mu)),
    ]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ConvexOrderVerdict {
    InOrder,
    MassMismatch { mu: f64, nu: f64 },
    MeanMismatch { mu: f64, nu: f64 },
    ViolatedAt { k: f64, deficit: f64 },
}

impl ConvexOrderVerdict {
    pub fn holds(&self) -> bool {
        matches!(self, ConvexOrderVerdict::InOrder)
    }
}

/// Tolerance below which a dispersion value counts as zero.
pub fn dispersion_tolerance(mu: &Measure, nu: &Measure) -> f64 {
    EPS_D * (mu.total_mass().max(nu.total_mass()) * span(mu, nu)).max(1.0)
}

pub fn check_convex_order(mu: &Measure, nu: &Measure) -> ConvexOrderVerdict {
    let (mass_scale, reach) = moment_scales(mu, nu);
    if (nu.total_mass() - mu.total_mass()).abs() > MOMENT_TOL * mass_scale {
        return ConvexOrderVerdict::MassMismatch {
            mu: mu.total_mass(),
            nu: nu.total_mass(),
        };
    }
    if (nu.first_moment() - mu.first_moment()).abs() > MOMENT_TOL * mass_scale * reach {
        return ConvexOrderVerdict::MeanMismatch {
            mu: mu.mean(),
            nu: nu.mean(),
        };
    }
    let d = match dispersion(mu, nu) {
        Ok(d) => d,
        Err(_) => unreachable!("moments already matched"),
    };
    let (k, v) = d.minimum();
    if v < -dispersion_tolerance(mu, nu) {
        ConvexOrderVerdict::ViolatedAt { k, deficit: -v }
    } else {
        ConvexOrderVerdict::InOrder
    }
}

/// One irreducible component: `D > 0` exactly on `(left, right)`.
#[derive(Debug, Clone)]
pub struct Component {
    pub left: f64,
    pub right: f64,
    pub mu: Measure,
    pub nu: Measure,
}

#[derive(Debug, Clone)]
pub struct IrreducibleDecomposition {
    pub components: Vec<Component>,
    /// Common part `mu_0 = nu_0` on which the pair agrees.
    pub stay_put: Measure,
    /// Closed intervals on which `D` vanishes identically.
    pub zero_intervals: Vec<(f64, f64)>,
}

pub fn irreducible_decompose(mu: &Measure, nu: &Measure) -> Result<IrreducibleDecomposition> {
    let verdict = check_convex_order(mu, nu);
    if !verdict.holds() {
        return Err(Error::ConvexOrder(format!("pair not in convex order: {verdict:?}")));
    }
    let d = dispersion(mu, nu)?;
    let tol = dispersion_tolerance(mu, nu);

    // Zero set as a sorted list of closed intervals (possibly points).
    let mut zeros: Vec<(f64, f64)> = Vec::new();
    let mut push = |l: f64, r: f64| match zeros.last_mut() {
        Some(last) if l <= last.1 => last.1 = last.1.max(r),
        _ => zeros.push((l, r)),
    };
    let knots = d.knots();
    for (i, &x) in knots.iter().enumerate() {
        let at_zero = d.values()[i] <= tol;
        if at_zero {
            push(x, x);
        }
        if i + 1 < knots.len() {
            let p = d.pieces().nth(i).expect("cell exists");
            let mid = 0.5 * (p.x0 + p.x1);
            if at_zero && p.y1() <= tol && p.eval(mid) <= tol {
                push(p.x0, p.x1);
            } else if p.a > 0.0 {
                let t = -p.s0 / (2.0 * p.a);
                if t > 0.0 && p.x0 + t < p.x1 && p.eval(p.x0 + t) <= tol {
                    push(p.x0 + t, p.x0 + t);
                }
            }
        }
    }

    let mut components = Vec::new();
    for w in zeros.windows(2) {
        let (l, r) = (w[0].1, w[1].0);
        if r > l {
            let (cm, cn) = (mu.restrict_open(l, r), nu.restrict_open(l, r));
            // slivers between nearly coincident zeros carry only rounding mass
            if cm.total_mass().max(cn.total_mass()) > EPS_U * mu.total_mass().max(1.0) {
                components.push(Component {
                    left: l,
                    right: r,
                    mu: cm,
                    nu: cn,
                });
            }
        }
    }
    let zero_intervals: Vec<(f64, f64)> = zeros.into_iter().filter(|z| z.1 > z.0).collect();
    let stay_put = Measure::sum(
        &zero_intervals
            .iter()
            .map(|&(l, r)| mu.restrict_open(l, r))
            .collect::<Vec<_>>(),
    );
    Ok(IrreducibleDecomposition {
        components,
        stay_put,
        zero_intervals,
    })
}
