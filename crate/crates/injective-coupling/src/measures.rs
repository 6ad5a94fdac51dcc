//! Finite measures on the real line made of atoms and uniform pieces.
//!
//! A [`Measure`] keeps the user-facing description (atoms plus possibly
//! overlapping uniform pieces) together with a flattened cell table that
//! answers CDF and quantile queries exactly from breakpoint arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on mass coordinates, relative to total mass.
pub const EPS_U: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub x: f64,
    pub mass: f64,
}

/// Uniform density `mass / (right - left)` on `(left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Piece {
    pub left: f64,
    pub right: f64,
    pub mass: f64,
}

impl Piece {
    pub fn density(&self) -> f64 {
        self.mass / (self.right - self.left)
    }
}

/// JSON form of a measure: `{"atoms":[{"x","mass"}], "pieces":[{"left","right","mass"}]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    #[serde(default)]
    pub atoms: Vec<Atom>,
    #[serde(default)]
    pub pieces: Vec<Piece>,
}

/// Which version of the quantile function to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantileSide {
    /// Left-continuous version `sup{k : F(k) < u}`.
    Left,
    /// Right-continuous version `inf{k : F(k) > u}`.
    Right,
    /// Left limit `G(u-)`, equal to `Left` except `G(0-) = -inf`.
    Minus,
    /// Right limit `G(u+)`, equal to `Right` except `G(mass+) = +inf`.
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileQuery {
    pub u: f64,
    pub side: QuantileSide,
}

#[derive(Debug, Clone, Default)]
struct Cells {
    knots: Vec<f64>,
    /// Mass sitting exactly on `knots[i]`.
    atom: Vec<f64>,
    /// Density on `(knots[i], knots[i+1])`.
    density: Vec<f64>,
    /// `mu((-inf, knots[i]))`.
    below: Vec<f64>,
    /// `mu((-inf, knots[i]])`.
    upto: Vec<f64>,
    /// `mu((-inf, knots[i]))`-weighted first moment `int_{z < knots[i]} z mu(dz)`.
    moment_below: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Measure {
    atoms: Vec<Atom>,
    pieces: Vec<Piece>,
    cells: Cells,
    mass: f64,
    mean: f64,
}

impl PartialEq for Measure {
    fn eq(&self, other: &Self) -> bool {
        self.atoms == other.atoms && self.pieces == other.pieces
    }
}

fn validate_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} is not finite ({v})")))
    }
}

impl Measure {
    /// Validated constructor.
    pub fn new(atoms: Vec<Atom>, pieces: Vec<Piece>) -> Result<Self> {
        for (i, a) in atoms.iter().enumerate() {
            validate_finite(&format!("atoms[{i}].x"), a.x)?;
            validate_finite(&format!("atoms[{i}].mass"), a.mass)?;
            if a.mass <= 0.0 {
                return Err(Error::Validation(format!(
                    "atoms[{i}].mass must be positive, got {}",
                    a.mass
                )));
            }
        }
        for (i, p) in pieces.iter().enumerate() {
            validate_finite(&format!("pieces[{i}].left"), p.left)?;
            validate_finite(&format!("pieces[{i}].right"), p.right)?;
            validate_finite(&format!("pieces[{i}].mass"), p.mass)?;
            if p.mass <= 0.0 {
                return Err(Error::Validation(format!(
                    "pieces[{i}].mass must be positive, got {}",
                    p.mass
                )));
            }
            if p.left >= p.right {
                return Err(Error::Validation(format!(
                    "pieces[{i}] has left >= right ({} >= {})",
                    p.left, p.right
                )));
            }
        }
        Ok(Self::from_parts(atoms, pieces))
    }

    pub fn from_spec(spec: &MeasureSpec) -> Result<Self> {
        Self::new(spec.atoms.clone(), spec.pieces.clone())
    }

    pub fn to_spec(&self) -> MeasureSpec {
        MeasureSpec {
            atoms: self.atoms.clone(),
            pieces: self.pieces.clone(),
        }
    }

    pub fn uniform(left: f64, right: f64, mass: f64) -> Result<Self> {
        Self::new(vec![], vec![Piece { left, right, mass }])
    }

    pub fn dirac(x: f64, mass: f64) -> Result<Self> {
        Self::new(vec![Atom { x, mass }], vec![])
    }

    pub fn zero() -> Self {
        Self::from_parts(vec![], vec![])
    }

    /// Unchecked constructor for internally generated parts: drops
    /// non-positive masses and degenerate pieces, merges coincident atoms.
    pub(crate) fn from_parts(mut atoms: Vec<Atom>, pieces: Vec<Piece>) -> Self {
        atoms.retain(|a| a.mass > 0.0 && a.x.is_finite());
        atoms.sort_by(|a, b| a.x.total_cmp(&b.x));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.last_mut() {
                Some(last) if last.x == a.x => last.mass += a.mass,
                _ => merged.push(a),
            }
        }
        let pieces: Vec<Piece> = pieces
            .into_iter()
            .filter(|p| p.mass > 0.0 && p.left < p.right)
            .collect();
        let cells = Cells::build(&merged, &pieces);
        let mass = merged.iter().map(|a| a.mass).sum::<f64>()
            + pieces.iter().map(|p| p.mass).sum::<f64>();
        let first = merged.iter().map(|a| a.x * a.mass).sum::<f64>()
            + pieces
                .iter()
                .map(|p| 0.5 * (p.left + p.right) * p.mass)
                .sum::<f64>();
        let mean = if mass > 0.0 { first / mass } else { 0.0 };
        Measure {
            atoms: merged,
            pieces,
            cells,
            mass,
            mean,
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn total_mass(&self) -> f64 {
        self.mass
    }

    /// Barycentre `int z mu(dz) / mu(R)` (zero for the zero measure).
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// First moment `int z mu(dz)`.
    pub fn first_moment(&self) -> f64 {
        self.mean * self.mass
    }

    pub fn atom_free(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.mass <= 0.0
    }

    /// Sorted breakpoints of the flattened representation.
    pub fn knots(&self) -> &[f64] {
        &self.cells.knots
    }

    /// Smallest and largest breakpoint, `None` for the zero measure.
    pub fn support(&self) -> Option<(f64, f64)> {
        let k = &self.cells.knots;
        if k.is_empty() {
            None
        } else {
            Some((k[0], k[k.len() - 1]))
        }
    }

    /// Mass sitting exactly at `x`.
    pub fn atom_at(&self, x: f64) -> f64 {
        let k = &self.cells.knots;
        match k.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => self.cells.atom[i],
            Err(_) => 0.0,
        }
    }

    /// Density on the open cell containing `x` (right-continuous at knots).
    pub fn density_at(&self, x: f64) -> f64 {
        let k = &self.cells.knots;
        if k.len() < 2 || x < k[0] || x >= k[k.len() - 1] {
            return 0.0;
        }
        let i = k.partition_point(|&p| p <= x) - 1;
        self.cells.density[i]
    }

    /// Per-cell data `(left, right, density)` of the flattened representation.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let c = &self.cells;
        (0..c.density.len()).map(move |i| (c.knots[i], c.knots[i + 1], c.density[i]))
    }

    /// Atoms of the flattened representation as `(x, mass)`.
    pub fn knot_atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = &self.cells;
        (0..c.knots.len())
            .filter(move |&i| c.atom[i] > 0.0)
            .map(move |i| (c.knots[i], c.atom[i]))
    }

    /// Mass coordinates at which the quantile function changes regime.
    pub fn mass_breakpoints(&self) -> Vec<f64> {
        let c = &self.cells;
        let mut out = Vec::with_capacity(2 * c.knots.len());
        for i in 0..c.knots.len() {
            out.push(c.below[i]);
            out.push(c.upto[i]);
        }
        out.dedup();
        out
    }

    /// `mu((-inf, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.cdf_impl(x, true)
    }

    /// `mu((-inf, x))`.
    pub fn cdf_below(&self, x: f64) -> f64 {
        self.cdf_impl(x, false)
    }

    fn cdf_impl(&self, x: f64, closed: bool) -> f64 {
        let c = &self.cells;
        let n = c.knots.len();
        if n == 0 || x < c.knots[0] {
            return 0.0;
        }
        if x.is_nan() {
            return f64::NAN;
        }
        // i = last knot <= x
        let i = c.knots.partition_point(|&p| p <= x) - 1;
        if x == c.knots[i] {
            return if closed { c.upto[i] } else { c.below[i] };
        }
        if i + 1 == n {
            return self.mass;
        }
        c.upto[i] + c.density[i] * (x - c.knots[i])
    }

    /// `int_{z <= x} z mu(dz)`.
    pub fn partial_moment(&self, x: f64) -> f64 {
        let c = &self.cells;
        let n = c.knots.len();
        if n == 0 || x < c.knots[0] {
            return 0.0;
        }
        let i = c.knots.partition_point(|&p| p <= x) - 1;
        let at = c.moment_below[i] + c.atom[i] * c.knots[i];
        if i + 1 == n || x == c.knots[i] {
            return at;
        }
        let t = x - c.knots[i];
        at + c.density[i] * t * (c.knots[i] + 0.5 * t)
    }

    fn check_u(&self, u: f64) -> Result<f64> {
        let tol = EPS_U * self.mass.max(1.0);
        if !(u >= -tol && u <= self.mass + tol) {
            return Err(Error::Domain(format!(
                "mass coordinate {u} outside [0, {}]",
                self.mass
            )));
        }
        Ok(u.clamp(0.0, self.mass))
    }

    /// Left-continuous quantile `G->(u) = inf{k : F(k) >= u}`.
    ///
    /// At `u = 0` this returns the lower end of the support rather than
    /// `-inf`; use [`QuantileSide::Minus`] for the limit convention.
    pub fn quantile_left(&self, u: f64) -> f64 {
        let c = &self.cells;
        let n = c.knots.len();
        if n == 0 {
            return f64::NAN;
        }
        let i = c.upto.partition_point(|&a| a < u);
        if i == n {
            return c.knots[n - 1];
        }
        if i == 0 {
            return c.knots[0];
        }
        if u <= c.below[i] {
            self.interp(i - 1, u)
        } else {
            c.knots[i]
        }
    }

    /// Right-continuous quantile `G<-(u) = inf{k : F(k) > u}`.
    ///
    /// At `u = mass` this returns the upper end of the support rather than
    /// `+inf`; use [`QuantileSide::Plus`] for the limit convention.
    pub fn quantile_right(&self, u: f64) -> f64 {
        let c = &self.cells;
        let n = c.knots.len();
        if n == 0 {
            return f64::NAN;
        }
        let i = c.upto.partition_point(|&a| a <= u);
        if i == n {
            return c.knots[n - 1];
        }
        if i == 0 {
            return c.knots[0];
        }
        if u < c.below[i] {
            self.interp(i - 1, u)
        } else {
            c.knots[i]
        }
    }

    fn interp(&self, cell: usize, u: f64) -> f64 {
        let c = &self.cells;
        let d = c.density[cell];
        let (l, r) = (c.knots[cell], c.knots[cell + 1]);
        if d <= 0.0 {
            return r;
        }
        (l + (u - c.upto[cell]) / d).clamp(l, r)
    }

    pub fn quantile(&self, q: QuantileQuery) -> Result<f64> {
        let u = self.check_u(q.u)?;
        if self.is_zero() {
            return Err(Error::Domain("quantile of the zero measure".into()));
        }
        Ok(match q.side {
            QuantileSide::Left => self.quantile_left(u),
            QuantileSide::Right => self.quantile_right(u),
            QuantileSide::Minus => {
                if u <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    self.quantile_left(u)
                }
            }
            QuantileSide::Plus => {
                if u >= self.mass {
                    f64::INFINITY
                } else {
                    self.quantile_right(u)
                }
            }
        })
    }

    /// `int_0^u G(w) dw`, the first moment of the left restriction of mass `u`.
    pub fn quantile_integral(&self, u: f64) -> f64 {
        if u <= 0.0 || self.is_zero() {
            return 0.0;
        }
        let u = u.min(self.mass);
        let g = self.quantile_left(u);
        let below = self.cdf_below(g);
        let moment = self.partial_moment(g) - self.atom_at(g) * g;
        moment + (u - below) * g
    }

    /// The left restriction `chi_u`: all mass strictly below `G(u)` plus the
    /// fraction of the atom at `G(u)` needed to reach total mass `u`.
    pub fn restrict_left(&self, u: f64) -> Result<Measure> {
        let u = self.check_u(u)?;
        Ok(self.slice_unchecked(0.0, u))
    }

    /// Measure carried by the quantile slab `(a, b)`, i.e. `chi_b - chi_a`.
    pub fn slice(&self, a: f64, b: f64) -> Result<Measure> {
        let a = self.check_u(a)?;
        let b = self.check_u(b)?;
        if a > b {
            return Err(Error::Domain(format!("slice bounds reversed: {a} > {b}")));
        }
        Ok(self.slice_unchecked(a, b))
    }

    pub(crate) fn slice_unchecked(&self, a: f64, b: f64) -> Measure {
        if b <= a || self.is_zero() {
            return Measure::zero();
        }
        let ga = if a <= 0.0 {
            f64::NEG_INFINITY
        } else {
            self.quantile_left(a)
        };
        let gb = self.quantile_left(b);
        let mut atoms = Vec::new();
        let mut pieces = Vec::new();
        for p in &self.pieces {
            let l = p.left.max(ga);
            let r = p.right.min(gb);
            if l < r {
                pieces.push(Piece {
                    left: l,
                    right: r,
                    mass: p.density() * (r - l),
                });
            }
        }
        for at in &self.atoms {
            if at.x > ga && at.x < gb {
                atoms.push(*at);
            }
        }
        let part_b = {
            let w = self.atom_at(gb);
            if w > 0.0 {
                (b - self.cdf_below(gb)).clamp(0.0, w)
            } else {
                0.0
            }
        };
        if ga == gb {
            let part_a = (a - self.cdf_below(ga)).clamp(0.0, self.atom_at(ga));
            atoms.push(Atom {
                x: gb,
                mass: part_b - part_a,
            });
        } else {
            if a > 0.0 {
                let w = self.atom_at(ga);
                if w > 0.0 {
                    let part_a = (a - self.cdf_below(ga)).clamp(0.0, w);
                    atoms.push(Atom {
                        x: ga,
                        mass: w - part_a,
                    });
                }
            }
            atoms.push(Atom {
                x: gb,
                mass: part_b,
            });
        }
        // rounding in the quantile leaves slivers at the cut points
        let floor = 1e-14 * self.mass;
        atoms.retain(|a| a.mass > floor);
        pieces.retain(|p| p.mass > floor);
        Measure::from_parts(atoms, pieces)
    }

    /// Push-forward of Lebesgue measure on the quantile set `J` under `G`.
    pub fn restrict_quantile_set(&self, intervals: &[(f64, f64)]) -> Result<Measure> {
        let tol = EPS_U * self.mass.max(1.0);
        let mut parts = Vec::with_capacity(intervals.len());
        for &(a, b) in intervals {
            if !(a >= -tol && b <= self.mass + tol && a <= b) {
                return Err(Error::Domain(format!(
                    "quantile interval ({a}, {b}) not within (0, {})",
                    self.mass
                )));
            }
            parts.push(self.slice_unchecked(a.max(0.0), b.min(self.mass)));
        }
        Ok(Measure::sum(&parts))
    }

    /// Restriction to the open interval `(l, r)` (infinite ends allowed).
    pub fn restrict_open(&self, l: f64, r: f64) -> Measure {
        self.restrict_interval(l, r, false)
    }

    /// Restriction to the closed interval `[l, r]`.
    pub fn restrict_closed(&self, l: f64, r: f64) -> Measure {
        self.restrict_interval(l, r, true)
    }

    fn restrict_interval(&self, l: f64, r: f64, closed: bool) -> Measure {
        let pieces = self
            .pieces
            .iter()
            .filter_map(|p| {
                let a = p.left.max(l);
                let b = p.right.min(r);
                (a < b).then(|| Piece {
                    left: a,
                    right: b,
                    mass: p.density() * (b - a),
                })
            })
            .collect();
        let atoms = self
            .atoms
            .iter()
            .filter(|a| {
                if closed {
                    a.x >= l && a.x <= r
                } else {
                    a.x > l && a.x < r
                }
            })
            .copied()
            .collect();
        Measure::from_parts(atoms, pieces)
    }

    /// Sum of measures (pieces are kept side by side).
    pub fn sum(parts: &[Measure]) -> Measure {
        let mut atoms = Vec::new();
        let mut pieces = Vec::new();
        for p in parts {
            atoms.extend_from_slice(&p.atoms);
            pieces.extend_from_slice(&p.pieces);
        }
        Measure::from_parts(atoms, pieces)
    }

    pub fn add(&self, other: &Measure) -> Measure {
        Measure::sum(&[self.clone(), other.clone()])
    }

    /// `self - other` on the common refinement, with negative rounding
    /// residue clipped at zero. Intended for `other <= self`.
    pub fn difference(&self, other: &Measure) -> Measure {
        let mut knots: Vec<f64> = self
            .cells
            .knots
            .iter()
            .chain(other.cells.knots.iter())
            .copied()
            .collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let scale = self.mass.max(other.mass).max(1e-300);
        let mut atoms = Vec::new();
        let mut pieces = Vec::new();
        for (i, &x) in knots.iter().enumerate() {
            let w = self.atom_at(x) - other.atom_at(x);
            if w > 1e-14 * scale {
                atoms.push(Atom { x, mass: w });
            }
            if i + 1 < knots.len() {
                let r = knots[i + 1];
                let mid = 0.5 * (x + r);
                let d = self.density_at(mid) - other.density_at(mid);
                let m = d * (r - x);
                if m > 1e-14 * scale {
                    pieces.push(Piece {
                        left: x,
                        right: r,
                        mass: m,
                    });
                }
            }
        }
        Measure::from_parts(atoms, pieces)
    }

    /// Same measure with pieces flattened to disjoint cells.
    pub fn normalized(&self) -> Measure {
        let c = &self.cells;
        let mut pieces = Vec::new();
        for i in 0..c.density.len() {
            if c.density[i] > 0.0 {
                pieces.push(Piece {
                    left: c.knots[i],
                    right: c.knots[i + 1],
                    mass: c.density[i] * (c.knots[i + 1] - c.knots[i]),
                });
            }
        }
        Measure::from_parts(self.atoms.clone(), pieces)
    }

    /// Translate the measure by `d`.
    pub fn translated(&self, d: f64) -> Measure {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom { x: a.x + d, ..*a })
            .collect();
        let pieces = self
            .pieces
            .iter()
            .map(|p| Piece {
                left: p.left + d,
                right: p.right + d,
                ..*p
            })
            .collect();
        Measure::from_parts(atoms, pieces)
    }

    /// Scale all masses by `c > 0`.
    pub fn scaled(&self, c: f64) -> Measure {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                x: a.x,
                mass: a.mass * c,
            })
            .collect();
        let pieces = self
            .pieces
            .iter()
            .map(|p| Piece {
                mass: p.mass * c,
                ..*p
            })
            .collect();
        Measure::from_parts(atoms, pieces)
    }
}

impl Cells {
    fn build(atoms: &[Atom], pieces: &[Piece]) -> Cells {
        let mut knots: Vec<f64> = atoms
            .iter()
            .map(|a| a.x)
            .chain(pieces.iter().flat_map(|p| [p.left, p.right]))
            .collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let n = knots.len();
        let mut atom = vec![0.0; n];
        for a in atoms {
            let i = knots.partition_point(|&k| k < a.x);
            atom[i] += a.mass;
        }
        let mut density = vec![0.0; n.saturating_sub(1)];
        for p in pieces {
            let i0 = knots.partition_point(|&k| k < p.left);
            let i1 = knots.partition_point(|&k| k < p.right);
            let d = p.density();
            for cell in density.iter_mut().take(i1).skip(i0) {
                *cell += d;
            }
        }
        let mut below = vec![0.0; n];
        let mut upto = vec![0.0; n];
        let mut moment_below = vec![0.0; n];
        let mut acc = 0.0;
        let mut mom = 0.0;
        for i in 0..n {
            below[i] = acc;
            moment_below[i] = mom;
            acc += atom[i];
            mom += atom[i] * knots[i];
            upto[i] = acc;
            if i + 1 < n {
                let h = knots[i + 1] - knots[i];
                acc += density[i] * h;
                mom += density[i] * h * 0.5 * (knots[i] + knots[i + 1]);
            }
        }
        Cells {
            knots,
            atom,
            density,
            below,
            upto,
            moment_below,
        }
    }
}

/// Sup-distance between the CDFs of two measures (attained at breakpoints).
pub fn kolmogorov_distance(a: &Measure, b: &Measure) -> f64 {
    let mut knots: Vec<f64> = a.knots().iter().chain(b.knots()).copied().collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut best: f64 = (a.total_mass() - b.total_mass()).abs();
    for &x in &knots {
        best = best.max((a.cdf(x) - b.cdf(x)).abs());
        best = best.max((a.cdf_below(x) - b.cdf_below(x)).abs());
    }
    best
}

/// `int |F_a - F_b| dx`, exact for piecewise-linear CDFs.
pub fn wasserstein1(a: &Measure, b: &Measure) -> f64 {
    let mut knots: Vec<f64> = a.knots().iter().chain(b.knots()).copied().collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut total = 0.0;
    for w in knots.windows(2) {
        let (l, r) = (w[0], w[1]);
        let d0 = a.cdf(l) - b.cdf(l);
        let d1 = a.cdf_below(r) - b.cdf_below(r);
        let h = r - l;
        total += if d0 * d1 >= 0.0 {
            0.5 * (d0.abs() + d1.abs()) * h
        } else {
            let t = d0.abs() / (d0.abs() + d1.abs());
            0.5 * h * (d0.abs() * t + d1.abs() * (1.0 - t))
        };
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mix() -> Measure {
        Measure::new(
            vec![],
            vec![
                Piece {
                    left: -1.0,
                    right: 1.0,
                    mass: 0.5,
                },
                Piece {
                    left: -2.0,
                    right: 2.0,
                    mass: 0.5,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn uniform_basics() {
        let m = Measure::uniform(-2.0, 2.0, 1.0).unwrap();
        assert_eq!(m.total_mass(), 1.0);
        assert_eq!(m.mean(), 0.0);
        assert!(m.atom_free());
        assert_eq!(m.quantile_left(0.5), 0.0);
        assert_eq!(m.cdf(0.0), 0.5);
    }

    #[test]
    fn mixture_right_limit_at_eighth() {
        let m = mix();
        let g = m
            .quantile(QuantileQuery {
                u: 0.125,
                side: QuantileSide::Plus,
            })
            .unwrap();
        assert!((g + 1.0).abs() < 1e-15);
        // G(u) = -2 + 8u below 1/8
        assert!((m.quantile_left(0.0625) - (-2.0 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn dirac_quantiles_and_restriction() {
        let d = Measure::dirac(0.0, 1.0).unwrap();
        assert_eq!(d.quantile_left(0.3), 0.0);
        assert_eq!(d.quantile_right(0.3), 0.0);
        let r = d.restrict_left(0.4).unwrap();
        assert_eq!(r.atoms(), &[Atom { x: 0.0, mass: 0.4 }]);
        assert!(r.pieces().is_empty());
    }

    #[test]
    fn restrict_left_uniform() {
        let m = Measure::uniform(-2.0, 2.0, 1.0).unwrap();
        let r = m.restrict_left(0.5).unwrap();
        assert!((r.total_mass() - 0.5).abs() < 1e-15);
        assert_eq!(r.support(), Some((-2.0, 0.0)));
        assert!(m.restrict_left(0.0).unwrap().is_zero());
    }

    #[test]
    fn quantile_set_restriction() {
        let m = Measure::uniform(-2.0, 2.0, 1.0).unwrap();
        let r = m.restrict_quantile_set(&[(0.25, 0.75)]).unwrap();
        assert!((r.total_mass() - 0.5).abs() < 1e-15);
        assert_eq!(r.support(), Some((-1.0, 1.0)));
        let full = m.restrict_quantile_set(&[(0.0, 1.0)]).unwrap();
        assert!(kolmogorov_distance(&full, &m) < 1e-15);
    }

    #[test]
    fn validation_errors_name_entry() {
        let e = Measure::new(
            vec![],
            vec![Piece {
                left: 1.0,
                right: 1.0,
                mass: 1.0,
            }],
        )
        .unwrap_err();
        assert!(e.to_string().contains("pieces[0]"));
        let e = Measure::new(vec![Atom { x: 0.0, mass: -1.0 }], vec![]).unwrap_err();
        assert!(e.to_string().contains("atoms[0].mass"));
        let e = Measure::new(
            vec![Atom {
                x: f64::NAN,
                mass: 1.0,
            }],
            vec![],
        )
        .unwrap_err();
        assert!(e.to_string().contains("atoms[0].x"));
    }

    #[test]
    fn unknown_json_fields_rejected() {
        let bad = r#"{"atoms":[{"x":0,"mass":1,"w":2}]}"#;
        assert!(serde_json::from_str::<MeasureSpec>(bad).is_err());
        let bad = r#"{"atoms":[],"extra":1}"#;
        assert!(serde_json::from_str::<MeasureSpec>(bad).is_err());
        let ok = r#"{"pieces":[{"left":-1,"right":1,"mass":1}]}"#;
        assert!(serde_json::from_str::<MeasureSpec>(ok).is_ok());
    }

    #[test]
    fn atom_slices_split_exactly() {
        let m = Measure::new(
            vec![Atom { x: 0.0, mass: 0.5 }],
            vec![Piece {
                left: -1.0,
                right: 1.0,
                mass: 0.5,
            }],
        )
        .unwrap();
        // atom occupies mass coordinates [0.25, 0.75]
        assert_eq!(m.quantile_left(0.25), 0.0);
        assert_eq!(m.quantile_right(0.25), 0.0);
        assert_eq!(m.quantile_right(0.75), 0.0);
        assert!(m.quantile_right(0.7500001) > 0.0);
        let s = m.slice(0.3, 0.6).unwrap();
        assert_eq!(s.atoms().len(), 1);
        assert!((s.total_mass() - 0.3).abs() < 1e-15);
        let s = m.slice(0.5, 0.9).unwrap();
        assert!((s.atom_at(0.0) - 0.25).abs() < 1e-15);
        assert!((s.total_mass() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn quantile_integral_matches_restriction_moment() {
        let m = mix();
        for &u in &[0.05, 0.125, 0.4, 0.9, 1.0] {
            let r = m.restrict_left(u).unwrap();
            assert!((m.quantile_integral(u) - r.first_moment()).abs() < 1e-14);
        }
    }

    #[test]
    fn wasserstein_of_shift() {
        let a = Measure::uniform(0.0, 1.0, 1.0).unwrap();
        let b = Measure::uniform(0.5, 1.5, 1.0).unwrap();
        assert!((wasserstein1(&a, &b) - 0.5).abs() < 1e-14);
    }
}
