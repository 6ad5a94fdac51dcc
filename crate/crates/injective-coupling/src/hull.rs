//! Lower convex envelopes of continuous piecewise-quadratic functions and
//! the contact/tangent operators `X^+`, `Z^-`, `X^-`, `Z^+`.
//!
//! The envelope is computed by a left-to-right stack sweep over "elements":
//! every convex (or affine) cell is an arc, every concave cell contributes
//! only its endpoints. The common tangent of two elements is found in closed
//! form from their Legendre-type intercept functions
//! `h(s) = min_x f(x) - s x`, which are piecewise quadratic in `s`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::potential::PotentialFn;

/// Relative value residual below which the source counts as touching.
pub const VALUE_TOL: f64 = 1e-10;
/// Relative slope tolerance for tangency and collinearity tests.
pub const SLOPE_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    /// Envelope equals the source.
    Contact,
    /// Envelope is affine and (strictly, away from the ends) below the source.
    Chord,
}

/// One piece of the envelope: `ya + sa (x - xa) + a (x - xa)^2` on `[x0, x1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    pub x0: f64,
    pub x1: f64,
    pub kind: SegmentKind,
    pub xa: f64,
    pub ya: f64,
    pub sa: f64,
    pub a: f64,
}

impl Segment {
    pub fn eval(&self, x: f64) -> f64 {
        let t = x - self.xa;
        self.ya + t * (self.sa + self.a * t)
    }

    pub fn slope(&self, x: f64) -> f64 {
        if self.a == 0.0 {
            self.sa
        } else {
            self.sa + 2.0 * self.a * (x - self.xa)
        }
    }

    pub fn s0(&self) -> f64 {
        self.slope(self.x0)
    }

    pub fn s1(&self) -> f64 {
        self.slope(self.x1)
    }

    fn chord(x0: f64, x1: f64, xa: f64, ya: f64, s: f64) -> Self {
        Segment {
            x0,
            x1,
            kind: SegmentKind::Chord,
            xa,
            ya,
            sa: s,
            a: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Elem {
    x0: f64,
    x1: f64,
    /// Value and slope at `x0`.
    y0: f64,
    s0: f64,
    a: f64,
    point: bool,
    /// Slope of the envelope arriving at `x0`.
    beta: f64,
}

impl Elem {
    fn point(x: f64, y: f64) -> Self {
        Elem {
            x0: x,
            x1: x,
            y0: y,
            s0: 0.0,
            a: 0.0,
            point: true,
            beta: f64::NEG_INFINITY,
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let t = x - self.x0;
        self.y0 + t * (self.s0 + self.a * t)
    }

    fn s1(&self) -> f64 {
        self.s0 + 2.0 * self.a * (self.x1 - self.x0)
    }

    fn h(&self, s: f64) -> f64 {
        if self.point || s <= self.s0 {
            return self.y0 - s * self.x0;
        }
        let s1 = self.s1();
        if s >= s1 {
            self.eval(self.x1) - s * self.x1
        } else {
            self.y0 - s * self.x0 - (s - self.s0).powi(2) / (4.0 * self.a)
        }
    }

    /// Largest minimiser of `f(x) - s x`.
    fn argmin_plus(&self, s: f64) -> f64 {
        if self.point || s < self.s0 {
            return self.x0;
        }
        if s >= self.s1() {
            return self.x1;
        }
        (self.x0 + (s - self.s0) / (2.0 * self.a)).clamp(self.x0, self.x1)
    }

    /// Smallest minimiser of `f(x) - s x`.
    fn argmin_minus(&self, s: f64) -> f64 {
        if self.point || s <= self.s0 {
            return self.x0;
        }
        if s > self.s1() {
            return self.x1;
        }
        (self.x0 + (s - self.s0) / (2.0 * self.a)).clamp(self.x0, self.x1)
    }

    fn curved_at(&self, s: f64) -> bool {
        !self.point && self.a > 0.0 && s >= self.s0 && s < self.s1()
    }

    fn breakpoints(&self, out: &mut Vec<f64>) {
        if !self.point {
            out.push(self.s0);
            if self.a > 0.0 {
                out.push(self.s1());
            }
        }
    }

    fn clip_left(&mut self, x: f64) {
        if x > self.x0 {
            let y = self.eval(x);
            let s = self.s0 + 2.0 * self.a * (x - self.x0);
            self.x0 = x;
            self.y0 = y;
            self.s0 = s;
        }
    }
}

/// Slope of the common tangent of `a` (left) and `e` (right).
fn bitangent(a: &Elem, e: &Elem) -> f64 {
    let mut bps = Vec::with_capacity(4);
    a.breakpoints(&mut bps);
    e.breakpoints(&mut bps);
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    if bps.is_empty() {
        return (e.y0 - a.y0) / (e.x0 - a.x0);
    }
    let phi = |s: f64| a.h(s) - e.h(s);
    let vals: Vec<f64> = bps.iter().map(|&b| phi(b)).collect();
    let j = match vals.iter().rposition(|&v| v <= 0.0) {
        None => {
            let b = bps[0];
            let d = e.x0 - a.x0;
            return if d > 0.0 { b - vals[0] / d } else { b };
        }
        Some(j) => j,
    };
    let b = bps[j];
    let phi0 = vals[j];
    let d = e.argmin_plus(b) - a.argmin_plus(b);
    let mut c = 0.0;
    if e.curved_at(b) {
        c += 1.0 / (4.0 * e.a);
    }
    if a.curved_at(b) {
        c -= 1.0 / (4.0 * a.a);
    }
    let width = bps.get(j + 1).map(|&n| n - b);
    let disc = (d * d - 4.0 * c * phi0).max(0.0);
    let denom = d + disc.sqrt();
    let tau = if phi0 == 0.0 {
        0.0
    } else if denom > 0.0 {
        -2.0 * phi0 / denom
    } else {
        width.unwrap_or(0.0)
    };
    match width {
        Some(w) => b + tau.clamp(0.0, w),
        None => b + tau.max(0.0),
    }
}

/// Lower convex envelope of a [`PotentialFn`] over the whole real line.
#[derive(Debug, Clone)]
pub struct ConvexEnvelope {
    source: PotentialFn,
    segments: Vec<Segment>,
    value_tol: f64,
    slope_tol: f64,
}

impl ConvexEnvelope {
    pub fn new(source: PotentialFn) -> Result<Self> {
        let s_left = source.left_slope();
        let s_right = source.right_slope();
        let slope_scale = source
            .knots()
            .iter()
            .map(|&k| source.deriv_right(k).abs())
            .fold(s_left.abs().max(s_right.abs()), f64::max)
            .max(f64::MIN_POSITIVE);
        let value_tol = VALUE_TOL * source.value_scale();
        let slope_tol = SLOPE_TOL * slope_scale;
        if s_left > s_right + slope_tol {
            return Err(Error::Internal(format!(
                "envelope unbounded below: tail slopes {s_left} > {s_right}"
            )));
        }
        // equal tail slopes up to rounding
        let s_right = s_right.max(s_left);

        let compact = compact_hull(&source, slope_tol);
        let segments = attach_tails(&source, compact, s_left, s_right);
        let mut env = ConvexEnvelope {
            source,
            segments,
            value_tol,
            slope_tol,
        };
        env.split_touching_chords();
        Ok(env)
    }

    pub fn source(&self) -> &PotentialFn {
        &self.source
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    fn locate(&self, x: f64) -> usize {
        // last segment with x0 <= x
        self.segments
            .partition_point(|s| s.x0 <= x)
            .saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.segments[self.locate(x)].eval(x)
    }

    pub fn deriv_right(&self, x: f64) -> f64 {
        let i = self.locate(x);
        let s = &self.segments[i];
        if x >= s.x1 && i + 1 < self.segments.len() {
            return self.segments[i + 1].slope(x);
        }
        s.slope(x)
    }

    pub fn deriv_left(&self, x: f64) -> f64 {
        let i = self.segments.partition_point(|s| s.x0 < x).saturating_sub(1);
        self.segments[i].slope(x)
    }

    /// `(X^+(z), Z^-(z))`: nearest contact points at or around `z`.
    pub fn contact_bounds(&self, z: f64) -> Result<(f64, f64)> {
        if !z.is_finite() {
            return Err(Error::Domain(format!("contact query at {z}")));
        }
        let s = &self.segments[self.locate(z)];
        match s.kind {
            SegmentKind::Contact => Ok((z, z)),
            SegmentKind::Chord if z == s.x0 || z == s.x1 => Ok((z, z)),
            SegmentKind::Chord => Ok((s.x0, s.x1)),
        }
    }

    fn is_linear(&self, s: &Segment) -> bool {
        s.kind == SegmentKind::Chord
            || s.a == 0.0
            || (s.s1() - s.s0()).abs() <= self.slope_tol
    }

    /// `(X^-(z), Z^+(z))`: the maximal interval around `z` on which the
    /// envelope coincides with its tangent line at `z` (left tangent for
    /// the left end, right tangent for the right end).
    pub fn tangent_extent(&self, z: f64) -> Result<(f64, f64)> {
        if !z.is_finite() {
            return Err(Error::Domain(format!("tangent query at {z}")));
        }
        let n = self.segments.len();

        let sigma = self.deriv_left(z);
        let mut p = z;
        let mut i = self.segments.partition_point(|s| s.x0 < p);
        let left = loop {
            if i == 0 {
                break p;
            }
            let s = &self.segments[i - 1];
            if !self.is_linear(s) || (s.sa - sigma).abs() > self.slope_tol {
                break p;
            }
            p = s.x0;
            if p == f64::NEG_INFINITY {
                break p;
            }
            i -= 1;
        };

        let sigma = self.deriv_right(z);
        let mut p = z;
        let mut i = self.segments.partition_point(|s| s.x1 <= p);
        let right = loop {
            if i >= n {
                break p;
            }
            let s = &self.segments[i];
            if !self.is_linear(s) || (s.sa - sigma).abs() > self.slope_tol {
                break p;
            }
            p = s.x1;
            if p == f64::INFINITY {
                break p;
            }
            i += 1;
        };
        Ok((left, right))
    }

    /// Splits chords at interior points where the source touches them, so
    /// that every finite chord end is a contact point.
    fn split_touching_chords(&mut self) {
        let f = &self.source;
        let mut out = Vec::with_capacity(self.segments.len());
        for seg in &self.segments {
            if seg.kind != SegmentKind::Chord {
                out.push(*seg);
                continue;
            }
            let sigma = seg.sa;
            let touches_at = |x: f64| -> bool {
                let r = f.eval(x) - seg.eval(x);
                r.abs() <= self.value_tol
                    && f.deriv_left(x) <= sigma + self.slope_tol
                    && f.deriv_right(x) >= sigma - self.slope_tol
            };
            let mut touch: Vec<f64> = Vec::new();
            let knots = f.knots();
            let lo = knots.partition_point(|&k| k <= seg.x0);
            let hi = knots.partition_point(|&k| k < seg.x1);
            for &k in &knots[lo..hi] {
                if touches_at(k) {
                    touch.push(k);
                }
            }
            for p in f.pieces() {
                if p.a > 0.0 && p.x1 > seg.x0 && p.x0 < seg.x1 {
                    let x = p.x0 + (sigma - p.s0) / (2.0 * p.a);
                    if x > seg.x0.max(p.x0) && x < seg.x1.min(p.x1) && touches_at(x) {
                        touch.push(x);
                    }
                }
            }
            if touch.is_empty() {
                out.push(*seg);
                continue;
            }
            touch.sort_by(f64::total_cmp);
            touch.dedup();
            let mut pts = Vec::with_capacity(touch.len() + 2);
            pts.push(seg.x0);
            pts.extend(touch);
            pts.push(seg.x1);
            for w in pts.windows(2) {
                let (p, q) = (w[0], w[1]);
                let collinear = p.is_finite()
                    && q.is_finite()
                    && (f.eval(0.5 * (p + q)) - seg.eval(0.5 * (p + q))).abs() <= self.value_tol;
                let mut s = *seg;
                s.x0 = p;
                s.x1 = q;
                if collinear {
                    s.kind = SegmentKind::Contact;
                }
                out.push(s);
            }
        }
        self.segments = out;
    }
}

/// Hull of the source restricted to `[first knot, last knot]`.
fn compact_hull(f: &PotentialFn, slope_tol: f64) -> Vec<Segment> {
    let knots = f.knots();
    if knots.len() == 1 {
        return Vec::new();
    }
    let mut elems = Vec::with_capacity(knots.len());
    for (i, p) in f.pieces().enumerate() {
        if p.a >= -1e-14 * (1.0 + p.s0.abs()) / (p.x1 - p.x0).max(1e-300) {
            elems.push(Elem {
                x0: p.x0,
                x1: p.x1,
                y0: p.y0,
                s0: p.s0,
                a: p.a.max(0.0),
                point: false,
                beta: f64::NEG_INFINITY,
            });
        } else {
            if i == 0 {
                elems.push(Elem::point(p.x0, p.y0));
            }
            elems.push(Elem::point(p.x1, f.values()[i + 1]));
        }
    }

    let mut stack: Vec<Elem> = Vec::with_capacity(elems.len());
    for mut e in elems {
        loop {
            let depth = stack.len();
            let Some(top) = stack.last_mut() else {
                stack.push(e);
                break;
            };
            if !top.point && top.x1 == e.x0 && top.s1() <= e.s0 + slope_tol {
                // convex junction of adjacent cells: no chord, and solving
                // for the tangent would only amplify rounding
                e.beta = e.s0;
                stack.push(e);
                break;
            }
            // a point sitting on the end of an arc adds nothing, and a common
            // tangent through the shared point is ill-conditioned
            if top.point && !e.point && top.x0 == e.x0 {
                stack.pop();
                continue;
            }
            if !top.point && e.point && top.x1 == e.x0 {
                break;
            }
            let sigma = bitangent(top, &e);
            let ta = top.argmin_plus(sigma);
            if ta <= top.x0 && sigma < top.beta && depth > 1 {
                stack.pop();
                continue;
            }
            top.x1 = ta.max(top.x0);
            if top.x1 == top.x0 {
                top.point = true;
            }
            let te = e.argmin_minus(sigma);
            e.clip_left(te);
            if e.x0 >= e.x1 {
                e.point = true;
                e.x1 = e.x0;
            }
            e.beta = sigma;
            stack.push(e);
            break;
        }
    }

    let mut segs = Vec::with_capacity(2 * stack.len());
    for (i, e) in stack.iter().enumerate() {
        if i > 0 {
            let prev = &stack[i - 1];
            if e.x0 > prev.x1 {
                segs.push(Segment::chord(
                    prev.x1,
                    e.x0,
                    prev.x1,
                    prev.eval(prev.x1),
                    e.beta,
                ));
            }
        }
        if !e.point && e.x1 > e.x0 {
            segs.push(Segment {
                x0: e.x0,
                x1: e.x1,
                kind: SegmentKind::Contact,
                xa: e.x0,
                ya: e.y0,
                sa: e.s0,
                a: e.a,
            });
        }
    }
    segs
}

fn attach_tails(f: &PotentialFn, compact: Vec<Segment>, sl: f64, sr: f64) -> Vec<Segment> {
    let knots = f.knots();
    let first = knots[0];
    let last = knots[knots.len() - 1];
    let contact_tail = |x0: f64, x1: f64, xa: f64, s: f64| Segment {
        x0,
        x1,
        kind: SegmentKind::Contact,
        xa,
        ya: f.eval(xa),
        sa: s,
        a: 0.0,
    };
    if compact.is_empty() {
        // single knot, or every element collapsed onto one point
        return vec![
            contact_tail(f64::NEG_INFINITY, first, first, sl),
            contact_tail(first, f64::INFINITY, first, sr),
        ];
    }

    // left cut: first point where the compact hull's right slope reaches sl
    let mut xl = None;
    for (i, s) in compact.iter().enumerate() {
        if s.s0() >= sl {
            xl = Some((i, s.x0));
            break;
        }
        if s.s1() >= sl {
            let x = if s.a > 0.0 {
                (s.xa + (sl - s.sa) / (2.0 * s.a)).clamp(s.x0, s.x1)
            } else {
                s.x1
            };
            xl = Some((i, x));
            break;
        }
    }
    let (il, xl) = xl.unwrap_or((compact.len(), last));

    // right cut: last point where the compact hull's left slope is still <= sr
    let mut xr = None;
    for (i, s) in compact.iter().enumerate().rev() {
        if s.s1() <= sr {
            xr = Some((i, s.x1));
            break;
        }
        if s.s0() <= sr {
            let x = if s.a > 0.0 {
                (s.xa + (sr - s.sa) / (2.0 * s.a)).clamp(s.x0, s.x1)
            } else {
                s.x0
            };
            xr = Some((i, x));
            break;
        }
    }
    let (ir, xr) = xr.map(|(i, x)| (i as isize, x)).unwrap_or((-1, first));

    let hull_at = |x: f64| -> f64 {
        let i = compact.partition_point(|s| s.x0 <= x).saturating_sub(1);
        compact[i].eval(x)
    };

    let mut out = Vec::with_capacity(compact.len() + 2);
    if xl == first {
        out.push(contact_tail(f64::NEG_INFINITY, first, first, sl));
    } else {
        out.push(Segment::chord(f64::NEG_INFINITY, xl, xl, hull_at(xl), sl));
    }
    if xl < xr {
        for (i, s) in compact.iter().enumerate() {
            if i < il || (i as isize) > ir {
                continue;
            }
            let mut s = *s;
            s.x0 = s.x0.max(xl);
            s.x1 = s.x1.min(xr);
            if s.x1 > s.x0 {
                out.push(s);
            }
        }
    }
    let xr = xr.max(xl);
    if xr == last {
        out.push(contact_tail(last, f64::INFINITY, last, sr));
    } else {
        out.push(Segment::chord(xr, f64::INFINITY, xr, hull_at(xr), sr));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Measure;
    use crate::potential::dispersion;

    fn quad(knots: Vec<f64>, vals: Vec<f64>, slopes: Vec<f64>, curv: Vec<f64>, l: f64) -> PotentialFn {
        PotentialFn::from_parts(knots, vals, slopes, curv, l).unwrap()
    }

    #[test]
    fn convex_input_is_single_contact_run() {
        // x^2 on [-1, 1] with matching affine tails
        let f = quad(vec![-1.0, 1.0], vec![1.0, 1.0], vec![-2.0, 2.0], vec![1.0], -2.0);
        let env = ConvexEnvelope::new(f).unwrap();
        assert!(env.segments().iter().all(|s| s.kind == SegmentKind::Contact));
        for z in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            assert_eq!(env.contact_bounds(z).unwrap(), (z, z));
        }
        assert_eq!(env.tangent_extent(0.3).unwrap(), (0.3, 0.3));
    }

    #[test]
    fn dispersion_of_uniform_pair_has_zero_envelope() {
        let mu = Measure::uniform(-1.0, 1.0, 1.0).unwrap();
        let nu = Measure::uniform(-2.0, 2.0, 1.0).unwrap();
        let env = ConvexEnvelope::new(dispersion(&mu, &nu).unwrap()).unwrap();
        for i in -40..=40 {
            let x = i as f64 / 10.0;
            assert!(env.eval(x).abs() < 1e-15, "x={x}");
        }
        let (xm, zp) = env.tangent_extent(0.0).unwrap();
        assert_eq!((xm, zp), (f64::NEG_INFINITY, f64::INFINITY));
        assert_eq!(env.contact_bounds(0.0).unwrap(), (-2.0, 2.0));
    }

    #[test]
    fn w_shape_bitangent() {
        // f = (x^2 - 1)^2 approximated by two convex arcs and a concave cap:
        // arcs (x+1)^2 on [-2,-0.5], cap on [-0.5, 0.5], (x-1)^2 on [0.5, 2]
        let f = quad(
            vec![-2.0, -0.5, 0.5, 2.0],
            vec![1.0, 0.25, 0.25, 1.0],
            vec![-2.0, 1.0, -1.0, 2.0],
            vec![1.0, -1.0, 1.0],
            -2.0,
        );
        let env = ConvexEnvelope::new(f).unwrap();
        let chord = env
            .segments()
            .iter()
            .find(|s| s.kind == SegmentKind::Chord)
            .unwrap();
        assert!((chord.x0 + 1.0).abs() < 1e-12);
        assert!((chord.x1 - 1.0).abs() < 1e-12);
        assert!(chord.sa.abs() < 1e-12);
        assert_eq!(env.tangent_extent(0.0).unwrap(), (chord.x0, chord.x1));
    }

    #[test]
    fn unbounded_source_rejected() {
        let f = quad(vec![0.0], vec![0.0], vec![-1.0], vec![], 1.0);
        assert!(ConvexEnvelope::new(f).is_err());
    }

    #[test]
    fn tail_cut_inside_arc() {
        // x^2 on [-1, 1] with a steeper left tail: the tail line is tangent
        // at x = -0.5 when the tail slope is -1 (tail flatter than the arc)
        let f = quad(vec![-1.0, 1.0], vec![1.0, 1.0], vec![-2.0, 2.0], vec![1.0], -1.0);
        let env = ConvexEnvelope::new(f).unwrap();
        let first = env.segments()[0];
        assert_eq!(first.kind, SegmentKind::Chord);
        assert!((first.x1 + 0.5).abs() < 1e-15);
        assert!((env.eval(-0.5) - 0.25).abs() < 1e-15);
        assert!((env.eval(-3.0) - (0.25 + 2.5)).abs() < 1e-14);
    }
}
