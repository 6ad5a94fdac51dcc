//! Property tests of the building blocks, each against an independent
//! oracle: measures, potentials, hulls, shadows, the curtain and kernels.

mod common;

use injective_coupling::curtain::{partition_blocks, Curtain};
use injective_coupling::hull::ConvexEnvelope;
use injective_coupling::kernel::Kernel;
use injective_coupling::measures::{kolmogorov_distance, Atom, Measure, MeasureSpec, Piece};
use injective_coupling::potential::{
    check_convex_order, irreducible_decompose, put_call, ConvexOrderVerdict,
};
use injective_coupling::shadow::Pair;
use proptest::prelude::*;
use rand::Rng;

fn pair_from_seed(seed: u64) -> (Measure, Measure) {
    let mut rng = common::rng(seed);
    if seed.is_multiple_of(3) {
        common::random_pair_with_background(&mut rng)
    } else {
        common::random_pair(&mut rng)
    }
}

fn measure_strategy() -> impl Strategy<Value = Measure> {
    let piece = (-3.0..3.0f64, 0.05..2.0f64, 0.05..1.0f64).prop_map(|(c, h, m)| Piece {
        left: c - h,
        right: c + h,
        mass: m,
    });
    let atom = (-3.0..3.0f64, 0.05..1.0f64).prop_map(|(x, mass)| Atom { x, mass });
    (
        prop::collection::vec(atom, 0..3),
        prop::collection::vec(piece, 1..4),
    )
        .prop_map(|(atoms, pieces)| Measure::new(atoms, pieces).unwrap())
}

/// Lower convex hull of sampled points (monotone chain), evaluated at the
/// sample abscissae.
fn grid_hull(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut hull: Vec<usize> = Vec::new();
    for i in 0..xs.len() {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut out = Vec::with_capacity(xs.len());
    let mut j = 0;
    for &x in xs {
        while j + 2 < hull.len() && xs[hull[j + 1]] <= x {
            j += 1;
        }
        let (a, b) = (hull[j], hull[(j + 1).min(hull.len() - 1)]);
        out.push(if a == b {
            ys[a]
        } else {
            ys[a] + (ys[b] - ys[a]) * (x - xs[a]) / (xs[b] - xs[a])
        });
    }
    out
}

/// Mass of the pointwise minimum of the densities of two measures.
fn min_overlap(a: &Measure, b: &Measure) -> f64 {
    let mut knots: Vec<f64> = a.knots().iter().chain(b.knots()).copied().collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    knots
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            a.density_at(mid).min(b.density_at(mid)) * (w[1] - w[0])
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn left_restrictions_have_exact_mass_and_grow(m in measure_strategy(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let total = m.total_mass();
        let (u, w) = (a.min(b) * total, a.max(b) * total);
        let (cu, cw) = (m.restrict_left(u).unwrap(), m.restrict_left(w).unwrap());
        prop_assert!((cu.total_mass() - u).abs() <= 1e-12 * total.max(1.0));
        for k in m.knots().iter().flat_map(|&k| [k - 1e-9, k, k + 1e-9]) {
            prop_assert!(cu.cdf(k) <= cw.cdf(k) + 1e-12);
            prop_assert!(cw.cdf(k) <= m.cdf(k) + 1e-12);
        }
    }

    #[test]
    fn quantile_versions_bracket(m in measure_strategy(), a in 0.0..1.0f64) {
        let u = a * m.total_mass();
        let (l, r) = (m.quantile_left(u), m.quantile_right(u));
        prop_assert!(l <= r);
        // any quantile q satisfies F(q-) <= u <= F(q)
        let tol = 1e-12 * m.total_mass().max(1.0);
        prop_assert!(m.cdf_below(l) <= u + tol && u <= m.cdf(l) + tol);
        prop_assert!(m.cdf_below(r) <= u + tol && u <= m.cdf(r) + tol);
        // left-continuity of the left version
        if u > 1e-6 {
            prop_assert!((m.quantile_left(u - 1e-13) - l).abs() <= 1e-6 * (1.0 + l.abs()) || m.cdf_below(l) >= u - 1e-12);
        }
    }

    #[test]
    fn quantile_set_restriction_is_additive(m in measure_strategy(), cuts in prop::collection::vec(0.0..1.0f64, 4)) {
        let total = m.total_mass();
        let mut c: Vec<f64> = cuts.iter().map(|x| x * total).collect();
        c.sort_by(f64::total_cmp);
        let j = m.restrict_quantile_set(&[(c[0], c[1])]).unwrap();
        let jj = m.restrict_quantile_set(&[(c[2], c[3])]).unwrap();
        let both = m.restrict_quantile_set(&[(c[0], c[1]), (c[2], c[3])]).unwrap();
        prop_assert!(kolmogorov_distance(&both, &j.add(&jj)) <= 1e-12 * total.max(1.0));
    }

    #[test]
    fn spec_round_trip_is_identity(m in measure_strategy()) {
        let text = serde_json::to_string(&m.to_spec()).unwrap();
        let spec: MeasureSpec = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(Measure::from_spec(&spec).unwrap(), m);
    }

    #[test]
    fn put_call_parity(m in measure_strategy(), ks in prop::collection::vec(-6.0..6.0f64, 20)) {
        for k in ks {
            let (p, c) = put_call(&m, k).unwrap();
            let parity = p - c - (k * m.total_mass() - m.first_moment());
            prop_assert!(parity.abs() <= 1e-10, "parity {parity} at {k}");
        }
    }

    #[test]
    fn convex_order_matches_convex_test_functions(seed in any::<u64>()) {
        let (mu, nu) = pair_from_seed(seed);
        prop_assert!(check_convex_order(&mu, &nu).holds());
        // f = sum c_i (x - k_i)^+ with c_i >= 0 (affine parts integrate equally)
        let mut rng = common::rng(seed ^ 0x5eed);
        for _ in 0..200 {
            let terms: Vec<(f64, f64)> = (0..3).map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(-5.0..5.0))).collect();
            let gap: f64 = terms
                .iter()
                .map(|&(c, k)| c * (put_call(&nu, k).unwrap().1 - put_call(&mu, k).unwrap().1))
                .sum();
            prop_assert!(gap >= -1e-10);
        }
        // the reverse pair fails, with a call-price witness
        match check_convex_order(&nu, &mu) {
            ConvexOrderVerdict::ViolatedAt { k, .. } => {
                prop_assert!(put_call(&mu, k).unwrap().1 < put_call(&nu, k).unwrap().1);
            }
            other => prop_assert!(false, "reverse pair reported {:?}", other),
        }
    }

    #[test]
    fn decomposition_reassembles(seed in any::<u64>()) {
        let (mu, nu) = pair_from_seed(seed);
        let d = irreducible_decompose(&mu, &nu).unwrap();
        let mus: Vec<Measure> = d.components.iter().map(|c| c.mu.clone()).chain([d.stay_put.clone()]).collect();
        let nus: Vec<Measure> = d.components.iter().map(|c| c.nu.clone()).chain([d.stay_put.clone()]).collect();
        prop_assert!(kolmogorov_distance(&Measure::sum(&mus), &mu) <= 1e-10);
        prop_assert!(kolmogorov_distance(&Measure::sum(&nus), &nu) <= 1e-10);
        for c in &d.components {
            let (pm, _) = put_call(&c.mu, c.left).unwrap();
            let (pn, _) = put_call(&c.nu, c.left).unwrap();
            prop_assert!((pn - pm).abs() <= 1e-10);
            let (pm, _) = put_call(&c.mu, c.right).unwrap();
            let (pn, _) = put_call(&c.nu, c.right).unwrap();
            prop_assert!((pn - pm).abs() <= 1e-10);
        }
    }

    #[test]
    fn envelope_matches_grid_hull_and_orders_contacts(seed in any::<u64>(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let (mu, nu) = pair_from_seed(seed);
        let pair = Pair::new(mu, nu).unwrap();
        let m = pair.mass();
        let (v, u) = (a.min(b) * m, a.max(b) * m);
        let src = pair.e_fn(v, u).unwrap();
        let env = ConvexEnvelope::new(src.clone()).unwrap();
        let (lo, hi) = (src.knots()[0] - 1.0, src.knots()[src.knots().len() - 1] + 1.0);
        let n = 20_000;
        let xs: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| src.eval(x)).collect();
        let oracle = grid_hull(&xs, &ys);
        let mut worst = 0.0f64;
        for (i, &x) in xs.iter().enumerate() {
            let e = env.eval(x);
            prop_assert!(e <= ys[i] + 1e-12);
            worst = worst.max((e - oracle[i]).abs());
        }
        prop_assert!(worst <= 1e-6, "sup difference {worst}");

        let mut rng = common::rng(seed);
        for _ in 0..200 {
            let z = rng.gen_range(lo..hi);
            let (xm, zp) = env.tangent_extent(z).unwrap();
            let (xp, zm) = env.contact_bounds(z).unwrap();
            prop_assert!(xm <= xp && xp <= z && z <= zm && zm <= zp, "{xm} {xp} {z} {zm} {zp}");
        }
    }

    #[test]
    fn shadow_keeps_mass_and_mean_and_fits_under_target(seed in any::<u64>(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let (mu, nu) = pair_from_seed(seed);
        let pair = Pair::new(mu.clone(), nu.clone()).unwrap();
        let m = pair.mass();
        let (v, u) = (a.min(b) * m, a.max(b) * m);
        let s = pair.shadow_measure(v, u).unwrap();
        prop_assert!((s.total_mass() - (u - v)).abs() <= 1e-10);
        let mean = mu.quantile_integral(u) - mu.quantile_integral(v);
        prop_assert!((s.first_moment() - mean).abs() <= 1e-9);
        // nu - shadow has nonnegative increments
        let (lo, hi) = nu.support().unwrap();
        let n = 4000;
        let mut prev = (nu.cdf(lo), s.cdf(lo));
        for i in 1..=n {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            let cur = (nu.cdf(x), s.cdf(x));
            prop_assert!(cur.1 - prev.1 <= cur.0 - prev.0 + 1e-10);
            prev = cur;
        }
        // the parcel sits below its shadow in convex order
        if u - v > 1e-9 {
            prop_assert!(check_convex_order(&mu.slice(v, u).unwrap(), &s).holds());
        }
    }

    #[test]
    fn upper_arrow_is_nondecreasing(seed in any::<u64>(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let (mu, nu) = pair_from_seed(seed);
        let pair = Pair::new(mu, nu).unwrap();
        let m = pair.mass();
        let (v, u) = (a.min(b) * m, a.max(b) * m);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=40 {
            let l = u + (m - u) * i as f64 / 40.0;
            let n = pair.arrows_right(v, u, l).unwrap().n;
            if n.is_finite() {
                prop_assert!(n >= prev - 1e-9, "n dropped from {prev} to {n} at {l}");
                prev = n;
            }
        }
    }

    #[test]
    fn two_point_kernels_are_centred(x in -5.0..5.0f64, dl in 0.0..3.0f64, dh in 1e-6..3.0f64) {
        let k = Kernel::two_point(x, x - dl, x + dh);
        prop_assert!(k.residual() <= 1e-12 * (1.0 + x.abs() + dl + dh));
        let w: f64 = k.atoms().iter().map(|a| a.1).sum();
        prop_assert!((w - 1.0).abs() <= 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn curtain_is_left_monotone(seed in any::<u64>()) {
        let (mu, nu) = pair_from_seed(seed);
        let curtain = Curtain::new(Pair::new(mu, nu).unwrap());
        let t = curtain.table(48).unwrap();
        for (i, a) in t.iter().enumerate() {
            prop_assert!(a.r <= a.g + 1e-9 && a.g <= a.s + 1e-9);
            for b in &t[i + 1..] {
                prop_assert!(b.s >= a.s - 1e-9);
                let inside = b.r > a.r + 1e-8 && b.r < a.s - 1e-8;
                prop_assert!(!inside, "R({}) = {} inside ({}, {})", b.u, b.r, a.r, a.s);
            }
        }
    }

    #[test]
    fn curtain_blocks_partition_the_target(seed in any::<u64>()) {
        let (mu, nu) = pair_from_seed(seed);
        let d = irreducible_decompose(&mu, &nu).unwrap();
        for c in d.components {
            let target = c.nu.total_mass();
            let curtain = Curtain::new(Pair::new(c.mu, c.nu).unwrap());
            let p = partition_blocks(&curtain, 1e-8).unwrap();
            let covered: f64 = p.blocks.iter().map(|b| b.nu.total_mass()).sum::<f64>()
                + p.identity.total_mass()
                + p.dropped_mass;
            prop_assert!((covered - target).abs() <= 1e-9, "covered {covered} of {target}");
            for (i, a) in p.blocks.iter().enumerate() {
                for b in &p.blocks[i + 1..] {
                    prop_assert!(min_overlap(&a.nu, &b.nu) <= 1e-6);
                }
            }
        }
    }
}
