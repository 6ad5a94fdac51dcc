//! End-to-end runs of the construction and the verifier on the worked
//! examples, on random instances and on negative controls.

mod common;

use injective_coupling::curtain::Curtain;
use injective_coupling::injective::{
    build_injective, build_reduced, BuildConfig, InjectiveCoupling, PartKind, Termination,
};
use injective_coupling::kernel::Kernel;
use injective_coupling::measures::{Measure, Piece};
use injective_coupling::potential::irreducible_decompose;
use injective_coupling::shadow::Pair;
use injective_coupling::verify::{hn_reference, verify_sampled, VerificationReport, VerifyConfig};

fn verified(c: &InjectiveCoupling, mu: &Measure, nu: &Measure) -> VerificationReport {
    let cfg = VerifyConfig::default();
    let s = c.discretize(cfg.grid_n).expect("discretize");
    verify_sampled(&s, mu, nu, &cfg).expect("verify")
}

fn uniform_mix(parts: &[(f64, f64, f64)]) -> Measure {
    Measure::new(
        vec![],
        parts
            .iter()
            .map(|&(left, right, mass)| Piece { left, right, mass })
            .collect(),
    )
    .unwrap()
}

#[test]
fn uniform_example_is_one_finite_branch() {
    let (mu, nu) = common::uniform_pair();
    let c = build_injective(&mu, &nu, &BuildConfig::default()).unwrap();
    let b: Vec<_> = c.alternating().collect();
    assert_eq!(b.len(), 1);
    assert_eq!(b[0].termination, Termination::Finite);
    assert_eq!(b[0].branch_count(), 1);
    let r = verified(&c, &mu, &nu);
    assert!(r.passed, "{r:?}");
    assert_eq!(r.injectivity.max_multiplicity, 1);
}

#[test]
fn mixed_example_truncates_with_tiny_loss_and_verifies() {
    let (mu, nu) = common::mixed_pair();
    let cfg = BuildConfig::default();
    let c = build_injective(&mu, &nu, &cfg).unwrap();
    let b = c.alternating().next().unwrap();
    match b.termination {
        Termination::Truncated { dropped } => assert!(dropped > 0.0 && dropped <= cfg.eps_term),
        t => panic!("expected truncation, got {t:?}"),
    }
    // the sequence alternates around 1/2 and converges to the ends
    for (j, w) in b.u.windows(2).enumerate() {
        if j % 2 == 0 {
            assert!(w[1] > w[0], "{:?}", b.u);
        } else {
            assert!(w[1] < w[0], "{:?}", b.u);
        }
    }
    assert!(verified(&c, &mu, &nu).passed);
    // the explicit reduction route yields another valid injective coupling
    let r = build_reduced(&mu, &nu, &cfg).unwrap();
    assert!(verified(&r, &mu, &nu).passed);
}

#[test]
fn common_band_is_split_off_as_identity() {
    let mu = uniform_mix(&[(-1.0, 0.0, 0.25), (0.0, 1.0, 0.75)]);
    // upper end chosen so that both means equal 1/4
    let nu = uniform_mix(&[(-3.0, -1.0, 0.2), (-1.0, 0.0, 0.25), (0.0, 31.0 / 11.0, 0.55)]);
    let c = build_reduced(&mu, &nu, &BuildConfig::default()).unwrap();
    let identity: f64 = c
        .parts
        .iter()
        .filter_map(|p| match &p.kind {
            PartKind::Identity(m) => Some(m.total_mass()),
            _ => None,
        })
        .sum();
    assert!((identity - 0.25).abs() <= 1e-12, "identity mass {identity}");
    let r = verified(&c, &mu, &nu);
    assert!(r.passed, "{r:?}");
}

#[test]
fn two_component_pair_builds_per_component() {
    let mu = uniform_mix(&[(-3.0, -1.0, 0.5), (1.0, 3.0, 0.5)]);
    let nu = uniform_mix(&[(-4.0, 0.0, 0.5), (0.0, 4.0, 0.5)]);
    let d = irreducible_decompose(&mu, &nu).unwrap();
    assert_eq!(d.components.len(), 2);
    assert!(d.stay_put.is_zero());
    assert!(d.components.iter().all(|c| (c.mu.total_mass() - 0.5).abs() <= 1e-12));
    let c = build_injective(&mu, &nu, &BuildConfig::default()).unwrap();
    assert_eq!(c.alternating().count(), 2);
    let r = verified(&c, &mu, &nu);
    assert!(r.passed, "{r:?}");
}

#[test]
fn random_instances_verify() {
    let mut rng = common::rng(2024);
    for i in 0..12 {
        let (mu, nu) = if i % 2 == 0 {
            common::random_pair(&mut rng)
        } else {
            common::random_pair_with_background(&mut rng)
        };
        let c = build_injective(&mu, &nu, &BuildConfig::default()).unwrap();
        assert!((c.total_mass - 1.0).abs() <= 1e-12);
        let r = verified(&c, &mu, &nu);
        assert!(r.passed, "instance {i}: {r:?}");
    }
}

#[test]
fn reference_family_and_construction_differ_but_both_couple() {
    // The closed-form family at split point 0 and the alternating coupling
    // of the uniform example are both injective martingale couplings of the
    // same pair, with different upper branches.
    let (mu, nu) = common::uniform_pair();
    let c = build_injective(&mu, &nu, &BuildConfig::default()).unwrap();
    let b = c.alternating().next().unwrap();
    let mut gap = 0.0f64;
    for i in 1..100 {
        let x = -1.0 + 2.0 * i as f64 / 100.0;
        let (f, h) = hn_reference(0.0, x).unwrap();
        assert!((h - (x + 1.0)).abs() <= 1e-12 && (f - (x - 1.0)).abs() <= 1e-12);
        let hi = match b.kernel_at((x + 1.0) / 2.0).unwrap() {
            Kernel::TwoPoint { hi, .. } => hi,
            k => panic!("{k:?}"),
        };
        assert!((hi - (1.5 * x + 0.5)).abs() <= 1e-9);
        gap = gap.max((hi - h).abs());
    }
    assert!(gap > 0.4, "branches coincide: {gap}");
}

#[test]
fn wrong_target_fails_marginal_check() {
    let (mu, nu) = common::uniform_pair();
    let c = build_injective(&mu, &nu, &BuildConfig::default()).unwrap();
    let other = Measure::uniform(-2.5, 2.5, 1.0).unwrap();
    let r = verified(&c, &mu, &other);
    assert!(!r.passed);
    assert!(r.kolmogorov_nu > r.marginal_tolerance);
}

#[test]
fn left_curtain_with_overlapping_images_fails_injectivity() {
    // Stay-put mass sits where the curtain sends earlier mass, so some
    // targets have two preimages.
    let mut rng = common::rng(17);
    let (mu, nu) = common::random_pair_with_background(&mut rng);
    let cfg = VerifyConfig::default();
    let s = Curtain::new(Pair::new(mu.clone(), nu.clone()).unwrap())
        .sampled(cfg.grid_n)
        .unwrap();
    let r = verify_sampled(&s, &mu, &nu, &cfg).unwrap();
    assert!(r.max_martingale_residual <= 1e-9);
    assert!(!r.injectivity.passed, "{r:?}");
    assert!(r.injectivity.max_multiplicity >= 2);
}

#[test]
fn out_of_order_pair_is_rejected() {
    let (mu, nu) = common::uniform_pair();
    assert!(build_injective(&nu, &mu, &BuildConfig::default()).is_err());
}
