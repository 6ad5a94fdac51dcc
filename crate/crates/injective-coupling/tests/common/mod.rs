//! Shared fixtures: the worked examples and a random generator of pairs in
//! convex order built by mean-preserving spreads.

#![allow(dead_code)]

use injective_coupling::measures::{Atom, Measure, Piece};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn uniform_pair() -> (Measure, Measure) {
    (
        Measure::uniform(-1.0, 1.0, 1.0).unwrap(),
        Measure::uniform(-2.0, 2.0, 1.0).unwrap(),
    )
}

pub fn mixed_pair() -> (Measure, Measure) {
    let mu = Measure::new(
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
    .unwrap();
    (mu, Measure::uniform(-2.0, 2.0, 1.0).unwrap())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random piecewise-uniform-plus-atom `mu` of unit mass and an atom-free `nu`
/// obtained by spreading every uniform piece and every atom symmetrically
/// about its own centre, which preserves mass and mean.
pub fn random_pair(rng: &mut impl Rng) -> (Measure, Measure) {
    let n_pieces = rng.gen_range(1..=3);
    let n_atoms = rng.gen_range(0..=2);
    let mut weights: Vec<f64> = (0..n_pieces + n_atoms)
        .map(|_| rng.gen_range(0.2..1.0))
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let mut mu_pieces = Vec::new();
    let mut mu_atoms = Vec::new();
    let mut nu_pieces = Vec::new();
    for (i, &mass) in weights.iter().enumerate() {
        let c: f64 = rng.gen_range(-2.0..2.0);
        if i < n_pieces {
            let h: f64 = rng.gen_range(0.1..0.8);
            let spread = h * rng.gen_range(1.2..3.0);
            mu_pieces.push(Piece {
                left: c - h,
                right: c + h,
                mass,
            });
            nu_pieces.push(Piece {
                left: c - spread,
                right: c + spread,
                mass,
            });
        } else {
            let spread = rng.gen_range(0.1..1.0);
            mu_atoms.push(Atom { x: c, mass });
            nu_pieces.push(Piece {
                left: c - spread,
                right: c + spread,
                mass,
            });
        }
    }
    (
        Measure::new(mu_atoms, mu_pieces).unwrap(),
        Measure::new(vec![], nu_pieces).unwrap(),
    )
}

/// [`random_pair`] mixed with a common uniform background on `[-4, 4]`
/// carrying a random share of the mass, so that both measures have full
/// support on a shared interval.
pub fn random_pair_with_background(rng: &mut impl Rng) -> (Measure, Measure) {
    let (mu, nu) = random_pair(rng);
    let share = rng.gen_range(0.1..0.4);
    let background = Measure::uniform(-4.0, 4.0, share).unwrap();
    (
        mu.scaled(1.0 - share).add(&background),
        nu.scaled(1.0 - share).add(&background),
    )
}
