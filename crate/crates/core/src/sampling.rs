//! Seeded random draws on the simplex.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::simplex::Distribution;

/// Smallest entry a sampled distribution may have.
pub const SAMPLE_FLOOR: f64 = 1e-9;

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes stream indices into a base seed (splitmix64 finaliser per component),
/// so per-trial and per-context streams are independent of execution order.
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    let mut h = base;
    for &s in stream {
        h = splitmix(h ^ splitmix(s.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Symmetric Dirichlet(1) draw via normalised exponentials. Draws with any
/// entry below [`SAMPLE_FLOOR`] are rejected and redrawn.
pub fn dirichlet_uniform<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Distribution {
    assert!(len >= 2, "simplex needs at least 2 entries");
    loop {
        let raw: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 || !sum.is_finite() {
            continue;
        }
        let probs: Vec<f64> = raw.iter().map(|x| x / sum).collect();
        if probs.iter().all(|&p| p >= SAMPLE_FLOOR) {
            return Distribution::from_vec_unchecked(probs);
        }
    }
}

/// Positive weights summing to one.
pub fn random_weights<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    dirichlet_uniform(rng, len).into_vec()
}

/// Floors every entry at [`SAMPLE_FLOOR`] and renormalises.
pub fn project_to_floored_simplex(raw: &[f64]) -> Distribution {
    let floored: Vec<f64> = raw.iter().map(|x| x.max(SAMPLE_FLOOR)).collect();
    let sum: f64 = floored.iter().sum();
    Distribution::from_vec_unchecked(floored.iter().map(|x| x / sum).collect())
}
