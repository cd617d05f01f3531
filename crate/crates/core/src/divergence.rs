//! Divergences between categorical distributions.
//!
//! Every kind here is an f-divergence, so each one is jointly convex and the
//! mixture bound `D(p, αp + (1−α)q) ≤ (1−α) D(p, q)` holds for all of them.
//!
//! | kind | formula |
//! |------|---------|
//! | KL | Σ p ln(p/q) |
//! | reverse KL | Σ q ln(q/p) |
//! | total variation | ½ Σ \|p − q\| |
//! | Jensen–Shannon | ½ KL(p‖m) + ½ KL(q‖m), m = (p+q)/2 |
//! | χ² | Σ (p − q)² / q |
//! | squared Hellinger | ½ Σ (√p − √q)² |
//!
//! Log-based kinds are in nats.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::{ensure_same_len, ConditionalModel, Distribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    #[default]
    Kl,
    ReverseKl,
    TotalVariation,
    JensenShannon,
    ChiSquared,
    HellingerSquared,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 6] = [
        DivergenceKind::Kl,
        DivergenceKind::ReverseKl,
        DivergenceKind::TotalVariation,
        DivergenceKind::JensenShannon,
        DivergenceKind::ChiSquared,
        DivergenceKind::HellingerSquared,
    ];
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            DivergenceKind::Kl => "kl",
            DivergenceKind::ReverseKl => "reverse_kl",
            DivergenceKind::TotalVariation => "total_variation",
            DivergenceKind::JensenShannon => "jensen_shannon",
            DivergenceKind::ChiSquared => "chi_squared",
            DivergenceKind::HellingerSquared => "hellinger_squared",
        };
        f.write_str(name)
    }
}

/// `x − ln(1 + x)` without cancellation near zero.
fn x_minus_log1p(x: f64) -> f64 {
    if x.abs() < 0.1 {
        // alternating tail: Σ_{n≥2} (−1)^n xⁿ / n
        let mut term = x * x;
        let mut sum = 0.0;
        for n in 2..40 {
            let contrib = term / n as f64;
            if n % 2 == 0 {
                sum += contrib;
            } else {
                sum -= contrib;
            }
            if contrib.abs() <= f64::EPSILON * sum.abs() {
                break;
            }
            term *= x;
        }
        sum
    } else {
        x - x.ln_1p()
    }
}

/// KL(p‖q) on raw slices, summed as Σ p·φ((q−p)/p) with φ(x) = x − ln(1+x) ≥ 0.
///
/// This equals Σ p ln(p/q) + Σ(q − p); the second sum vanishes on the simplex
/// and every term stays non-negative, so nearly equal arguments do not lose
/// the result to cancellation.
pub(crate) fn kl_slices(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| a * x_minus_log1p((b - a) / a))
        .sum()
}

pub fn kl(p: &Distribution, q: &Distribution) -> Result<f64> {
    ensure_same_len(p, q)?;
    Ok(kl_slices(p.probs(), q.probs()))
}

pub fn divergence(kind: DivergenceKind, p: &Distribution, q: &Distribution) -> Result<f64> {
    ensure_same_len(p, q)?;
    let (p, q) = (p.probs(), q.probs());
    let value = match kind {
        DivergenceKind::Kl => kl_slices(p, q),
        DivergenceKind::ReverseKl => kl_slices(q, p),
        DivergenceKind::TotalVariation => {
            0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
        }
        DivergenceKind::JensenShannon => {
            let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
            0.5 * kl_slices(p, &m) + 0.5 * kl_slices(q, &m)
        }
        DivergenceKind::ChiSquared => p.iter().zip(q).map(|(a, b)| (a - b) * (a - b) / b).sum(),
        DivergenceKind::HellingerSquared => {
            // (√a − √b)² = (a − b)² / (√a + √b)²
            0.5 * p
                .iter()
                .zip(q)
                .map(|(a, b)| {
                    let s = a.sqrt() + b.sqrt();
                    (a - b) * (a - b) / (s * s)
                })
                .sum::<f64>()
        }
    };
    Ok(value.max(0.0))
}

/// Context-weighted divergence `E_x[D(teacher(x), model(x))]`.
pub fn expected_divergence(
    kind: DivergenceKind,
    teacher: &ConditionalModel,
    model: &ConditionalModel,
) -> Result<f64> {
    teacher.ensure_compatible(model)?;
    teacher
        .contexts()
        .iter()
        .zip(model.dists())
        .try_fold(0.0, |acc, ((w, t), m)| {
            Ok::<_, Error>(acc + w * divergence(kind, t, m)?)
        })
}
