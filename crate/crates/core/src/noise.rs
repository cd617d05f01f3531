//! Imperfect-fit channels between the meta-teacher and the next student.
//!
//! Exact realizability means the student equals the meta-teacher. The other
//! channels model an optimisation that lands near it:
//!
//! * arithmetic distractor: `(1−δ)q + δu`, so `KL(q‖·) ≤ δ·KL(q‖u)` by convexity;
//! * geometric tilt: `∝ q^(1−η) u^η` with η calibrated to a target `KL(q‖·)`;
//! * calibrated drift: a geometric tilt whose η makes the divergence from the
//!   anchor grow by exactly ε per step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::{divergence, kl, DivergenceKind};
use crate::error::{Error, Result};
use crate::sampling::dirichlet_uniform;
use crate::simplex::{convex_combine, ensure_same_len, softmax_from_logs, Distribution};

/// Accuracy the tilt calibration must reach.
pub const CALIBRATION_TOL: f64 = 1e-9;
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeededRandom {
    SeededRandom,
}

/// Distribution the noise pushes towards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Distractor {
    Explicit(Distribution),
    /// A fresh Dirichlet(1) draw from the step's RNG stream.
    Seeded(SeededRandom),
}

impl Distractor {
    pub fn seeded() -> Self {
        Distractor::Seeded(SeededRandom::SeededRandom)
    }

    fn resolve<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Result<Distribution> {
        match self {
            Distractor::Explicit(d) => {
                if d.len() != len {
                    return Err(Error::DimensionMismatch {
                        expected: len,
                        found: d.len(),
                    });
                }
                Ok(d.clone())
            }
            Distractor::Seeded(_) => Ok(dirichlet_uniform(rng, len)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    None,
    ArithmeticDistractor {
        delta: f64,
        distractor: Distractor,
    },
    GeometricTilt {
        target_kl: f64,
    },
    CalibratedDrift {
        epsilon: f64,
        distractor: Distractor,
    },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::None => Ok(()),
            NoiseModel::ArithmeticDistractor { delta, .. } => {
                if !(delta.is_finite() && (0.0..1.0).contains(delta)) {
                    return Err(Error::InvalidNoiseParam(format!(
                        "delta {delta} outside [0, 1)"
                    )));
                }
                Ok(())
            }
            NoiseModel::GeometricTilt { target_kl } => {
                if !(target_kl.is_finite() && *target_kl >= 0.0) {
                    return Err(Error::InvalidNoiseParam(format!(
                        "target_kl {target_kl} must be >= 0"
                    )));
                }
                Ok(())
            }
            NoiseModel::CalibratedDrift { epsilon, .. } => {
                if !(epsilon.is_finite() && *epsilon > 0.0) {
                    return Err(Error::InvalidNoiseParam(format!(
                        "epsilon {epsilon} must be > 0"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, NoiseModel::None)
    }
}

/// What the noise channel needs to know about the run it is part of.
#[derive(Debug, Clone, Copy)]
pub struct NoiseContext<'a> {
    /// Base teacher for this context.
    pub anchor: &'a Distribution,
    pub divergence: DivergenceKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyStudent {
    pub student: Distribution,
    /// `δ·D(T₀, u)` for the arithmetic distractor: the per-step slack in the
    /// noisy contraction bound.
    pub noise_floor: Option<f64>,
}

/// Normalised `q^(1−η) u^η`.
pub fn tilt(q: &Distribution, u: &Distribution, eta: f64) -> Result<Distribution> {
    ensure_same_len(q, u)?;
    if eta == 0.0 {
        return Ok(q.clone());
    }
    if eta == 1.0 {
        return Ok(u.clone());
    }
    let logs: Vec<f64> = q
        .probs()
        .iter()
        .zip(u.probs())
        .map(|(a, b)| (1.0 - eta) * a.ln() + eta * b.ln())
        .collect();
    softmax_from_logs(&logs)
}

/// Finds η ∈ [0, 1] with `objective(tilt(q, u, η)) = target` by bisection.
///
/// The objective must cross `target` once on [0, 1], rising from
/// `objective(q)` to `objective(u)`; convex functions of η that start below
/// the target qualify.
pub fn calibrate_tilt<F>(
    q: &Distribution,
    u: &Distribution,
    objective: F,
    target: f64,
) -> Result<f64>
where
    F: Fn(&Distribution) -> Result<f64>,
{
    ensure_same_len(q, u)?;
    let at_zero = objective(q)?;
    if (at_zero - target).abs() <= CALIBRATION_TOL {
        return Ok(0.0);
    }
    let at_one = objective(u)?;
    if (at_one - target).abs() <= CALIBRATION_TOL {
        return Ok(1.0);
    }
    if !(at_zero < target && target < at_one) {
        return Err(Error::CalibrationFailed(format!(
            "target {target} outside [{at_zero}, {at_one}] reachable on eta in [0, 1]"
        )));
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let value = objective(&tilt(q, u, mid)?)?;
        let err = (value - target).abs();
        if err < best.0 {
            best = (err, mid);
        }
        // keep going past the required tolerance while η still resolves
        if err <= CALIBRATION_TOL * 1e-3 || mid == lo || mid == hi {
            break;
        }
        if value < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 <= CALIBRATION_TOL {
        Ok(best.1)
    } else {
        Err(Error::CalibrationFailed(format!(
            "bisection stalled {} away from target {target}",
            best.0
        )))
    }
}

/// Produces the next student from meta-teacher `q` through the noise channel.
pub fn apply_noise<R: Rng + ?Sized>(
    q: &Distribution,
    model: &NoiseModel,
    ctx: NoiseContext<'_>,
    rng: &mut R,
) -> Result<NoisyStudent> {
    model.validate()?;
    ensure_same_len(q, ctx.anchor)?;
    match model {
        NoiseModel::None => Ok(NoisyStudent {
            student: q.clone(),
            noise_floor: None,
        }),
        NoiseModel::ArithmeticDistractor { delta, distractor } => {
            let u = distractor.resolve(q.len(), rng)?;
            let student = convex_combine(1.0 - delta, q, &u)?;
            let floor = delta * divergence(ctx.divergence, ctx.anchor, &u)?;
            Ok(NoisyStudent {
                student,
                noise_floor: Some(floor),
            })
        }
        NoiseModel::GeometricTilt { target_kl } => {
            let u = dirichlet_uniform(rng, q.len());
            let eta = calibrate_tilt(q, &u, |r| kl(q, r), *target_kl)?;
            Ok(NoisyStudent {
                student: tilt(q, &u, eta)?,
                noise_floor: None,
            })
        }
        NoiseModel::CalibratedDrift {
            epsilon,
            distractor,
        } => {
            let u = distractor.resolve(q.len(), rng)?;
            let kind = ctx.divergence;
            let target = divergence(kind, ctx.anchor, q)? + epsilon;
            let eta = calibrate_tilt(q, &u, |r| divergence(kind, ctx.anchor, r), target)?;
            Ok(NoisyStudent {
                student: tilt(q, &u, eta)?,
                noise_floor: None,
            })
        }
    }
}
