//! Randomised conformance checks of an operator against the five meta-teacher
//! axioms: validity, positivity, anchoring, continuity and monotonicity in α.
//!
//! Each trial draws its inputs from its own RNG stream (seed, trial index),
//! so trials run in parallel and any counterexample can be replayed alone
//! with [`trial_inputs`] + [`evaluate_trial`], or directly from the inputs it
//! carries.
//!
//! Anchoring is certified in its convex-mixture form: `q_i ≥ α·a_i` for the
//! anchor component `a`, i.e. [`effective_anchor`]`(q, a) ≥ α`. Projections
//! need not admit that decomposition, so for them the effective anchor is
//! only measured, together with the general-form ratio
//! `min_i min(q_i, t_i) / min(r_i, t_i)` against the reference `r` (the
//! operator's student-only component). Continuity is a Lipschitz smoke test
//! and is reported as measured unless the bound is exceeded.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::kl;
use crate::error::Result;
use crate::operators::{
    anchor_component, build_meta_teacher, non_anchor_component, OperatorConfig,
};
use crate::sampling::{derive_seed, dirichlet_uniform, project_to_floored_simplex, rng_from_seed};
use crate::simplex::{ensure_same_len, Distribution, SUM_TOL};

/// L1 size of the continuity probe.
pub const CONTINUITY_DELTA: f64 = 1e-4;
/// Allowed output/input L1 ratio for the continuity probe.
pub const CONTINUITY_BOUND: f64 = 50.0;
pub const ANCHOR_TOL: f64 = 1e-12;
pub const MONOTONE_TOL: f64 = 1e-10;
/// Counterexamples kept per axiom; the violation count is always complete.
pub const MAX_COUNTEREXAMPLES: usize = 5;

const VOCAB_SIZES: [usize; 4] = [2, 3, 5, 10];
const MAX_STUDENTS: usize = 4;

/// Largest α* with `q = α*·t0 + (1−α*)·r` for some distribution `r`: `min_i q_i / t0_i`.
pub fn effective_anchor(q: &Distribution, t0: &Distribution) -> Result<f64> {
    ensure_same_len(q, t0)?;
    Ok(q.probs()
        .iter()
        .zip(t0.probs())
        .map(|(a, b)| a / b)
        .fold(f64::INFINITY, f64::min))
}

/// Largest α with `min(q_i, t_i) ≥ α·min(r_i, t_i)` for every token.
pub fn general_anchor(q: &Distribution, t0: &Distribution, r: &Distribution) -> Result<f64> {
    ensure_same_len(q, t0)?;
    ensure_same_len(r, t0)?;
    Ok(q.probs()
        .iter()
        .zip(t0.probs())
        .zip(r.probs())
        .map(|((q, t), r)| q.min(*t) / r.min(*t))
        .fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxiomStatus {
    Pass,
    Fail,
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axiom {
    Validity,
    Positivity,
    Anchoring,
    Continuity,
    Monotonicity,
}

impl Axiom {
    pub const ALL: [Axiom; 5] = [
        Axiom::Validity,
        Axiom::Positivity,
        Axiom::Anchoring,
        Axiom::Continuity,
        Axiom::Monotonicity,
    ];

    pub fn number(self) -> u8 {
        self as u8 + 1
    }
}

/// Everything one trial feeds the operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialInputs {
    pub seed: u64,
    pub trial: usize,
    pub alpha: f64,
    pub teachers: Vec<Distribution>,
    pub students: Vec<Distribution>,
    /// α₁ < α₂ for the monotonicity check.
    pub alpha_pair: (f64, f64),
    pub perturbed_alpha: f64,
    pub perturbed_teachers: Vec<Distribution>,
    pub perturbed_students: Vec<Distribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub axiom: Axiom,
    pub inputs: TrialInputs,
    pub output: Option<Distribution>,
    /// Name of the violated quantity.
    pub quantity: String,
    pub value: f64,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomResult {
    pub axiom: Axiom,
    pub number: u8,
    pub status: AxiomStatus,
    pub trials: usize,
    pub violations: usize,
    pub counterexamples: Vec<Counterexample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub operator: OperatorConfig,
    pub trials: usize,
    pub seed: u64,
    pub axioms: Vec<AxiomResult>,
    /// Smallest `effective_anchor(q, anchor component)` seen.
    pub effective_anchor_min: f64,
    /// Smallest general-form anchor ratio seen.
    pub general_anchor_min: f64,
    pub continuity_ratio_max: f64,
}

impl AxiomReport {
    pub fn result(&self, axiom: Axiom) -> &AxiomResult {
        self.axioms
            .iter()
            .find(|r| r.axiom == axiom)
            .expect("report covers every axiom")
    }

    pub fn status(&self, axiom: Axiom) -> AxiomStatus {
        self.result(axiom).status
    }
}

/// Per-trial verdicts and measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub violations: Vec<Counterexample>,
    pub effective_anchor: Option<f64>,
    pub general_anchor: Option<f64>,
    pub continuity_ratio: Option<f64>,
}

fn tangent_perturbation<R: Rng + ?Sized>(rng: &mut R, p: &Distribution) -> Distribution {
    let len = p.len();
    let mut dir: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    let mean = dir.iter().sum::<f64>() / len as f64;
    dir.iter_mut().for_each(|x| *x -= mean);
    let norm: f64 = dir.iter().map(|x| x.abs()).sum();
    let scale = if norm > 0.0 {
        CONTINUITY_DELTA / norm
    } else {
        0.0
    };
    let moved: Vec<f64> = p
        .probs()
        .iter()
        .zip(&dir)
        .map(|(a, d)| a + scale * d)
        .collect();
    project_to_floored_simplex(&moved)
}

/// Regenerates the inputs of trial `trial` under `seed`.
pub fn trial_inputs(config: &OperatorConfig, seed: u64, trial: usize) -> TrialInputs {
    let mut rng = rng_from_seed(derive_seed(seed, &[trial as u64]));
    let len = VOCAB_SIZES[rng.random_range(0..VOCAB_SIZES.len())];
    let n_students = rng.random_range(1..=MAX_STUDENTS);
    let teachers: Vec<Distribution> = (0..config.num_teachers())
        .map(|_| dirichlet_uniform(&mut rng, len))
        .collect();
    let students: Vec<Distribution> = (0..n_students)
        .map(|_| dirichlet_uniform(&mut rng, len))
        .collect();
    let alpha_pair = loop {
        // (0, 1]
        let a = 1.0 - rng.random::<f64>();
        let b = 1.0 - rng.random::<f64>();
        if a != b {
            break (a.min(b), a.max(b));
        }
    };
    let alpha = config.alpha;
    let perturbed_alpha = if alpha > CONTINUITY_DELTA && alpha < 1.0 - CONTINUITY_DELTA {
        if rng.random::<bool>() {
            alpha + CONTINUITY_DELTA
        } else {
            alpha - CONTINUITY_DELTA
        }
    } else {
        alpha
    };
    let perturbed_teachers = teachers
        .iter()
        .map(|t| tangent_perturbation(&mut rng, t))
        .collect();
    let perturbed_students = students
        .iter()
        .map(|s| tangent_perturbation(&mut rng, s))
        .collect();
    TrialInputs {
        seed,
        trial,
        alpha,
        teachers,
        students,
        alpha_pair,
        perturbed_alpha,
        perturbed_teachers,
        perturbed_students,
    }
}

struct Recorder<'a> {
    inputs: &'a TrialInputs,
    violations: Vec<Counterexample>,
}

impl Recorder<'_> {
    fn violate(
        &mut self,
        axiom: Axiom,
        output: Option<&Distribution>,
        quantity: &str,
        value: f64,
        threshold: f64,
        detail: Option<String>,
    ) {
        self.violations.push(Counterexample {
            axiom,
            inputs: self.inputs.clone(),
            output: output.cloned(),
            quantity: quantity.to_owned(),
            value,
            threshold,
            detail,
        });
    }
}

/// Runs every axiom check on one set of inputs.
pub fn evaluate_trial(config: &OperatorConfig, inputs: &TrialInputs) -> TrialOutcome {
    let mut rec = Recorder {
        inputs,
        violations: Vec::new(),
    };
    let mut outcome = TrialOutcome {
        violations: Vec::new(),
        effective_anchor: None,
        general_anchor: None,
        continuity_ratio: None,
    };

    let q = match build_meta_teacher(config, inputs.alpha, &inputs.teachers, &inputs.students) {
        Ok(q) => q,
        Err(e) => {
            rec.violate(
                Axiom::Validity,
                None,
                "operator_error",
                f64::NAN,
                0.0,
                Some(e.to_string()),
            );
            outcome.violations = rec.violations;
            return outcome;
        }
    };

    // validity
    let sum: f64 = q.probs().iter().sum();
    let min = q.probs().iter().copied().fold(f64::INFINITY, f64::min);
    if !q.probs().iter().all(|p| p.is_finite()) || min < 0.0 {
        rec.violate(Axiom::Validity, Some(&q), "min_entry", min, 0.0, None);
    } else if (sum - 1.0).abs() > SUM_TOL {
        rec.violate(
            Axiom::Validity,
            Some(&q),
            "sum_error",
            (sum - 1.0).abs(),
            SUM_TOL,
            None,
        );
    }

    // positivity
    if min <= 0.0 {
        rec.violate(Axiom::Positivity, Some(&q), "min_entry", min, 0.0, None);
    }

    // anchoring
    let anchored = anchor_component(config, &inputs.teachers).and_then(|a| {
        let eff = effective_anchor(&q, &a)?;
        let r = non_anchor_component(config, &inputs.students)
            .or_else(|_| Distribution::uniform(q.len()))?;
        let general = general_anchor(&q, &inputs.teachers[0], &r)?;
        Ok((eff, general))
    });
    match anchored {
        Ok((eff, general)) => {
            outcome.effective_anchor = Some(eff);
            outcome.general_anchor = Some(general);
            if config.kind.is_mixture() {
                if inputs.alpha <= 0.0 {
                    rec.violate(
                        Axiom::Anchoring,
                        Some(&q),
                        "effective_anchor",
                        eff,
                        inputs.alpha,
                        Some("declared anchor weight is not positive".into()),
                    );
                } else if eff < inputs.alpha - ANCHOR_TOL {
                    rec.violate(
                        Axiom::Anchoring,
                        Some(&q),
                        "effective_anchor",
                        eff,
                        inputs.alpha,
                        None,
                    );
                }
            }
        }
        Err(e) => rec.violate(
            Axiom::Anchoring,
            Some(&q),
            "operator_error",
            f64::NAN,
            inputs.alpha,
            Some(e.to_string()),
        ),
    }

    // continuity
    let moved = build_meta_teacher(
        config,
        inputs.perturbed_alpha,
        &inputs.perturbed_teachers,
        &inputs.perturbed_students,
    );
    match moved {
        Ok(q2) => {
            let input_change = inputs
                .teachers
                .iter()
                .zip(&inputs.perturbed_teachers)
                .chain(inputs.students.iter().zip(&inputs.perturbed_students))
                .map(|(a, b)| a.l1_distance(b).unwrap_or(0.0))
                .fold((inputs.perturbed_alpha - inputs.alpha).abs(), f64::max);
            let output_change = q.l1_distance(&q2).unwrap_or(f64::INFINITY);
            let ratio = if input_change > 0.0 {
                output_change / input_change
            } else if output_change == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            outcome.continuity_ratio = Some(ratio);
            if ratio > CONTINUITY_BOUND {
                rec.violate(
                    Axiom::Continuity,
                    Some(&q2),
                    "lipschitz_ratio",
                    ratio,
                    CONTINUITY_BOUND,
                    None,
                );
            }
        }
        Err(e) => rec.violate(
            Axiom::Continuity,
            None,
            "operator_error",
            f64::NAN,
            CONTINUITY_BOUND,
            Some(e.to_string()),
        ),
    }

    // monotonicity in α
    let (lo, hi) = inputs.alpha_pair;
    let monotone = anchor_component(config, &inputs.teachers).and_then(|a| {
        let q_lo = build_meta_teacher(config, lo, &inputs.teachers, &inputs.students)?;
        let q_hi = build_meta_teacher(config, hi, &inputs.teachers, &inputs.students)?;
        Ok((kl(&a, &q_lo)?, kl(&a, &q_hi)?, q_hi))
    });
    match monotone {
        Ok((k_lo, k_hi, q_hi)) => {
            if k_hi > k_lo + MONOTONE_TOL {
                rec.violate(
                    Axiom::Monotonicity,
                    Some(&q_hi),
                    "kl_at_higher_alpha",
                    k_hi,
                    k_lo + MONOTONE_TOL,
                    None,
                );
            }
        }
        Err(e) => rec.violate(
            Axiom::Monotonicity,
            None,
            "operator_error",
            f64::NAN,
            0.0,
            Some(e.to_string()),
        ),
    }

    outcome.violations = rec.violations;
    outcome
}

/// Checks `config` on `trials` random input sets. Deterministic in
/// `(config, trials, seed)`; never panics on operator errors.
pub fn check_axioms(config: &OperatorConfig, trials: usize, seed: u64) -> AxiomReport {
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| evaluate_trial(config, &trial_inputs(config, seed, t)))
        .collect();

    let fold_min = |f: fn(&TrialOutcome) -> Option<f64>| {
        outcomes.iter().filter_map(f).fold(f64::INFINITY, f64::min)
    };
    let effective_anchor_min = fold_min(|o| o.effective_anchor);
    let general_anchor_min = fold_min(|o| o.general_anchor);
    let continuity_ratio_max = outcomes
        .iter()
        .filter_map(|o| o.continuity_ratio)
        .fold(0.0, f64::max);

    let axioms = Axiom::ALL
        .iter()
        .map(|&axiom| {
            // outcomes are in trial order, so this is sorted by trial index
            let all: Vec<&Counterexample> = outcomes
                .iter()
                .flat_map(|o| o.violations.iter())
                .filter(|c| c.axiom == axiom)
                .collect();
            let failed = !all.is_empty();
            let status = match axiom {
                Axiom::Anchoring if !config.kind.is_mixture() => AxiomStatus::Measured,
                Axiom::Continuity if !failed => AxiomStatus::Measured,
                _ if failed => AxiomStatus::Fail,
                _ => AxiomStatus::Pass,
            };
            AxiomResult {
                axiom,
                number: axiom.number(),
                status,
                trials,
                violations: all.len(),
                counterexamples: all.into_iter().take(MAX_COUNTEREXAMPLES).cloned().collect(),
            }
        })
        .collect();

    AxiomReport {
        operator: config.clone(),
        trials,
        seed,
        axioms,
        effective_anchor_min,
        general_anchor_min,
        continuity_ratio_max,
    }
}
