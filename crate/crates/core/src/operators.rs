//! Meta-teacher construction operators.
//!
//! An operator maps the base teachers `T₀..T_k`, the student history
//! `S₀..S_g` and an anchor weight α to the meta-teacher `q_g` the next
//! student is fitted to. Four families are provided:
//!
//! * [`OperatorKind::ConvexMixture`]: `α·T₀ + (1−α)·S_g`.
//! * [`OperatorKind::GeneralizedMixture`]: `α·Σ w_k T_k + (1−α)·Σ v_j S_j`.
//! * [`OperatorKind::MProjection`]: minimiser of `Σ π_i KL(p_i‖q)` over the
//!   pooled inputs, which is the weighted arithmetic mean.
//! * [`OperatorKind::IProjection`]: minimiser of `Σ π_i KL(q‖p_i)`, the
//!   normalised weighted geometric mean.
//!
//! The projections pool teachers with weights `α·w_k` and students with
//! `(1−α)·v_j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::{convex_combine, softmax_from_logs, weighted_sum, Distribution};

/// Tolerance for control-weight normalisation.
pub const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    ConvexMixture,
    GeneralizedMixture,
    MProjection,
    IProjection,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 4] = [
        OperatorKind::ConvexMixture,
        OperatorKind::GeneralizedMixture,
        OperatorKind::MProjection,
        OperatorKind::IProjection,
    ];

    /// Kinds whose output is literally `α·anchor + (1−α)·rest`.
    pub fn is_mixture(self) -> bool {
        matches!(
            self,
            OperatorKind::ConvexMixture | OperatorKind::GeneralizedMixture
        )
    }
}

/// How the student history is weighted (the `v_j`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenerationWeightScheme {
    /// Weights for the most recent `weights.len()` generations, oldest first.
    Explicit { weights: Vec<f64> },
    /// `v_j ∝ rate^(g−j)`.
    ExponentialDecay { rate: f64 },
    /// Uniform over the last `window` generations.
    Recency { window: usize },
}

impl Default for GenerationWeightScheme {
    fn default() -> Self {
        GenerationWeightScheme::Recency { window: 1 }
    }
}

impl GenerationWeightScheme {
    pub fn validate(&self) -> Result<()> {
        match self {
            GenerationWeightScheme::Explicit { weights } => {
                if weights.is_empty() {
                    return Err(Error::InvalidWeights("explicit weights are empty".into()));
                }
                check_weights(weights, false)
            }
            GenerationWeightScheme::ExponentialDecay { rate } => {
                if !(rate.is_finite() && *rate > 0.0 && *rate <= 1.0) {
                    return Err(Error::InvalidRate(*rate));
                }
                Ok(())
            }
            GenerationWeightScheme::Recency { window } => {
                if *window < 1 {
                    return Err(Error::InvalidWindow(*window));
                }
                Ok(())
            }
        }
    }
}

fn check_weights(weights: &[f64], strictly_positive: bool) -> Result<()> {
    for &w in weights {
        let ok = w.is_finite() && if strictly_positive { w > 0.0 } else { w >= 0.0 };
        if !ok {
            return Err(Error::InvalidWeights(format!("weight {w} out of range")));
        }
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::InvalidWeights(format!("weights sum to {sum}")));
    }
    Ok(())
}

/// Weights `v_0..v_g` over the student history at generation `g`.
pub fn generation_weights(scheme: &GenerationWeightScheme, g: usize) -> Result<Vec<f64>> {
    scheme.validate()?;
    let n = g + 1;
    let mut v = vec![0.0; n];
    match scheme {
        GenerationWeightScheme::Explicit { weights } => {
            let used = weights.len().min(n);
            let tail = &weights[weights.len() - used..];
            let sum: f64 = tail.iter().sum();
            if sum <= 0.0 {
                return Err(Error::InvalidWeights(format!(
                    "explicit weights for the last {used} generations are all zero"
                )));
            }
            for (slot, w) in v[n - used..].iter_mut().zip(tail) {
                *slot = w / sum;
            }
        }
        GenerationWeightScheme::ExponentialDecay { rate } => {
            for (j, slot) in v.iter_mut().enumerate() {
                *slot = rate.powi((g - j) as i32);
            }
            let sum: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= sum);
        }
        GenerationWeightScheme::Recency { window } => {
            let used = (*window).min(n);
            for slot in &mut v[n - used..] {
                *slot = 1.0 / used as f64;
            }
        }
    }
    Ok(v)
}

fn default_teacher_weights() -> Vec<f64> {
    vec![1.0]
}

/// Declarative description of a meta-teacher operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    pub kind: OperatorKind,
    pub alpha: f64,
    /// `w_0..w_k` over the base teachers; `w_0` belongs to `T₀`.
    #[serde(default = "default_teacher_weights")]
    pub teacher_weights: Vec<f64>,
    #[serde(default)]
    pub generation_weight_scheme: GenerationWeightScheme,
    /// Opt-in for α = 0, only honoured for the generalized mixture.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unanchored: bool,
}

impl OperatorConfig {
    pub fn convex_mixture(alpha: f64) -> Self {
        Self::new(OperatorKind::ConvexMixture, alpha)
    }

    pub fn new(kind: OperatorKind, alpha: f64) -> Self {
        Self {
            kind,
            alpha,
            teacher_weights: default_teacher_weights(),
            generation_weight_scheme: GenerationWeightScheme::default(),
            unanchored: false,
        }
    }

    /// Latest-student-only operator with no anchoring at all.
    pub fn unanchored() -> Self {
        Self {
            unanchored: true,
            ..Self::new(OperatorKind::GeneralizedMixture, 0.0)
        }
    }

    pub fn with_scheme(mut self, scheme: GenerationWeightScheme) -> Self {
        self.generation_weight_scheme = scheme;
        self
    }

    pub fn with_teacher_weights(mut self, weights: Vec<f64>) -> Self {
        self.teacher_weights = weights;
        self
    }

    pub fn num_teachers(&self) -> usize {
        match self.kind {
            OperatorKind::ConvexMixture => 1,
            _ => self.teacher_weights.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.check_alpha(self.alpha)?;
        if self.teacher_weights.is_empty() {
            return Err(Error::EmptyInputs("teacher weight"));
        }
        check_weights(&self.teacher_weights, true)?;
        self.generation_weight_scheme.validate()
    }

    /// α must lie in (0, 1]; 0 is accepted only for a flagged unanchored
    /// generalized mixture.
    pub fn check_alpha(&self, alpha: f64) -> Result<()> {
        let unanchored_ok = self.unanchored && self.kind == OperatorKind::GeneralizedMixture;
        let in_range =
            alpha.is_finite() && alpha <= 1.0 && (alpha > 0.0 || (unanchored_ok && alpha == 0.0));
        if in_range {
            Ok(())
        } else {
            Err(Error::AlphaOutOfRange(alpha))
        }
    }
}

/// Input set for one meta-teacher construction, after validation.
struct Inputs<'a> {
    teachers: &'a [Distribution],
    students: &'a [Distribution],
    student_weights: Vec<f64>,
}

fn prepare<'a>(
    config: &OperatorConfig,
    alpha: f64,
    teachers: &'a [Distribution],
    students: &'a [Distribution],
) -> Result<Inputs<'a>> {
    config.check_alpha(alpha)?;
    let Some(t0) = teachers.first() else {
        return Err(Error::EmptyInputs("base teacher"));
    };
    if students.is_empty() {
        return Err(Error::EmptyInputs("student"));
    }
    let len = t0.len();
    for d in teachers.iter().chain(students) {
        if d.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                found: d.len(),
            });
        }
    }
    if config.kind != OperatorKind::ConvexMixture && config.teacher_weights.len() != teachers.len()
    {
        return Err(Error::DimensionMismatch {
            expected: config.teacher_weights.len(),
            found: teachers.len(),
        });
    }
    let student_weights = generation_weights(&config.generation_weight_scheme, students.len() - 1)?;
    Ok(Inputs {
        teachers,
        students,
        student_weights,
    })
}

/// The part of the meta-teacher the anchor weight is applied to:
/// `T₀` for the convex mixture, `Σ w_k T_k` otherwise.
pub fn anchor_component(
    config: &OperatorConfig,
    teachers: &[Distribution],
) -> Result<Distribution> {
    let Some(t0) = teachers.first() else {
        return Err(Error::EmptyInputs("base teacher"));
    };
    if config.kind == OperatorKind::ConvexMixture {
        return Ok(t0.clone());
    }
    if config.teacher_weights.len() != teachers.len() {
        return Err(Error::DimensionMismatch {
            expected: config.teacher_weights.len(),
            found: teachers.len(),
        });
    }
    let refs: Vec<&Distribution> = teachers.iter().collect();
    Ok(weighted_sum(&config.teacher_weights, &refs))
}

/// The student-only part `q̃_g` the anchor is mixed with; for the
/// I-projection this is the geometric mean of the students alone.
pub fn non_anchor_component(
    config: &OperatorConfig,
    students: &[Distribution],
) -> Result<Distribution> {
    let Some(latest) = students.last() else {
        return Err(Error::EmptyInputs("student"));
    };
    if config.kind == OperatorKind::ConvexMixture {
        return Ok(latest.clone());
    }
    let v = generation_weights(&config.generation_weight_scheme, students.len() - 1)?;
    let refs: Vec<&Distribution> = students.iter().collect();
    match config.kind {
        OperatorKind::IProjection => geometric_mean(&v, &refs),
        _ => Ok(weighted_sum(&v, &refs)),
    }
}

/// Builds the meta-teacher `q_g` from base teachers `T₀..T_k` and students
/// `S₀..S_g` (latest last) with anchor weight `alpha`.
pub fn build_meta_teacher(
    config: &OperatorConfig,
    alpha: f64,
    teachers: &[Distribution],
    students: &[Distribution],
) -> Result<Distribution> {
    let inputs = prepare(config, alpha, teachers, students)?;
    match config.kind {
        OperatorKind::ConvexMixture => {
            let latest = &inputs.students[inputs.students.len() - 1];
            convex_combine(alpha, &inputs.teachers[0], latest)
        }
        OperatorKind::GeneralizedMixture => {
            let t: Vec<&Distribution> = inputs.teachers.iter().collect();
            let s: Vec<&Distribution> = inputs.students.iter().collect();
            let anchor = weighted_sum(&config.teacher_weights, &t);
            let rest = weighted_sum(&inputs.student_weights, &s);
            convex_combine(alpha, &anchor, &rest)
        }
        OperatorKind::MProjection => {
            let (weights, dists) = pooled(config, alpha, &inputs);
            Ok(weighted_sum(&weights, &dists))
        }
        OperatorKind::IProjection => {
            let (weights, dists) = pooled(config, alpha, &inputs);
            geometric_mean(&weights, &dists)
        }
    }
}

fn pooled<'a>(
    config: &OperatorConfig,
    alpha: f64,
    inputs: &Inputs<'a>,
) -> (Vec<f64>, Vec<&'a Distribution>) {
    let weights = config
        .teacher_weights
        .iter()
        .map(|w| alpha * w)
        .chain(inputs.student_weights.iter().map(|v| (1.0 - alpha) * v))
        .collect();
    let dists = inputs.teachers.iter().chain(inputs.students).collect();
    (weights, dists)
}

/// Normalised `Π p_i^{w_i}`, evaluated in log space.
fn geometric_mean(weights: &[f64], dists: &[&Distribution]) -> Result<Distribution> {
    let active: Vec<(f64, &Distribution)> = weights
        .iter()
        .copied()
        .zip(dists.iter().copied())
        .filter(|(w, _)| *w > 0.0)
        .collect();
    if let [(w, d)] = active.as_slice() {
        if (*w - 1.0).abs() <= WEIGHT_TOL {
            return Ok((*d).clone());
        }
    }
    let len = dists[0].len();
    let mut logs = vec![0.0; len];
    for (w, d) in &active {
        for (l, p) in logs.iter_mut().zip(d.probs()) {
            *l += w * p.ln();
        }
    }
    softmax_from_logs(&logs)
}
