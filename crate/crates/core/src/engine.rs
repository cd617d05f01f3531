//! The recursion `S_{g+1} = 𝒯(S_g; T₀..T_k)`: build the meta-teacher per
//! context, pass it through the fit channel, repeat until a stop criterion fires.

use log::{debug, trace};
use serde::{Deserialize, Serialize};

use crate::divergence::{expected_divergence, kl, DivergenceKind};
use crate::error::{Error, Result};
use crate::noise::{apply_noise, NoiseContext, NoiseModel};
use crate::operators::{build_meta_teacher, OperatorConfig, OperatorKind};
use crate::sampling::{derive_seed, rng_from_seed};
use crate::schedule::ScheduleConfig;
use crate::simplex::{ConditionalModel, Distribution};

/// Below this a divergence counts as zero when forming ratios.
pub const RATIO_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopCriteria {
    /// Stop once `|D(S_g) − D(S_{g−1})|` falls below this. 0 disables it.
    pub improvement_tol: f64,
    pub max_generations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Diminished,
    MaxGenerations,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Diminished => "diminished",
            StopReason::MaxGenerations => "max_generations",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop(StopReason),
}

/// A fully validated recursion setup.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub label: Option<String>,
    /// `T₀`.
    pub teacher: ConditionalModel,
    /// `T₁..T_k`.
    pub extra_teachers: Vec<ConditionalModel>,
    pub student0: ConditionalModel,
    pub operator: OperatorConfig,
    pub schedule: ScheduleConfig,
    pub noise: NoiseModel,
    pub divergence: DivergenceKind,
    pub max_generations: usize,
    pub stop: StopCriteria,
    pub seed: u64,
}

impl Scenario {
    /// Single-context, noise-free convex mixture run.
    pub fn simple(
        teacher: Distribution,
        student0: Distribution,
        alpha: f64,
        generations: usize,
    ) -> Self {
        Self {
            label: None,
            teacher: ConditionalModel::single(teacher),
            extra_teachers: Vec::new(),
            student0: ConditionalModel::single(student0),
            operator: OperatorConfig::convex_mixture(alpha),
            schedule: ScheduleConfig::Constant,
            noise: NoiseModel::None,
            divergence: DivergenceKind::Kl,
            max_generations: generations,
            stop: StopCriteria {
                improvement_tol: 0.0,
                max_generations: generations,
            },
            seed: 0,
        }
    }

    pub fn generation_budget(&self) -> usize {
        self.max_generations.min(self.stop.max_generations)
    }

    pub fn validate(&self) -> Result<()> {
        self.teacher.ensure_compatible(&self.student0)?;
        for t in &self.extra_teachers {
            self.teacher.ensure_compatible(t)?;
        }
        self.operator.validate()?;
        if self.operator.kind != OperatorKind::ConvexMixture
            && self.operator.teacher_weights.len() != 1 + self.extra_teachers.len()
        {
            return Err(Error::DimensionMismatch {
                expected: self.operator.teacher_weights.len(),
                found: 1 + self.extra_teachers.len(),
            });
        }
        self.schedule.validate()?;
        self.noise.validate()?;
        if !(self.stop.improvement_tol.is_finite() && self.stop.improvement_tol >= 0.0) {
            return Err(Error::validation(
                "stop.improvement_tol",
                "must be a finite non-negative number",
            ));
        }
        if self.generation_budget() == 0 {
            return Err(Error::validation("max_generations", "must be at least 1"));
        }
        Ok(())
    }

    fn teachers_at(&self, context: usize) -> Vec<Distribution> {
        std::iter::once(&self.teacher)
            .chain(&self.extra_teachers)
            .map(|m| m.dist(context).clone())
            .collect()
    }
}

/// State after one generation. `alpha`, `step_noise_kl`, `beta_hat` and
/// `meta_teacher` describe the step that produced this generation and are
/// absent on the baseline row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub g: usize,
    pub alpha: Option<f64>,
    /// `D(S_g)`.
    pub d_actual: f64,
    /// `(1 − α_min)^g · D(S₀)`, α_min the smallest anchor weight used so far.
    pub d_bound: f64,
    /// `D(S_g) / D(S_{g−1})`.
    pub beta_hat: Option<f64>,
    /// `E_x[KL(q_{g−1} ‖ S_g)]`.
    pub step_noise_kl: Option<f64>,
    /// Expected `δ·D(T₀, u)` slack for the arithmetic distractor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_floor: Option<f64>,
    pub meta_teacher: Option<Vec<Distribution>>,
    pub student: Vec<Distribution>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub label: Option<String>,
    pub divergence: DivergenceKind,
    pub records: Vec<GenerationRecord>,
    pub stop_reason: Option<StopReason>,
}

impl GenerationTrace {
    /// Number of completed steps.
    pub fn generations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn divergences(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.d_actual).collect()
    }

    pub fn final_divergence(&self) -> Option<f64> {
        self.records.last().map(|r| r.d_actual)
    }
}

pub fn should_stop(trace: &GenerationTrace, criteria: &StopCriteria) -> StopDecision {
    let n = trace.records.len();
    if n >= 2 {
        let improvement = (trace.records[n - 1].d_actual - trace.records[n - 2].d_actual).abs();
        if improvement < criteria.improvement_tol {
            return StopDecision::Stop(StopReason::Diminished);
        }
    }
    if trace.generations() >= criteria.max_generations {
        return StopDecision::Stop(StopReason::MaxGenerations);
    }
    StopDecision::Continue
}

/// Result of one application of 𝒯.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub meta_teacher: Vec<Distribution>,
    pub student: ConditionalModel,
    pub step_noise_kl: f64,
    pub noise_floor: Option<f64>,
}

/// Applies 𝒯 once. `history` is `S₀..S_g` (latest last); `generation` is `g`
/// and, with the scenario seed, fixes each context's noise stream.
pub fn step(
    scenario: &Scenario,
    history: &[ConditionalModel],
    alpha: f64,
    generation: usize,
) -> Result<StepOutput> {
    let Some(current) = history.last() else {
        return Err(Error::EmptyInputs("student"));
    };
    let mut meta_teacher = Vec::with_capacity(current.num_contexts());
    let mut students = Vec::with_capacity(current.num_contexts());
    let mut step_noise_kl = 0.0;
    let mut noise_floor = None::<f64>;
    for (x, (weight, _)) in current.contexts().iter().enumerate() {
        let teachers = scenario.teachers_at(x);
        let past: Vec<Distribution> = history.iter().map(|m| m.dist(x).clone()).collect();
        let q = build_meta_teacher(&scenario.operator, alpha, &teachers, &past)?;
        let mut rng = rng_from_seed(derive_seed(scenario.seed, &[generation as u64, x as u64]));
        let ctx = NoiseContext {
            anchor: &teachers[0],
            divergence: scenario.divergence,
        };
        let noisy = apply_noise(&q, &scenario.noise, ctx, &mut rng)?;
        step_noise_kl += weight * kl(&q, &noisy.student)?;
        if let Some(f) = noisy.noise_floor {
            *noise_floor.get_or_insert(0.0) += weight * f;
        }
        meta_teacher.push(q);
        students.push(noisy.student);
    }
    Ok(StepOutput {
        meta_teacher,
        student: current.with_dists(students)?,
        step_noise_kl,
        noise_floor,
    })
}

/// Iterates 𝒯 from `S₀` until [`should_stop`] fires. On failure the trace up
/// to the failing generation travels in [`Error::Generation`].
pub fn run(scenario: &Scenario) -> Result<GenerationTrace> {
    scenario.validate()?;
    let kind = scenario.divergence;
    let d0 = expected_divergence(kind, &scenario.teacher, &scenario.student0)?;
    let mut trace = GenerationTrace {
        label: scenario.label.clone(),
        divergence: kind,
        records: vec![GenerationRecord {
            g: 0,
            alpha: None,
            d_actual: d0,
            d_bound: d0,
            beta_hat: None,
            step_noise_kl: None,
            noise_floor: None,
            meta_teacher: None,
            student: scenario.student0.dists().cloned().collect(),
        }],
        stop_reason: None,
    };
    let criteria = StopCriteria {
        improvement_tol: scenario.stop.improvement_tol,
        max_generations: scenario.generation_budget(),
    };
    let mut history = vec![scenario.student0.clone()];
    let mut alpha = scenario.operator.alpha;
    let mut alpha_min = f64::INFINITY;

    loop {
        if let StopDecision::Stop(reason) = should_stop(&trace, &criteria) {
            debug!(
                "stopping after {} generations: {}",
                trace.generations(),
                reason.as_str()
            );
            trace.stop_reason = Some(reason);
            return Ok(trace);
        }
        let g = trace.generations();
        let prev = trace.records.last().expect("baseline row").clone();
        let outcome = (|| {
            alpha = scenario.schedule.next_alpha(g, alpha, prev.beta_hat)?;
            scenario.operator.check_alpha(alpha)?;
            let out = step(scenario, &history, alpha, g)?;
            let d = expected_divergence(kind, &scenario.teacher, &out.student)?;
            Ok::<_, Error>((out, d))
        })();
        let (out, d) = match outcome {
            Ok(v) => v,
            Err(source) => {
                return Err(Error::Generation {
                    generation: g + 1,
                    source: Box::new(source),
                    partial: Box::new(trace),
                })
            }
        };
        alpha_min = alpha_min.min(alpha);
        let next_g = g + 1;
        let beta_hat = (prev.d_actual >= RATIO_FLOOR).then(|| d / prev.d_actual);
        trace!("g={next_g} alpha={alpha} D={d}");
        trace.records.push(GenerationRecord {
            g: next_g,
            alpha: Some(alpha),
            d_actual: d,
            d_bound: (1.0 - alpha_min).powi(next_g as i32) * d0,
            beta_hat,
            step_noise_kl: Some(out.step_noise_kl),
            noise_floor: out.noise_floor,
            meta_teacher: Some(out.meta_teacher),
            student: out.student.dists().cloned().collect(),
        });
        history.push(out.student);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::Distractor;
    use approx::assert_abs_diff_eq;

    fn d(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    fn toy(alpha: f64, generations: usize) -> Scenario {
        Scenario::simple(d(&[0.6, 0.3, 0.1]), d(&[0.2, 0.5, 0.3]), alpha, generations)
    }

    #[test]
    fn first_step_of_toy_run() {
        let s = toy(0.3, 1);
        let out = step(&s, std::slice::from_ref(&s.student0), 0.3, 0).unwrap();
        for (a, b) in out.student.dist(0).probs().iter().zip([0.32, 0.44, 0.24]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let d1 = expected_divergence(DivergenceKind::Kl, &s.teacher, &out.student).unwrap();
        // direct evaluation gives 0.17472065
        assert_abs_diff_eq!(d1, 0.1747206, epsilon = 1e-6);
        assert!(d1 <= 0.7 * 0.396058);
        assert_eq!(out.step_noise_kl, 0.0);
    }

    #[test]
    fn teacher_is_a_fixed_point() {
        let mut s = toy(0.3, 5);
        s.student0 = s.teacher.clone();
        let out = step(&s, &[s.teacher.clone()], 0.3, 0).unwrap();
        assert_eq!(out.student, s.teacher);
    }

    #[test]
    fn full_anchor_jumps_to_teacher() {
        let s = toy(1.0, 1);
        let out = step(&s, std::slice::from_ref(&s.student0), 1.0, 0).unwrap();
        assert_eq!(out.student, s.teacher);
        let trace = run(&s).unwrap();
        assert_eq!(trace.final_divergence(), Some(0.0));
    }

    #[test]
    fn anchored_run_respects_geometric_bound() {
        let trace = run(&toy(0.3, 10)).unwrap();
        assert_eq!(trace.records.len(), 11);
        assert_eq!(trace.stop_reason, Some(StopReason::MaxGenerations));
        let d0 = trace.records[0].d_actual;
        for r in &trace.records {
            assert!(r.d_actual <= 0.7f64.powi(r.g as i32) * d0 + 1e-12);
            assert_abs_diff_eq!(r.d_bound, 0.7f64.powi(r.g as i32) * d0, epsilon = 1e-15);
        }
        assert!(trace.records[0].beta_hat.is_none());
        assert!(trace.records[1].beta_hat.unwrap() < 0.7);
    }

    #[test]
    fn starting_at_teacher_stops_on_diminished() {
        let mut s = toy(0.3, 10);
        s.student0 = s.teacher.clone();
        s.stop.improvement_tol = 1e-6;
        let trace = run(&s).unwrap();
        assert!(trace.records.iter().all(|r| r.d_actual == 0.0));
        assert_eq!(trace.stop_reason, Some(StopReason::Diminished));
        assert_eq!(trace.generations(), 1);
        assert!(trace.records[1].beta_hat.is_none());
    }

    #[test]
    fn drift_run_grows_linearly() {
        let mut s = toy(0.0, 10);
        s.operator = OperatorConfig::unanchored();
        s.noise = NoiseModel::CalibratedDrift {
            epsilon: 0.05,
            distractor: Distractor::Explicit(d(&[0.01, 0.01, 0.98])),
        };
        let trace = run(&s).unwrap();
        let d0 = trace.records[0].d_actual;
        for r in &trace.records {
            assert_abs_diff_eq!(r.d_actual, d0 + 0.05 * r.g as f64, epsilon = 1e-6);
        }
    }

    #[test]
    fn should_stop_cases() {
        let mk = |ds: &[f64]| GenerationTrace {
            records: ds
                .iter()
                .enumerate()
                .map(|(g, &d)| GenerationRecord {
                    g,
                    alpha: None,
                    d_actual: d,
                    d_bound: d,
                    beta_hat: None,
                    step_noise_kl: None,
                    noise_floor: None,
                    meta_teacher: None,
                    student: vec![],
                })
                .collect(),
            ..Default::default()
        };
        let crit = StopCriteria {
            improvement_tol: 1e-6,
            max_generations: 10,
        };
        // improvements 0.2, 0.1, 1e-9
        let t = mk(&[1.0, 0.8, 0.7, 0.7 - 1e-9]);
        assert_eq!(
            should_stop(&t, &crit),
            StopDecision::Stop(StopReason::Diminished)
        );
        let t = mk(&[1.0, 0.8, 0.7, 0.5]);
        assert_eq!(should_stop(&t, &crit), StopDecision::Continue);
        let t = mk(&(0..=10).map(|g| 1.0 / (g as f64 + 1.0)).collect::<Vec<_>>());
        assert_eq!(
            should_stop(&t, &crit),
            StopDecision::Stop(StopReason::MaxGenerations)
        );
        assert_eq!(should_stop(&mk(&[1.0]), &crit), StopDecision::Continue);
    }

    #[test]
    fn failure_keeps_partial_trace() {
        let mut s = toy(0.3, 5);
        // no three-token tilt reaches a KL of 1000
        s.noise = NoiseModel::GeometricTilt { target_kl: 1e3 };
        match run(&s) {
            Err(Error::Generation {
                generation,
                source,
                partial,
            }) => {
                assert_eq!(generation, 1);
                assert!(matches!(*source, Error::CalibrationFailed(_)));
                assert_eq!(partial.records.len(), 1);
            }
            other => panic!("expected generation error, got {other:?}"),
        }
    }

    #[test]
    fn validation_catches_shape_errors() {
        let mut s = toy(0.3, 5);
        s.student0 = ConditionalModel::single(d(&[0.5, 0.5]));
        assert!(run(&s).is_err());
        let mut s = toy(0.3, 5);
        s.operator = OperatorConfig::new(OperatorKind::GeneralizedMixture, 0.3)
            .with_teacher_weights(vec![0.5, 0.5]);
        assert!(matches!(run(&s), Err(Error::DimensionMismatch { .. })));
    }
}
