//! Post-hoc analysis: decay/drift classification of traces, fixed-point and
//! basin probes, stability under parameter jitter, ensemble spread.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::kl;
use crate::engine::{run, GenerationTrace, Scenario, RATIO_FLOOR};
use crate::error::{Error, Result};
use crate::operators::{build_meta_teacher, OperatorConfig};
use crate::sampling::{derive_seed, dirichlet_uniform, rng_from_seed};
use crate::schedule::ScheduleConfig;
use crate::simplex::ConditionalModel;

/// R² a fit needs before a trend is called.
pub const FIT_R2_MIN: f64 = 0.99;
/// Minimum |slope| for a trend; the linear slope is taken relative to D(S₀).
pub const FIT_SLOPE_MIN: f64 = 1e-3;
/// Relative change below which a series is a plateau.
pub const PLATEAU_REL_CHANGE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ys` on `xs`. A series with no variance has R² = 1.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r_squared = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    GeometricDecay,
    LinearGrowth,
    Plateau,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    /// `D(S_g)/D(S_{g−1})` for g ≥ 1.
    pub beta_hat_series: Vec<Option<f64>>,
    /// Fit of `ln D(S_g)` on g; absent when some D is zero.
    pub geometric_fit: Option<LinearFit>,
    /// Fit of `D(S_g)` on g.
    pub linear_fit: LinearFit,
    pub classification: Classification,
}

impl ConvergenceSummary {
    /// Fitted per-generation log-decay rate.
    pub fn log_rate(&self) -> Option<f64> {
        self.geometric_fit.map(|f| f.slope)
    }
}

pub fn summarize(trace: &GenerationTrace) -> Result<ConvergenceSummary> {
    let ds = trace.divergences();
    if ds.len() < 3 {
        return Err(Error::TraceTooShort(ds.len()));
    }
    let d0 = ds[0];
    if d0.is_nan() || d0 <= RATIO_FLOOR {
        return Err(Error::DegenerateBaseline(d0));
    }
    let gs: Vec<f64> = trace.records.iter().map(|r| r.g as f64).collect();
    let geometric_fit = ds.iter().all(|&d| d > 0.0).then(|| {
        let logs: Vec<f64> = ds.iter().map(|d| d.ln()).collect();
        fit_line(&gs, &logs)
    });
    let linear_fit = fit_line(&gs, &ds);
    // classify on the series relative to D(S₀) so the result is scale-free
    let relative: Vec<f64> = ds.iter().map(|d| d / d0).collect();
    let relative_fit = fit_line(&gs, &relative);
    let last = relative[relative.len() - 1];

    let classification = match geometric_fit {
        Some(f) if f.r_squared >= FIT_R2_MIN && f.slope < -FIT_SLOPE_MIN => {
            Classification::GeometricDecay
        }
        _ if relative_fit.r_squared >= FIT_R2_MIN && relative_fit.slope > FIT_SLOPE_MIN => {
            Classification::LinearGrowth
        }
        _ if (last - 1.0).abs() < PLATEAU_REL_CHANGE => Classification::Plateau,
        _ => Classification::Indeterminate,
    };

    Ok(ConvergenceSummary {
        beta_hat_series: trace.records[1..].iter().map(|r| r.beta_hat).collect(),
        geometric_fit,
        linear_fit,
        classification,
    })
}

/// `E_x[KL(candidate ‖ 𝒯(candidate))]` under exact realizability, with the
/// candidate as the only student. Zero exactly at fixed points.
pub fn fixed_point_residual(
    operator: &OperatorConfig,
    t0: &ConditionalModel,
    candidate: &ConditionalModel,
) -> Result<f64> {
    t0.ensure_compatible(candidate)?;
    let mut total = 0.0;
    for ((w, t), c) in t0.contexts().iter().zip(candidate.dists()) {
        let q = build_meta_teacher(
            operator,
            operator.alpha,
            std::slice::from_ref(t),
            std::slice::from_ref(c),
        )?;
        total += w * kl(c, &q)?;
    }
    Ok(total)
}

/// Slack allowed on `D(S_{g+1}) ≤ (1 − α_g)·D(S_g) + ε_g`.
pub const NOISY_BOUND_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyBoundReport {
    pub steps: usize,
    pub violations: usize,
    pub violation_rate: f64,
    /// Largest `D(S_{g+1}) − (1 − α_g)·D(S_g) − ε_g` over all steps.
    pub max_excess: f64,
}

/// Checks each step against the approximate contraction inequality with
/// `ε_g` taken as the step's noise floor when it has one (arithmetic
/// distractor), else its realised `step_noise_kl`. Only the distractor case is
/// provable; for tilted noise this measures how often it happens to hold.
pub fn noisy_bound_report(trace: &GenerationTrace) -> NoisyBoundReport {
    let mut violations = 0;
    let mut max_excess = f64::NEG_INFINITY;
    for w in trace.records.windows(2) {
        let (prev, next) = (&w[0], &w[1]);
        let alpha = next.alpha.unwrap_or(0.0);
        let eps = next.noise_floor.or(next.step_noise_kl).unwrap_or(0.0);
        let excess = next.d_actual - ((1.0 - alpha) * prev.d_actual + eps);
        max_excess = max_excess.max(excess);
        if excess > NOISY_BOUND_TOL {
            violations += 1;
        }
    }
    let steps = trace.records.len().saturating_sub(1);
    NoisyBoundReport {
        steps,
        violations,
        violation_rate: if steps == 0 {
            0.0
        } else {
            violations as f64 / steps as f64
        },
        max_excess: if steps == 0 { 0.0 } else { max_excess },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinReport {
    pub n_inits: usize,
    pub converged: usize,
    pub fraction: f64,
    /// Largest final divergence among runs that completed.
    pub worst_final: Option<f64>,
    pub worst_init: Option<usize>,
    /// Initialisations whose run failed, with the error message.
    pub failures: Vec<(usize, String)>,
}

/// Runs `template` from each given initial student; a run converges when its
/// final divergence is below `threshold`.
pub fn basin_probe_from(
    template: &Scenario,
    inits: &[ConditionalModel],
    threshold: f64,
) -> Result<BasinReport> {
    if inits.is_empty() {
        return Err(Error::validation("n_inits", "must be at least 1"));
    }
    let finals: Vec<Result<f64>> = inits
        .par_iter()
        .map(|s0| {
            let mut s = template.clone();
            s.student0 = s0.clone();
            let trace = run(&s)?;
            Ok(trace.final_divergence().unwrap_or(f64::INFINITY))
        })
        .collect();

    let mut report = BasinReport {
        n_inits: inits.len(),
        converged: 0,
        fraction: 0.0,
        worst_final: None,
        worst_init: None,
        failures: Vec::new(),
    };
    for (i, res) in finals.into_iter().enumerate() {
        match res {
            Ok(d) => {
                if d < threshold {
                    report.converged += 1;
                }
                if report.worst_final.is_none_or(|w| d > w) {
                    report.worst_final = Some(d);
                    report.worst_init = Some(i);
                }
            }
            Err(e) => report.failures.push((i, e.to_string())),
        }
    }
    report.fraction = report.converged as f64 / inits.len() as f64;
    Ok(report)
}

/// [`basin_probe_from`] over `n_inits` Dirichlet(1) initial students.
pub fn basin_probe(
    template: &Scenario,
    n_inits: usize,
    threshold: f64,
    seed: u64,
) -> Result<BasinReport> {
    let inits = (0..n_inits)
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, &[i as u64]));
            let dists = (0..template.teacher.num_contexts())
                .map(|_| dirichlet_uniform(&mut rng, template.teacher.vocab_size()))
                .collect();
            template.teacher.with_dists(dists)
        })
        .collect::<Result<Vec<_>>>()?;
    basin_probe_from(template, &inits, threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub baseline_final: f64,
    pub max_deviation: f64,
    pub trials: usize,
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, value: f64, scale: f64) -> f64 {
    value * (1.0 + scale * rng.random_range(-1.0..=1.0))
}

fn jitter_weights<R: Rng + ?Sized>(rng: &mut R, weights: &[f64], scale: f64) -> Vec<f64> {
    if weights.len() < 2 {
        return weights.to_vec();
    }
    let raw: Vec<f64> = weights.iter().map(|&w| jitter(rng, w, scale)).collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|w| w / sum).collect()
}

fn reweight(model: &ConditionalModel, weights: &[f64]) -> Result<ConditionalModel> {
    ConditionalModel::new(
        weights
            .iter()
            .copied()
            .zip(model.dists().cloned())
            .collect(),
    )
}

fn perturbed_scenario<R: Rng + ?Sized>(
    base: &Scenario,
    rng: &mut R,
    scale: f64,
) -> Result<Scenario> {
    let mut s = base.clone();
    s.operator.alpha = jitter(rng, base.operator.alpha, scale).min(1.0);
    s.operator.teacher_weights = jitter_weights(rng, &base.operator.teacher_weights, scale);
    s.stop.improvement_tol = jitter(rng, base.stop.improvement_tol, scale);
    let context_weights: Vec<f64> = base.teacher.weights().collect();
    let context_weights = jitter_weights(rng, &context_weights, scale);
    s.teacher = reweight(&base.teacher, &context_weights)?;
    s.student0 = reweight(&base.student0, &context_weights)?;
    s.extra_teachers = base
        .extra_teachers
        .iter()
        .map(|t| reweight(t, &context_weights))
        .collect::<Result<_>>()?;
    Ok(s)
}

/// Re-runs `scenario` with α, teacher weights, context weights and the
/// improvement tolerance each scaled by a random factor in `1 ± scale`, and
/// reports the largest change in final divergence.
pub fn stability_probe(
    scenario: &Scenario,
    perturbation_scale: f64,
    n_trials: usize,
    seed: u64,
) -> Result<StabilityReport> {
    if !(perturbation_scale.is_finite() && perturbation_scale >= 0.0) {
        return Err(Error::InvalidPerturbation(format!(
            "scale {perturbation_scale} must be finite and non-negative"
        )));
    }
    if scenario.operator.alpha * (1.0 - perturbation_scale) <= 0.0 {
        return Err(Error::InvalidPerturbation(format!(
            "scale {perturbation_scale} can push alpha {} to zero",
            scenario.operator.alpha
        )));
    }
    let baseline_final = run(scenario)?.final_divergence().unwrap_or(0.0);
    if perturbation_scale == 0.0 {
        return Ok(StabilityReport {
            baseline_final,
            max_deviation: 0.0,
            trials: n_trials,
        });
    }
    let deviations = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(seed, &[t as u64]));
            let s = perturbed_scenario(scenario, &mut rng, perturbation_scale)?;
            let d = run(&s)?.final_divergence().unwrap_or(0.0);
            Ok((d - baseline_final).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(StabilityReport {
        baseline_final,
        max_deviation: deviations.into_iter().fold(0.0, f64::max),
        trials: n_trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleVarianceReport {
    /// Per context, per token: `Σ_k w_k (p_k(i) − m(i))²`.
    pub individual_variance: Vec<Vec<f64>>,
    /// Per context, per token: `Σ_k w_k (m_{−k}(i) − m(i))²` over the
    /// leave-one-out weighted means.
    pub leave_one_out_variance: Vec<Vec<f64>>,
    /// Context-weighted mean over tokens of the two tables above.
    pub mean_individual_variance: f64,
    pub mean_leave_one_out_variance: f64,
    /// The weighted mixture is a fixed function of the teachers.
    pub mixture_variance: f64,
    pub reduction_holds: bool,
}

/// Spread of individual teachers versus spread of the weighted mean, with the
/// teacher index treated as drawn from `weights`.
pub fn ensemble_variance_report(
    teachers: &[ConditionalModel],
    weights: &[f64],
) -> Result<EnsembleVarianceReport> {
    if teachers.len() < 2 {
        return Err(Error::TooFewTeachers(teachers.len()));
    }
    if weights.len() != teachers.len() {
        return Err(Error::DimensionMismatch {
            expected: teachers.len(),
            found: weights.len(),
        });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0))
        || (weights.iter().sum::<f64>() - 1.0).abs() > crate::operators::WEIGHT_TOL
    {
        return Err(Error::InvalidWeights(
            "ensemble weights must be positive and sum to 1".into(),
        ));
    }
    for t in &teachers[1..] {
        teachers[0].ensure_compatible(t)?;
    }

    let mut individual = Vec::new();
    let mut loo = Vec::new();
    let (mut mean_ind, mut mean_loo) = (0.0, 0.0);
    for (x, cw) in teachers[0].weights().enumerate() {
        let v = teachers[0].vocab_size();
        let mut ind_row = vec![0.0; v];
        let mut loo_row = vec![0.0; v];
        for i in 0..v {
            let m: f64 = teachers
                .iter()
                .zip(weights)
                .map(|(t, w)| w * t.dist(x).probs()[i])
                .sum();
            for (t, &w) in teachers.iter().zip(weights) {
                let p = t.dist(x).probs()[i];
                ind_row[i] += w * (p - m) * (p - m);
                let m_without = (m - w * p) / (1.0 - w);
                loo_row[i] += w * (m_without - m) * (m_without - m);
            }
        }
        mean_ind += cw * ind_row.iter().sum::<f64>() / v as f64;
        mean_loo += cw * loo_row.iter().sum::<f64>() / v as f64;
        individual.push(ind_row);
        loo.push(loo_row);
    }
    Ok(EnsembleVarianceReport {
        individual_variance: individual,
        leave_one_out_variance: loo,
        mean_individual_variance: mean_ind,
        mean_leave_one_out_variance: mean_loo,
        mixture_variance: 0.0,
        reduction_holds: mean_loo <= mean_ind * (1.0 + 1e-12),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub final_divergence: f64,
    /// Fitted per-generation log-decay rate, when the trace allows a log fit.
    pub fitted_rate: Option<f64>,
    /// `ln(1 − α)`, the rate of the contraction bound.
    pub rate_bound: f64,
    pub classification: Option<Classification>,
    pub trace: GenerationTrace,
}

/// Runs `scenario` once per anchor weight with a constant schedule.
pub fn sweep_alpha(scenario: &Scenario, alphas: &[f64]) -> Result<Vec<SweepRow>> {
    alphas
        .par_iter()
        .map(|&alpha| {
            let mut s = scenario.clone();
            s.operator.alpha = alpha;
            s.schedule = ScheduleConfig::Constant;
            let trace = run(&s)?;
            let summary = summarize(&trace).ok();
            Ok(SweepRow {
                alpha,
                final_divergence: trace.final_divergence().unwrap_or(0.0),
                fitted_rate: summary.as_ref().and_then(|s| s.log_rate()),
                rate_bound: (1.0 - alpha).ln(),
                classification: summary.map(|s| s.classification),
                trace,
            })
        })
        .collect()
}
