//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use metadistill::axioms::{evaluate_trial, Axiom, AxiomReport, AxiomStatus};
use metadistill::diagnostics::{
    basin_probe, fixed_point_residual, summarize, sweep_alpha, Classification,
};
use metadistill::io::{
    appendix_a_anchored, appendix_a_drift, from_json_str, to_json_string, ScenarioFile,
};
use metadistill::sampling::{derive_seed, dirichlet_uniform, rng_from_seed};
use metadistill::{
    build_meta_teacher, convex_combine, divergence, generation_weights, kl, normalize, run,
    ConditionalModel, Distractor, Distribution, DivergenceKind, GenerationWeightScheme, NoiseModel,
    OperatorConfig, OperatorKind, Scenario,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_metadistill")
}

fn write_file(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn t0() -> Distribution {
    Distribution::new(vec![0.6, 0.3, 0.1]).unwrap()
}

// 1 -------------------------------------------------------------------------

fn anchored_reproduction() -> Outcome {
    let s = appendix_a_anchored();
    let trace = run(&s).map_err(|e| e.to_string())?;
    let d0 = trace.records[0].d_actual;
    ensure((d0 - 0.396058).abs() <= 1e-6, || format!("D(S0) = {d0}"))?;
    ensure(trace.records.len() == 11, || {
        format!("{} records", trace.records.len())
    })?;
    for r in &trace.records {
        let g = r.g as i32;
        ensure(r.d_actual / d0 <= 0.7f64.powi(g) + 1e-12, || {
            format!("g={g}: ratio {} above 0.7^g", r.d_actual / d0)
        })?;
        ensure(r.d_bound == 0.7f64.powi(g) * d0, || {
            format!("g={g}: bound {} != 0.7^g D0", r.d_bound)
        })?;
    }
    for (g, published) in [(2usize, 0.49), (5, 0.168), (10, 0.0282)] {
        let ratio = trace.records[g].d_bound / d0;
        ensure((ratio - published).abs() < 1e-4, || {
            format!("g={g}: bound ratio {ratio} vs published {published}")
        })?;
    }
    Ok(format!(
        "D(S0)={d0:.9}, D(S10)/D(S0)={:.6} <= {:.6}",
        trace.records[10].d_actual / d0,
        0.7f64.powi(10)
    ))
}

// 2 -------------------------------------------------------------------------

fn drift_reproduction() -> Outcome {
    let trace = run(&appendix_a_drift()).map_err(|e| e.to_string())?;
    let d0 = trace.records[0].d_actual;
    let mut worst = 0.0f64;
    for r in &trace.records {
        let err = (r.d_actual - d0 - 0.05 * r.g as f64).abs();
        worst = worst.max(err);
        ensure(err <= 1e-6, || format!("g={}: off by {err}", r.g))?;
    }
    ensure(trace.records.len() == 11, || {
        format!("{} records", trace.records.len())
    })?;
    let summary = summarize(&trace).map_err(|e| e.to_string())?;
    ensure(
        summary.classification == Classification::LinearGrowth,
        || format!("classified {:?}", summary.classification),
    )?;
    let slope = summary.linear_fit.slope;
    ensure((slope - 0.05).abs() <= 1e-6, || format!("slope {slope}"))?;
    Ok(format!(
        "D(S10)-D(S0)={:.9}, slope={slope:.9}, max step error {worst:.1e}",
        trace.records[10].d_actual - d0
    ))
}

// 3 -------------------------------------------------------------------------

fn contraction_suite() -> Outcome {
    let mut checked = 0usize;
    let mut worst_slack = f64::NEG_INFINITY;
    for &v in &[2usize, 3, 10, 100] {
        for i in 0..1000u64 {
            let mut rng = rng_from_seed(derive_seed(0xC0, &[v as u64, i]));
            let mut t = dirichlet_uniform(&mut rng, v);
            let mut s = dirichlet_uniform(&mut rng, v);
            // every third triple gets sharpened distributions
            if i % 3 == 0 {
                t = normalize(&t.probs().iter().map(|p| p.powi(4)).collect::<Vec<_>>())
                    .unwrap_or(t);
                s = normalize(&s.probs().iter().map(|p| p.powi(4)).collect::<Vec<_>>())
                    .unwrap_or(s);
            }
            let alpha: f64 = rand::Rng::random_range(&mut rng, 0.0..=1.0);
            let m = convex_combine(alpha, &t, &s).map_err(|e| e.to_string())?;
            for kind in DivergenceKind::ALL {
                let lhs = divergence(kind, &t, &m).map_err(|e| e.to_string())?;
                let rhs = (1.0 - alpha) * divergence(kind, &t, &s).map_err(|e| e.to_string())?;
                worst_slack = worst_slack.max(lhs - rhs);
                ensure(lhs <= rhs + 1e-10, || {
                    format!("V={v} trial {i} {kind}: {lhs} > {rhs}")
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!(
        "{checked} checks over 4000 triples, max lhs-rhs {worst_slack:.2e}"
    ))
}

// 4 -------------------------------------------------------------------------

fn noise_neighborhood() -> Outcome {
    let delta = 0.05;
    let u = Distribution::uniform(3).unwrap();
    let eps = delta * kl(&t0(), &u).unwrap();
    let radius = eps / 0.3;
    let mut worst_tail = 0.0f64;
    let mut worst_step = f64::NEG_INFINITY;
    for seed in 0..20u64 {
        let mut rng = rng_from_seed(derive_seed(0x4E, &[seed]));
        let s0 = dirichlet_uniform(&mut rng, 3);
        let mut s = Scenario::simple(t0(), s0, 0.3, 50);
        s.seed = seed;
        s.noise = NoiseModel::ArithmeticDistractor {
            delta,
            distractor: Distractor::Explicit(u.clone()),
        };
        let trace = run(&s).map_err(|e| e.to_string())?;
        ensure(trace.records.len() == 51, || {
            format!("{} records", trace.records.len())
        })?;
        for w in trace.records.windows(2) {
            let slack = w[1].d_actual - (0.7 * w[0].d_actual + eps);
            worst_step = worst_step.max(slack);
            ensure(slack <= 1e-10, || {
                format!("seed {seed} g={}: step slack {slack}", w[1].g)
            })?;
        }
        for r in &trace.records[20..] {
            worst_tail = worst_tail.max(r.d_actual);
        }
        ensure(worst_tail <= radius + 1e-10, || {
            format!("seed {seed}: tail max {worst_tail} > {radius}")
        })?;
    }
    Ok(format!(
        "eps={eps:.6}, max tail D={worst_tail:.6} <= eps/0.3={radius:.6}, max step slack {worst_step:.2e}"
    ))
}

// 5 -------------------------------------------------------------------------

fn check_axioms_cli(
    dir: &Path,
    name: &str,
    op: &OperatorConfig,
    seed: u64,
) -> Result<AxiomReport, String> {
    let path = write_file(dir, &format!("{name}.json"), &to_json_string(op).unwrap());
    let out = Command::new(bin())
        .args([
            "check-axioms",
            path.to_str().unwrap(),
            "--trials",
            "1000",
            "--seed",
        ])
        .arg(seed.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.code() == Some(0), || {
        format!(
            "{name}: exit {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        )
    })?;
    from_json_str(&String::from_utf8_lossy(&out.stdout)).map_err(|e| e.to_string())
}

fn axiom_conformance() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mixtures = [
        ("convex", OperatorConfig::convex_mixture(0.3)),
        (
            "generalized",
            OperatorConfig::new(OperatorKind::GeneralizedMixture, 0.3)
                .with_teacher_weights(vec![0.5, 0.3, 0.2])
                .with_scheme(GenerationWeightScheme::ExponentialDecay { rate: 0.6 }),
        ),
    ];
    let projections = [
        (
            "m_projection",
            OperatorConfig::new(OperatorKind::MProjection, 0.3),
        ),
        (
            "i_projection",
            OperatorConfig::new(OperatorKind::IProjection, 0.3),
        ),
    ];
    let mut anchor_min = f64::INFINITY;
    for seed in 0..5u64 {
        for (name, op) in &mixtures {
            let r = check_axioms_cli(dir.path(), name, op, seed)?;
            for a in [
                Axiom::Validity,
                Axiom::Positivity,
                Axiom::Anchoring,
                Axiom::Monotonicity,
            ] {
                ensure(r.status(a) == AxiomStatus::Pass, || {
                    format!(
                        "{name} seed {seed}: axiom {} is {:?}",
                        a.number(),
                        r.status(a)
                    )
                })?;
            }
            ensure(r.status(Axiom::Continuity) != AxiomStatus::Fail, || {
                format!("{name} seed {seed}: continuity failed")
            })?;
            anchor_min = anchor_min.min(r.effective_anchor_min);
        }
        for (name, op) in &projections {
            let r = check_axioms_cli(dir.path(), name, op, seed)?;
            ensure(r.status(Axiom::Anchoring) == AxiomStatus::Measured, || {
                format!(
                    "{name} seed {seed}: axiom 3 is {:?}",
                    r.status(Axiom::Anchoring)
                )
            })?;
        }
    }
    let op = OperatorConfig::unanchored();
    let r = check_axioms_cli(dir.path(), "unanchored", &op, 0)?;
    ensure(r.status(Axiom::Anchoring) == AxiomStatus::Fail, || {
        "unanchored operator passed axiom 3".into()
    })?;
    let cx = r
        .result(Axiom::Anchoring)
        .counterexamples
        .first()
        .ok_or("no counterexample")?;
    // replay from the serialized inputs alone
    let replay = evaluate_trial(&op, &cx.inputs);
    let again = replay
        .violations
        .iter()
        .find(|v| v.axiom == Axiom::Anchoring)
        .ok_or("counterexample does not replay")?;
    ensure(again.value == cx.value && again.output == cx.output, || {
        format!("replayed value {} != {}", again.value, cx.value)
    })?;
    Ok(format!(
        "mixtures pass 1,2,3,5 over 5x1000 trials (min effective anchor / alpha = {:.4}); projections MEASURED; unanchored FAIL, counterexample replays ({}={:.3e})",
        anchor_min / 0.3,
        cx.quantity,
        cx.value
    ))
}

// 6 -------------------------------------------------------------------------

fn fixed_point_and_basin() -> Outcome {
    let mut rng = rng_from_seed(6);
    let multi = ConditionalModel::new(vec![
        (0.25, dirichlet_uniform(&mut rng, 5)),
        (0.75, dirichlet_uniform(&mut rng, 5)),
    ])
    .unwrap();
    let single = ConditionalModel::single(t0());
    let mut worst = 0.0f64;
    for kind in OperatorKind::ALL {
        for teacher in [&single, &multi] {
            let r = fixed_point_residual(&OperatorConfig::new(kind, 0.3), teacher, teacher)
                .map_err(|e| e.to_string())?;
            worst = worst.max(r);
            ensure(r <= 1e-12, || format!("{kind:?}: residual {r}"))?;
        }
    }
    let mut template = Scenario::simple(t0(), t0(), 0.3, 30);
    let mut fractions = Vec::new();
    for op in [
        OperatorConfig::convex_mixture(0.3),
        OperatorConfig::new(OperatorKind::GeneralizedMixture, 0.3),
    ] {
        template.operator = op;
        let report = basin_probe(&template, 100, 1e-4, 6).map_err(|e| e.to_string())?;
        ensure(report.fraction == 1.0 && report.failures.is_empty(), || {
            format!(
                "basin fraction {} (worst {:?})",
                report.fraction, report.worst_final
            )
        })?;
        fractions.push(format!(
            "{} (worst final D {:.2e})",
            report.fraction,
            report.worst_final.unwrap()
        ));
    }
    Ok(format!(
        "max residual {worst:.1e}; basin fraction convex {}, generalized {}",
        fractions[0], fractions[1]
    ))
}

// 7 -------------------------------------------------------------------------

fn rate_monotonicity() -> Outcome {
    let alphas: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let rows = sweep_alpha(&appendix_a_anchored(), &alphas).map_err(|e| e.to_string())?;
    let mut rates = Vec::new();
    for r in &rows {
        let rate = r
            .fitted_rate
            .ok_or_else(|| format!("alpha {}: no log fit", r.alpha))?;
        ensure(rate <= (1.0 - r.alpha).ln() + 1e-6, || {
            format!(
                "alpha {}: rate {rate} above ln(1-alpha) {}",
                r.alpha,
                (1.0 - r.alpha).ln()
            )
        })?;
        rates.push(rate);
    }
    ensure(rates.windows(2).all(|w| w[1] < w[0]), || {
        format!("rates not decreasing: {rates:?}")
    })?;
    Ok(format!(
        "rates {}",
        rates
            .iter()
            .map(|r| format!("{r:.3}"))
            .collect::<Vec<_>>()
            .join(" > ")
    ))
}

// 8 -------------------------------------------------------------------------

/// Minimum of `Σ_i a_i ln r_i + b·Σ_i r_i ln r_i` over the 10⁻³ grid of the
/// interior of the 3-simplex, with `a` and `b` set per objective below.
fn grid_min(linear: [f64; 3], entropy_weight: f64) -> f64 {
    const N: usize = 1000;
    let ln: Vec<f64> = (0..=N).map(|i| (i as f64 / N as f64).ln()).collect();
    let x_ln_x: Vec<f64> = (0..=N).map(|i| i as f64 / N as f64 * ln[i]).collect();
    let x: Vec<f64> = (0..=N).map(|i| i as f64 / N as f64).collect();
    let mut best = f64::INFINITY;
    for i in 1..N - 1 {
        for j in 1..N - i {
            let k = N - i - j;
            let v = if entropy_weight == 0.0 {
                linear[0] * ln[i] + linear[1] * ln[j] + linear[2] * ln[k]
            } else {
                x_ln_x[i]
                    + x_ln_x[j]
                    + x_ln_x[k]
                    + linear[0] * x[i]
                    + linear[1] * x[j]
                    + linear[2] * x[k]
            };
            best = best.min(v);
        }
    }
    best
}

fn projection_oracle() -> Outcome {
    let mut max_gap = 0.0f64;
    let mut max_signed = f64::NEG_INFINITY;
    let mut outside = Vec::new();
    for inst in 0..100u64 {
        let mut rng = rng_from_seed(derive_seed(0x8, &[inst]));
        let alpha: f64 = rand::Rng::random_range(&mut rng, 0.05..0.95);
        let n_students = 1 + (inst % 3) as usize;
        let teachers = [dirichlet_uniform(&mut rng, 3)];
        let students: Vec<Distribution> = (0..n_students)
            .map(|_| dirichlet_uniform(&mut rng, 3))
            .collect();
        let scheme = GenerationWeightScheme::ExponentialDecay { rate: 0.5 };
        let v = generation_weights(&scheme, n_students - 1).unwrap();
        let pooled: Vec<(f64, &Distribution)> = std::iter::once((alpha, &teachers[0]))
            .chain(v.iter().map(|w| (1.0 - alpha) * w).zip(&students))
            .collect();

        for kind in [OperatorKind::MProjection, OperatorKind::IProjection] {
            let op = OperatorConfig::new(kind, alpha).with_scheme(scheme.clone());
            let q =
                build_meta_teacher(&op, alpha, &teachers, &students).map_err(|e| e.to_string())?;
            let (ours, grid) = if kind == OperatorKind::MProjection {
                // Σ π_k KL(P_k ‖ r) = Σ π_k Σ P ln P − Σ_i m_i ln r_i
                let constant: f64 = pooled
                    .iter()
                    .map(|(w, p)| w * p.probs().iter().map(|x| x * x.ln()).sum::<f64>())
                    .sum();
                let mut m = [0.0; 3];
                for (w, p) in &pooled {
                    for (mi, pi) in m.iter_mut().zip(p.probs()) {
                        *mi += w * pi;
                    }
                }
                let ours: f64 = pooled.iter().map(|(w, p)| w * kl(p, &q).unwrap()).sum();
                (ours, constant + grid_min([-m[0], -m[1], -m[2]], 0.0))
            } else {
                // Σ π_k KL(r ‖ P_k) = Σ r ln r − Σ_i r_i Σ π_k ln P_k(i)
                let mut l = [0.0; 3];
                for (w, p) in &pooled {
                    for (li, pi) in l.iter_mut().zip(p.probs()) {
                        *li -= w * pi.ln();
                    }
                }
                let ours: f64 = pooled.iter().map(|(w, p)| w * kl(&q, p).unwrap()).sum();
                (ours, grid_min(l, 1.0))
            };
            let gap = ours - grid;
            max_gap = max_gap.max(gap.abs());
            max_signed = max_signed.max(gap);
            if gap.abs() > 1e-6 {
                outside.push(format!("{inst}/{kind:?} {gap:.2e}"));
            }
        }
    }
    let summary = format!(
        "200 projections (100 instances x M/I), max |ours - grid| {max_gap:.2e}, max (ours - grid) {max_signed:.2e}"
    );
    ensure(outside.is_empty(), || {
        format!(
            "{summary}; {} outside 1e-6, all with ours below the grid minimum: [{}]",
            outside.len(),
            outside.join(", ")
        )
    })?;
    Ok(summary)
}

// 9 -------------------------------------------------------------------------

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut noisy = ScenarioFile::from(&appendix_a_anchored());
    noisy.label = Some("seeded tilt".into());
    noisy.vocab_size = 3;
    noisy.noise = NoiseModel::GeometricTilt { target_kl: 0.01 };
    let mut seeded_distractor = noisy.clone();
    seeded_distractor.noise = NoiseModel::ArithmeticDistractor {
        delta: 0.1,
        distractor: Distractor::seeded(),
    };
    let files = [
        write_file(
            dir.path(),
            "anchored.json",
            metadistill::io::APPENDIX_A_ANCHORED,
        ),
        write_file(dir.path(), "drift.json", metadistill::io::APPENDIX_A_DRIFT),
        write_file(dir.path(), "tilt.json", &to_json_string(&noisy).unwrap()),
        write_file(
            dir.path(),
            "distractor.json",
            &to_json_string(&seeded_distractor).unwrap(),
        ),
    ];
    let mut compared = 0;
    for file in &files {
        for format in ["csv", "json"] {
            let mut outputs = Vec::new();
            for rep in 0..2 {
                let out_dir = dir.path().join(format!("out{rep}"));
                let out = Command::new(bin())
                    .args([
                        "run",
                        file.to_str().unwrap(),
                        "--format",
                        format,
                        "--seed",
                        "42",
                        "--out",
                    ])
                    .arg(&out_dir)
                    .output()
                    .map_err(|e| e.to_string())?;
                ensure(out.status.success(), || {
                    format!("{}: exit {}", file.display(), out.status)
                })?;
                let stem = file.file_stem().unwrap().to_str().unwrap();
                outputs.push(
                    std::fs::read(out_dir.join(format!("{stem}.{format}")))
                        .map_err(|e| e.to_string())?,
                );
            }
            ensure(outputs[0] == outputs[1], || {
                format!("{} {format}: outputs differ", file.display())
            })?;
            compared += 1;
        }
    }
    Ok(format!(
        "{compared} file pairs byte-identical across repeated runs with --seed 42"
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("anchored three-token reproduction", anchored_reproduction),
        ("unanchored drift reproduction", drift_reproduction),
        ("mixture contraction, all divergences", contraction_suite),
        ("noise neighborhood", noise_neighborhood),
        ("axiom conformance", axiom_conformance),
        ("fixed point and basin", fixed_point_and_basin),
        ("rate monotonicity in alpha", rate_monotonicity),
        ("projection grid oracle", projection_oracle),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}) [{secs:.2}s]: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {} ({name}) [{secs:.2}s]: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
