//! Anchored recursive distillation on the probability simplex.
//!
//! The crate models multi-generation distillation as repeated application of
//! a meta-teacher operator: each generation's student is fitted to a blend of
//! the base teacher(s) and earlier students. With a positive anchor weight α
//! the expected divergence from the base teacher contracts by at least `1−α`
//! per generation; without it, per-step fitting error accumulates.
//!
//! Modules, bottom-up:
//!
//! * [`simplex`], [`divergence`]: distributions and divergence measures.
//! * [`operators`], [`schedule`]: meta-teacher operators and α schedules.
//! * [`axioms`]: randomized conformance checks for operators.
//! * [`noise`], [`engine`]: the fit channel and the generation loop.
//! * [`diagnostics`]: rate fits, fixed-point and basin probes, ensemble spread.
//! * [`io`], [`plot`]: scenario files, trace files, SVG charts.

pub mod axioms;
pub mod diagnostics;
pub mod divergence;
pub mod engine;
pub mod error;
pub mod io;
pub mod noise;
pub mod operators;
pub mod plot;
pub mod sampling;
pub mod schedule;
pub mod simplex;

pub use axioms::{check_axioms, effective_anchor, AxiomReport, AxiomStatus};
pub use diagnostics::{
    basin_probe, ensemble_variance_report, fixed_point_residual, noisy_bound_report,
    stability_probe, summarize, sweep_alpha, Classification, ConvergenceSummary,
};
pub use divergence::{divergence, expected_divergence, kl, DivergenceKind};
pub use engine::{
    run, should_stop, step, GenerationRecord, GenerationTrace, Scenario, StopCriteria,
    StopDecision, StopReason,
};
pub use error::{Error, Result};
pub use io::{load_scenario, parse_scenario, write_trace, TraceDocument, TraceFormat};
pub use noise::{apply_noise, calibrate_tilt, tilt, Distractor, NoiseModel};
pub use operators::{
    build_meta_teacher, generation_weights, GenerationWeightScheme, OperatorConfig, OperatorKind,
};
pub use plot::render_plot;
pub use schedule::ScheduleConfig;
pub use simplex::{convex_combine, normalize, ConditionalModel, Distribution};
