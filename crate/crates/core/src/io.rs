//! Scenario files and trace output.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which reads back
//! bit-for-bit. Output uses LF line endings only.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::diagnostics::ConvergenceSummary;
use crate::divergence::DivergenceKind;
use crate::engine::{GenerationTrace, Scenario, StopCriteria};
use crate::error::{Error, Result};
use crate::noise::{Distractor, NoiseModel};
use crate::operators::{OperatorConfig, OperatorKind};
use crate::schedule::ScheduleConfig;
use crate::simplex::{ConditionalModel, Distribution};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const APPENDIX_A_ANCHORED: &str = include_str!("../scenarios/appendix_a_anchored.json");
pub const APPENDIX_A_DRIFT: &str = include_str!("../scenarios/appendix_a_drift.json");

/// The three-token anchored example: α = 0.3, ten generations, no noise.
pub fn appendix_a_anchored() -> Scenario {
    parse_scenario(APPENDIX_A_ANCHORED).expect("bundled scenario is valid")
}

/// The same start with α = 0 and a drift of 0.05 nats per generation.
pub fn appendix_a_drift() -> Scenario {
    parse_scenario(APPENDIX_A_DRIFT).expect("bundled scenario is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextEntry {
    pub weight: f64,
    pub teacher: Vec<f64>,
    pub student0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopFile {
    #[serde(default)]
    pub improvement_tol: f64,
    /// Defaults to the scenario's `max_generations`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_generations: Option<usize>,
}

/// On-disk form of a [`Scenario`]. Distributions are plain arrays here and
/// are checked by [`ScenarioFile::into_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub vocab_size: usize,
    pub contexts: Vec<ContextEntry>,
    /// One entry per extra teacher, each a list of per-context distributions.
    #[serde(default)]
    pub extra_teachers: Vec<Vec<Vec<f64>>>,
    pub operator: OperatorConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub divergence: DivergenceKind,
    pub max_generations: usize,
    #[serde(default)]
    pub stop: StopFile,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub unanchored: bool,
}

fn at<T>(path: impl Into<String>, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::validation(path, e))
}

fn dist_at(path: String, raw: &[f64], vocab_size: usize) -> Result<Distribution> {
    if raw.len() != vocab_size {
        return Err(Error::validation(
            path,
            format!("expected {vocab_size} entries, found {}", raw.len()),
        ));
    }
    at(path, Distribution::new(raw.to_vec()))
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario> {
        let v = self.vocab_size;
        if v < 2 {
            return Err(Error::validation("vocab_size", "must be at least 2"));
        }
        if self.contexts.is_empty() {
            return Err(Error::validation("contexts", "needs at least one context"));
        }
        let mut teacher = Vec::new();
        let mut student0 = Vec::new();
        for (i, c) in self.contexts.iter().enumerate() {
            teacher.push((
                c.weight,
                dist_at(format!("contexts[{i}].teacher"), &c.teacher, v)?,
            ));
            student0.push((
                c.weight,
                dist_at(format!("contexts[{i}].student0"), &c.student0, v)?,
            ));
        }
        let teacher = at("contexts", ConditionalModel::new(teacher))?;
        let student0 = at("contexts", ConditionalModel::new(student0))?;

        let mut extra_teachers = Vec::new();
        for (k, per_context) in self.extra_teachers.iter().enumerate() {
            if per_context.len() != self.contexts.len() {
                return Err(Error::validation(
                    format!("extra_teachers[{k}]"),
                    format!(
                        "expected {} contexts, found {}",
                        self.contexts.len(),
                        per_context.len()
                    ),
                ));
            }
            let dists = per_context
                .iter()
                .enumerate()
                .map(|(i, raw)| dist_at(format!("extra_teachers[{k}][{i}]"), raw, v))
                .collect::<Result<Vec<_>>>()?;
            extra_teachers.push(at(
                format!("extra_teachers[{k}]"),
                teacher.with_dists(dists),
            )?);
        }

        let mut operator = self.operator;
        if operator.alpha == 0.0 && !(self.unanchored || operator.unanchored) {
            return Err(Error::UnanchoredWithoutFlag);
        }
        operator.unanchored |= self.unanchored;
        at("operator", operator.validate())?;
        if operator.kind != OperatorKind::ConvexMixture
            && operator.teacher_weights.len() != 1 + extra_teachers.len()
        {
            return Err(Error::validation(
                "operator.teacher_weights",
                format!(
                    "{} weights for {} teachers",
                    operator.teacher_weights.len(),
                    1 + extra_teachers.len()
                ),
            ));
        }
        at("schedule", self.schedule.validate())?;
        at("noise", self.noise.validate())?;
        if let NoiseModel::ArithmeticDistractor {
            distractor: Distractor::Explicit(u),
            ..
        }
        | NoiseModel::CalibratedDrift {
            distractor: Distractor::Explicit(u),
            ..
        } = &self.noise
        {
            if u.len() != v {
                return Err(Error::validation(
                    "noise.distractor",
                    format!("expected {v} entries, found {}", u.len()),
                ));
            }
        }
        if self.max_generations == 0 {
            return Err(Error::validation("max_generations", "must be at least 1"));
        }
        if !(self.stop.improvement_tol.is_finite() && self.stop.improvement_tol >= 0.0) {
            return Err(Error::validation(
                "stop.improvement_tol",
                "must be a finite non-negative number",
            ));
        }

        let scenario = Scenario {
            label: self.label,
            teacher,
            extra_teachers,
            student0,
            operator,
            schedule: self.schedule,
            noise: self.noise,
            divergence: self.divergence,
            max_generations: self.max_generations,
            stop: StopCriteria {
                improvement_tol: self.stop.improvement_tol,
                max_generations: self.stop.max_generations.unwrap_or(self.max_generations),
            },
            seed: self.seed,
        };
        at("scenario", scenario.validate())?;
        Ok(scenario)
    }
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        let contexts = s
            .teacher
            .contexts()
            .iter()
            .zip(s.student0.dists())
            .map(|((w, t), s0)| ContextEntry {
                weight: *w,
                teacher: t.probs().to_vec(),
                student0: s0.probs().to_vec(),
            })
            .collect();
        ScenarioFile {
            label: s.label.clone(),
            vocab_size: s.teacher.vocab_size(),
            contexts,
            extra_teachers: s
                .extra_teachers
                .iter()
                .map(|t| t.dists().map(|d| d.probs().to_vec()).collect())
                .collect(),
            operator: s.operator.clone(),
            schedule: s.schedule.clone(),
            noise: s.noise.clone(),
            divergence: s.divergence,
            max_generations: s.max_generations,
            stop: StopFile {
                improvement_tol: s.stop.improvement_tol,
                max_generations: Some(s.stop.max_generations),
            },
            seed: s.seed,
            unanchored: s.operator.unanchored,
        }
    }
}

fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_data() {
            // strip serde_json's own " at line L column C" suffix
            let msg = inner.to_string();
            let reason = match msg.rfind(" at line ") {
                Some(i) => msg[..i].to_string(),
                None => msg,
            };
            Error::Validation { path, reason }
        } else {
            Error::Parse {
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            }
        }
    })
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    from_json::<ScenarioFile>(text)?.into_scenario()
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

/// Pretty JSON with fixed-width float formatting.
struct FloatFormatter(PrettyFormatter<'static>);

impl Formatter for FloatFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serialises `value` as pretty JSON with 17-significant-digit floats and a
/// trailing newline.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, FloatFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn from_json_str<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    from_json(text)
}

/// Everything a `run` produces, as written to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDocument {
    pub tool_version: String,
    pub seed: u64,
    pub scenario: ScenarioFile,
    pub trace: GenerationTrace,
    pub diagnostics: Option<ConvergenceSummary>,
}

impl TraceDocument {
    pub fn new(
        scenario: &Scenario,
        trace: GenerationTrace,
        diagnostics: Option<ConvergenceSummary>,
    ) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            seed: scenario.seed,
            scenario: scenario.into(),
            trace,
            diagnostics,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    Csv,
    Json,
}

impl TraceFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TraceFormat::Csv => "csv",
            TraceFormat::Json => "json",
        }
    }
}

pub const CSV_HEADER: &str = "g,alpha_g,D_actual,D_bound,beta_hat,step_noise_kl,stop_reason";

fn csv_float(out: &mut String, value: Option<f64>) {
    if let Some(v) = value {
        let _ = write!(out, "{v:.16e}");
    }
}

pub fn trace_to_csv(trace: &GenerationTrace) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let last = trace.records.len().saturating_sub(1);
    for (i, r) in trace.records.iter().enumerate() {
        let _ = write!(out, "{},", r.g);
        csv_float(&mut out, r.alpha);
        out.push(',');
        csv_float(&mut out, Some(r.d_actual));
        out.push(',');
        csv_float(&mut out, Some(r.d_bound));
        out.push(',');
        csv_float(&mut out, r.beta_hat);
        out.push(',');
        csv_float(&mut out, r.step_noise_kl);
        out.push(',');
        if i == last {
            if let Some(reason) = trace.stop_reason {
                out.push_str(reason.as_str());
            }
        }
        out.push('\n');
    }
    out
}

/// Output bytes for one trace; deterministic for a fixed input.
pub fn render_trace(
    scenario: &Scenario,
    trace: &GenerationTrace,
    summary: Option<&ConvergenceSummary>,
    format: TraceFormat,
) -> Result<String> {
    match format {
        TraceFormat::Csv => Ok(trace_to_csv(trace)),
        TraceFormat::Json => to_json_string(&TraceDocument::new(
            scenario,
            trace.clone(),
            summary.cloned(),
        )),
    }
}

pub fn write_trace(
    scenario: &Scenario,
    trace: &GenerationTrace,
    summary: Option<&ConvergenceSummary>,
    format: TraceFormat,
    path: impl AsRef<Path>,
) -> Result<()> {
    std::fs::write(path, render_trace(scenario, trace, summary, format)?)?;
    Ok(())
}
