//! Declarative experiment runner and figure datasets.
//!
//! An experiment file (see [`config`]) names a model bank, an error budget,
//! procedures with their threshold sources and the truth configurations to
//! evaluate. Validation happens up front in [`Experiment::new`]; thresholds
//! are then resolved (closed form, calibration, or explicit) and every
//! procedure is simulated on the evaluation random streams.

pub mod config;
pub mod figures;

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::calibration::{
    analytic_thresholds, budget_targets, calibrate_bisection, default_reduction, min_fixed_n, truth_configurations,
    CalibrationOptions, CalibrationReport, Estimate, Family, Reduction, SampleSize, Thresholds, WorstCase,
    ABORT_TOLERANCE,
};
use crate::engine::{simulate_trial, sweep_fixed, sweep_sequential, Counters, Metric, RunPlan, Scenario};
use crate::error::{Error, Result};
use crate::models::{StreamModel, TruthAssignment};
use crate::procedures::{default_horizon_cap, Decision, ProcedureSpec, Rule, Shape};
use crate::rng::{TrialKey, DOMAIN_EVALUATION};
use crate::theory::{
    b_of_k, big_l, chernoff_info, d_a_k, fixed_sample_ratios, solve_h_d, ErrorBudget, FixedSampleRatios,
    InformationProfile,
};

pub use config::ExperimentSpec;
use config::{DriftSource, ProcedureConfig, SampleSource, ThresholdSource, TruthsConfig};

/// Largest sample size searched for a calibrated fixed-sample rule.
pub const MAX_FIXED_N: u64 = 10_000_000;

/// A procedure with its shape fixed but thresholds not yet resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum ProcedurePlan {
    Sequential {
        label: String,
        shape: Shape,
        /// Leap on adaptive statistics.
        star: bool,
        ratio: f64,
        source: ThresholdSource,
    },
    Fixed {
        label: String,
        h: Vec<f64>,
        source: SampleSource,
    },
}

impl ProcedurePlan {
    pub fn label(&self) -> &str {
        match self {
            ProcedurePlan::Sequential { label, .. } | ProcedurePlan::Fixed { label, .. } => label,
        }
    }
}

/// Concrete rule for a shape on a bank.
pub fn rule_for(shape: Shape, star: bool, t: Thresholds) -> Rule {
    match (shape, star) {
        (Shape::Leap { k1, k2 }, true) => Rule::LeapStar { k1, k2, a: t.a, b: t.b },
        _ => shape.with_thresholds(t.ratio(), t.b),
    }
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub config_hash: String,
    pub models: Vec<StreamModel>,
    pub budget: ErrorBudget,
    pub metric: Metric,
    pub targets: Vec<f64>,
    pub truths: Vec<TruthAssignment>,
    pub procedures: Vec<ProcedurePlan>,
}

impl Experiment {
    /// Checks the whole file before any simulation.
    pub fn new(spec: ExperimentSpec) -> Result<Self> {
        let models = spec.models()?;
        let j = models.len();
        let composite = models.iter().filter(|m| m.is_composite()).count();
        if composite != 0 && composite != j {
            return Err(Error::Config("a bank must be all simple or all composite".into()));
        }
        let composite = composite != 0;
        if spec.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if spec.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if spec.horizon_cap == Some(0) || spec.calibration_trials == Some(0) {
            return Err(Error::Config("horizon_cap and calibration_trials must be >= 1".into()));
        }
        let budget = spec.budget.budget();
        budget.validate(j).map_err(|e| Error::Config(e.to_string()))?;
        let (metric, targets) = budget_targets(&budget);
        if spec.procedures.is_empty() {
            return Err(Error::Config("no procedures".into()));
        }
        let procedures = spec
            .procedures
            .iter()
            .enumerate()
            .map(|(i, p)| {
                plan_procedure(p, &models, &budget, composite)
                    .map_err(|e| Error::Config(format!("procedures[{i}]: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let truths = match &spec.truths {
            TruthsConfig::BoundarySweep => {
                let red = spec.reduction.fixed().unwrap_or(Reduction::Blocks);
                truth_configurations(&models, None, red)?
            }
            TruthsConfig::Explicit(list) => {
                if list.is_empty() {
                    return Err(Error::Config("no truth configurations".into()));
                }
                list.iter()
                    .enumerate()
                    .map(|(i, t)| build_truth(&models, t).map_err(|e| Error::Config(format!("truths[{i}]: {e}"))))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let config_hash = spec.config_hash()?;
        Ok(Self {
            spec,
            config_hash,
            models,
            budget,
            metric,
            targets,
            truths,
            procedures,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::new(ExperimentSpec::from_path(path)?)
    }

    fn options(&self, cell: u64) -> CalibrationOptions {
        let mut o = CalibrationOptions::new(self.spec.calibration_trials.unwrap_or(self.spec.trials), self.spec.seed);
        o.cell = cell;
        o.workers = self.spec.workers;
        o.rule = self.spec.calibration_rule.into();
        o.horizon_cap = self.spec.horizon_cap;
        o
    }

    fn reduction(&self, family: &Family) -> Reduction {
        self.spec
            .reduction
            .fixed()
            .unwrap_or_else(|| default_reduction(&self.models, family, self.metric))
    }

    /// Calibration of procedure `i`, whatever its threshold source.
    pub fn calibrate(&self, i: usize) -> Result<CalibrationReport> {
        let p = self
            .procedures
            .get(i)
            .ok_or_else(|| Error::OutOfRange(format!("procedure {i}")))?;
        let opts = self.options(i as u64);
        match p {
            ProcedurePlan::Sequential { shape, ratio, .. } => {
                let family = Family::Sequential {
                    shape: *shape,
                    ratio: *ratio,
                };
                let configs = truth_configurations(&self.models, None, self.reduction(&family))?;
                let sc = Scenario {
                    models: &self.models,
                    configs: &configs,
                };
                let start = analytic_thresholds(*shape, &self.budget, self.models.len())
                    .map(|t| t.b)
                    .unwrap_or(5.0);
                calibrate_bisection(&sc, *shape, *ratio, self.metric, &self.targets, start, &opts)
            }
            ProcedurePlan::Fixed { h, .. } => {
                let family = Family::FixedSample { h: h.clone() };
                let configs = truth_configurations(&self.models, Some(h), self.reduction(&family))?;
                let sc = Scenario {
                    models: &self.models,
                    configs: &configs,
                };
                let max_n = self.spec.horizon_cap.unwrap_or(MAX_FIXED_N);
                min_fixed_n(&sc, h, self.metric, &self.targets, max_n, &opts)
            }
        }
    }

    /// Concrete rule of procedure `i`, calibrating when asked to.
    pub fn resolve(&self, i: usize) -> Result<ResolvedProcedure> {
        let p = &self.procedures[i];
        let (rule, calibration) = match p {
            ProcedurePlan::Sequential {
                shape, star, source, ..
            } => match source {
                ThresholdSource::Analytic => {
                    let t = analytic_thresholds(*shape, &self.budget, self.models.len())?;
                    (rule_for(*shape, *star, t), None)
                }
                ThresholdSource::Explicit { a, b } => (rule_for(*shape, *star, Thresholds { a: *a, b: *b }), None),
                ThresholdSource::Calibrated => {
                    let r = self.calibrate(i)?;
                    let t = r.thresholds.expect("sequential calibration yields thresholds");
                    (rule_for(*shape, *star, t), Some(r))
                }
            },
            ProcedurePlan::Fixed { h, source, .. } => match source {
                SampleSource::Explicit(n) => (Rule::Mnp { n: *n, h: h.clone() }, None),
                SampleSource::Calibrated => {
                    let r = self.calibrate(i)?;
                    let n = r.sample_size.expect("fixed calibration yields a sample size");
                    (Rule::Mnp { n, h: h.clone() }, Some(r))
                }
            },
        };
        rule.validate(self.models.len())?;
        let horizon_cap = match (&rule, self.spec.horizon_cap) {
            (Rule::Mnp { n, .. }, _) => *n,
            (_, Some(c)) => c,
            _ => default_horizon_cap(&rule, &self.models)?,
        };
        Ok(ResolvedProcedure {
            label: p.label().to_string(),
            spec: ProcedureSpec::new(rule, self.models.len(), horizon_cap)?,
            calibration,
        })
    }

    /// Initial-sample size added to the reported ESS of sequential rules.
    pub fn ess_offset(&self, rule: &Rule) -> u64 {
        if matches!(rule, Rule::Mnp { .. }) {
            0
        } else {
            self.models
                .iter()
                .map(|m| m.initial_samples() as u64)
                .max()
                .unwrap_or(0)
        }
    }
}

fn plan_procedure(
    p: &ProcedureConfig,
    models: &[StreamModel],
    budget: &ErrorBudget,
    composite: bool,
) -> Result<ProcedurePlan> {
    let j = models.len();
    let label = p.label.clone().unwrap_or_else(|| p.rule.clone());
    let (bk, bk1, bk2) = match *budget {
        ErrorBudget::Gmis { k, .. } => (Some(k), None, None),
        ErrorBudget::Gfwer { k1, k2, .. } => (None, Some(k1), Some(k2)),
    };
    let need = |v: Option<usize>, d: Option<usize>, name: &str| {
        v.or(d)
            .ok_or_else(|| Error::Config(format!("`{}` needs `{name}`", p.rule)))
    };
    let unused = |name: &str, present: bool| -> Result<()> {
        if present {
            Err(Error::Config(format!("`{name}` does not apply to `{}`", p.rule)))
        } else {
            Ok(())
        }
    };
    let (shape, star) = match p.rule.as_str() {
        "sum_intersection" => (Shape::SumIntersection { k: need(p.k, bk, "k")? }, false),
        "intersection" => (Shape::Intersection, false),
        "asym_sum_intersection" => (
            Shape::AsymSumIntersection { k1: need(p.k1, bk1, "k1")?, k2: need(p.k2, bk2, "k2")? },
            false,
        ),
        "leap" | "leap_star" => {
            let star = p.rule == "leap_star";
            if star != composite {
                return Err(Error::Config(if star {
                    "`leap_star` needs a composite bank".into()
                } else {
                    "composite banks use `leap_star`".into()
                }));
            }
            (Shape::Leap { k1: need(p.k1, bk1, "k1")?, k2: need(p.k2, bk2, "k2")? }, star)
        }
        "mnp" => {
            unused("thresholds", p.thresholds.is_some())?;
            unused("ratio", p.ratio.is_some())?;
            unused("k", p.k.is_some())?;
            unused("k1", p.k1.is_some() || p.k2.is_some())?;
            let h = match p.h.clone().unwrap_or(if composite { DriftSource::HalfMu } else { DriftSource::Zero }) {
                DriftSource::Zero => vec![0.0; j],
                DriftSource::Explicit(h) => h,
                DriftSource::HalfMu => models
                    .iter()
                    .map(|m| match m {
                        StreamModel::CompositeGaussianMean { mu, .. } => Ok(mu / 2.0),
                        _ => Err(Error::Config("`half_mu` needs a composite bank".into())),
                    })
                    .collect::<Result<_>>()?,
                DriftSource::HD => {
                    let ErrorBudget::Gfwer { alpha, beta, .. } = *budget else {
                        return Err(Error::Config("`h_d` needs a GFWER budget".into()));
                    };
                    if composite || models.windows(2).any(|w| w[0] != w[1]) {
                        return Err(Error::Config("`h_d` needs a homogeneous simple bank".into()));
                    }
                    let (h, _) = solve_h_d(&models[0], alpha.ln() / beta.ln())?;
                    vec![h; j]
                }
            };
            let source = p.n.clone().unwrap_or(SampleSource::Calibrated);
            if source == SampleSource::Explicit(0) {
                return Err(Error::Config("MNP sample size must be >= 1".into()));
            }
            Rule::Mnp { n: 1, h: h.clone() }.validate(j)?;
            return Ok(ProcedurePlan::Fixed { label, h, source });
        }
        other => {
            return Err(Error::Config(format!(
                "unknown rule `{other}` (expected sum_intersection, intersection, asym_sum_intersection, leap, mnp, leap_star)"
            )))
        }
    };
    unused("n", p.n.is_some())?;
    unused("h", p.h.is_some())?;
    if !matches!(p.rule.as_str(), "sum_intersection") {
        unused("k", p.k.is_some())?;
    }
    if matches!(p.rule.as_str(), "sum_intersection" | "intersection") {
        unused("k1", p.k1.is_some() || p.k2.is_some())?;
    }
    let source = p.thresholds.clone().unwrap_or(ThresholdSource::Calibrated);
    let analytic = analytic_thresholds(shape, budget, j).ok();
    if source == ThresholdSource::Analytic && analytic.is_none() {
        return Err(Error::Config(format!(
            "no closed-form thresholds for `{}` under this budget",
            p.rule
        )));
    }
    let ratio = match (p.ratio, &source) {
        (Some(_), ThresholdSource::Explicit { .. }) => {
            return Err(Error::Config("`ratio` conflicts with explicit thresholds".into()))
        }
        (Some(r), _) => r.0,
        (None, ThresholdSource::Explicit { a, b }) => a / b,
        (None, _) => analytic.map_or(1.0, |t| t.ratio()),
    };
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::Config(format!("ratio must be > 0, got {ratio}")));
    }
    if let ThresholdSource::Explicit { a, b } = source {
        shape.with_thresholds(a / b, b).validate(j)?;
    } else {
        shape.with_thresholds(ratio, 1.0).validate(j)?;
    }
    Ok(ProcedurePlan::Sequential {
        label,
        shape,
        star,
        ratio,
        source,
    })
}

fn build_truth(models: &[StreamModel], t: &config::TruthConfig) -> Result<TruthAssignment> {
    let j = models.len();
    match (&t.signals, &t.thetas) {
        (Some(s), None) => {
            let mut idx = Vec::with_capacity(s.len());
            for &x in s {
                if x == 0 || x > j {
                    return Err(Error::Config(format!("signal {x} outside 1..={j}")));
                }
                idx.push(x - 1);
            }
            if models.iter().any(|m| m.is_composite()) {
                let mask: Vec<bool> = (0..j).map(|i| idx.contains(&i)).collect();
                TruthAssignment::boundary(models, &mask)
            } else {
                TruthAssignment::simple(models, &idx)
            }
        }
        (None, Some(th)) => {
            let th: Vec<f64> = th.iter().map(|n| n.0).collect();
            TruthAssignment::with_parameters(models, &th)
        }
        _ => Err(Error::Config("give exactly one of `signals` or `thetas`".into())),
    }
}

/// A procedure with concrete thresholds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedProcedure {
    pub label: String,
    pub spec: ProcedureSpec,
    pub calibration: Option<CalibrationReport>,
}

/// Aggregates for one (procedure, truth) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    /// Signal streams, 1-based.
    pub signals: Vec<usize>,
    /// Composite banks: the simulated means.
    pub thetas: Option<Vec<f64>>,
    pub trials: u64,
    pub stopped: u64,
    pub aborted: u64,
    /// Trials with an error, per metric slot.
    pub error_counts: Vec<u64>,
    pub errors: Vec<Estimate>,
    pub sum_t: u64,
    pub sum_t_squared: u128,
    /// Added to every stopping time in `ess` (initial samples).
    pub ess_offset: u64,
    /// `None` when the abort rate exceeds the tolerance.
    pub ess: Option<f64>,
    pub ess_ci_halfwidth: Option<f64>,
}

impl CellResult {
    fn new(truth: &TruthAssignment, c: &Counters, slots: usize, offset: u64) -> Self {
        let thetas = truth
            .truths()
            .iter()
            .map(|t| match t {
                crate::models::StreamTruth::Parameter(x) => Some(*x),
                _ => None,
            })
            .collect::<Option<Vec<f64>>>();
        let ok = (c.aborted as f64) <= ABORT_TOLERANCE * c.trials as f64;
        let s = SampleSize::from_counters(c);
        Self {
            signals: truth.signal_set().iter().map(|j| j + 1).collect(),
            thetas,
            trials: c.trials,
            stopped: c.trials - c.aborted,
            aborted: c.aborted,
            error_counts: c.errors[..slots].to_vec(),
            errors: c.errors[..slots]
                .iter()
                .map(|&e| Estimate::wilson(e, c.trials))
                .collect(),
            sum_t: c.sum_t,
            sum_t_squared: c.sum_t2,
            ess_offset: offset,
            ess: ok.then_some(s.mean + offset as f64),
            ess_ci_halfwidth: ok.then_some(s.half_width),
        }
    }

    pub fn abort_rate(&self) -> f64 {
        self.aborted as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcedureResult {
    pub label: String,
    pub rule: Rule,
    pub horizon_cap: u64,
    pub threshold_source: String,
    pub calibration: Option<CalibrationReport>,
    pub cells: Vec<CellResult>,
    /// Worst case over the simulated truths.
    pub worst_case: WorstCase,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub config_hash: String,
    pub seed: u64,
    pub trials: u64,
    #[serde(rename = "J")]
    pub j: usize,
    pub budget: ErrorBudget,
    pub metric: Metric,
    pub procedures: Vec<ProcedureResult>,
    /// Some cell stopped more than the tolerated share of trials at the cap.
    pub abort_breach: bool,
}

fn source_label(p: &ProcedurePlan) -> String {
    match p {
        ProcedurePlan::Sequential { source, .. } => match source {
            ThresholdSource::Analytic => "analytic",
            ThresholdSource::Calibrated => "calibrated",
            ThresholdSource::Explicit { .. } => "explicit",
        },
        ProcedurePlan::Fixed { source, .. } => match source {
            SampleSource::Calibrated => "calibrated",
            SampleSource::Explicit(_) => "explicit",
        },
    }
    .to_string()
}

/// Evaluation plan shared by every procedure: same seed, same streams.
fn evaluation_plan(exp: &Experiment, cap: u64, record_times: bool) -> RunPlan {
    RunPlan {
        trials: exp.spec.trials,
        seed: exp.spec.seed,
        domain: DOMAIN_EVALUATION,
        cell: 0,
        horizon_cap: cap,
        workers: exp.spec.workers,
        record_times,
    }
}

/// Simulates a resolved procedure on the experiment's truths.
pub fn evaluate(exp: &Experiment, rp: &ResolvedProcedure) -> Result<Vec<Counters>> {
    let sc = Scenario {
        models: &exp.models,
        configs: &exp.truths,
    };
    let grid = match &rp.spec.rule {
        Rule::Mnp { n, h } => sweep_fixed(&sc, h, &[*n], exp.metric, &evaluation_plan(exp, *n, false))?,
        rule => {
            let shape = rule.shape().expect("sequential rule");
            let (a, b) = rule.thresholds().expect("sequential rule");
            let plan = evaluation_plan(exp, rp.spec.horizon_cap, false);
            sweep_sequential(&sc, shape, a / b, &[b], exp.metric, &plan)?
        }
    };
    Ok(grid.into_iter().map(|mut row| row.remove(0)).collect())
}

/// Runs every procedure of the experiment.
pub fn run_experiment(exp: &Experiment) -> Result<RunResult> {
    let mut procedures = Vec::with_capacity(exp.procedures.len());
    let mut breach = false;
    for (i, plan) in exp.procedures.iter().enumerate() {
        let rp = exp.resolve(i)?;
        let counters = evaluate(exp, &rp)?;
        let offset = exp.ess_offset(&rp.spec.rule);
        let cells: Vec<CellResult> = exp
            .truths
            .iter()
            .zip(&counters)
            .map(|(t, c)| CellResult::new(t, c, exp.metric.slots(), offset))
            .collect();
        breach |= cells.iter().any(|c| c.abort_rate() > ABORT_TOLERANCE);
        let grid: Vec<Vec<Counters>> = counters.into_iter().map(|c| vec![c]).collect();
        procedures.push(ProcedureResult {
            label: rp.label,
            rule: rp.spec.rule,
            horizon_cap: rp.spec.horizon_cap,
            threshold_source: source_label(plan),
            calibration: rp.calibration,
            cells,
            worst_case: crate::calibration::worst_case(&grid, 0, exp.metric),
        });
    }
    Ok(RunResult {
        config_hash: exp.config_hash.clone(),
        seed: exp.spec.seed,
        trials: exp.spec.trials,
        j: exp.models.len(),
        budget: exp.budget,
        metric: exp.metric,
        procedures,
        abort_breach: breach,
    })
}

/// One evaluation trial of a resolved procedure: the path that
/// [`run_experiment`] simulates for trial `trial` under truth `truth`.
pub fn run_trial(exp: &Experiment, rp: &ResolvedProcedure, truth: usize, trial: u64) -> Result<Decision> {
    let t = exp
        .truths
        .get(truth)
        .ok_or_else(|| Error::OutOfRange(format!("truth {truth}")))?;
    let key = TrialKey::new(exp.spec.seed, DOMAIN_EVALUATION, 0, trial);
    simulate_trial(&exp.models, t, &rp.spec, &key)
}

/// CSV form of a run: one row per (procedure, truth).
pub fn run_csv(r: &RunResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# config_hash={}", r.config_hash);
    let _ = writeln!(s, "# seed={}", r.seed);
    s.push_str("procedure,truth,trials,stopped,aborted,errors_0,errors_1,sum_t,ess,ess_ci_halfwidth\n");
    for p in &r.procedures {
        for c in &p.cells {
            let truth = match &c.thetas {
                Some(th) => th.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "),
                None => c.signals.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "),
            };
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                p.label,
                truth,
                c.trials,
                c.stopped,
                c.aborted,
                c.error_counts[0],
                c.error_counts.get(1).map_or(String::new(), |x| x.to_string()),
                c.sum_t,
                opt(c.ess),
                opt(c.ess_ci_halfwidth),
            );
        }
    }
    s
}

/// Calibration reports for every procedure, with reproducibility fields.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSet {
    pub config_hash: String,
    pub seed: u64,
    pub reports: Vec<LabeledCalibration>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledCalibration {
    pub label: String,
    pub report: CalibrationReport,
}

pub fn calibrate_experiment(exp: &Experiment) -> Result<CalibrationSet> {
    let reports = (0..exp.procedures.len())
        .map(|i| {
            Ok(LabeledCalibration {
                label: exp.procedures[i].label().to_string(),
                report: exp.calibrate(i)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibrationSet {
        config_hash: exp.config_hash.clone(),
        seed: exp.spec.seed,
        reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthBounds {
    pub signals: Vec<usize>,
    #[serde(rename = "D_A_k")]
    pub d_a_k: Option<f64>,
    #[serde(rename = "L_A")]
    pub l_a: Option<f64>,
    pub ratios: Option<FixedSampleRatios>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HdReport {
    pub d: f64,
    pub h: f64,
    pub phi: f64,
}

/// First-order constants of an experiment's bank and budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub config_hash: String,
    pub seed: u64,
    pub budget: ErrorBudget,
    pub chernoff_per_stream: Vec<f64>,
    #[serde(rename = "B_k")]
    pub b_k: Option<f64>,
    pub h_d: Option<HdReport>,
    pub truths: Vec<TruthBounds>,
}

pub fn bounds_report(exp: &Experiment) -> Result<BoundsReport> {
    if let Some(j) = exp.models.iter().position(|m| m.is_composite()) {
        return Err(Error::CompositeStream(j));
    }
    let profile = InformationProfile::from_models(&exp.models)?;
    let chernoff = exp.models.iter().map(chernoff_info).collect::<Result<Vec<_>>>()?;
    let (b_k, h_d) = match exp.budget {
        ErrorBudget::Gmis { k, .. } => (Some(b_of_k(&profile, k)?), None),
        ErrorBudget::Gfwer { alpha, beta, .. } => {
            let homogeneous = exp.models.windows(2).all(|w| w[0] == w[1]);
            let hd = if homogeneous {
                let d = alpha.ln() / beta.ln();
                let (h, phi) = solve_h_d(&exp.models[0], d)?;
                Some(HdReport { d, h, phi })
            } else {
                None
            };
            (None, hd)
        }
    };
    let truths = exp
        .truths
        .iter()
        .map(|t| {
            let a = t.signal_mask();
            let (d, l) = match exp.budget {
                ErrorBudget::Gmis { k, .. } => (Some(d_a_k(&profile, a, k)?), None),
                ErrorBudget::Gfwer { .. } => (None, Some(big_l(&profile, a, &exp.budget)?)),
            };
            Ok(TruthBounds {
                signals: t.signal_set().iter().map(|j| j + 1).collect(),
                d_a_k: d,
                l_a: l,
                ratios: fixed_sample_ratios(&exp.models, a, &exp.budget).ok(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundsReport {
        config_hash: exp.config_hash.clone(),
        seed: exp.spec.seed,
        budget: exp.budget,
        chernoff_per_stream: chernoff,
        b_k,
        h_d,
        truths,
    })
}
