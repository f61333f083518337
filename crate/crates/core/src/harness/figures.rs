//! Figure datasets.
//!
//! Each figure is a set of studies. A study fixes a bank and a budget family,
//! calibrates each series' rule at every point of the Err grid (worst case
//! over configurations, false-positive and false-negative slots alike) and
//! then measures the ESS under the series' evaluation truth. Histogram panels
//! record the stopping times at a single Err.
//!
//! | id    | setup |
//! |-------|-------|
//! | `5.1` | homogeneous Gaussian, `μ = 0.25`, GFWER `k1 = k2`; `J = 100` and `J = 20` |
//! | `5.2` | `J = 10`, `μ = 1/6` for streams 1–2 and `1/2` otherwise, `k1 = k2 = 2`, ESS under `{6..10}` |
//! | `A.1` | homogeneous Gaussian, `μ = 0.25`, GMIS; `J = 100` and `J = 20` |
//! | `A.2` | `J = 10`, `μ = 1/6` for stream 1 and `1/2` otherwise, GMIS `k = 2` |
//! | `E.4` | composite Gaussian, `J = 20`, `μ = 0.2`, `n0 = 10`, `k1 = k2 = 2` |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::calibration::{
    calibrate_bisection, default_reduction, min_fixed_n, truth_configurations, CalibrationOptions, Family, SampleSize,
    Thresholds,
};
use crate::engine::{sweep_fixed, sweep_sequential, Counters, Metric, RunPlan, Scenario};
use crate::error::{Error, Result};
use crate::harness::config::hash_json;
use crate::harness::MAX_FIXED_N;
use crate::models::{StreamModel, TruthAssignment};
use crate::procedures::{default_horizon_cap, Rule, Shape};
use crate::rng::DOMAIN_EVALUATION;

/// Figure ids in the catalog.
pub const FIGURES: [&str; 5] = ["5.1", "5.2", "A.1", "A.2", "E.4"];
/// Trials at scale 1.
pub const BASE_TRIALS: u64 = 20_000;
/// Err grid at scale 1.
pub const BASE_ERRS: [f64; 3] = [1e-1, 1e-2, 1e-3];

#[derive(Debug, Clone, PartialEq)]
pub struct FigureOptions {
    /// Multiplies the trial count.
    pub scale: f64,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    /// Overrides the Err grid of the ESS panels.
    pub errs: Option<Vec<f64>>,
}

impl FigureOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            scale: 1.0,
            seed: 1,
            workers: 1,
            out: out.into(),
            errs: None,
        }
    }

    pub fn trials(&self) -> u64 {
        ((BASE_TRIALS as f64 * self.scale).ceil() as u64).max(50)
    }

    /// Err grid: the requested one, else the default points with at least
    /// 20 expected errors at this trial count, else the largest default.
    /// Calibration itself raises its trial count to `30 / Err`.
    pub fn errs(&self) -> Vec<f64> {
        if let Some(e) = &self.errs {
            return e.clone();
        }
        let t = self.trials() as f64;
        let g: Vec<f64> = BASE_ERRS.iter().copied().filter(|e| e * t >= 20.0).collect();
        if g.is_empty() {
            vec![BASE_ERRS[0]]
        } else {
            g
        }
    }
}

/// One point of an ESS panel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesPoint {
    /// `|log10 Err|`.
    pub x: f64,
    pub series: String,
    pub y: f64,
    pub y_ci_halfwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    /// Inclusive.
    pub bin_low: u64,
    /// Exclusive.
    pub bin_high: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PanelData {
    Series {
        points: Vec<SeriesPoint>,
    },
    Histogram {
        series: String,
        err: f64,
        bins: Vec<HistogramBin>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Panel {
    pub name: String,
    pub title: String,
    pub data: PanelData,
}

/// Calibrated value behind one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationPoint {
    pub study: String,
    pub family: Family,
    pub err: f64,
    pub thresholds: Option<Thresholds>,
    pub sample_size: Option<u64>,
    /// Worst-case estimates per slot at the calibrated value.
    pub achieved: Vec<f64>,
    pub trials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureData {
    pub id: String,
    pub config_hash: String,
    pub seed: u64,
    pub trials: u64,
    pub errs: Vec<f64>,
    pub panels: Vec<Panel>,
    pub calibrations: Vec<CalibrationPoint>,
    /// Evaluations where more than 1% of trials hit the horizon cap.
    pub abort_warnings: Vec<String>,
}

/// Reproducibility key of a figure run; the worker count is not part of it.
#[derive(Serialize)]
struct Setup<'a> {
    id: &'a str,
    seed: u64,
    trials: u64,
    errs: &'a [f64],
}

#[derive(Debug, Clone)]
struct Series {
    label: String,
    family: Family,
    star: bool,
    /// Evaluation truth.
    truth: TruthAssignment,
}

#[derive(Debug, Clone)]
enum PanelSpec {
    Ess {
        name: &'static str,
        title: String,
        series: Vec<usize>,
        normalizer: Option<f64>,
    },
    Histogram {
        name: &'static str,
        title: String,
        series: usize,
        err: f64,
    },
}

struct Study {
    name: &'static str,
    models: Vec<StreamModel>,
    metric: Metric,
    series: Vec<Series>,
    panels: Vec<PanelSpec>,
}

fn gaussian(mu: f64, j: usize) -> Vec<StreamModel> {
    vec![StreamModel::gaussian(mu, 1.0).expect("valid model"); j]
}

fn first_signals(models: &[StreamModel], count: usize) -> TruthAssignment {
    let s: Vec<usize> = (0..count).collect();
    TruthAssignment::simple(models, &s).expect("valid truth")
}

fn seq(label: impl Into<String>, shape: Shape, truth: TruthAssignment) -> Series {
    Series {
        label: label.into(),
        family: Family::Sequential { shape, ratio: 1.0 },
        star: false,
        truth,
    }
}

fn fixed(label: impl Into<String>, h: Vec<f64>, truth: TruthAssignment) -> Series {
    Series {
        label: label.into(),
        family: Family::FixedSample { h },
        star: false,
        truth,
    }
}

fn gfwer_homogeneous(name: &'static str, j: usize) -> Study {
    let m = gaussian(0.25, j);
    let half = j / 2;
    let leap = |k: usize| Shape::Leap { k1: k, k2: k };
    let mut series = Vec::new();
    let mut panels = Vec::new();
    if j == 100 {
        let counts = [0usize, 10, 25, 50];
        for c in counts {
            series.push(seq(format!("leap_A{c}"), leap(4), first_signals(&m, c)));
        }
        panels.push(PanelSpec::Ess {
            name: "a",
            title: "Leap, k1 = 4, ESS by |A|".into(),
            series: (0..4).collect(),
            normalizer: None,
        });
        for k in [1usize, 2, 8] {
            series.push(seq(format!("leap_k{k}"), leap(k), first_signals(&m, half)));
        }
        panels.push(PanelSpec::Ess {
            name: "b",
            title: "Leap, |A| = 50, ESS by k1".into(),
            series: vec![4, 5, 3, 6],
            normalizer: None,
        });
        for (name, c) in [("c", 0usize), ("d", half)] {
            let base = series.len();
            series.push(seq(
                format!("intersection_A{c}"),
                Shape::Intersection,
                first_signals(&m, c),
            ));
            series.push(seq(
                format!("asym_sum_intersection_A{c}"),
                Shape::AsymSumIntersection { k1: 4, k2: 4 },
                first_signals(&m, c),
            ));
            series.push(fixed(format!("mnp_A{c}"), vec![0.0; j], first_signals(&m, c)));
            let leap_idx = if c == 0 { 0 } else { 3 };
            panels.push(PanelSpec::Ess {
                name,
                title: format!("k1 = 4, |A| = {c}, rules"),
                series: vec![leap_idx, base, base + 1, base + 2],
                normalizer: None,
            });
        }
        panels.push(PanelSpec::Histogram {
            name: "e",
            title: "Leap stopping times, k1 = 4, |A| = 0, Err = 5%".into(),
            series: 0,
            err: 0.05,
        });
        panels.push(PanelSpec::Histogram {
            name: "f",
            title: "Leap stopping times, k1 = 4, |A| = 50, Err = 5%".into(),
            series: 3,
            err: 0.05,
        });
    } else {
        let a = first_signals(&m, half);
        series.push(seq("leap", leap(2), a.clone()));
        series.push(seq("intersection", Shape::Intersection, a.clone()));
        series.push(seq(
            "asym_sum_intersection",
            Shape::AsymSumIntersection { k1: 2, k2: 2 },
            a.clone(),
        ));
        series.push(fixed("mnp", vec![0.0; j], a));
        panels.push(PanelSpec::Ess {
            name: "a",
            title: format!("k1 = 2, |A| = {half}, rules"),
            series: vec![0, 1, 2, 3],
            normalizer: None,
        });
        for (name, err) in [("b", 0.05), ("c", 0.01)] {
            panels.push(PanelSpec::Histogram {
                name,
                title: format!("Leap stopping times, k1 = 2, |A| = {half}, Err = {}%", err * 100.0),
                series: 0,
                err,
            });
        }
    }
    Study {
        name,
        models: m,
        // k varies per series; the metric is set per series below.
        metric: Metric::Gfwer { k1: 0, k2: 0 },
        series,
        panels,
    }
}

fn gmis_homogeneous(name: &'static str, j: usize) -> Study {
    let m = gaussian(0.25, j);
    let none = first_signals(&m, 0);
    let mut series = Vec::new();
    let mut panels = Vec::new();
    let k_main = if j == 100 { 4 } else { 2 };
    if j == 100 {
        for k in [1usize, 2, 4, 8] {
            series.push(seq(
                format!("sum_intersection_k{k}"),
                Shape::SumIntersection { k },
                none.clone(),
            ));
        }
        panels.push(PanelSpec::Ess {
            name: "a",
            title: "Sum-Intersection, ESS by k".into(),
            series: (0..4).collect(),
            normalizer: None,
        });
    } else {
        series.push(seq("sum_intersection", Shape::SumIntersection { k: 2 }, none.clone()));
    }
    let main = if j == 100 { 2 } else { 0 };
    let base = series.len();
    series.push(seq("intersection", Shape::Intersection, none.clone()));
    series.push(fixed("mnp", vec![0.0; j], none));
    panels.push(PanelSpec::Ess {
        name: if j == 100 { "b" } else { "a" },
        title: format!("k = {k_main}, rules"),
        series: vec![main, base, base + 1],
        normalizer: None,
    });
    let hist: &[(&'static str, f64)] = if j == 100 {
        &[("c", 0.05)]
    } else {
        &[("b", 0.05), ("c", 0.01)]
    };
    for &(name, err) in hist {
        panels.push(PanelSpec::Histogram {
            name,
            title: format!("Sum-Intersection stopping times, k = {k_main}, Err = {}%", err * 100.0),
            series: main,
            err,
        });
    }
    Study {
        name,
        models: m,
        metric: Metric::Gmis { k: 0 },
        series,
        panels,
    }
}

fn study_5_2() -> Study {
    let mut m = gaussian(1.0 / 6.0, 2);
    m.extend(gaussian(0.5, 8));
    let a = TruthAssignment::simple(&m, &[5, 6, 7, 8, 9]).expect("valid truth");
    let mut h = vec![0.0; 10];
    h[0] = f64::NEG_INFINITY;
    h[1] = f64::INFINITY;
    let series = vec![
        seq("leap", Shape::Leap { k1: 2, k2: 2 }, a.clone()),
        seq("intersection", Shape::Intersection, a.clone()),
        seq(
            "asym_sum_intersection",
            Shape::AsymSumIntersection { k1: 2, k2: 2 },
            a.clone(),
        ),
        fixed("mnp", h, a),
    ];
    Study {
        name: "main",
        models: m,
        metric: Metric::Gfwer { k1: 2, k2: 2 },
        series,
        panels: vec![
            PanelSpec::Ess {
                name: "a",
                title: "ESS under {6..10}".into(),
                series: vec![0, 1, 2, 3],
                normalizer: None,
            },
            PanelSpec::Ess {
                name: "b",
                title: "ESS / (8 |log Err|)".into(),
                series: vec![0, 1, 2, 3],
                normalizer: Some(8.0),
            },
        ],
    }
}

fn study_a_2() -> Study {
    let mut m = gaussian(1.0 / 6.0, 1);
    m.extend(gaussian(0.5, 9));
    let none = first_signals(&m, 0);
    let series = vec![
        seq("sum_intersection", Shape::SumIntersection { k: 2 }, none.clone()),
        seq("intersection", Shape::Intersection, none.clone()),
        fixed("mnp", vec![0.0; 10], none),
    ];
    Study {
        name: "main",
        models: m,
        metric: Metric::Gmis { k: 2 },
        series,
        panels: vec![
            PanelSpec::Ess {
                name: "a",
                title: "ESS".into(),
                series: vec![0, 1, 2],
                normalizer: None,
            },
            PanelSpec::Ess {
                name: "b",
                title: "ESS / (7.2 |log Err|)".into(),
                series: vec![0, 1, 2],
                normalizer: Some(7.2),
            },
        ],
    }
}

fn study_e_4() -> Study {
    let mu = 0.2;
    let m = vec![StreamModel::composite_gaussian(mu, 10, 0.0).expect("valid model"); 20];
    let thetas: Vec<f64> = (0..20)
        .map(|j| {
            if j < 10 {
                0.7
            } else if j < 19 {
                -0.3
            } else {
                0.0
            }
        })
        .collect();
    let truth = TruthAssignment::with_parameters(&m, &thetas).expect("valid truth");
    let mut series = vec![
        seq("leap_star", Shape::Leap { k1: 2, k2: 2 }, truth.clone()),
        seq("intersection_star", Shape::Intersection, truth.clone()),
        seq(
            "asym_sum_intersection_star",
            Shape::AsymSumIntersection { k1: 2, k2: 2 },
            truth.clone(),
        ),
        fixed("mnp", vec![mu / 2.0; 20], truth),
    ];
    series[0].star = true;
    Study {
        name: "main",
        models: m,
        metric: Metric::Gfwer { k1: 2, k2: 2 },
        series,
        panels: vec![
            PanelSpec::Ess {
                name: "a",
                title: "ESS under the mixed means".into(),
                series: vec![0, 1, 2, 3],
                normalizer: None,
            },
            PanelSpec::Ess {
                name: "b",
                title: "Leap* and MNP".into(),
                series: vec![0, 3],
                normalizer: None,
            },
        ],
    }
}

fn catalog(id: &str) -> Result<Vec<Study>> {
    Ok(match id {
        "5.1" => vec![gfwer_homogeneous("J100", 100), gfwer_homogeneous("J20", 20)],
        "5.2" => vec![study_5_2()],
        "A.1" => vec![gmis_homogeneous("J100", 100), gmis_homogeneous("J20", 20)],
        "A.2" => vec![study_a_2()],
        "E.4" => vec![study_e_4()],
        other => return Err(Error::UnknownFigure(other.to_string())),
    })
}

/// Metric of a series: the study metric with the series' own `k`.
fn series_metric(study: &Study, s: &Series) -> Metric {
    match (study.metric, &s.family) {
        (
            Metric::Gfwer { .. },
            Family::Sequential {
                shape: Shape::Leap { k1, k2 },
                ..
            },
        )
        | (
            Metric::Gfwer { .. },
            Family::Sequential {
                shape: Shape::AsymSumIntersection { k1, k2 },
                ..
            },
        ) => Metric::Gfwer { k1: *k1, k2: *k2 },
        (
            Metric::Gmis { .. },
            Family::Sequential {
                shape: Shape::SumIntersection { k },
                ..
            },
        ) => Metric::Gmis { k: *k },
        (Metric::Gfwer { k1: 0, .. }, _) => Metric::Gfwer {
            k1: 4.min(study.models.len() / 5).max(2),
            k2: 4.min(study.models.len() / 5).max(2),
        },
        (Metric::Gmis { k: 0 }, _) => Metric::Gmis {
            k: if study.models.len() == 100 { 4 } else { 2 },
        },
        (m, _) => m,
    }
}

/// Calibrated value of a family at one Err.
#[derive(Debug, Clone)]
enum Calibrated {
    Threshold(Thresholds),
    SampleSize(u64),
}

struct Runner<'a> {
    opts: &'a FigureOptions,
    trials: u64,
    cache: BTreeMap<String, (Calibrated, usize)>,
    calibrations: Vec<CalibrationPoint>,
    warnings: Vec<String>,
}

impl Runner<'_> {
    fn calibrate(&mut self, study: &Study, s: &Series, metric: Metric, err: f64) -> Result<Calibrated> {
        let key = format!("{}|{:?}|{:?}|{err:e}", study.name, s.family, metric);
        if let Some((c, _)) = self.cache.get(&key) {
            return Ok(c.clone());
        }
        let cell = self.cache.len() as u64;
        let mut o = CalibrationOptions::new(self.trials, self.opts.seed);
        o.cell = cell;
        o.workers = self.opts.workers;
        let targets = vec![err; metric.slots()];
        let m = &study.models;
        let reduction = default_reduction(m, &s.family, metric);
        let report = match &s.family {
            Family::Sequential { shape, ratio } => {
                let configs = truth_configurations(m, None, reduction)?;
                let sc = Scenario {
                    models: m,
                    configs: &configs,
                };
                let start = start_threshold(*shape, metric, m.len(), err);
                calibrate_bisection(&sc, *shape, *ratio, metric, &targets, start, &o)?
            }
            Family::FixedSample { h } => {
                let configs = truth_configurations(m, Some(h), reduction)?;
                let sc = Scenario {
                    models: m,
                    configs: &configs,
                };
                min_fixed_n(&sc, h, metric, &targets, MAX_FIXED_N, &o)?
            }
        };
        let c = match (report.thresholds, report.sample_size) {
            (Some(t), _) => Calibrated::Threshold(t),
            (None, Some(n)) => Calibrated::SampleSize(n),
            _ => unreachable!("calibration yields a value"),
        };
        self.calibrations.push(CalibrationPoint {
            study: study.name.to_string(),
            family: s.family.clone(),
            err,
            thresholds: report.thresholds,
            sample_size: report.sample_size,
            achieved: report.achieved.errors.iter().map(|e| e.estimate).collect(),
            trials: report.trials,
        });
        self.cache.insert(key, (c.clone(), self.calibrations.len() - 1));
        Ok(c)
    }

    fn evaluate(&mut self, study: &Study, s: &Series, metric: Metric, c: &Calibrated, times: bool) -> Result<Counters> {
        let configs = std::slice::from_ref(&s.truth);
        let sc = Scenario {
            models: &study.models,
            configs,
        };
        let mut plan = RunPlan {
            trials: self.trials,
            seed: self.opts.seed,
            domain: DOMAIN_EVALUATION,
            cell: 0,
            horizon_cap: 0,
            workers: self.opts.workers,
            record_times: times,
        };
        let mut grid = match (c, &s.family) {
            (Calibrated::Threshold(t), Family::Sequential { shape, .. }) => {
                let rule = Rule::Leap {
                    k1: 1,
                    k2: 1,
                    a: t.a,
                    b: t.b,
                };
                plan.horizon_cap = default_horizon_cap(&rule, &study.models)?;
                sweep_sequential(&sc, *shape, t.ratio(), &[t.b], metric, &plan)?
            }
            (Calibrated::SampleSize(n), Family::FixedSample { h }) => {
                plan.horizon_cap = *n;
                sweep_fixed(&sc, h, &[*n], metric, &plan)?
            }
            _ => unreachable!("family and calibration agree"),
        };
        let cell = grid.remove(0).remove(0);
        if cell.aborted as f64 > 0.01 * cell.trials as f64 {
            self.warnings.push(format!(
                "{}/{}: {} of {} trials hit the horizon cap",
                study.name, s.label, cell.aborted, cell.trials
            ));
        }
        Ok(cell)
    }

    fn offset(study: &Study, s: &Series) -> f64 {
        match s.family {
            Family::Sequential { .. } => study.models.iter().map(|m| m.initial_samples()).max().unwrap_or(0) as f64,
            Family::FixedSample { .. } => 0.0,
        }
    }
}

/// Conservative starting point for the threshold search.
fn start_threshold(shape: Shape, metric: Metric, j: usize, err: f64) -> f64 {
    use crate::calibration::{analytic_threshold_gmis, analytic_thresholds_gfwer};
    let t = match (shape, metric) {
        (Shape::SumIntersection { k }, _) => analytic_threshold_gmis(err, j, k).ok(),
        (Shape::Intersection, Metric::Gmis { k }) => analytic_threshold_gmis(err, j, k).ok().map(|b| b / k as f64),
        (Shape::Intersection, Metric::Gfwer { k1, k2 }) => analytic_thresholds_gfwer(err, err, j, k1, k2)
            .ok()
            .map(|t| t.b / k1 as f64),
        (_, Metric::Gfwer { k1, k2 }) => analytic_thresholds_gfwer(err, err, j, k1, k2).ok().map(|t| t.b),
        _ => None,
    };
    t.unwrap_or(5.0)
}

fn histogram(times: &[u32]) -> Vec<HistogramBin> {
    let (Some(&lo), Some(&hi)) = (times.iter().min(), times.iter().max()) else {
        return Vec::new();
    };
    let (lo, hi) = (lo as u64, hi as u64);
    let width = (hi - lo + 1).div_ceil(30).max(1);
    let nbins = (hi - lo + 1).div_ceil(width);
    let mut bins: Vec<HistogramBin> = (0..nbins)
        .map(|i| HistogramBin {
            bin_low: lo + i * width,
            bin_high: lo + (i + 1) * width,
            count: 0,
        })
        .collect();
    for &t in times {
        bins[((t as u64 - lo) / width) as usize].count += 1;
    }
    bins
}

/// Computes a figure's panels.
pub fn figure_data(id: &str, opts: &FigureOptions) -> Result<FigureData> {
    let studies = catalog(id)?;
    if !(opts.scale.is_finite() && opts.scale > 0.0) {
        return Err(Error::Config(format!("scale must be > 0, got {}", opts.scale)));
    }
    let errs = opts.errs();
    if errs.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(Error::Config("Err grid values must lie in (0, 1)".into()));
    }
    let trials = opts.trials();
    let config_hash = hash_json(&Setup {
        id,
        seed: opts.seed,
        trials,
        errs: &errs,
    })?;
    let mut run = Runner {
        opts,
        trials,
        cache: BTreeMap::new(),
        calibrations: Vec::new(),
        warnings: Vec::new(),
    };
    let mut panels = Vec::new();
    for study in &studies {
        let prefix = if studies.len() > 1 {
            format!("{}_", study.name)
        } else {
            String::new()
        };
        for p in &study.panels {
            match p {
                PanelSpec::Ess {
                    name,
                    title,
                    series,
                    normalizer,
                } => {
                    let mut points = Vec::new();
                    for &si in series {
                        let s = &study.series[si];
                        let metric = series_metric(study, s);
                        for &err in &errs {
                            let c = run.calibrate(study, s, metric, err)?;
                            let cell = run.evaluate(study, s, metric, &c, false)?;
                            let ss = SampleSize::from_counters(&cell);
                            let scale = normalizer.map_or(1.0, |n| 1.0 / (n * err.ln().abs()));
                            points.push(SeriesPoint {
                                x: err.log10().abs(),
                                series: s.label.clone(),
                                y: (ss.mean + Runner::offset(study, s)) * scale,
                                y_ci_halfwidth: ss.half_width * scale,
                            });
                        }
                    }
                    panels.push(Panel {
                        name: format!("{prefix}{name}"),
                        title: title.clone(),
                        data: PanelData::Series { points },
                    });
                }
                PanelSpec::Histogram {
                    name,
                    title,
                    series,
                    err,
                } => {
                    let s = &study.series[*series];
                    let metric = series_metric(study, s);
                    let c = run.calibrate(study, s, metric, *err)?;
                    let cell = run.evaluate(study, s, metric, &c, true)?;
                    panels.push(Panel {
                        name: format!("{prefix}{name}"),
                        title: title.clone(),
                        data: PanelData::Histogram {
                            series: s.label.clone(),
                            err: *err,
                            bins: histogram(&cell.times),
                        },
                    });
                }
            }
        }
    }
    Ok(FigureData {
        id: id.to_string(),
        config_hash,
        seed: opts.seed,
        trials,
        errs,
        panels,
        calibrations: run.calibrations,
        abort_warnings: run.warnings,
    })
}

/// CSV text of one panel.
pub fn panel_csv(fig: &FigureData, panel: &Panel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# figure={} panel={} title={}", fig.id, panel.name, panel.title);
    let _ = writeln!(s, "# config_hash={}", fig.config_hash);
    let _ = writeln!(s, "# seed={} trials={}", fig.seed, fig.trials);
    match &panel.data {
        PanelData::Series { points } => {
            s.push_str("x,series,y,y_ci_halfwidth\n");
            for p in points {
                let _ = writeln!(s, "{},{},{},{}", p.x, p.series, p.y, p.y_ci_halfwidth);
            }
        }
        PanelData::Histogram { series, err, bins } => {
            let _ = writeln!(s, "# series={series} err={err}");
            s.push_str("bin_low,bin_high,count\n");
            for b in bins {
                let _ = writeln!(s, "{},{},{}", b.bin_low, b.bin_high, b.count);
            }
        }
    }
    s
}

fn file_stem(id: &str) -> String {
    format!("fig-{}", id.replace('.', "_"))
}

/// Writes one CSV per panel plus a JSON summary into `opts.out`.
pub fn emit_figure(id: &str, opts: &FigureOptions) -> Result<Vec<PathBuf>> {
    let fig = figure_data(id, opts)?;
    write_figure(&fig, &opts.out)
}

pub fn write_figure(fig: &FigureData, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let stem = file_stem(&fig.id);
    let mut paths = Vec::new();
    for p in &fig.panels {
        let path = out.join(format!("{stem}-{}.csv", p.name));
        std::fs::write(&path, panel_csv(fig, p))?;
        paths.push(path);
    }
    let path = out.join(format!("{stem}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(fig)?)?;
    paths.push(path);
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_id_is_rejected() {
        let o = FigureOptions::new("unused");
        assert!(matches!(figure_data("9.9", &o), Err(Error::UnknownFigure(_))));
    }

    #[test]
    fn err_grid_follows_scale() {
        let mut o = FigureOptions::new("unused");
        assert_eq!(o.errs(), vec![1e-1, 1e-2, 1e-3]);
        o.scale = 0.1;
        assert_eq!(o.errs(), vec![1e-1, 1e-2]);
        o.scale = 0.001;
        assert_eq!(o.trials(), 50);
        assert_eq!(o.errs(), vec![1e-1]);
    }

    #[test]
    fn histogram_bins_cover_every_time() {
        let t: Vec<u32> = (0..1000).map(|i| 5 + (i * 37 % 211)).collect();
        let h = histogram(&t);
        assert_eq!(h.iter().map(|b| b.count).sum::<u64>(), 1000);
        assert_eq!(h[0].bin_low, 5);
        assert!(h.last().unwrap().bin_high > 215);
        assert!(h.len() <= 30);
        assert!(histogram(&[]).is_empty());
    }

    #[test]
    fn catalog_setups() {
        let s = &catalog("5.2").unwrap()[0];
        assert_eq!(s.models.len(), 10);
        assert_eq!(s.series[0].truth.signal_set(), vec![5, 6, 7, 8, 9]);
        let e = &catalog("E.4").unwrap()[0];
        assert_eq!(e.series[0].truth.signal_set(), (0..10).collect::<Vec<_>>());
        assert!(e.series[0].star);
        for id in FIGURES {
            for st in catalog(id).unwrap() {
                for s in &st.series {
                    let m = series_metric(&st, s);
                    match m {
                        Metric::Gmis { k } => assert!(k >= 1),
                        Metric::Gfwer { k1, k2 } => assert!(k1 >= 1 && k2 >= 1),
                    }
                }
            }
        }
    }
}
