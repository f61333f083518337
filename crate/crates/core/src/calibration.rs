//! Thresholds: closed-form conservative choices and Monte-Carlo calibration.
//!
//! Calibration evaluates a whole grid of thresholds per pass on common random
//! numbers, keeps the bracket where the worst-case error crosses the target
//! and refines it until it is narrow. Error estimates use the Wilson score
//! interval.

use serde::Serialize;

use crate::engine::{sweep_fixed, sweep_sequential, Counters, Grid, Metric, RunPlan, Scenario};
use crate::error::{Error, Result};
use crate::models::{StreamModel, TruthAssignment};
use crate::procedures::{min_information, Shape};
use crate::rng::DOMAIN_CALIBRATION;
use crate::theory::ErrorBudget;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;
/// Largest tolerated share of trials stopped by the horizon cap.
pub const ABORT_TOLERANCE: f64 = 0.01;
/// Largest bank for which every subset of streams may be enumerated.
pub const MAX_FULL_ENUMERATION: usize = 12;
/// Bracketing passes before calibration gives up.
pub const MAX_PASSES: usize = 60;
/// Relative threshold below which a bracket that keeps passing is accepted.
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    /// Negative side.
    pub a: f64,
    /// Positive side.
    pub b: f64,
}

impl Thresholds {
    pub fn ratio(&self) -> f64 {
        self.a / self.b
    }
}

/// `ln C(J, k)`.
pub fn ln_binomial(j: usize, k: usize) -> f64 {
    let k = k.min(j - k);
    (0..k).map(|i| ((j - i) as f64 / (i + 1) as f64).ln()).sum()
}

/// `b = |ln α| + ln C(J, k)`, which keeps the misclassification rate of the
/// Sum-Intersection rule below `α`.
pub fn analytic_threshold_gmis(alpha: f64, j: usize, k: usize) -> Result<f64> {
    ErrorBudget::Gmis { k, alpha }.validate(j)?;
    Ok(alpha.ln().abs() + ln_binomial(j, k))
}

/// Intersection-rule variant of [`analytic_threshold_gmis`]: `b / k`.
pub fn intersection_threshold_gmis(alpha: f64, j: usize, k: usize) -> Result<f64> {
    Ok(analytic_threshold_gmis(alpha, j, k)? / k as f64)
}

/// `a = |ln β| + ln(2^k2 C(J, k2))`, `b = |ln α| + ln(2^k1 C(J, k1))`.
pub fn analytic_thresholds_gfwer(alpha: f64, beta: f64, j: usize, k1: usize, k2: usize) -> Result<Thresholds> {
    ErrorBudget::Gfwer { k1, k2, alpha, beta }.validate(j)?;
    let ln2 = std::f64::consts::LN_2;
    Ok(Thresholds {
        a: beta.ln().abs() + k2 as f64 * ln2 + ln_binomial(j, k2),
        b: alpha.ln().abs() + k1 as f64 * ln2 + ln_binomial(j, k1),
    })
}

/// Intersection-rule variant of [`analytic_thresholds_gfwer`]: `(a/k2, b/k1)`.
pub fn intersection_thresholds_gfwer(alpha: f64, beta: f64, j: usize, k1: usize, k2: usize) -> Result<Thresholds> {
    let t = analytic_thresholds_gfwer(alpha, beta, j, k1, k2)?;
    Ok(Thresholds {
        a: t.a / k2 as f64,
        b: t.b / k1 as f64,
    })
}

/// Closed-form thresholds for a shape under a budget.
pub fn analytic_thresholds(shape: Shape, budget: &ErrorBudget, j: usize) -> Result<Thresholds> {
    budget.validate(j)?;
    match (shape, *budget) {
        (Shape::SumIntersection { k: ks }, ErrorBudget::Gmis { k, alpha }) if ks == k => {
            let b = analytic_threshold_gmis(alpha, j, k)?;
            Ok(Thresholds { a: b, b })
        }
        (Shape::Intersection, ErrorBudget::Gmis { k, alpha }) => {
            let b = intersection_threshold_gmis(alpha, j, k)?;
            Ok(Thresholds { a: b, b })
        }
        (Shape::Intersection, ErrorBudget::Gfwer { k1, k2, alpha, beta }) => {
            intersection_thresholds_gfwer(alpha, beta, j, k1, k2)
        }
        (Shape::Leap { k1: s1, k2: s2 }, ErrorBudget::Gfwer { k1, k2, alpha, beta })
        | (Shape::AsymSumIntersection { k1: s1, k2: s2 }, ErrorBudget::Gfwer { k1, k2, alpha, beta })
            if (s1, s2) == (k1, k2) =>
        {
            analytic_thresholds_gfwer(alpha, beta, j, k1, k2)
        }
        _ => Err(Error::InvalidBudget(format!(
            "no closed-form threshold for {shape:?} under {budget:?}"
        ))),
    }
}

/// Binomial proportion with its Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub count: u64,
    pub trials: u64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub half_width: f64,
}

impl Estimate {
    pub fn wilson(count: u64, trials: u64) -> Self {
        assert!(trials > 0 && count <= trials);
        let n = trials as f64;
        let p = count as f64 / n;
        let z2 = Z95 * Z95;
        let denom = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / denom;
        let hw = Z95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
        Self {
            count,
            trials,
            estimate: p,
            ci_low: if count == 0 { 0.0 } else { (center - hw).max(0.0) },
            ci_high: if count == trials { 1.0 } else { (center + hw).min(1.0) },
            half_width: hw,
        }
    }

    pub fn covers(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }
}

/// Mean stopping time with a normal 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleSize {
    pub mean: f64,
    pub half_width: f64,
}

impl SampleSize {
    pub fn from_counters(c: &Counters) -> Self {
        let n = c.trials as f64;
        let mean = c.sum_t as f64 / n;
        // Exact integer centring avoids cancellation in the variance.
        let var = if c.trials > 1 {
            let num = c.sum_t2 * c.trials as u128 - (c.sum_t as u128) * (c.sum_t as u128);
            num as f64 / (n * (n - 1.0))
        } else {
            0.0
        };
        Self {
            mean,
            half_width: Z95 * (var / n).sqrt(),
        }
    }
}

/// How the truth configurations of a bank are enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// The empty signal set only; exact for sign-symmetric rules under the
    /// misclassification metric on continuous simple banks.
    Representative,
    /// One configuration per signal count in each block of interchangeable
    /// streams.
    Blocks,
    /// Every subset of streams (`J ≤ 12`).
    Full,
}

/// Configuration with signal mask `mask`; composite streams sit on the
/// boundary `θ ∈ {0, μ}`.
pub fn assignment_from_mask(models: &[StreamModel], mask: &[bool]) -> Result<TruthAssignment> {
    if models.iter().any(|m| m.is_composite()) {
        TruthAssignment::boundary(models, mask)
    } else {
        let set: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
        TruthAssignment::simple(models, &set)
    }
}

/// Truth configurations covering the worst case of a bank.
///
/// `keys` separates otherwise identical streams that a procedure treats
/// differently (per-stream fixed-sample drifts).
pub fn truth_configurations(
    models: &[StreamModel],
    keys: Option<&[f64]>,
    reduction: Reduction,
) -> Result<Vec<TruthAssignment>> {
    let j = models.len();
    if let Some(k) = keys {
        if k.len() != j {
            return Err(Error::LengthMismatch {
                expected: j,
                got: k.len(),
            });
        }
    }
    let masks: Vec<Vec<bool>> = match reduction {
        Reduction::Representative => vec![vec![false; j]],
        Reduction::Full => {
            if j > MAX_FULL_ENUMERATION {
                return Err(Error::Config(format!(
                    "full enumeration needs J <= {MAX_FULL_ENUMERATION}, got {j}"
                )));
            }
            (0u32..1 << j)
                .map(|s| (0..j).map(|i| s >> i & 1 == 1).collect())
                .collect()
        }
        Reduction::Blocks => {
            let mut blocks: Vec<Vec<usize>> = Vec::new();
            for i in 0..j {
                let same = |b: &Vec<usize>| {
                    let r = b[0];
                    models[r] == models[i] && keys.is_none_or(|k| k[r].to_bits() == k[i].to_bits())
                };
                match blocks.iter_mut().find(|b| same(b)) {
                    Some(b) => b.push(i),
                    None => blocks.push(vec![i]),
                }
            }
            let mut out = vec![vec![false; j]];
            for b in &blocks {
                let mut next = Vec::with_capacity(out.len() * (b.len() + 1));
                for m in &out {
                    for c in 0..=b.len() {
                        let mut m = m.clone();
                        b[..c].iter().for_each(|&i| m[i] = true);
                        next.push(m);
                    }
                }
                out = next;
            }
            out
        }
    };
    masks.iter().map(|m| assignment_from_mask(models, m)).collect()
}

/// What is being calibrated.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Sequential rule with `a = ratio·b`.
    Sequential { shape: Shape, ratio: f64 },
    /// Fixed-sample rule with per-stream drifts `h`.
    FixedSample { h: Vec<f64> },
}

/// Reduction that is exact for `family` under `metric` on `models`.
pub fn default_reduction(models: &[StreamModel], family: &Family, metric: Metric) -> Reduction {
    let continuous_simple = models.iter().all(|m| matches!(m, StreamModel::GaussianMean { .. }));
    let sign_symmetric = match family {
        Family::Sequential {
            shape: Shape::SumIntersection { .. },
            ..
        } => true,
        Family::Sequential {
            shape: Shape::Intersection,
            ratio,
        } => *ratio == 1.0,
        Family::FixedSample { h } => h.iter().all(|&x| x == 0.0),
        _ => false,
    };
    if continuous_simple && sign_symmetric && matches!(metric, Metric::Gmis { .. }) {
        Reduction::Representative
    } else {
        Reduction::Blocks
    }
}

/// Error targets of a budget, one per metric slot.
pub fn budget_targets(budget: &ErrorBudget) -> (Metric, Vec<f64>) {
    match *budget {
        ErrorBudget::Gmis { k, alpha } => (Metric::Gmis { k }, vec![alpha]),
        ErrorBudget::Gfwer { k1, k2, alpha, beta } => (Metric::Gfwer { k1, k2 }, vec![alpha, beta]),
    }
}

/// Worst case over configurations of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstCase {
    /// Per metric slot.
    pub errors: Vec<Estimate>,
    /// Configuration index attaining each slot's maximum.
    pub argmax: Vec<usize>,
    pub trials: u64,
    pub aborted: u64,
    pub abort_rate: f64,
    pub reliable: bool,
}

pub fn worst_case(grid: &Grid, point: usize, metric: Metric) -> WorstCase {
    let slots = metric.slots();
    let mut best = vec![(0u64, 0usize); slots];
    let mut trials = 0;
    let mut aborted = 0;
    for (c, row) in grid.iter().enumerate() {
        let cell = &row[point];
        trials += cell.trials;
        aborted += cell.aborted;
        for (s, b) in best.iter_mut().enumerate() {
            if cell.errors[s] > b.0 {
                *b = (cell.errors[s], c);
            }
        }
    }
    let per = grid[0][point].trials;
    let abort_rate = aborted as f64 / trials.max(1) as f64;
    WorstCase {
        errors: best.iter().map(|b| Estimate::wilson(b.0, per)).collect(),
        argmax: best.iter().map(|b| b.1).collect(),
        trials: per,
        aborted,
        abort_rate,
        reliable: abort_rate <= ABORT_TOLERANCE,
    }
}

/// Acceptance rule for a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationRule {
    /// Worst-case point estimate at or below the target.
    #[default]
    PointEstimate,
    /// Upper Wilson bound at or below the target.
    UpperConfidence,
}

impl CalibrationRule {
    fn accepts(&self, w: &WorstCase, targets: &[f64]) -> bool {
        w.errors.iter().zip(targets).all(|(e, &t)| match self {
            CalibrationRule::PointEstimate => e.estimate <= t,
            CalibrationRule::UpperConfidence => e.ci_high <= t,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub trials: u64,
    pub seed: u64,
    /// Separates independent calibrations under one seed.
    pub cell: u64,
    pub workers: usize,
    pub rule: CalibrationRule,
    /// Grid points per pass.
    pub grid_points: usize,
    /// Stop when the bracket is narrower than this fraction of its top.
    pub rel_tol: f64,
    /// Optional fixed horizon cap; otherwise `50·max(a, b)/min KL`.
    pub horizon_cap: Option<u64>,
}

impl CalibrationOptions {
    pub fn new(trials: u64, seed: u64) -> Self {
        Self {
            trials,
            seed,
            cell: 0,
            workers: 1,
            rule: CalibrationRule::PointEstimate,
            grid_points: 12,
            rel_tol: 2e-3,
            horizon_cap: None,
        }
    }

    /// Trials actually used: at least `30 / target` so the smallest target
    /// is resolvable.
    pub fn effective_trials(&self, targets: &[f64]) -> u64 {
        let t = targets.iter().cloned().fold(f64::INFINITY, f64::min);
        self.trials.max((30.0 / t).ceil() as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub family: Family,
    pub metric: Metric,
    pub targets: Vec<f64>,
    pub rule: CalibrationRule,
    /// Calibrated thresholds (sequential) or sample size (fixed).
    pub thresholds: Option<Thresholds>,
    pub sample_size: Option<u64>,
    /// Worst case at the returned value.
    pub achieved: WorstCase,
    /// Signal sets (1-based) of the simulated configurations.
    pub configurations: Vec<Vec<usize>>,
    pub trials: u64,
    pub seed: u64,
    pub passes: usize,
}

fn signal_sets(configs: &[TruthAssignment]) -> Vec<Vec<usize>> {
    configs
        .iter()
        .map(|c| c.signal_set().iter().map(|j| j + 1).collect())
        .collect()
}

fn check_targets(metric: Metric, targets: &[f64]) -> Result<()> {
    if targets.len() != metric.slots() {
        return Err(Error::LengthMismatch {
            expected: metric.slots(),
            got: targets.len(),
        });
    }
    if targets.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::InvalidBudget("targets must lie in (0, 1)".into()));
    }
    Ok(())
}

/// Index of the smallest grid point from which every point on passes.
fn first_passing_tail(ok: &[bool]) -> Option<usize> {
    let mut i = ok.len();
    while i > 0 && ok[i - 1] {
        i -= 1;
    }
    (i < ok.len()).then_some(i)
}

/// Smallest tied threshold `b` (with `a = ratio·b`) whose worst-case error
/// meets `targets`, searched from the starting guess `start`.
pub fn calibrate_bisection(
    sc: &Scenario,
    shape: Shape,
    ratio: f64,
    metric: Metric,
    targets: &[f64],
    start: f64,
    opts: &CalibrationOptions,
) -> Result<CalibrationReport> {
    check_targets(metric, targets)?;
    if !(start.is_finite() && start > 0.0) {
        return Err(Error::Calibration(format!(
            "starting threshold must be > 0, got {start}"
        )));
    }
    let trials = opts.effective_trials(targets);
    let kl = min_information(sc.models)?;
    let g = opts.grid_points.max(3);
    let mut lo = start / 16.0;
    let mut hi = start;
    for pass in 1..=MAX_PASSES {
        let grid: Vec<f64> = (0..g).map(|i| lo + (hi - lo) * i as f64 / (g - 1) as f64).collect();
        let cap = opts
            .horizon_cap
            .unwrap_or_else(|| ((50.0 * hi.max(start).max(1.0) * ratio.max(1.0) / kl).ceil() as u64).max(1));
        let plan = RunPlan {
            trials,
            seed: opts.seed,
            domain: DOMAIN_CALIBRATION,
            cell: opts.cell,
            horizon_cap: cap,
            workers: opts.workers,
            record_times: false,
        };
        let res = sweep_sequential(sc, shape, ratio, &grid, metric, &plan)?;
        let worst: Vec<WorstCase> = (0..g).map(|i| worst_case(&res, i, metric)).collect();
        let ok: Vec<bool> = worst.iter().map(|w| opts.rule.accepts(w, targets)).collect();
        let report = |b: f64, achieved: WorstCase| CalibrationReport {
            family: Family::Sequential { shape, ratio },
            metric,
            targets: targets.to_vec(),
            rule: opts.rule,
            thresholds: Some(Thresholds { a: ratio * b, b }),
            sample_size: None,
            achieved,
            configurations: signal_sets(sc.configs),
            trials,
            seed: opts.seed,
            passes: pass,
        };
        match first_passing_tail(&ok) {
            None => {
                lo = hi;
                hi *= 2.0;
            }
            Some(0) => {
                // Met even as the threshold vanishes: the smallest point is
                // as good as any.
                if lo < start * FLOOR {
                    return Ok(report(grid[0], worst[0].clone()));
                }
                hi = lo;
                lo /= 16.0;
            }
            Some(i) => {
                lo = grid[i - 1];
                hi = grid[i];
                if hi - lo <= opts.rel_tol * hi {
                    return Ok(report(grid[i], worst[i].clone()));
                }
            }
        }
    }
    Err(Error::Calibration(format!(
        "no bracket after {MAX_PASSES} passes; last interval [{lo}, {hi}]"
    )))
}

/// Smallest sample size at which the fixed-sample rule with drifts `h`
/// meets `targets`.
pub fn min_fixed_n(
    sc: &Scenario,
    h: &[f64],
    metric: Metric,
    targets: &[f64],
    max_n: u64,
    opts: &CalibrationOptions,
) -> Result<CalibrationReport> {
    check_targets(metric, targets)?;
    let trials = opts.effective_trials(targets);
    let g = opts.grid_points.max(3) as u64;
    let mut lo = 1u64;
    let mut hi = 64u64.min(max_n);
    for pass in 1..=MAX_PASSES {
        let mut grid: Vec<u64> = if hi - lo < g {
            (lo..=hi).collect()
        } else if hi / lo > 4 {
            let r = (hi as f64 / lo as f64).ln() / (g - 1) as f64;
            (0..g)
                .map(|i| (lo as f64 * (r * i as f64).exp()).round() as u64)
                .collect()
        } else {
            (0..g).map(|i| lo + (hi - lo) * i / (g - 1)).collect()
        };
        grid.dedup();
        *grid.last_mut().expect("nonempty") = hi;
        let plan = RunPlan {
            trials,
            seed: opts.seed,
            domain: DOMAIN_CALIBRATION,
            cell: opts.cell,
            horizon_cap: hi,
            workers: opts.workers,
            record_times: false,
        };
        let res = sweep_fixed(sc, h, &grid, metric, &plan)?;
        let worst: Vec<WorstCase> = (0..grid.len()).map(|i| worst_case(&res, i, metric)).collect();
        let ok: Vec<bool> = worst.iter().map(|w| opts.rule.accepts(w, targets)).collect();
        let done = |i: usize| CalibrationReport {
            family: Family::FixedSample { h: h.to_vec() },
            metric,
            targets: targets.to_vec(),
            rule: opts.rule,
            thresholds: None,
            sample_size: Some(grid[i]),
            achieved: worst[i].clone(),
            configurations: signal_sets(sc.configs),
            trials,
            seed: opts.seed,
            passes: pass,
        };
        match first_passing_tail(&ok) {
            None => {
                if hi >= max_n {
                    return Err(Error::Calibration(format!(
                        "targets {targets:?} not met by n = {max_n}"
                    )));
                }
                lo = hi + 1;
                hi = (hi * 4).min(max_n);
            }
            Some(0) if lo == 1 => return Ok(done(0)),
            Some(0) => {
                hi = lo;
                lo = (lo / 4).max(1);
            }
            Some(i) if grid[i - 1] + 1 == grid[i] => return Ok(done(i)),
            Some(i) => {
                lo = grid[i - 1] + 1;
                hi = grid[i];
            }
        }
    }
    Err(Error::Calibration(format!(
        "no sample size bracketed after {MAX_PASSES} passes"
    )))
}

/// Worst-case error of a sequential rule at fixed thresholds.
pub fn mc_error_estimate(
    sc: &Scenario,
    shape: Shape,
    thresholds: Thresholds,
    metric: Metric,
    plan: &RunPlan,
) -> Result<(WorstCase, Grid)> {
    let grid = sweep_sequential(sc, shape, thresholds.ratio(), &[thresholds.b], metric, plan)?;
    Ok((worst_case(&grid, 0, metric), grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::StreamModel;
    use crate::rng::DOMAIN_CHECK;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn closed_form_thresholds() {
        let b = analytic_threshold_gmis(0.05, 10, 2).unwrap();
        assert!(close(b, 20f64.ln() + 45f64.ln(), 1e-12));
        assert!(close(b, 6.802395, 1e-6));
        let b = analytic_threshold_gmis(0.1, 2, 1).unwrap();
        assert!(close(b, 0.1f64.ln().abs() + 2f64.ln(), 1e-12));
        assert!(close(
            intersection_threshold_gmis(0.05, 10, 2).unwrap(),
            6.802395 / 2.0,
            1e-6
        ));
        let t = analytic_thresholds_gfwer(0.01, 0.01, 10, 2, 2).unwrap();
        assert!(close(t.a, 9.798127, 1e-6) && close(t.b, 9.798127, 1e-6));
        let t = analytic_thresholds_gfwer(0.05, 0.05, 7, 1, 1).unwrap();
        assert!(close(t.b, 0.05f64.ln().abs() + 14f64.ln(), 1e-12));
        let t = analytic_thresholds_gfwer(0.01, 0.1, 10, 3, 2).unwrap();
        let expect = 10f64.ln() + (8.0 * 120.0f64 / (4.0 * 45.0)).ln();
        assert!(close(t.b - t.a, expect, 1e-12));
        assert!(analytic_threshold_gmis(1.0, 10, 2).is_err());
        assert!(analytic_threshold_gmis(0.05, 10, 10).is_err());
    }

    #[test]
    fn wilson_interval_reference_values() {
        let e = Estimate::wilson(0, 100);
        assert_eq!(e.ci_low, 0.0);
        assert!(close(e.ci_high, 0.036995, 1e-5));
        let e = Estimate::wilson(50, 100);
        assert!(close(e.ci_low, 0.403832, 1e-5) && close(e.ci_high, 0.596168, 1e-5));
        let w1 = Estimate::wilson(500, 10_000).half_width;
        let w2 = Estimate::wilson(1000, 20_000).half_width;
        assert!(close(w1 / w2, 2f64.sqrt(), 1e-3));
    }

    #[test]
    fn sample_size_interval() {
        let mut c = Counters::default();
        for t in [2u64, 4, 4, 4, 5, 5, 7, 9] {
            c.trials += 1;
            c.sum_t += t;
            c.sum_t2 += (t * t) as u128;
        }
        let s = SampleSize::from_counters(&c);
        assert!(close(s.mean, 5.0, 1e-12));
        let sd = (32.0f64 / 7.0).sqrt();
        assert!(close(s.half_width, Z95 * sd / 8f64.sqrt(), 1e-12));
    }

    #[test]
    fn configuration_counts() {
        let weak = StreamModel::gaussian(1.0 / 6.0, 1.0).unwrap();
        let strong = StreamModel::gaussian(0.5, 1.0).unwrap();
        let mut m = vec![weak.clone(); 2];
        m.extend(vec![strong; 8]);
        assert_eq!(truth_configurations(&m, None, Reduction::Blocks).unwrap().len(), 27);
        assert_eq!(truth_configurations(&m, None, Reduction::Full).unwrap().len(), 1024);
        let h = [f64::NEG_INFINITY, f64::INFINITY, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(truth_configurations(&m, Some(&h), Reduction::Blocks).unwrap().len(), 36);
        let homo = vec![weak; 13];
        assert_eq!(truth_configurations(&homo, None, Reduction::Blocks).unwrap().len(), 14);
        assert!(truth_configurations(&homo, None, Reduction::Full).is_err());
        let comp = vec![StreamModel::composite_gaussian(0.2, 10, 0.0).unwrap(); 4];
        let cfgs = truth_configurations(&comp, None, Reduction::Blocks).unwrap();
        assert_eq!(cfgs.len(), 5);
        assert_eq!(cfgs[2].signal_set(), vec![0, 1]);
    }

    #[test]
    fn oracle_decisions_have_no_errors() {
        // A threshold far below one step stops at n = 1; with huge drift the
        // sign of λ is then always right.
        let m = vec![StreamModel::gaussian(40.0, 1.0).unwrap(); 4];
        let cfgs = truth_configurations(&m, None, Reduction::Blocks).unwrap();
        let sc = Scenario {
            models: &m,
            configs: &cfgs,
        };
        let plan = RunPlan {
            trials: 200,
            seed: 3,
            domain: DOMAIN_CHECK,
            cell: 0,
            horizon_cap: 10,
            workers: 1,
            record_times: false,
        };
        let (w, _) = mc_error_estimate(
            &sc,
            Shape::Leap { k1: 1, k2: 1 },
            Thresholds { a: 1e-3, b: 1e-3 },
            Metric::Gfwer { k1: 1, k2: 1 },
            &plan,
        )
        .unwrap();
        assert!(w.errors.iter().all(|e| e.count == 0));
    }

    #[test]
    fn calibrated_below_analytic() {
        let m = vec![StreamModel::gaussian(0.25, 1.0).unwrap(); 10];
        let metric = Metric::Gmis { k: 2 };
        let family = Family::Sequential {
            shape: Shape::SumIntersection { k: 2 },
            ratio: 1.0,
        };
        let red = default_reduction(&m, &family, metric);
        assert_eq!(red, Reduction::Representative);
        let cfgs = truth_configurations(&m, None, red).unwrap();
        let sc = Scenario {
            models: &m,
            configs: &cfgs,
        };
        let b = analytic_threshold_gmis(0.05, 10, 2).unwrap();
        let r = calibrate_bisection(
            &sc,
            Shape::SumIntersection { k: 2 },
            1.0,
            metric,
            &[0.05],
            b,
            &CalibrationOptions::new(2000, 5),
        )
        .unwrap();
        let t = r.thresholds.unwrap();
        assert!(t.b < b, "{} vs {b}", t.b);
        assert!(r.achieved.errors[0].estimate <= 0.05);
        assert!(r.achieved.errors[0].covers(0.05), "{:?}", r.achieved);
    }

    #[test]
    fn calibration_failure_is_reported() {
        // A target no threshold can reach within the pass budget.
        let m = vec![StreamModel::gaussian(0.5, 1.0).unwrap(); 3];
        let cfgs = truth_configurations(&m, None, Reduction::Blocks).unwrap();
        let sc = Scenario {
            models: &m,
            configs: &cfgs,
        };
        let mut o = CalibrationOptions::new(100, 1);
        o.horizon_cap = Some(1);
        let r = calibrate_bisection(&sc, Shape::Intersection, 1.0, Metric::Gmis { k: 1 }, &[0.3], 1.0, &o);
        assert!(matches!(r, Err(Error::Calibration(_))));
    }

    #[test]
    fn min_fixed_n_near_prediction() {
        // I = 1/32 per stream, B(2) = I/2 under h = 0: n ≈ |ln α| / B(2).
        let m = vec![StreamModel::gaussian(0.25, 1.0).unwrap(); 10];
        let metric = Metric::Gmis { k: 2 };
        let cfgs = truth_configurations(&m, None, Reduction::Representative).unwrap();
        let sc = Scenario {
            models: &m,
            configs: &cfgs,
        };
        let r = min_fixed_n(
            &sc,
            &[0.0; 10],
            metric,
            &[1e-3],
            1 << 16,
            &CalibrationOptions::new(3e4 as u64, 9),
        )
        .unwrap();
        let n = r.sample_size.unwrap() as f64;
        let pred = 1e-3f64.ln().abs() / (1.0 / 64.0);
        assert!((n / pred - 1.0).abs() <= 0.25, "n = {n}, predicted {pred}");
    }

    #[test]
    fn reductions_agree_with_full_enumeration() {
        let weak = StreamModel::gaussian(0.3, 1.0).unwrap();
        let strong = StreamModel::gaussian(0.7, 1.0).unwrap();
        let m = vec![weak.clone(), strong.clone(), weak, strong];
        let metric = Metric::Gfwer { k1: 1, k2: 1 };
        let plan = RunPlan {
            trials: 4000,
            seed: 21,
            domain: DOMAIN_CHECK,
            cell: 0,
            horizon_cap: 10_000,
            workers: 1,
            record_times: false,
        };
        let th = Thresholds { a: 2.0, b: 2.0 };
        let shape = Shape::Leap { k1: 1, k2: 1 };
        let full = truth_configurations(&m, None, Reduction::Full).unwrap();
        let blocks = truth_configurations(&m, None, Reduction::Blocks).unwrap();
        let (wf, _) = mc_error_estimate(
            &Scenario {
                models: &m,
                configs: &full,
            },
            shape,
            th,
            metric,
            &plan,
        )
        .unwrap();
        let (wb, _) = mc_error_estimate(
            &Scenario {
                models: &m,
                configs: &blocks,
            },
            shape,
            th,
            metric,
            &plan,
        )
        .unwrap();
        for s in 0..2 {
            let (f, b) = (wf.errors[s], wb.errors[s]);
            let joint = (f.half_width.powi(2) + b.half_width.powi(2)).sqrt();
            assert!((f.estimate - b.estimate).abs() <= joint, "{f:?} {b:?}");
        }
        // GMIS with a sign-symmetric rule: one representative suffices.
        let metric = Metric::Gmis { k: 1 };
        let shape = Shape::SumIntersection { k: 1 };
        let rep = truth_configurations(&m, None, Reduction::Representative).unwrap();
        let (wf, gf) = mc_error_estimate(
            &Scenario {
                models: &m,
                configs: &full,
            },
            shape,
            th,
            metric,
            &plan,
        )
        .unwrap();
        let (wr, _) = mc_error_estimate(
            &Scenario {
                models: &m,
                configs: &rep,
            },
            shape,
            th,
            metric,
            &plan,
        )
        .unwrap();
        assert!(gf.iter().all(|row| row[0].errors == gf[0][0].errors));
        assert_eq!(wf.errors[0].count, wr.errors[0].count);
    }

    #[test]
    fn symmetric_gfwer_slots_agree() {
        let m = vec![StreamModel::gaussian(0.5, 1.0).unwrap(); 6];
        let cfgs = truth_configurations(&m, None, Reduction::Blocks).unwrap();
        let sc = Scenario {
            models: &m,
            configs: &cfgs,
        };
        let plan = RunPlan {
            trials: 4000,
            seed: 4,
            domain: DOMAIN_CHECK,
            cell: 0,
            horizon_cap: 10_000,
            workers: 1,
            record_times: false,
        };
        let (w, _) = mc_error_estimate(
            &sc,
            Shape::Leap { k1: 2, k2: 2 },
            Thresholds { a: 4.0, b: 4.0 },
            Metric::Gfwer { k1: 2, k2: 2 },
            &plan,
        )
        .unwrap();
        let joint = (w.errors[0].half_width.powi(2) + w.errors[1].half_width.powi(2)).sqrt();
        assert!((w.errors[0].estimate - w.errors[1].estimate).abs() <= joint, "{w:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn wilson_contains_estimate(n in 1u64..5000, frac in 0.0f64..=1.0) {
            let x = ((n as f64) * frac).floor() as u64;
            let e = Estimate::wilson(x, n);
            prop_assert!(e.ci_low <= e.estimate + 1e-12 && e.estimate <= e.ci_high + 1e-12);
            prop_assert!(e.ci_low >= 0.0 && e.ci_high <= 1.0);
        }

        #[test]
        fn analytic_dominates_intersection(alpha in 1e-6f64..0.5, j in 2usize..30, k in 1usize..30) {
            prop_assume!(k < j);
            let b = analytic_threshold_gmis(alpha, j, k).unwrap();
            prop_assert!(b > 0.0);
            prop_assert!(intersection_threshold_gmis(alpha, j, k).unwrap() <= b);
        }

        #[test]
        fn ln_binomial_matches_product(j in 1usize..40, k in 0usize..40) {
            prop_assume!(k <= j);
            let mut c = 1.0f64;
            for i in 0..k {
                c = c * (j - i) as f64 / (i + 1) as f64;
            }
            prop_assert!((ln_binomial(j, k) - c.ln()).abs() < 1e-9);
        }
    }
}
