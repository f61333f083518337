//! Stopping-and-decision rules.
//!
//! Each sequential rule looks at the ordered views of the current statistic
//! vector after every full observation vector. On composite banks the
//! statistic is the adaptive `λ*` and a step with any undefined entry never
//! stops.
//!
//! Besides the step functions every sequential rule with a fixed ratio
//! `r = a/b` has a *stopping score* `s(n)` such that the rule stops at
//! threshold `b` exactly when `s(n) ≥ b`. One simulated path therefore
//! resolves a whole grid of thresholds at once, which is what calibration
//! relies on.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::StreamModel;
use crate::statistics::OrderedLlrView;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rule {
    SumIntersection {
        k: usize,
        b: f64,
    },
    Intersection {
        a: f64,
        b: f64,
    },
    AsymSumIntersection {
        k1: usize,
        k2: usize,
        a: f64,
        b: f64,
    },
    Leap {
        k1: usize,
        k2: usize,
        a: f64,
        b: f64,
    },
    /// Fixed-sample rule: reject `j` iff `λ^j(n) > n·h_j`. Entries of `h`
    /// may be `±∞`.
    Mnp {
        n: u64,
        h: Vec<f64>,
    },
    /// Leap on the adaptive statistics of a composite bank.
    LeapStar {
        k1: usize,
        k2: usize,
        a: f64,
        b: f64,
    },
}

impl Rule {
    pub fn label(&self) -> &'static str {
        match self {
            Rule::SumIntersection { .. } => "sum_intersection",
            Rule::Intersection { .. } => "intersection",
            Rule::AsymSumIntersection { .. } => "asym_sum_intersection",
            Rule::Leap { .. } => "leap",
            Rule::Mnp { .. } => "mnp",
            Rule::LeapStar { .. } => "leap_star",
        }
    }

    /// `(a, b)`; GMIS rules report `a = b`. `None` for MNP.
    pub fn thresholds(&self) -> Option<(f64, f64)> {
        match *self {
            Rule::SumIntersection { b, .. } => Some((b, b)),
            Rule::Intersection { a, b }
            | Rule::AsymSumIntersection { a, b, .. }
            | Rule::Leap { a, b, .. }
            | Rule::LeapStar { a, b, .. } => Some((a, b)),
            Rule::Mnp { .. } => None,
        }
    }

    /// Threshold-free shape of a sequential rule.
    pub fn shape(&self) -> Option<Shape> {
        match *self {
            Rule::SumIntersection { k, .. } => Some(Shape::SumIntersection { k }),
            Rule::Intersection { .. } => Some(Shape::Intersection),
            Rule::AsymSumIntersection { k1, k2, .. } => Some(Shape::AsymSumIntersection { k1, k2 }),
            Rule::Leap { k1, k2, .. } | Rule::LeapStar { k1, k2, .. } => Some(Shape::Leap { k1, k2 }),
            Rule::Mnp { .. } => None,
        }
    }

    pub fn validate(&self, j: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidProcedure(m));
        if let Some((a, b)) = self.thresholds() {
            if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
                return bad(format!("thresholds must be finite and > 0, got a = {a}, b = {b}"));
            }
        }
        match self {
            Rule::SumIntersection { k, .. } => {
                if *k == 0 || *k >= j {
                    return bad(format!("need 1 <= k < J, got k = {k}, J = {j}"));
                }
            }
            Rule::AsymSumIntersection { k1, k2, .. } | Rule::Leap { k1, k2, .. } | Rule::LeapStar { k1, k2, .. } => {
                if *k1 == 0 || *k2 == 0 || k1 + k2 > j {
                    return bad(format!(
                        "need k1, k2 >= 1 and k1 + k2 <= J, got k1 = {k1}, k2 = {k2}, J = {j}"
                    ));
                }
            }
            Rule::Mnp { n, h } => {
                if *n == 0 {
                    return bad("MNP sample size must be >= 1".into());
                }
                if h.len() != j {
                    return Err(Error::LengthMismatch {
                        expected: j,
                        got: h.len(),
                    });
                }
                if h.iter().any(|x| x.is_nan()) {
                    return bad("MNP drift h contains NaN".into());
                }
            }
            Rule::Intersection { .. } => {}
        }
        Ok(())
    }
}

/// Sequential rule without thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    SumIntersection { k: usize },
    Intersection,
    AsymSumIntersection { k1: usize, k2: usize },
    Leap { k1: usize, k2: usize },
}

impl Shape {
    /// The rule at thresholds `a = r·b`, `b`.
    pub fn with_thresholds(&self, ratio: f64, b: f64) -> Rule {
        let a = ratio * b;
        match *self {
            Shape::SumIntersection { k } => Rule::SumIntersection { k, b },
            Shape::Intersection => Rule::Intersection { a, b },
            Shape::AsymSumIntersection { k1, k2 } => Rule::AsymSumIntersection { k1, k2, a, b },
            Shape::Leap { k1, k2 } => Rule::Leap { k1, k2, a, b },
        }
    }

    /// Number of stopping-score components.
    pub fn component_count(&self) -> usize {
        match *self {
            Shape::Leap { k1, k2 } => k1 + k2 - 1,
            _ => 1,
        }
    }

    /// Per-component stopping scores at ratio `r = a/b`, written into `out`.
    /// The rule stops at `b` iff the maximum is `≥ b`.
    pub fn component_scores(&self, ratio: f64, view: &OrderedLlrView, out: &mut Vec<f64>) {
        out.clear();
        match *self {
            Shape::SumIntersection { k } => out.push(view.sum_k_smallest_abs_unchecked(k)),
            Shape::Intersection => {
                let pos = view.hat().first().map_or(f64::INFINITY, |e| e.0);
                let neg = view.check().first().map_or(f64::INFINITY, |e| e.0 / ratio);
                out.push(pos.min(neg));
            }
            Shape::AsymSumIntersection { k1, k2 } => {
                out.push(view.hat_sum(1, k1).min(view.check_sum(1, k2) / ratio));
            }
            Shape::Leap { k1, k2 } => {
                for ell in 0..k1 {
                    let h = view.hat_sum(1, k1 - ell);
                    let c = view.check_sum(ell + 1, ell + k2);
                    out.push(h.min(c / ratio));
                }
                for ell in 1..k2 {
                    let h = view.hat_sum(ell + 1, ell + k1);
                    let c = view.check_sum(1, k2 - ell);
                    out.push(h.min(c / ratio));
                }
            }
        }
    }

    /// Component label for index `i` of [`Self::component_scores`].
    pub fn component(&self, i: usize) -> Component {
        match *self {
            Shape::Leap { k1, .. } => {
                if i < k1 {
                    Component::Hat(i)
                } else {
                    Component::Check(i - k1 + 1)
                }
            }
            _ => Component::Hat(0),
        }
    }

    /// Rejected set at threshold `b`, given the component scores of a step
    /// where the rule stops. Returns a mask over streams.
    pub fn decision_mask(&self, b: f64, view: &OrderedLlrView, scores: &[f64], mask: &mut [bool]) {
        mask.iter_mut().for_each(|m| *m = false);
        for &(_, j) in view.hat() {
            mask[j] = true;
        }
        if let Shape::Leap { k1, .. } = *self {
            let fired = |i: usize| scores[i] >= b;
            // Hat components grow with ℓ and every check component is a
            // subset of the positives, so the union is the largest firing
            // hat set, else the largest firing check set.
            if let Some(ell) = (0..k1).rev().find(|&l| fired(l)) {
                for &(_, j) in view.check().iter().take(ell) {
                    mask[j] = true;
                }
            } else if let Some(i) = (k1..scores.len()).find(|&i| fired(i)) {
                let ell = i - k1 + 1;
                for &(_, j) in view.hat().iter().take(ell) {
                    mask[j] = false;
                }
            }
        }
    }
}

/// A Leap component: `Hat(ℓ)` for `τ̂_ℓ`, `Check(ℓ)` for `τ̌_ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Hat(usize),
    Check(usize),
}

impl std::fmt::Display for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Component::Hat(l) => write!(f, "hat_{l}"),
            Component::Check(l) => write!(f, "check_{l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcedureSpec {
    pub rule: Rule,
    pub horizon_cap: u64,
}

impl ProcedureSpec {
    pub fn new(rule: Rule, j: usize, horizon_cap: u64) -> Result<Self> {
        rule.validate(j)?;
        if horizon_cap == 0 {
            return Err(Error::InvalidProcedure("horizon cap must be >= 1".into()));
        }
        Ok(Self { rule, horizon_cap })
    }

    /// [`ProcedureSpec`] with the default cap `50·max(a, b, 1) / min KL` (MNP: `n`).
    pub fn with_default_cap(rule: Rule, models: &[StreamModel]) -> Result<Self> {
        let cap = default_horizon_cap(&rule, models)?;
        Self::new(rule, models.len(), cap)
    }
}

/// `50·max(a, b, 1) / min_j min(I1, I0)`; composite streams use `μ²/2`.
pub fn default_horizon_cap(rule: &Rule, models: &[StreamModel]) -> Result<u64> {
    match rule.thresholds() {
        None => match rule {
            Rule::Mnp { n, .. } => Ok(*n),
            _ => unreachable!(),
        },
        Some((a, b)) => {
            let kl = min_information(models)?;
            Ok(((50.0 * a.max(b).max(1.0) / kl).ceil() as u64).max(1))
        }
    }
}

pub fn min_information(models: &[StreamModel]) -> Result<f64> {
    let mut kl = f64::INFINITY;
    for m in models {
        let i = match m {
            StreamModel::CompositeGaussianMean { mu, .. } => mu * mu / 2.0,
            _ => {
                let (i1, i0) = m.kl_pair()?;
                i1.min(i0)
            }
        };
        kl = kl.min(i);
    }
    if !kl.is_finite() {
        return Err(Error::InvalidModel("empty model bank".into()));
    }
    Ok(kl)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub stopped: bool,
    /// Stopping time (`horizon_cap` on abort).
    #[serde(rename = "T")]
    pub t: u64,
    /// Rejected nulls, 0-based, ascending.
    #[serde(rename = "D")]
    pub d: Vec<usize>,
    pub aborted_at_cap: bool,
    pub achieving_components: Vec<Component>,
}

fn mask_to_set(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter_map(|(j, &m)| m.then_some(j)).collect()
}

fn positives(view: &OrderedLlrView) -> Vec<usize> {
    let mut d: Vec<usize> = view.hat().iter().map(|e| e.1).collect();
    d.sort_unstable();
    d
}

/// Rejected set if the Sum-Intersection rule stops on `view`.
pub fn step_sum_intersection(k: usize, b: f64, view: &OrderedLlrView) -> Result<Option<Vec<usize>>> {
    Ok((view.sum_k_smallest_abs(k)? >= b).then(|| positives(view)))
}

/// Rejected set if every LLR is outside `(−a, b)`.
pub fn step_intersection(a: f64, b: f64, view: &OrderedLlrView) -> Option<Vec<usize>> {
    let pos_ok = view.hat().iter().all(|e| e.0 >= b);
    let neg_ok = view.check().iter().all(|e| e.0 >= a);
    (pos_ok && neg_ok).then(|| positives(view))
}

/// Rejected set if the asymmetric Sum-Intersection rule stops.
pub fn step_asym_sum_intersection(
    k1: usize,
    k2: usize,
    a: f64,
    b: f64,
    view: &OrderedLlrView,
) -> Result<Option<Vec<usize>>> {
    let d = step_hat_tau(0, k1, k2, a, b, view)?;
    Ok(d.fired.then_some(d.d))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentDecision {
    pub fired: bool,
    pub d: Vec<usize>,
}

/// `τ̂_ℓ`: the `k1 − ℓ` smallest positives reach `b` and ranks
/// `ℓ+1..ℓ+k2` of the non-positives reach `a`. Rejects every positive
/// stream plus the `ℓ` least significant non-positive ones.
pub fn step_hat_tau(
    ell: usize,
    k1: usize,
    k2: usize,
    a: f64,
    b: f64,
    view: &OrderedLlrView,
) -> Result<ComponentDecision> {
    if ell >= k1 {
        return Err(Error::OutOfRange(format!("hat component {ell} needs ell < k1 = {k1}")));
    }
    let fired = view.hat_partial_sum(1, k1 - ell)?.ge(&b) && view.check_partial_sum(ell + 1, ell + k2)?.ge(&a);
    let mut d = positives(view);
    d.extend(view.check().iter().take(ell).map(|e| e.1));
    d.sort_unstable();
    Ok(ComponentDecision { fired, d })
}

/// `τ̌_ℓ`: ranks `ℓ+1..ℓ+k1` of the positives reach `b` and the `k2 − ℓ`
/// smallest non-positives reach `a`. Rejects the positives except the `ℓ`
/// least significant.
pub fn step_check_tau(
    ell: usize,
    k1: usize,
    k2: usize,
    a: f64,
    b: f64,
    view: &OrderedLlrView,
) -> Result<ComponentDecision> {
    if ell >= k2 {
        return Err(Error::OutOfRange(format!(
            "check component {ell} needs ell < k2 = {k2}"
        )));
    }
    let fired = view.hat_partial_sum(ell + 1, ell + k1)?.ge(&b) && view.check_partial_sum(1, k2 - ell)?.ge(&a);
    let mut d: Vec<usize> = view.hat().iter().skip(ell).map(|e| e.1).collect();
    d.sort_unstable();
    Ok(ComponentDecision { fired, d })
}

/// Leap rule: stops as soon as any component fires and rejects the union of
/// the firing components' sets.
pub fn step_leap(
    k1: usize,
    k2: usize,
    a: f64,
    b: f64,
    view: &OrderedLlrView,
) -> Result<Option<(Vec<usize>, Vec<Component>)>> {
    let mut mask = vec![false; view.len()];
    let mut comps = Vec::new();
    for ell in 0..k1 {
        let c = step_hat_tau(ell, k1, k2, a, b, view)?;
        if c.fired {
            comps.push(Component::Hat(ell));
            c.d.iter().for_each(|&j| mask[j] = true);
        }
    }
    for ell in 1..k2 {
        let c = step_check_tau(ell, k1, k2, a, b, view)?;
        if c.fired {
            comps.push(Component::Check(ell));
            c.d.iter().for_each(|&j| mask[j] = true);
        }
    }
    Ok((!comps.is_empty()).then(|| (mask_to_set(&mask), comps)))
}

/// Fixed-sample decision `{j : λ^j(n) > n·h_j}`.
pub fn decide_mnp(n: u64, h: &[f64], lambda: &[f64]) -> Result<Vec<usize>> {
    if h.len() != lambda.len() {
        return Err(Error::LengthMismatch {
            expected: lambda.len(),
            got: h.len(),
        });
    }
    Ok(lambda
        .iter()
        .zip(h)
        .enumerate()
        .filter_map(|(j, (&l, &hj))| mnp_rejects(n, hj, l).then_some(j))
        .collect())
}

#[inline]
pub fn mnp_rejects(n: u64, h: f64, lambda: f64) -> bool {
    if h == f64::NEG_INFINITY {
        true
    } else if h == f64::INFINITY {
        false
    } else {
        lambda > n as f64 * h
    }
}

/// Incremental state machine for one trial.
///
/// Feed the current statistic vector after every observation vector with
/// [`Procedure::advance`]; `None` marks a step where some adaptive statistic
/// is undefined.
#[derive(Debug, Clone)]
pub struct Procedure {
    spec: ProcedureSpec,
    j: usize,
    n: u64,
    view: OrderedLlrView,
    last: Vec<f64>,
    decision: Option<Decision>,
}

impl Procedure {
    pub fn new(spec: ProcedureSpec, models: &[StreamModel]) -> Result<Self> {
        spec.rule.validate(models.len())?;
        if let Rule::LeapStar { .. } = spec.rule {
            if let Some(j) = models.iter().position(|m| !m.is_composite()) {
                return Err(Error::SimpleStream(j));
            }
        }
        Ok(Self {
            j: models.len(),
            n: 0,
            view: OrderedLlrView::default(),
            last: vec![0.0; models.len()],
            decision: None,
            spec,
        })
    }

    pub fn spec(&self) -> &ProcedureSpec {
        &self.spec
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn decision(&self) -> Option<&Decision> {
        self.decision.as_ref()
    }

    /// Advances one step. Returns the decision once the procedure has
    /// stopped or hit its cap.
    pub fn advance(&mut self, stats: Option<&[f64]>) -> Result<Option<&Decision>> {
        if self.decision.is_some() {
            return Ok(self.decision.as_ref());
        }
        if let Some(s) = stats {
            if s.len() != self.j {
                return Err(Error::LengthMismatch {
                    expected: self.j,
                    got: s.len(),
                });
            }
            self.last.copy_from_slice(s);
        }
        self.n += 1;
        if let Rule::Mnp { n, ref h } = self.spec.rule {
            if self.n == n {
                let s = stats.ok_or(Error::PrematureQuery { at: self.n, needed: n })?;
                self.decision = Some(Decision {
                    stopped: true,
                    t: n,
                    d: decide_mnp(n, h, s)?,
                    aborted_at_cap: false,
                    achieving_components: Vec::new(),
                });
            }
            return Ok(self.decision.as_ref());
        }
        if let Some(s) = stats {
            self.view.rebuild(s);
            if let Some((d, comps)) = self.evaluate()? {
                self.decision = Some(Decision {
                    stopped: true,
                    t: self.n,
                    d,
                    aborted_at_cap: false,
                    achieving_components: comps,
                });
                return Ok(self.decision.as_ref());
            }
        }
        if self.n >= self.spec.horizon_cap {
            let cleaned: Vec<f64> = self.last.iter().map(|x| if x.is_nan() { 0.0 } else { *x }).collect();
            self.view.rebuild(&cleaned);
            self.decision = Some(Decision {
                stopped: false,
                t: self.spec.horizon_cap,
                d: positives(&self.view),
                aborted_at_cap: true,
                achieving_components: Vec::new(),
            });
        }
        Ok(self.decision.as_ref())
    }

    fn evaluate(&self) -> Result<Option<(Vec<usize>, Vec<Component>)>> {
        let v = &self.view;
        Ok(match self.spec.rule {
            Rule::SumIntersection { k, b } => step_sum_intersection(k, b, v)?.map(|d| (d, vec![Component::Hat(0)])),
            Rule::Intersection { a, b } => step_intersection(a, b, v).map(|d| (d, vec![Component::Hat(0)])),
            Rule::AsymSumIntersection { k1, k2, a, b } => {
                step_asym_sum_intersection(k1, k2, a, b, v)?.map(|d| (d, vec![Component::Hat(0)]))
            }
            Rule::Leap { k1, k2, a, b } | Rule::LeapStar { k1, k2, a, b } => step_leap(k1, k2, a, b, v)?,
            Rule::Mnp { .. } => None,
        })
    }
}

/// Runs `rule` over a precomputed statistic path (row `i` is time `i + 1`).
pub fn run_path(spec: &ProcedureSpec, models: &[StreamModel], path: &[Vec<Option<f64>>]) -> Result<Decision> {
    let mut p = Procedure::new(spec.clone(), models)?;
    let mut buf = Vec::with_capacity(models.len());
    for row in path {
        buf.clear();
        let defined = row.iter().all(Option::is_some);
        buf.extend(row.iter().map(|x| x.unwrap_or(f64::NAN)));
        if let Some(d) = p.advance(defined.then_some(buf.as_slice()))? {
            return Ok(d.clone());
        }
    }
    Err(Error::OutOfRange(format!(
        "path of length {} ended before the procedure decided",
        path.len()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{TrialKey, DOMAIN_CHECK};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn view(l: &[f64]) -> OrderedLlrView {
        OrderedLlrView::from_values(l)
    }

    #[test]
    fn sum_intersection_hand_traces() {
        assert_eq!(step_sum_intersection(1, 1.0, &view(&[1.2, -0.5])).unwrap(), None);
        assert_eq!(
            step_sum_intersection(1, 1.0, &view(&[1.2, -1.1])).unwrap(),
            Some(vec![0])
        );
    }

    #[test]
    fn intersection_hand_traces() {
        assert_eq!(step_intersection(1.0, 1.0, &view(&[1.2, -1.1])), Some(vec![0]));
        assert_eq!(step_intersection(1.0, 1.0, &view(&[1.2, 0.0])), None);
        assert_eq!(step_intersection(2.0, 1.0, &view(&[-1.5, 1.1])), None);
    }

    /// J = 7, k1 = 3, k2 = 2 with four positives: `τ̂_2` only needs the
    /// smallest positive to reach `b`.
    #[test]
    fn hat_two_has_a_single_condition() {
        let l = [0.4, -0.2, 1.1, -0.9, 0.3, 2.0, -0.6];
        let v = view(&l);
        let c = step_hat_tau(2, 3, 2, 100.0, 0.3, &v).unwrap();
        assert!(c.fired);
        assert!(!step_hat_tau(2, 3, 2, 100.0, 0.31, &v).unwrap().fired);
        assert_eq!(c.d, vec![0, 1, 2, 4, 5, 6]);
    }

    #[test]
    fn hat_zero_is_asym_sum_intersection() {
        let v = view(&[0.8, -1.3, 2.0, -0.7, 0.1]);
        for (a, b) in [(1.0, 1.0), (2.0, 0.9), (0.5, 3.0)] {
            let h = step_hat_tau(0, 2, 2, a, b, &v).unwrap();
            let s = step_asym_sum_intersection(2, 2, a, b, &v).unwrap();
            assert_eq!(h.fired, s.is_some());
        }
    }

    #[test]
    fn hat_one_hand_trace() {
        let v = view(&[2.1, -0.3, -0.9, -1.2]);
        assert!(!step_hat_tau(1, 2, 1, 1.0, 1.0, &v).unwrap().fired);
        assert!(step_hat_tau(2, 2, 1, 1.0, 1.0, &v).is_err());
    }

    #[test]
    fn check_one_leaps_over_a_weak_positive() {
        let v = view(&[0.2, 3.0, -2.5, -2.8]);
        let c = step_check_tau(1, 1, 2, 2.0, 2.0, &v).unwrap();
        assert!(c.fired);
        assert_eq!(c.d, vec![1]);
        let none = view(&[-1.0, -2.0, -3.0]);
        assert!(step_check_tau(1, 1, 2, 1.0, 2.0, &none).unwrap().fired);
        assert!(step_check_tau(1, 1, 1, 1.0, 1.0, &v).is_err());
    }

    /// `τ̂_0` (ranks 1..2 of the positives, 0.4 + 1.5) and `τ̌_1` (rank 2
    /// onward is past `p`) both fire; the union keeps both positives.
    #[test]
    fn leap_hand_trace() {
        let v = view(&[1.5, 0.4, -1.2, -1.3]);
        let (d, comps) = step_leap(2, 2, 1.0, 1.0, &v).unwrap().unwrap();
        assert_eq!(d, vec![0, 1]);
        assert_eq!(comps, vec![Component::Hat(0), Component::Check(1)]);
        let (d, comps) = step_leap(2, 2, 1.0, 2.0, &v).unwrap().unwrap();
        assert_eq!(d, vec![0]);
        assert_eq!(comps, vec![Component::Check(1)]);
        let v0 = view(&[1.5, 2.0, -1.2, -1.3]);
        let (d0, _) = step_leap(1, 1, 1.0, 1.0, &v0).unwrap().unwrap();
        assert_eq!(d0, vec![0, 1]);
    }

    #[test]
    fn mnp_decisions() {
        assert_eq!(decide_mnp(3, &[0.0, 0.0], &[0.4, -0.2]).unwrap(), vec![0]);
        let h = [f64::NEG_INFINITY, f64::INFINITY, 0.0];
        assert_eq!(decide_mnp(5, &h, &[-100.0, 100.0, 1.0]).unwrap(), vec![0, 2]);
        assert_eq!(decide_mnp(2, &[0.5], &[1.0]).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn mnp_state_machine_decides_at_n() {
        let models = vec![StreamModel::gaussian(0.5, 1.0).unwrap(); 2];
        let spec = ProcedureSpec::with_default_cap(
            Rule::Mnp {
                n: 3,
                h: vec![0.0, 0.0],
            },
            &models,
        )
        .unwrap();
        let mut p = Procedure::new(spec, &models).unwrap();
        assert!(p.advance(Some(&[1.0, 1.0])).unwrap().is_none());
        assert!(p.advance(Some(&[1.0, 1.0])).unwrap().is_none());
        let d = p.advance(Some(&[0.4, -0.2])).unwrap().unwrap();
        assert_eq!((d.t, d.d.clone()), (3, vec![0]));
    }

    #[test]
    fn validation() {
        assert!(Rule::SumIntersection { k: 3, b: 1.0 }.validate(3).is_err());
        assert!(Rule::Leap {
            k1: 2,
            k2: 2,
            a: 1.0,
            b: 1.0
        }
        .validate(3)
        .is_err());
        assert!(Rule::Intersection { a: 0.0, b: 1.0 }.validate(3).is_err());
        assert!(Rule::Mnp { n: 0, h: vec![0.0] }.validate(1).is_err());
        assert!(Rule::Mnp { n: 2, h: vec![0.0] }.validate(2).is_err());
        let models = vec![StreamModel::gaussian(0.5, 1.0).unwrap(); 3];
        let spec = ProcedureSpec::with_default_cap(
            Rule::LeapStar {
                k1: 1,
                k2: 1,
                a: 1.0,
                b: 1.0,
            },
            &models,
        )
        .unwrap();
        assert!(matches!(Procedure::new(spec, &models), Err(Error::SimpleStream(0))));
    }

    #[test]
    fn default_cap_scales_with_threshold_over_information() {
        let models = vec![StreamModel::gaussian(0.5, 1.0).unwrap(); 3];
        let cap = default_horizon_cap(&Rule::Intersection { a: 2.0, b: 1.0 }, &models).unwrap();
        assert_eq!(cap, 800);
    }

    #[test]
    fn undefined_statistics_block_stopping() {
        let models = vec![StreamModel::composite_gaussian(0.2, 0, 0.0).unwrap(); 2];
        let spec = ProcedureSpec::new(
            Rule::LeapStar {
                k1: 1,
                k2: 1,
                a: 1.0,
                b: 1.0,
            },
            2,
            10,
        )
        .unwrap();
        let path = vec![vec![Some(5.0), None], vec![Some(5.0), Some(-5.0)]];
        let d = run_path(&spec, &models, &path).unwrap();
        assert_eq!((d.t, d.d.clone()), (2, vec![0]));
    }

    #[test]
    fn cap_aborts_with_flag() {
        let models = vec![StreamModel::gaussian(0.5, 1.0).unwrap(); 2];
        let spec = ProcedureSpec::new(Rule::Intersection { a: 10.0, b: 10.0 }, 2, 2).unwrap();
        let path = vec![vec![Some(1.0), Some(-1.0)]; 3];
        let d = run_path(&spec, &models, &path).unwrap();
        assert!(d.aborted_at_cap && !d.stopped);
        assert_eq!((d.t, d.d), (2, vec![0]));
    }

    fn random_path(seed: u64, j: usize, len: usize, drift: &[f64]) -> Vec<Vec<Option<f64>>> {
        let mut rng = TrialKey::new(seed, DOMAIN_CHECK, 77, 0).stream(0);
        let mut lam = vec![0.0; j];
        (0..len)
            .map(|_| {
                for (l, d) in lam.iter_mut().zip(drift) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *l += d + 0.5 * z;
                }
                lam.iter().map(|&x| Some(x)).collect()
            })
            .collect()
    }

    fn models(j: usize) -> Vec<StreamModel> {
        vec![StreamModel::gaussian(0.5, 1.0).unwrap(); j]
    }

    fn run(rule: Rule, path: &[Vec<Option<f64>>], j: usize) -> Decision {
        let spec = ProcedureSpec::new(rule, j, path.len() as u64).unwrap();
        run_path(&spec, &models(j), path).unwrap()
    }

    #[test]
    fn equivalences_hold_pathwise() {
        for seed in 0..1000 {
            let j = 2 + (seed as usize % 5);
            let drift: Vec<f64> = (0..j)
                .map(|i| {
                    if (seed as usize + i).is_multiple_of(3) {
                        0.1
                    } else {
                        -0.1
                    }
                })
                .collect();
            let path = random_path(seed, j, 400, &drift);
            let b = 1.0 + (seed % 7) as f64 * 0.5;
            let a = 0.5 + (seed % 5) as f64 * 0.7;
            let s = run(Rule::SumIntersection { k: 1, b }, &path, j);
            let i = run(Rule::Intersection { a: b, b }, &path, j);
            assert_eq!((s.t, &s.d), (i.t, &i.d), "seed {seed}");
            let l = run(Rule::Leap { k1: 1, k2: 1, a, b }, &path, j);
            let i2 = run(Rule::Intersection { a, b }, &path, j);
            assert_eq!((l.t, &l.d), (i2.t, &i2.d), "seed {seed}");
        }
    }

    fn shape_stops(shape: Shape, ratio: f64, b: f64, v: &OrderedLlrView) -> bool {
        let mut scores = Vec::new();
        shape.component_scores(ratio, v, &mut scores);
        scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max) >= b
    }

    fn direct_stops(rule: &Rule, v: &OrderedLlrView) -> bool {
        match *rule {
            Rule::SumIntersection { k, b } => step_sum_intersection(k, b, v).unwrap().is_some(),
            Rule::Intersection { a, b } => step_intersection(a, b, v).is_some(),
            Rule::AsymSumIntersection { k1, k2, a, b } => {
                step_asym_sum_intersection(k1, k2, a, b, v).unwrap().is_some()
            }
            Rule::Leap { k1, k2, a, b } => step_leap(k1, k2, a, b, v).unwrap().is_some(),
            _ => unreachable!(),
        }
    }

    fn shapes(j: usize) -> Vec<Shape> {
        let mut out = vec![Shape::Intersection];
        for k in 1..j {
            out.push(Shape::SumIntersection { k });
        }
        for k1 in 1..j {
            for k2 in 1..=(j - k1) {
                out.push(Shape::AsymSumIntersection { k1, k2 });
                out.push(Shape::Leap { k1, k2 });
            }
        }
        out
    }

    proptest! {
        #[test]
        fn score_matches_direct_rule(
            lambda in prop::collection::vec(-4.0f64..4.0, 2..7),
            b in 0.05f64..5.0,
            ratio in prop::sample::select(vec![0.5, 1.0, 2.0]),
        ) {
            let v = OrderedLlrView::from_values(&lambda);
            for shape in shapes(lambda.len()) {
                let rule = shape.with_thresholds(ratio, b);
                prop_assert_eq!(shape_stops(shape, ratio, b, &v), direct_stops(&rule, &v), "{:?}", shape);
            }
        }

        #[test]
        fn leap_mask_matches_union(
            lambda in prop::collection::vec(-4.0f64..4.0, 2..8),
            b in 0.05f64..3.0,
        ) {
            let j = lambda.len();
            let v = OrderedLlrView::from_values(&lambda);
            for k1 in 1..j {
                for k2 in 1..=(j - k1) {
                    let shape = Shape::Leap { k1, k2 };
                    let mut scores = Vec::new();
                    shape.component_scores(1.0, &v, &mut scores);
                    if let Some((d, comps)) = step_leap(k1, k2, b, b, &v).unwrap() {
                        let mut mask = vec![false; j];
                        shape.decision_mask(b, &v, &scores, &mut mask);
                        prop_assert_eq!(mask_to_set(&mask), d);
                        let fired: Vec<Component> = (0..scores.len())
                            .filter(|&i| scores[i] >= b)
                            .map(|i| shape.component(i))
                            .collect();
                        prop_assert_eq!(fired, comps);
                    }
                }
            }
        }

        #[test]
        fn decision_shape_sizes(
            lambda in prop::collection::vec(-4.0f64..4.0, 4..8),
            ell in 0usize..3,
        ) {
            let j = lambda.len();
            let v = OrderedLlrView::from_values(&lambda);
            let c = step_hat_tau(ell, 3, j - 3, 1.0, 1.0, &v).unwrap();
            prop_assert_eq!(c.d.len(), v.p() + ell.min(v.q()));
            let c = step_check_tau(ell, 1, 3, 1.0, 1.0, &v).unwrap();
            prop_assert_eq!(c.d.len(), v.p().saturating_sub(ell));
        }

        #[test]
        fn raising_thresholds_never_stops_earlier(seed in 0u64..200, scale in 1.01f64..3.0) {
            let j = 4;
            let path = random_path(seed, j, 600, &[0.1, -0.1, 0.05, -0.2]);
            for rule in [
                Rule::SumIntersection { k: 2, b: 1.5 },
                Rule::Intersection { a: 1.0, b: 1.5 },
                Rule::AsymSumIntersection { k1: 2, k2: 1, a: 1.0, b: 1.5 },
                Rule::Leap { k1: 2, k2: 2, a: 1.5, b: 1.0 },
            ] {
                let (a, b) = rule.thresholds().unwrap();
                let shape = rule.shape().unwrap();
                let low = run(rule.clone(), &path, j);
                let high = run(shape.with_thresholds(a / b, b * scale), &path, j);
                prop_assert!(high.t >= low.t);
            }
        }
    }

    /// At every stop the defining inequalities hold.
    #[test]
    fn stopped_values_satisfy_the_rule() {
        for seed in 0..200 {
            let path = random_path(seed, 5, 800, &[0.1, -0.1, 0.05, -0.2, 0.15]);
            let d = run(Rule::SumIntersection { k: 2, b: 3.0 }, &path, 5);
            if d.stopped {
                let row: Vec<f64> = path[d.t as usize - 1].iter().map(|x| x.unwrap()).collect();
                assert!(view(&row).sum_k_smallest_abs(2).unwrap() >= 3.0);
            }
            let d = run(
                Rule::Leap {
                    k1: 2,
                    k2: 2,
                    a: 2.0,
                    b: 3.0,
                },
                &path,
                5,
            );
            if d.stopped {
                let row: Vec<f64> = path[d.t as usize - 1].iter().map(|x| x.unwrap()).collect();
                let v = view(&row);
                for c in &d.achieving_components {
                    match *c {
                        Component::Hat(l) => {
                            assert!(v.hat_partial_sum(1, 2 - l).unwrap().ge(&3.0));
                            assert!(v.check_partial_sum(l + 1, l + 2).unwrap().ge(&2.0));
                        }
                        Component::Check(l) => {
                            assert!(v.hat_partial_sum(l + 1, l + 2).unwrap().ge(&3.0));
                            assert!(v.check_partial_sum(1, 2 - l).unwrap().ge(&2.0));
                        }
                    }
                }
            }
        }
    }
}
