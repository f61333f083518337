//! Per-path test statistics.
//!
//! [`LlrState`] accumulates the LLR vector of simple streams and
//! [`OrderedLlrView`] exposes its three orderings:
//!
//! * `tilde`: all `|λ|`, ascending;
//! * `hat`: the strictly positive `λ`, ascending (`p` of them);
//! * `check`: `|λ|` of the non-positive `λ`, ascending (`q = J − p`).
//!
//! Ranks are 1-based in the public API. A rank beyond `p` (resp. `q`) reads
//! as `+∞`, so any partial sum touching it is `+∞`. Ties are broken by
//! ascending stream index.
//!
//! [`AdaptiveState`] holds the one-step-delayed plug-in likelihood of the
//! composite Gaussian-mean problem and its signed statistic `λ*`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::extreal::ExtReal;
use crate::models::StreamModel;

/// Running LLR vector `λ(n)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlrState {
    n: u64,
    lambda: Vec<f64>,
}

impl LlrState {
    pub fn new(j: usize) -> Self {
        Self {
            n: 0,
            lambda: vec![0.0; j],
        }
    }

    pub fn from_values(n: u64, lambda: Vec<f64>) -> Self {
        Self { n, lambda }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn update(&mut self, increments: &[f64]) -> Result<()> {
        if increments.len() != self.lambda.len() {
            return Err(Error::LengthMismatch {
                expected: self.lambda.len(),
                got: increments.len(),
            });
        }
        for (l, d) in self.lambda.iter_mut().zip(increments) {
            *l += d;
        }
        self.n += 1;
        Ok(())
    }

    pub fn view(&self) -> OrderedLlrView {
        OrderedLlrView::from_values(&self.lambda)
    }
}

/// Ordered views of one LLR vector. Entries are `(value, stream index)` with
/// 0-based stream indices; `check` values are stored as magnitudes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OrderedLlrView {
    tilde: Vec<(f64, usize)>,
    hat: Vec<(f64, usize)>,
    check: Vec<(f64, usize)>,
}

impl OrderedLlrView {
    pub fn from_values(lambda: &[f64]) -> Self {
        let mut v = Self::default();
        v.rebuild(lambda);
        v
    }

    /// Recomputes the views in place, reusing the buffers.
    pub fn rebuild(&mut self, lambda: &[f64]) {
        self.tilde.clear();
        self.tilde.extend(lambda.iter().enumerate().map(|(j, &l)| (l.abs(), j)));
        self.tilde
            .sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        self.hat.clear();
        self.check.clear();
        for &(m, j) in &self.tilde {
            if lambda[j] > 0.0 {
                self.hat.push((m, j));
            } else {
                self.check.push((m, j));
            }
        }
    }

    /// Rebuilds from magnitudes already sorted by `(|λ|, index)`;
    /// `positive(j)` tells whether `λ^j > 0`.
    pub(crate) fn rebuild_from_sorted(&mut self, sorted: &[(f64, usize)], positive: impl Fn(usize) -> bool) {
        self.tilde.clear();
        self.tilde.extend_from_slice(sorted);
        self.hat.clear();
        self.check.clear();
        for &(m, j) in sorted {
            if positive(j) {
                self.hat.push((m, j));
            } else {
                self.check.push((m, j));
            }
        }
    }

    pub fn len(&self) -> usize {
        self.tilde.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tilde.is_empty()
    }

    /// Number of strictly positive LLRs.
    pub fn p(&self) -> usize {
        self.hat.len()
    }

    /// Number of non-positive LLRs.
    pub fn q(&self) -> usize {
        self.check.len()
    }

    pub fn tilde(&self) -> &[(f64, usize)] {
        &self.tilde
    }

    pub fn hat(&self) -> &[(f64, usize)] {
        &self.hat
    }

    pub fn check(&self) -> &[(f64, usize)] {
        &self.check
    }

    /// Sum of the `k` smallest `|λ|`.
    pub fn sum_k_smallest_abs(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.len() {
            return Err(Error::OutOfRange(format!("k = {k} outside 1..={}", self.len())));
        }
        Ok(self.sum_k_smallest_abs_unchecked(k))
    }

    #[inline]
    pub(crate) fn sum_k_smallest_abs_unchecked(&self, k: usize) -> f64 {
        self.tilde[..k].iter().map(|e| e.0).sum()
    }

    /// `hat[lo] + … + hat[hi]`, 1-based, `+∞` past rank `p`.
    pub fn hat_partial_sum(&self, lo: usize, hi: usize) -> Result<ExtReal<f64>> {
        self.check_range(lo, hi)?;
        Ok(ranked_sum(&self.hat, lo, hi))
    }

    /// `check[lo] + … + check[hi]`, 1-based, `+∞` past rank `q`.
    pub fn check_partial_sum(&self, lo: usize, hi: usize) -> Result<ExtReal<f64>> {
        self.check_range(lo, hi)?;
        Ok(ranked_sum(&self.check, lo, hi))
    }

    /// Float form of [`Self::hat_partial_sum`] for the inner loops.
    #[inline]
    pub(crate) fn hat_sum(&self, lo: usize, hi: usize) -> f64 {
        ranked_sum_f64(&self.hat, lo, hi)
    }

    #[inline]
    pub(crate) fn check_sum(&self, lo: usize, hi: usize) -> f64 {
        ranked_sum_f64(&self.check, lo, hi)
    }

    fn check_range(&self, lo: usize, hi: usize) -> Result<()> {
        if lo == 0 || lo > hi || hi > self.len() {
            return Err(Error::OutOfRange(format!(
                "rank range {lo}..={hi} invalid for J = {}",
                self.len()
            )));
        }
        Ok(())
    }
}

fn ranked_sum(entries: &[(f64, usize)], lo: usize, hi: usize) -> ExtReal<f64> {
    if hi > entries.len() {
        ExtReal::PosInf
    } else {
        ExtReal::Finite(entries[lo - 1..hi].iter().map(|e| e.0).sum())
    }
}

#[inline]
fn ranked_sum_f64(entries: &[(f64, usize)], lo: usize, hi: usize) -> f64 {
    if hi > entries.len() {
        f64::INFINITY
    } else {
        entries[lo - 1..hi].iter().map(|e| e.0).sum()
    }
}

/// Adaptive statistics of one composite Gaussian-mean stream
/// (`H0: θ ≤ 0` vs `H1: θ ≥ μ`, unit variance).
///
/// With `S` the sum of the first `n` main observations,
/// `ℓ(n, θ) = θS − nθ²/2`, `ℓ0 = sup_{θ≤0} ℓ`, `ℓ1 = sup_{θ≥μ} ℓ`, and
/// `ℓ*(n) = Σ_i (θ̂_{i−1} X_i − θ̂_{i−1}²/2)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptiveStream {
    mu: f64,
    n: u64,
    sum: f64,
    init_sum: f64,
    n0: u32,
    ell_star: f64,
    theta_hat: f64,
}

impl AdaptiveStream {
    /// `initial` holds the `n0` pre-sample observations. When it is empty the
    /// first estimate is `theta_hat0`.
    pub fn new(mu: f64, initial: &[f64], theta_hat0: f64) -> Self {
        let n0 = initial.len() as u32;
        let init_sum: f64 = initial.iter().sum();
        let theta_hat = if n0 == 0 {
            theta_hat0
        } else {
            project(init_sum / n0 as f64, mu)
        };
        Self {
            mu,
            n: 0,
            sum: 0.0,
            init_sum,
            n0,
            ell_star: 0.0,
            theta_hat,
        }
    }

    pub fn update(&mut self, x: f64) {
        let t = self.theta_hat;
        self.ell_star += t * x - 0.5 * t * t;
        self.sum += x;
        self.n += 1;
        self.theta_hat = project((self.init_sum + self.sum) / (self.n0 as u64 + self.n) as f64, self.mu);
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    pub fn ell_star(&self) -> f64 {
        self.ell_star
    }

    /// Current estimate `θ̂_n`, used for the next increment.
    pub fn theta_hat(&self) -> f64 {
        self.theta_hat
    }

    /// Log-likelihood `ℓ(n, θ)` up to a θ-free term.
    pub fn ell(&self, theta: f64) -> f64 {
        theta * self.sum - 0.5 * self.n as f64 * theta * theta
    }

    pub fn ell0(&self) -> f64 {
        if self.n == 0 || self.sum > 0.0 {
            0.0
        } else {
            self.sum * self.sum / (2.0 * self.n as f64)
        }
    }

    pub fn ell1(&self) -> f64 {
        if self.n > 0 && self.sum >= self.mu * self.n as f64 {
            self.sum * self.sum / (2.0 * self.n as f64)
        } else {
            self.ell(self.mu)
        }
    }

    /// Signed adaptive statistic; `None` when neither branch applies.
    pub fn lambda_star(&self) -> Option<f64> {
        lambda_star_from(self.ell0(), self.ell1(), self.ell_star)
    }
}

/// Three-way case split defining `λ*`. Boundary ties are left undefined.
pub fn lambda_star_from(ell0: f64, ell1: f64, ell_star: f64) -> Option<f64> {
    if ell0 < ell1 && ell0 < ell_star {
        Some(ell_star - ell0)
    } else if ell1 < ell0 && ell1 < ell_star {
        Some(-(ell_star - ell1))
    } else {
        None
    }
}

/// Projects an unconstrained mean estimate onto `(−∞, 0] ∪ [μ, ∞)`.
#[inline]
pub fn project(theta: f64, mu: f64) -> f64 {
    if theta > 0.0 && theta < mu {
        if theta < 0.5 * mu {
            0.0
        } else {
            mu
        }
    } else {
        theta
    }
}

/// Adaptive statistics for a bank of composite streams.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptiveState {
    n: u64,
    streams: Vec<AdaptiveStream>,
}

impl AdaptiveState {
    /// `initial[j]` holds stream `j`'s pre-sample (length `n0` of its model).
    pub fn new(models: &[StreamModel], initial: &[Vec<f64>]) -> Result<Self> {
        if initial.len() != models.len() {
            return Err(Error::LengthMismatch {
                expected: models.len(),
                got: initial.len(),
            });
        }
        let mut streams = Vec::with_capacity(models.len());
        for (j, (m, init)) in models.iter().zip(initial).enumerate() {
            match m {
                StreamModel::CompositeGaussianMean { mu, n0, theta_hat0 } => {
                    if init.len() != *n0 as usize {
                        return Err(Error::LengthMismatch {
                            expected: *n0 as usize,
                            got: init.len(),
                        });
                    }
                    streams.push(AdaptiveStream::new(*mu, init, *theta_hat0));
                }
                _ => return Err(Error::SimpleStream(j)),
            }
        }
        Ok(Self { n: 0, streams })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn streams(&self) -> &[AdaptiveStream] {
        &self.streams
    }

    pub fn update(&mut self, observations: &[f64]) -> Result<()> {
        if observations.len() != self.streams.len() {
            return Err(Error::LengthMismatch {
                expected: self.streams.len(),
                got: observations.len(),
            });
        }
        for (s, &x) in self.streams.iter_mut().zip(observations) {
            s.update(x);
        }
        self.n += 1;
        Ok(())
    }

    pub fn lambda_star(&self, j: usize) -> Option<f64> {
        self.streams[j].lambda_star()
    }

    /// Writes `λ*` into `out`; returns `false` if any entry is undefined.
    pub fn lambda_star_into(&self, out: &mut Vec<f64>) -> bool {
        out.clear();
        let mut all = true;
        for s in &self.streams {
            match s.lambda_star() {
                Some(v) => out.push(v),
                None => {
                    all = false;
                    out.push(f64::NAN);
                }
            }
        }
        all
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{TrialKey, DOMAIN_CHECK};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn update_accumulates_and_cancels() {
        let mut s = LlrState::new(2);
        s.update(&[1.2, -0.5]).unwrap();
        assert_eq!(s.lambda(), &[1.2, -0.5]);
        assert_eq!(s.n(), 1);
        let mut t = LlrState::new(2);
        t.update(&[0.5, 0.5]).unwrap();
        t.update(&[-0.5, -0.5]).unwrap();
        assert_eq!(t.lambda(), &[0.0, 0.0]);
        assert!(matches!(
            t.update(&[1.0]),
            Err(Error::LengthMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn tilde_order_with_indices() {
        let v = OrderedLlrView::from_values(&[-0.1, 0.3, 0.2]);
        let vals: Vec<f64> = v.tilde().iter().map(|e| e.0).collect();
        let idx: Vec<usize> = v.tilde().iter().map(|e| e.1).collect();
        assert_eq!(vals, vec![0.1, 0.2, 0.3]);
        assert_eq!(idx, vec![0, 2, 1]);
        assert!((v.sum_k_smallest_abs(2).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(v.sum_k_smallest_abs(1).unwrap(), 0.1);
        assert!((v.sum_k_smallest_abs(3).unwrap() - 0.6).abs() < 1e-15);
        assert!(v.sum_k_smallest_abs(0).is_err());
        assert!(v.sum_k_smallest_abs(4).is_err());
    }

    #[test]
    fn partial_sums_and_sentinels() {
        let v = OrderedLlrView::from_values(&[1.0, 2.0, -0.5]);
        assert_eq!(v.hat_partial_sum(1, 2).unwrap(), ExtReal::Finite(3.0));
        assert_eq!(v.check_partial_sum(1, 1).unwrap(), ExtReal::Finite(0.5));
        assert_eq!(v.check_partial_sum(1, 2).unwrap(), ExtReal::PosInf);
        let neg = OrderedLlrView::from_values(&[-1.0, -2.0]);
        assert_eq!(neg.hat_partial_sum(1, 1).unwrap(), ExtReal::PosInf);
        assert!(v.hat_partial_sum(2, 1).is_err());
        assert!(v.hat_partial_sum(0, 1).is_err());
        assert!(v.hat_partial_sum(1, 4).is_err());
    }

    /// Seven streams, four positive and three non-positive.
    #[test]
    fn check_rank_past_q_is_infinite() {
        let v = OrderedLlrView::from_values(&[0.4, -0.2, 1.1, -0.9, 0.3, 2.0, -0.6]);
        assert_eq!((v.p(), v.q()), (4, 3));
        assert_eq!(v.check_partial_sum(3, 4).unwrap(), ExtReal::PosInf);
        assert_eq!(v.check_partial_sum(3, 3).unwrap(), ExtReal::Finite(0.9));
    }

    #[test]
    fn zero_goes_to_check_view() {
        let v = OrderedLlrView::from_values(&[0.0, 1.0]);
        assert_eq!(v.p(), 1);
        assert_eq!(v.check(), &[(0.0, 0)]);
    }

    #[test]
    fn ties_break_by_stream_index() {
        let v = OrderedLlrView::from_values(&[0.5, -0.5, 0.5]);
        let idx: Vec<usize> = v.tilde().iter().map(|e| e.1).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        let hat_idx: Vec<usize> = v.hat().iter().map(|e| e.1).collect();
        assert_eq!(hat_idx, vec![0, 2]);
    }

    proptest! {
        #[test]
        fn views_partition_the_vector(lambda in prop::collection::vec(-5.0f64..5.0, 1..12)) {
            let v = OrderedLlrView::from_values(&lambda);
            prop_assert_eq!(v.p() + v.q(), lambda.len());
            let mut abs: Vec<f64> = lambda.iter().map(|l| l.abs()).collect();
            abs.sort_by(|a, b| a.total_cmp(b));
            let tilde: Vec<f64> = v.tilde().iter().map(|e| e.0).collect();
            prop_assert_eq!(tilde, abs);
            for w in v.hat().windows(2) {
                prop_assert!(w[0].0 <= w[1].0);
            }
            for &(m, j) in v.hat() {
                prop_assert!(lambda[j] > 0.0 && m == lambda[j]);
            }
            for &(m, j) in v.check() {
                prop_assert!(lambda[j] <= 0.0 && m == -lambda[j]);
            }
        }
    }

    #[test]
    fn adaptive_first_increment() {
        let mut s = AdaptiveStream::new(0.2, &[], 0.5);
        s.update(1.0);
        assert!((s.ell_star() - 0.375).abs() < 1e-15);
    }

    #[test]
    fn adaptive_sups_at_zero_mean() {
        let mut s = AdaptiveStream::new(0.2, &[], 0.0);
        s.update(0.3);
        s.update(-0.3);
        assert_eq!(s.ell0(), 0.0);
        let expected = 2.0 * (0.0 * 0.2 - 0.02);
        assert!((s.ell1() - expected).abs() < 1e-15);
        assert!(s.ell1() < 0.0);
    }

    #[test]
    fn lambda_star_branches() {
        assert!((lambda_star_from(-0.2, 0.1, 0.05).unwrap() - 0.25).abs() < 1e-15);
        assert!((lambda_star_from(0.1, -0.2, 0.05).unwrap() + 0.25).abs() < 1e-15);
        assert_eq!(lambda_star_from(0.1, 0.2, 0.05), None);
        assert_eq!(lambda_star_from(0.1, 0.1, 0.5), None);
        assert_eq!(lambda_star_from(0.1, 0.2, 0.1), None);
    }

    #[test]
    fn projection_lands_outside_the_gap() {
        assert_eq!(project(0.05, 0.2), 0.0);
        assert_eq!(project(0.1, 0.2), 0.2);
        assert_eq!(project(0.15, 0.2), 0.2);
        assert_eq!(project(-0.3, 0.2), -0.3);
        assert_eq!(project(0.7, 0.2), 0.7);
    }

    #[test]
    fn initial_sample_sets_first_estimate() {
        let s = AdaptiveStream::new(0.2, &[0.5, 0.9], 0.0);
        assert!((s.theta_hat() - 0.7).abs() < 1e-15);
        let g = AdaptiveStream::new(0.2, &[0.1, 0.0], 9.0);
        assert_eq!(g.theta_hat(), 0.0);
    }

    #[test]
    fn state_rejects_simple_streams() {
        let models = vec![StreamModel::gaussian(0.5, 1.0).unwrap()];
        assert!(matches!(
            AdaptiveState::new(&models, &[vec![]]),
            Err(Error::SimpleStream(0))
        ));
    }

    /// `ℓ0`, `ℓ1` dominate the likelihood on their half-lines.
    #[test]
    fn half_line_sups_dominate_grid() {
        let mut rng = TrialKey::new(5, DOMAIN_CHECK, 0, 0).stream(0);
        for theta_true in [-0.4, 0.0, 0.2, 0.9] {
            let mut s = AdaptiveStream::new(0.2, &[], 0.0);
            for _ in 0..40 {
                let z: f64 = StandardNormal.sample(&mut rng);
                s.update(theta_true + z);
                for i in 0..=200 {
                    let t0 = -2.0 + i as f64 * 0.01;
                    assert!(s.ell0() >= s.ell(t0) - 1e-12);
                    let t1 = 0.2 + i as f64 * 0.01;
                    assert!(s.ell1() >= s.ell(t1) - 1e-12);
                }
            }
        }
    }

    /// `exp(ℓ* − ℓ(n, θ))` has unit mean under `θ`. A short pre-sample
    /// makes the ratio's second moment blow up by `n = 20`, so the check
    /// uses 50 initial observations.
    #[test]
    fn adaptive_likelihood_ratio_has_unit_mean() {
        let paths = 20_000;
        for (cell, theta) in [0.0, 0.2, 0.7, -0.3].into_iter().enumerate() {
            let mut acc = [(0.0f64, 0.0f64); 2];
            for t in 0..paths {
                let mut rng = TrialKey::new(6, DOMAIN_CHECK, cell as u64, t).stream(0);
                let init: Vec<f64> = (0..50)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        theta + z
                    })
                    .collect();
                let mut s = AdaptiveStream::new(0.2, &init, 0.0);
                for n in 1..=20 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s.update(theta + z);
                    if n == 5 || n == 20 {
                        let r = (s.ell_star() - s.ell(theta)).exp();
                        let slot = &mut acc[(n == 20) as usize];
                        slot.0 += r;
                        slot.1 += r * r;
                    }
                }
            }
            for (sum, sq) in acc {
                let m = sum / paths as f64;
                let se = ((sq / paths as f64 - m * m) / paths as f64).sqrt();
                assert!((m - 1.0).abs() < 4.0 * se, "θ={theta}: mean {m} se {se}");
            }
        }
    }
}
