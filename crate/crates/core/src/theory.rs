//! First-order constants of the asymptotic theory.
//!
//! The ordered-sum quantities (`D_A(k)`, the Leap limit `L_A`) are generic
//! over [`Scalar`] so they can run on exact rationals: a profile such as
//! `I = 1/72` for two streams and `1/8` for the rest then yields its
//! constants exactly. Chernoff quantities are floating point.

use std::fmt::Debug;

use num_rational::BigRational;
use num_traits::{Num, ToPrimitive};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::extreal::ExtReal;
use crate::models::StreamModel;

/// Number type for the ordered-sum constants (`f64` or `BigRational`).
pub trait Scalar: Num + Clone + PartialOrd + ToPrimitive + Debug {}
impl<T: Num + Clone + PartialOrd + ToPrimitive + Debug> Scalar for T {}

/// Per-stream information numbers: `I1` (alternative), `I0` (null) and the
/// Chernoff information `C = Φ(0)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InformationProfile<T> {
    pub i1: Vec<T>,
    pub i0: Vec<T>,
    pub chernoff: Vec<T>,
}

impl<T: Scalar> InformationProfile<T> {
    pub fn new(i1: Vec<T>, i0: Vec<T>, chernoff: Vec<T>) -> Result<Self> {
        let j = i1.len();
        for (name, v) in [("I0", &i0), ("C", &chernoff)] {
            if v.len() != j {
                return Err(Error::Config(format!("{name} has {} entries, I1 has {j}", v.len())));
            }
        }
        let zero = T::zero();
        if i1.iter().chain(&i0).chain(&chernoff).any(|x| *x <= zero) {
            return Err(Error::InvalidModel(
                "information numbers must be strictly positive".into(),
            ));
        }
        Ok(Self { i1, i0, chernoff })
    }

    /// Symmetric Gaussian profile: `I1 = I0 = I`, `C = I/4`.
    pub fn symmetric_gaussian(info: Vec<T>) -> Result<Self> {
        let four = T::one() + T::one() + T::one() + T::one();
        let c = info.iter().map(|i| i.clone() / four.clone()).collect();
        Self::new(info.clone(), info, c)
    }

    pub fn len(&self) -> usize {
        self.i1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i1.is_empty()
    }

    pub fn is_homogeneous(&self) -> bool {
        let same = |v: &[T]| v.windows(2).all(|w| w[0] == w[1]);
        same(&self.i1) && same(&self.i0) && same(&self.chernoff)
    }

    fn check_mask(&self, mask: &[bool]) -> Result<()> {
        if mask.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: mask.len(),
            });
        }
        Ok(())
    }
}

impl InformationProfile<f64> {
    pub fn from_models(models: &[StreamModel]) -> Result<Self> {
        let mut i1 = Vec::with_capacity(models.len());
        let mut i0 = Vec::with_capacity(models.len());
        let mut c = Vec::with_capacity(models.len());
        for m in models {
            let (a, b) = m.kl_pair()?;
            i1.push(a);
            i0.push(b);
            c.push(chernoff_info(m)?);
        }
        Self::new(i1, i0, c)
    }
}

/// Mask of length `j` with the given 0-based members.
pub fn mask(j: usize, members: &[usize]) -> Result<Vec<bool>> {
    let mut m = vec![false; j];
    for &i in members {
        if i >= j {
            return Err(Error::OutOfRange(format!("stream {i} outside 0..{j}")));
        }
        m[i] = true;
    }
    Ok(m)
}

/// `I^{A,C} = Σ_{A\C} I1 + Σ_{C\A} I0`.
pub fn pairwise_info<T: Scalar>(p: &InformationProfile<T>, a: &[bool], c: &[bool]) -> Result<T> {
    p.check_mask(a)?;
    p.check_mask(c)?;
    let mut s = T::zero();
    for j in 0..p.len() {
        match (a[j], c[j]) {
            (true, false) => s = s + p.i1[j].clone(),
            (false, true) => s = s + p.i0[j].clone(),
            _ => {}
        }
    }
    Ok(s)
}

fn sort_values<T: Scalar>(v: &mut [T]) {
    v.sort_by(|x, y| x.partial_cmp(y).expect("information numbers are ordered"));
}

/// Sum of the `k` smallest of `{I1^j : j ∈ A} ∪ {I0^j : j ∉ A}`.
pub fn d_a_k<T: Scalar>(p: &InformationProfile<T>, a: &[bool], k: usize) -> Result<T> {
    p.check_mask(a)?;
    if k == 0 || k > p.len() {
        return Err(Error::OutOfRange(format!("k = {k} outside 1..={}", p.len())));
    }
    let mut v: Vec<T> = (0..p.len())
        .map(|j| if a[j] { p.i1[j].clone() } else { p.i0[j].clone() })
        .collect();
    sort_values(&mut v);
    Ok(v.into_iter().take(k).fold(T::zero(), |s, x| s + x))
}

/// Ascending `I1` over `A` (`signal = true`) or `I0` over `A^c`.
fn ordered_side<T: Scalar>(p: &InformationProfile<T>, a: &[bool], signal: bool) -> Vec<T> {
    let mut v: Vec<T> = (0..p.len())
        .filter(|&j| a[j] == signal)
        .map(|j| if signal { p.i1[j].clone() } else { p.i0[j].clone() })
        .collect();
    sort_values(&mut v);
    v
}

/// Ranks `lo..=hi` (1-based) of an ascending list, `+∞` past its end.
fn rank_sum<T: Scalar>(v: &[T], lo: usize, hi: usize) -> ExtReal<T> {
    if hi > v.len() {
        ExtReal::PosInf
    } else {
        ExtReal::Finite(v[lo - 1..hi].iter().cloned().fold(T::zero(), |s, x| s + x))
    }
}

/// `max{wa / D1, wb / D0}` with `1/∞ = 0`; `+∞` when both sums are infinite.
fn leap_term<T: Scalar>(wa: &T, d1: ExtReal<T>, wb: &T, d0: ExtReal<T>) -> ExtReal<T> {
    let t1 = d1.into_finite().map(|d| wa.clone() / d);
    let t0 = d0.into_finite().map(|d| wb.clone() / d);
    match (t1, t0) {
        (None, None) => ExtReal::PosInf,
        (Some(x), None) | (None, Some(x)) => ExtReal::Finite(x),
        (Some(x), Some(y)) => ExtReal::Finite(if x >= y { x } else { y }),
    }
}

/// `L̂_A(ℓ) = max{wa / D1(A; 1, k1−ℓ), wb / D0(A^c; ℓ+1, ℓ+k2)}`, where
/// `wa = |log α|`, `wb = |log β|`. Passing `wa = wb = 1` gives the
/// coefficient of `|log α|` when `α = β`.
pub fn l_hat<T: Scalar>(
    p: &InformationProfile<T>,
    a: &[bool],
    ell: usize,
    wa: &T,
    wb: &T,
    k1: usize,
    k2: usize,
) -> Result<ExtReal<T>> {
    p.check_mask(a)?;
    check_k(p.len(), k1, k2)?;
    if ell >= k1 {
        return Err(Error::OutOfRange(format!("hat component {ell} needs ell < k1 = {k1}")));
    }
    let s1 = ordered_side(p, a, true);
    let s0 = ordered_side(p, a, false);
    Ok(leap_term(
        wa,
        rank_sum(&s1, 1, k1 - ell),
        wb,
        rank_sum(&s0, ell + 1, ell + k2),
    ))
}

/// `Ľ_A(ℓ) = max{wa / D1(A; ℓ+1, ℓ+k1), wb / D0(A^c; 1, k2−ℓ)}`.
pub fn l_check<T: Scalar>(
    p: &InformationProfile<T>,
    a: &[bool],
    ell: usize,
    wa: &T,
    wb: &T,
    k1: usize,
    k2: usize,
) -> Result<ExtReal<T>> {
    p.check_mask(a)?;
    check_k(p.len(), k1, k2)?;
    if ell >= k2 {
        return Err(Error::OutOfRange(format!(
            "check component {ell} needs ell < k2 = {k2}"
        )));
    }
    let s1 = ordered_side(p, a, true);
    let s0 = ordered_side(p, a, false);
    Ok(leap_term(
        wa,
        rank_sum(&s1, ell + 1, ell + k1),
        wb,
        rank_sum(&s0, 1, k2 - ell),
    ))
}

fn check_k(j: usize, k1: usize, k2: usize) -> Result<()> {
    if k1 == 0 || k2 == 0 || k1 + k2 > j {
        return Err(Error::InvalidBudget(format!(
            "need k1, k2 >= 1 and k1 + k2 <= J, got k1 = {k1}, k2 = {k2}, J = {j}"
        )));
    }
    Ok(())
}

/// `L_A = min{min_ℓ L̂_A(ℓ), min_ℓ Ľ_A(ℓ)}` with weights `wa`, `wb`.
/// Components with both sums infinite are skipped.
pub fn big_l_weighted<T: Scalar>(
    p: &InformationProfile<T>,
    a: &[bool],
    k1: usize,
    k2: usize,
    wa: &T,
    wb: &T,
) -> Result<T> {
    let mut best: Option<T> = None;
    let mut consider = |v: ExtReal<T>| {
        if let ExtReal::Finite(x) = v {
            if best.as_ref().is_none_or(|b| x < *b) {
                best = Some(x);
            }
        }
    };
    for ell in 0..k1 {
        consider(l_hat(p, a, ell, wa, wb, k1, k2)?);
    }
    for ell in 0..k2 {
        consider(l_check(p, a, ell, wa, wb, k1, k2)?);
    }
    best.ok_or_else(|| Error::Degenerate("every Leap component is degenerate".into()))
}

/// Error budget of the two problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ErrorBudget {
    /// At most probability `alpha` of `k` or more mistakes of any kind.
    Gmis { k: usize, alpha: f64 },
    /// At most `alpha` for `k1` false positives and `beta` for `k2` false
    /// negatives.
    Gfwer {
        k1: usize,
        k2: usize,
        alpha: f64,
        beta: f64,
    },
}

impl ErrorBudget {
    pub fn validate(&self, j: usize) -> Result<()> {
        let prob = |x: f64, name: &str| {
            if x > 0.0 && x < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidBudget(format!("{name} must lie in (0, 1), got {x}")))
            }
        };
        match *self {
            ErrorBudget::Gmis { k, alpha } => {
                prob(alpha, "alpha")?;
                if k == 0 || k >= j {
                    return Err(Error::InvalidBudget(format!("need 1 <= k < J, got k = {k}, J = {j}")));
                }
            }
            ErrorBudget::Gfwer { k1, k2, alpha, beta } => {
                prob(alpha, "alpha")?;
                prob(beta, "beta")?;
                check_k(j, k1, k2)?;
            }
        }
        Ok(())
    }
}

/// `L_A(k1, k2, α, β)` in floating point.
pub fn big_l(p: &InformationProfile<f64>, a: &[bool], budget: &ErrorBudget) -> Result<f64> {
    match *budget {
        ErrorBudget::Gfwer { k1, k2, alpha, beta } => {
            budget.validate(p.len())?;
            big_l_weighted(p, a, k1, k2, &alpha.ln().abs(), &beta.ln().abs())
        }
        ErrorBudget::Gmis { .. } => Err(Error::InvalidBudget("L_A is defined for the GFWER budget".into())),
    }
}

/// Coefficient `c` with `L_A = c·|log α|` when `α = β`, in exact arithmetic.
pub fn big_l_coefficient(p: &InformationProfile<BigRational>, a: &[bool], k1: usize, k2: usize) -> Result<BigRational> {
    let one = BigRational::from_integer(1.into());
    big_l_weighted(p, a, k1, k2, &one, &one)
}

/// Sum of the `k` smallest Chernoff informations.
pub fn b_of_k<T: Scalar>(p: &InformationProfile<T>, k: usize) -> Result<T> {
    if k == 0 || k > p.len() {
        return Err(Error::OutOfRange(format!("k = {k} outside 1..={}", p.len())));
    }
    let mut c = p.chernoff.clone();
    sort_values(&mut c);
    Ok(c.into_iter().take(k).fold(T::zero(), |s, x| s + x))
}

/// Convex conjugate `Φ(z) = sup_θ {zθ − Ψ(θ)}` of the null cgf.
///
/// Gaussian streams use the closed form `(z + I)²/(4I)`; other models go
/// through [`chernoff_phi_numeric`]. Outside the hull of the increment's
/// support the value is `+∞`.
pub fn chernoff_phi(model: &StreamModel, z: f64) -> Result<ExtReal<f64>> {
    match model {
        StreamModel::GaussianMean { .. } => {
            let (i, _) = model.kl_pair()?;
            Ok(ExtReal::Finite((z + i) * (z + i) / (4.0 * i)))
        }
        _ => chernoff_phi_numeric(model, z),
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for the maximiser of `zθ − Ψ(θ)` on `[−10, 10]`
/// followed by Newton steps on `Ψ'(θ) = z`.
pub fn chernoff_phi_numeric(model: &StreamModel, z: f64) -> Result<ExtReal<f64>> {
    let (lo, hi) = model.llr_support()?;
    if z < lo || z > hi {
        return Ok(ExtReal::PosInf);
    }
    if let StreamModel::Bernoulli { p } = model {
        // The supremum is approached as θ → ±∞ at the support endpoints.
        if z == hi {
            return Ok(ExtReal::Finite(-p.ln()));
        }
        if z == lo {
            return Ok(ExtReal::Finite(-(1.0 - p).ln()));
        }
    }
    let f = |t: f64| -> Result<f64> { Ok(z * t - model.cgf(t)?) };
    let (mut a, mut b) = (-10.0f64, 10.0f64);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > 1e-10 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    let mut t = 0.5 * (a + b);
    for _ in 0..8 {
        let (d1, d2) = model.cgf_derivatives(t)?;
        if d2 <= 0.0 || !d2.is_finite() {
            break;
        }
        let step = (z - d1) / d2;
        let next = t + step;
        if !(-10.0..=10.0).contains(&next) {
            break;
        }
        t = next;
        if step.abs() < 1e-15 {
            break;
        }
    }
    Ok(ExtReal::Finite(f(t)?.max(f(0.5 * (a + b))?)))
}

/// Chernoff information `C = Φ(0)`.
pub fn chernoff_info(model: &StreamModel) -> Result<f64> {
    chernoff_phi(model, 0.0)?
        .into_finite()
        .ok_or_else(|| Error::Degenerate("Φ(0) is infinite".into()))
}

/// Root `h_d` of `Φ(h)/d = Φ(h) − h` on `(−I0, I1)` and `Φ(h_d)`.
///
/// `g(h) = Φ(h)/d − Φ(h) + h` runs from `−I0` to `I1/d` and is increasing,
/// so bisection converges to the unique root.
pub fn solve_h_d(model: &StreamModel, d: f64) -> Result<(f64, f64)> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::OutOfRange(format!("d must be > 0, got {d}")));
    }
    let (i1, i0) = model.kl_pair()?;
    let phi = |h: f64| -> Result<f64> { chernoff_phi(model, h)?.into_finite().ok_or(Error::NoRoot(d)) };
    let g = |h: f64| -> Result<f64> {
        let p = phi(h)?;
        Ok(p / d - p + h)
    };
    let (mut lo, mut hi) = (-i0, i1);
    if g(lo)? > 0.0 || g(hi)? < 0.0 {
        return Err(Error::NoRoot(d));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid)?;
        if gm == 0.0 {
            return Ok((mid, phi(mid)?));
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    let h = 0.5 * (lo + hi);
    Ok((h, phi(h)?))
}

/// Asymptotic fixed-sample versus sequential constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FixedSampleRatios {
    Gmis {
        k: usize,
        d_a_k: f64,
        b_k: f64,
        /// `n_NP / N*_A ≈ D_A(k) / B(k)`.
        ratio: f64,
        /// `D_A(k) / B(2k−1)`; absent when `2k − 1 > J`.
        lower_bound_ratio: Option<f64>,
    },
    Gfwer {
        k1: usize,
        d: f64,
        h_d: f64,
        phi_h_d: f64,
        /// Limit of `n_NP / |log β|`: `d / (k1 Φ(h_d))`.
        mnp_slope: f64,
        /// `d / ((2k1 − 1) Φ(h_d))`.
        lower_bound_slope: f64,
        /// Limit of the optimal sequential ESS over `|log β|`.
        sequential_slope: f64,
        ratio: f64,
    },
}

/// Fixed-sample MNP versus optimal sequential constants.
///
/// The GFWER branch needs a homogeneous bank with `k1 = k2` and reads
/// `d = log α / log β`.
pub fn fixed_sample_ratios(models: &[StreamModel], a: &[bool], budget: &ErrorBudget) -> Result<FixedSampleRatios> {
    budget.validate(models.len())?;
    let p = InformationProfile::from_models(models)?;
    match *budget {
        ErrorBudget::Gmis { k, .. } => {
            let d = d_a_k(&p, a, k)?;
            let bk = b_of_k(&p, k)?;
            let lower = if 2 * k - 1 <= p.len() {
                Some(d / b_of_k(&p, 2 * k - 1)?)
            } else {
                None
            };
            Ok(FixedSampleRatios::Gmis {
                k,
                d_a_k: d,
                b_k: bk,
                ratio: d / bk,
                lower_bound_ratio: lower,
            })
        }
        ErrorBudget::Gfwer { k1, k2, alpha, beta } => {
            if k1 != k2 {
                return Err(Error::InvalidBudget("fixed-sample ratios need k1 = k2".into()));
            }
            if models.windows(2).any(|w| w[0] != w[1]) {
                return Err(Error::InvalidBudget(
                    "fixed-sample GFWER ratios need a homogeneous bank".into(),
                ));
            }
            let d = alpha.ln() / beta.ln();
            let (h, ph) = solve_h_d(&models[0], d)?;
            let mnp_slope = d / (k1 as f64 * ph);
            let seq = big_l_weighted(&p, a, k1, k2, &d, &1.0)?;
            Ok(FixedSampleRatios::Gfwer {
                k1,
                d,
                h_d: h,
                phi_h_d: ph,
                mnp_slope,
                lower_bound_slope: d / ((2 * k1 - 1) as f64 * ph),
                sequential_slope: seq,
                ratio: mnp_slope / seq,
            })
        }
    }
}
