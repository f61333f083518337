//! Per-stream data-generating models.
//!
//! Two simple-vs-simple families ship with the crate, Gaussian mean shift and
//! the symmetric Bernoulli pair `p` vs `1 - p`, plus the composite Gaussian
//! mean problem `θ ≤ 0` vs `θ ≥ μ` with unit variance. Simple models expose
//! their LLR increment, Kullback-Leibler pair and cumulant generating
//! function in closed form. Composite streams are driven by the adaptive
//! statistics in [`crate::statistics`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamModel {
    /// `N(0, σ²)` vs `N(μ, σ²)`.
    GaussianMean { mu: f64, sigma: f64 },
    /// Success probability `p` under the null and `q = 1 - p` under the
    /// alternative, `0 < p < 1/2`.
    Bernoulli { p: f64 },
    /// Unit-variance Gaussian, `H0: θ ≤ 0` vs `H1: θ ≥ μ`. The first estimate
    /// is the mean of `n0` initial observations, or `theta_hat0` when `n0 = 0`.
    CompositeGaussianMean { mu: f64, n0: u32, theta_hat0: f64 },
}

/// Truth for one stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamTruth {
    Null,
    Alternative,
    /// Composite streams: the actual mean.
    Parameter(f64),
}

impl StreamTruth {
    pub fn is_signal(&self, model: &StreamModel) -> bool {
        match (self, model) {
            (StreamTruth::Alternative, _) => true,
            (StreamTruth::Null, _) => false,
            (StreamTruth::Parameter(theta), StreamModel::CompositeGaussianMean { mu, .. }) => *theta >= *mu,
            (StreamTruth::Parameter(_), _) => false,
        }
    }
}

impl StreamModel {
    pub fn gaussian(mu: f64, sigma: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidModel(format!("gaussian mu must be > 0, got {mu}")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidModel(format!("gaussian sigma must be > 0, got {sigma}")));
        }
        Ok(StreamModel::GaussianMean { mu, sigma })
    }

    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 0.5) {
            return Err(Error::InvalidModel(format!(
                "bernoulli p must lie in (0, 1/2), got {p}"
            )));
        }
        Ok(StreamModel::Bernoulli { p })
    }

    pub fn composite_gaussian(mu: f64, n0: u32, theta_hat0: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidModel(format!(
                "composite separation mu must be > 0, got {mu}"
            )));
        }
        if !theta_hat0.is_finite() {
            return Err(Error::InvalidModel("theta_hat0 must be finite".into()));
        }
        Ok(StreamModel::CompositeGaussianMean { mu, n0, theta_hat0 })
    }

    pub fn is_composite(&self) -> bool {
        matches!(self, StreamModel::CompositeGaussianMean { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            StreamModel::GaussianMean { .. } => "gaussian_mean",
            StreamModel::Bernoulli { .. } => "bernoulli",
            StreamModel::CompositeGaussianMean { .. } => "composite_gaussian_mean",
        }
    }

    /// Whether λ under the null has the law of −λ under the alternative.
    /// Every shipped family is symmetric.
    pub fn is_symmetric(&self) -> bool {
        true
    }

    /// Initial-sample size (composite only; zero otherwise).
    pub fn initial_samples(&self) -> u32 {
        match self {
            StreamModel::CompositeGaussianMean { n0, .. } => *n0,
            _ => 0,
        }
    }

    /// Checks that `truth` is admissible for this model.
    pub fn check_truth(&self, truth: StreamTruth) -> Result<()> {
        match (self, truth) {
            (StreamModel::CompositeGaussianMean { mu, .. }, StreamTruth::Parameter(theta)) => {
                if !theta.is_finite() {
                    return Err(Error::InvalidTruth("theta must be finite".into()));
                }
                if theta > 0.0 && theta < *mu {
                    return Err(Error::InvalidTruth(format!(
                        "theta = {theta} lies in the indifference zone (0, {mu})"
                    )));
                }
                Ok(())
            }
            (StreamModel::CompositeGaussianMean { .. }, _) => Err(Error::InvalidTruth(
                "composite streams need an explicit parameter".into(),
            )),
            (_, StreamTruth::Parameter(_)) => Err(Error::InvalidTruth(
                "simple streams take null/alternative, not a parameter".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Precomputed sampler for this stream under `truth`.
    pub fn sampler(&self, truth: StreamTruth) -> Result<Sampler> {
        self.check_truth(truth)?;
        Ok(match (self, truth) {
            (StreamModel::GaussianMean { mu, sigma }, t) => Sampler::Normal {
                mean: if t == StreamTruth::Alternative { *mu } else { 0.0 },
                sd: *sigma,
            },
            (StreamModel::Bernoulli { p }, t) => Sampler::Bernoulli {
                prob: if t == StreamTruth::Alternative { 1.0 - p } else { *p },
            },
            (StreamModel::CompositeGaussianMean { .. }, StreamTruth::Parameter(theta)) => {
                Sampler::Normal { mean: theta, sd: 1.0 }
            }
            _ => unreachable!("checked above"),
        })
    }

    /// One observation from the stream's law under `truth`.
    pub fn sample<R: Rng + ?Sized>(&self, truth: StreamTruth, rng: &mut R) -> Result<f64> {
        Ok(self.sampler(truth)?.draw(rng))
    }

    /// LLR increment as an affine map `x ↦ slope·x + intercept`.
    ///
    /// Gaussian: `θ²(x/μ − 1/2)` with `θ = μ/σ`. Bernoulli with
    /// `x ∈ {0, 1}`: `±log(q/p)`, i.e. slope `2 log(q/p)`, intercept
    /// `−log(q/p)`.
    pub fn llr_affine(&self) -> Result<(f64, f64)> {
        match self {
            StreamModel::GaussianMean { mu, sigma } => {
                let s2 = sigma * sigma;
                Ok((mu / s2, -mu * mu / (2.0 * s2)))
            }
            StreamModel::Bernoulli { p } => {
                let l = ((1.0 - p) / p).ln();
                Ok((2.0 * l, -l))
            }
            StreamModel::CompositeGaussianMean { .. } => Err(Error::CompositeStream(0)),
        }
    }

    /// `log(f1/f0)` at `x`.
    pub fn llr_increment(&self, x: f64) -> Result<f64> {
        let (slope, intercept) = self.llr_affine()?;
        Ok(slope * x + intercept)
    }

    /// `(I1, I0)`: KL divergences of the alternative from the null and back.
    pub fn kl_pair(&self) -> Result<(f64, f64)> {
        match self {
            StreamModel::GaussianMean { mu, sigma } => {
                let i = mu * mu / (2.0 * sigma * sigma);
                Ok((i, i))
            }
            StreamModel::Bernoulli { p } => {
                let h = bernoulli_kl(*p);
                Ok((h, h))
            }
            StreamModel::CompositeGaussianMean { .. } => Err(Error::CompositeStream(0)),
        }
    }

    /// Cumulant generating function of one LLR increment under the null,
    /// `Ψ(θ) = log E0[exp(θ λ(1))]`.
    pub fn cgf(&self, theta: f64) -> Result<f64> {
        match self {
            StreamModel::GaussianMean { .. } => {
                let (i, _) = self.kl_pair()?;
                Ok(i * theta * theta - i * theta)
            }
            StreamModel::Bernoulli { p } => {
                let q = 1.0 - p;
                // log(p^{1-θ} q^θ + q^{1-θ} p^θ), evaluated in log space
                let a = (1.0 - theta) * p.ln() + theta * q.ln();
                let b = (1.0 - theta) * q.ln() + theta * p.ln();
                let m = a.max(b);
                Ok(m + ((a - m).exp() + (b - m).exp()).ln())
            }
            StreamModel::CompositeGaussianMean { .. } => Err(Error::CompositeStream(0)),
        }
    }

    /// `(Ψ'(θ), Ψ''(θ))`.
    pub fn cgf_derivatives(&self, theta: f64) -> Result<(f64, f64)> {
        match self {
            StreamModel::GaussianMean { .. } => {
                let (i, _) = self.kl_pair()?;
                Ok((2.0 * i * theta - i, 2.0 * i))
            }
            StreamModel::Bernoulli { p } => {
                // Ψ(θ) = log(p e^{θL} + q e^{−θL}); w is the tilted mass on +L
                let q = 1.0 - p;
                let l = (q / p).ln();
                let w = 1.0 / (1.0 + (q / p) * (-2.0 * theta * l).exp());
                Ok((l * (2.0 * w - 1.0), 4.0 * l * l * w * (1.0 - w)))
            }
            StreamModel::CompositeGaussianMean { .. } => Err(Error::CompositeStream(0)),
        }
    }

    /// Range of values one LLR increment can take (closure of its convex hull).
    pub fn llr_support(&self) -> Result<(f64, f64)> {
        match self {
            StreamModel::GaussianMean { .. } => Ok((f64::NEG_INFINITY, f64::INFINITY)),
            StreamModel::Bernoulli { p } => {
                let l = ((1.0 - p) / p).ln();
                Ok((-l, l))
            }
            StreamModel::CompositeGaussianMean { .. } => Err(Error::CompositeStream(0)),
        }
    }
}

/// `H(x) = x log(x/(1−x)) + (1−x) log((1−x)/x)`.
pub fn bernoulli_kl(x: f64) -> f64 {
    x * (x / (1.0 - x)).ln() + (1.0 - x) * ((1.0 - x) / x).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampler {
    Normal { mean: f64, sd: f64 },
    Bernoulli { prob: f64 },
}

impl Sampler {
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Sampler::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            Sampler::Bernoulli { prob } => {
                if rng.gen::<f64>() < prob {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Which streams carry signal, plus the per-stream parameter for composite
/// streams.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthAssignment {
    truths: Vec<StreamTruth>,
    signals: Vec<bool>,
}

impl TruthAssignment {
    /// Simple streams: `signals` lists the (0-based) streams under the
    /// alternative. Composite streams must use [`TruthAssignment::with_parameters`]
    /// or [`TruthAssignment::boundary`].
    pub fn simple(models: &[StreamModel], signals: &[usize]) -> Result<Self> {
        let mut mask = vec![false; models.len()];
        for &j in signals {
            if j >= models.len() {
                return Err(Error::InvalidTruth(format!(
                    "signal stream {j} out of range for J = {}",
                    models.len()
                )));
            }
            mask[j] = true;
        }
        let truths: Vec<StreamTruth> = mask
            .iter()
            .map(|&s| if s { StreamTruth::Alternative } else { StreamTruth::Null })
            .collect();
        Self::from_truths(models, truths)
    }

    /// Composite streams with explicit parameters; membership in the signal
    /// set follows from `θ ≥ μ`.
    pub fn with_parameters(models: &[StreamModel], thetas: &[f64]) -> Result<Self> {
        if thetas.len() != models.len() {
            return Err(Error::LengthMismatch {
                expected: models.len(),
                got: thetas.len(),
            });
        }
        let truths = thetas.iter().map(|&t| StreamTruth::Parameter(t)).collect();
        Self::from_truths(models, truths)
    }

    /// Signal mask for any model mix; composite streams sit on the boundary
    /// of their hypothesis (`θ = 0` or `θ = μ`).
    pub fn boundary(models: &[StreamModel], signal_mask: &[bool]) -> Result<Self> {
        if signal_mask.len() != models.len() {
            return Err(Error::LengthMismatch {
                expected: models.len(),
                got: signal_mask.len(),
            });
        }
        let truths = models
            .iter()
            .zip(signal_mask)
            .map(|(m, &s)| match (m, s) {
                (StreamModel::CompositeGaussianMean { mu, .. }, true) => StreamTruth::Parameter(*mu),
                (StreamModel::CompositeGaussianMean { .. }, false) => StreamTruth::Parameter(0.0),
                (_, true) => StreamTruth::Alternative,
                (_, false) => StreamTruth::Null,
            })
            .collect();
        Self::from_truths(models, truths)
    }

    pub fn from_truths(models: &[StreamModel], truths: Vec<StreamTruth>) -> Result<Self> {
        if truths.len() != models.len() {
            return Err(Error::LengthMismatch {
                expected: models.len(),
                got: truths.len(),
            });
        }
        for (j, (m, t)) in models.iter().zip(&truths).enumerate() {
            m.check_truth(*t)
                .map_err(|e| Error::InvalidTruth(format!("stream {}: {e}", j + 1)))?;
        }
        let signals = models.iter().zip(&truths).map(|(m, t)| t.is_signal(m)).collect();
        Ok(Self { truths, signals })
    }

    pub fn len(&self) -> usize {
        self.truths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truths.is_empty()
    }

    pub fn truths(&self) -> &[StreamTruth] {
        &self.truths
    }

    pub fn signal_mask(&self) -> &[bool] {
        &self.signals
    }

    pub fn signal_count(&self) -> usize {
        self.signals.iter().filter(|&&s| s).count()
    }

    /// 0-based indices of the signal streams.
    pub fn signal_set(&self) -> Vec<usize> {
        self.signals
            .iter()
            .enumerate()
            .filter_map(|(j, &s)| s.then_some(j))
            .collect()
    }
}
