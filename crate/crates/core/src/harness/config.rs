//! Experiment files.
//!
//! ```toml
//! seed = 7
//! trials = 20000
//!
//! [budget]
//! mode = "gfwer"
//! k1 = 2
//! k2 = 2
//! alpha = 0.01
//! beta = 0.01
//!
//! [[streams]]
//! kind = "gaussian_mean"
//! mu = "1/6"
//! repeat = 2
//!
//! [[streams]]
//! kind = "gaussian_mean"
//! mu = 0.5
//! repeat = 8
//!
//! [[procedures]]
//! rule = "leap"
//! thresholds = "calibrated"
//!
//! [[procedures]]
//! rule = "mnp"
//! h = ["-inf", "inf", 0, 0, 0, 0, 0, 0, 0, 0]
//!
//! [[truths]]
//! signals = [6, 7, 8, 9, 10]
//! ```
//!
//! Numbers may be written as TOML numbers or as strings holding a decimal,
//! a fraction `p/q`, or `inf`/`-inf`. Streams are numbered from 1. Unknown
//! keys are rejected.

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{CalibrationRule, Reduction};
use crate::error::{Error, Result};
use crate::models::StreamModel;
use crate::theory::ErrorBudget;

/// Real number accepting `1.5`, `2`, `"1/72"`, `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Num(pub f64);

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            I(i64),
            F(f64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::I(i) => Ok(Num(i as f64)),
            Raw::F(f) => Ok(Num(f)),
            Raw::S(s) => parse_number(&s).map(Num).map_err(de::Error::custom),
        }
    }
}

/// Parses a decimal, `p/q` fraction or `±inf`.
pub fn parse_number(s: &str) -> std::result::Result<f64, String> {
    let t = s.trim();
    match t {
        "inf" | "+inf" | "infinity" => return Ok(f64::INFINITY),
        "-inf" | "-infinity" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    let bad = || format!("cannot read `{s}` as a number");
    if let Some((p, q)) = t.split_once('/') {
        let p: f64 = p.trim().parse().map_err(|_| bad())?;
        let q: f64 = q.trim().parse().map_err(|_| bad())?;
        if q == 0.0 {
            return Err(format!("zero denominator in `{s}`"));
        }
        return Ok(p / q);
    }
    let v: f64 = t.parse().map_err(|_| bad())?;
    if v.is_nan() {
        return Err(bad());
    }
    Ok(v)
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    pub kind: String,
    pub mu: Option<Num>,
    pub sigma: Option<Num>,
    pub p: Option<Num>,
    pub n0: Option<u32>,
    pub theta_hat0: Option<Num>,
    pub repeat: Option<usize>,
}

impl StreamConfig {
    fn build(&self, at: usize) -> Result<Vec<StreamModel>> {
        let ctx = |e: Error| Error::Config(format!("streams[{at}]: {e}"));
        let reject = |name: &str, present: bool| -> Result<()> {
            if present {
                Err(Error::Config(format!(
                    "streams[{at}]: `{name}` does not apply to kind `{}`",
                    self.kind
                )))
            } else {
                Ok(())
            }
        };
        let need = |name: &str, v: Option<Num>| -> Result<f64> {
            v.map(|n| n.0)
                .ok_or_else(|| Error::Config(format!("streams[{at}]: missing `{name}`")))
        };
        let model = match self.kind.as_str() {
            "gaussian_mean" => {
                reject("p", self.p.is_some())?;
                reject("n0", self.n0.is_some())?;
                reject("theta_hat0", self.theta_hat0.is_some())?;
                StreamModel::gaussian(need("mu", self.mu)?, self.sigma.map_or(1.0, |s| s.0)).map_err(ctx)?
            }
            "bernoulli" => {
                reject("mu", self.mu.is_some())?;
                reject("sigma", self.sigma.is_some())?;
                reject("n0", self.n0.is_some())?;
                reject("theta_hat0", self.theta_hat0.is_some())?;
                StreamModel::bernoulli(need("p", self.p)?).map_err(ctx)?
            }
            "composite_gaussian_mean" => {
                reject("p", self.p.is_some())?;
                reject("sigma", self.sigma.is_some())?;
                StreamModel::composite_gaussian(
                    need("mu", self.mu)?,
                    self.n0.unwrap_or(0),
                    self.theta_hat0.map_or(0.0, |t| t.0),
                )
                .map_err(ctx)?
            }
            other => {
                return Err(Error::Config(format!(
                    "streams[{at}]: unknown kind `{other}` (expected gaussian_mean, bernoulli, composite_gaussian_mean)"
                )))
            }
        };
        let r = self.repeat.unwrap_or(1);
        if r == 0 {
            return Err(Error::Config(format!("streams[{at}]: repeat must be >= 1")));
        }
        Ok(vec![model; r])
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BudgetConfig {
    Gmis {
        k: usize,
        alpha: Num,
    },
    Gfwer {
        k1: usize,
        k2: usize,
        alpha: Num,
        beta: Num,
    },
}

impl BudgetConfig {
    pub fn budget(&self) -> ErrorBudget {
        match *self {
            BudgetConfig::Gmis { k, alpha } => ErrorBudget::Gmis { k, alpha: alpha.0 },
            BudgetConfig::Gfwer { k1, k2, alpha, beta } => ErrorBudget::Gfwer {
                k1,
                k2,
                alpha: alpha.0,
                beta: beta.0,
            },
        }
    }
}

/// Where a sequential rule's thresholds come from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    Analytic,
    Calibrated,
    Explicit { a: f64, b: f64 },
}

impl<'de> Deserialize<'de> for ThresholdSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Explicit {
            a: Option<Num>,
            b: Num,
        }
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            S(String),
            E(Explicit),
        }
        match Raw::deserialize(d)? {
            Raw::S(s) if s == "analytic" => Ok(ThresholdSource::Analytic),
            Raw::S(s) if s == "calibrated" => Ok(ThresholdSource::Calibrated),
            Raw::S(s) => Err(de::Error::custom(format!(
                "unknown threshold source `{s}` (expected analytic, calibrated or {{ a, b }})"
            ))),
            Raw::E(e) => Ok(ThresholdSource::Explicit {
                a: e.a.unwrap_or(e.b).0,
                b: e.b.0,
            }),
        }
    }
}

/// Fixed-sample size: a number or `"calibrated"`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Calibrated,
    Explicit(u64),
}

impl<'de> Deserialize<'de> for SampleSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(SampleSource::Explicit(n)),
            Raw::S(s) if s == "calibrated" => Ok(SampleSource::Calibrated),
            Raw::S(s) => Err(de::Error::custom(format!(
                "sample size must be a positive integer or \"calibrated\", got `{s}`"
            ))),
        }
    }
}

/// Fixed-sample drifts: explicit per-stream values or a named strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftSource {
    /// `h = 0` for every stream.
    Zero,
    /// `h = h_d` for every stream, `d = ln α / ln β`.
    HD,
    /// Composite streams: `X̄ > μ/2`.
    HalfMu,
    Explicit(Vec<f64>),
}

impl<'de> Deserialize<'de> for DriftSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            S(String),
            V(Vec<Num>),
        }
        match Raw::deserialize(d)? {
            Raw::S(s) => match s.as_str() {
                "zero" => Ok(DriftSource::Zero),
                "h_d" => Ok(DriftSource::HD),
                "half_mu" => Ok(DriftSource::HalfMu),
                _ => Err(de::Error::custom(format!(
                    "unknown drift strategy `{s}` (expected zero, h_d, half_mu or a list)"
                ))),
            },
            Raw::V(v) => Ok(DriftSource::Explicit(v.into_iter().map(|n| n.0).collect())),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProcedureConfig {
    /// `sum_intersection | intersection | asym_sum_intersection | leap | mnp | leap_star`.
    pub rule: String,
    /// Series label; defaults to the rule label.
    pub label: Option<String>,
    pub k: Option<usize>,
    pub k1: Option<usize>,
    pub k2: Option<usize>,
    pub thresholds: Option<ThresholdSource>,
    /// `a / b` used when calibrating; defaults to the closed-form ratio.
    pub ratio: Option<Num>,
    pub n: Option<SampleSource>,
    pub h: Option<DriftSource>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    /// Signal streams, 1-based (simple banks).
    pub signals: Option<Vec<usize>>,
    /// Per-stream means (composite banks).
    pub thetas: Option<Vec<Num>>,
}

#[derive(Debug, Clone, Serialize)]
pub enum TruthsConfig {
    /// Every configuration needed for the worst case; composite streams on
    /// the boundary `θ ∈ {0, μ}`.
    BoundarySweep,
    Explicit(Vec<TruthConfig>),
}

impl<'de> Deserialize<'de> for TruthsConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            S(String),
            L(Vec<TruthConfig>),
        }
        match Raw::deserialize(d)? {
            Raw::S(s) if s == "boundary_sweep" || s == "boundary-sweep" => Ok(TruthsConfig::BoundarySweep),
            Raw::S(s) => Err(de::Error::custom(format!(
                "truths must be \"boundary_sweep\" or a list of tables, got `{s}`"
            ))),
            Raw::L(l) => Ok(TruthsConfig::Explicit(l)),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub json: Option<String>,
    pub csv: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ReductionConfig {
    /// The cheapest exact reduction for each procedure.
    #[default]
    Auto,
    Blocks,
    Full,
}

/// A parsed experiment file.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Number of streams; checked against `streams` when given.
    #[serde(rename = "J")]
    pub j: Option<usize>,
    pub seed: u64,
    pub trials: u64,
    pub horizon_cap: Option<u64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub reduction: ReductionConfig,
    #[serde(default)]
    pub calibration_rule: CalibrationRuleConfig,
    /// Trials for calibration; defaults to `trials`.
    pub calibration_trials: Option<u64>,
    pub budget: BudgetConfig,
    pub streams: Vec<StreamConfig>,
    pub procedures: Vec<ProcedureConfig>,
    pub truths: TruthsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationRuleConfig {
    #[default]
    PointEstimate,
    UpperConfidence,
}

impl From<CalibrationRuleConfig> for CalibrationRule {
    fn from(c: CalibrationRuleConfig) -> Self {
        match c {
            CalibrationRuleConfig::PointEstimate => CalibrationRule::PointEstimate,
            CalibrationRuleConfig::UpperConfidence => CalibrationRule::UpperConfidence,
        }
    }
}

impl ReductionConfig {
    pub fn fixed(&self) -> Option<Reduction> {
        match self {
            ReductionConfig::Auto => None,
            ReductionConfig::Blocks => Some(Reduction::Blocks),
            ReductionConfig::Full => Some(Reduction::Full),
        }
    }
}

fn default_workers() -> usize {
    1
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Stream models with `repeat` expanded.
    pub fn models(&self) -> Result<Vec<StreamModel>> {
        if self.streams.is_empty() {
            return Err(Error::Config("no streams".into()));
        }
        let mut out = Vec::new();
        for (i, s) in self.streams.iter().enumerate() {
            out.extend(s.build(i)?);
        }
        if let Some(j) = self.j {
            if j != out.len() {
                return Err(Error::Config(format!(
                    "J = {j} but the streams define {} streams",
                    out.len()
                )));
            }
        }
        Ok(out)
    }

    /// SHA-256 of the canonical JSON form of the parsed file. The worker
    /// count does not change results and is left out.
    pub fn config_hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.workers = 1;
        hash_json(&canonical)
    }
}

/// SHA-256 of the JSON form of `value`, hex encoded.
pub fn hash_json<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&json)))
}
