//! Sequential multiple testing with generalized error control.
//!
//! `J` data streams are observed on a common clock. Each stream carries a
//! null and an alternative hypothesis, and a procedure decides when to stop
//! sampling and which nulls to reject. Errors are controlled either as a
//! generalized misclassification rate (at least `k` mistakes of any kind) or
//! as generalized familywise rates (at least `k1` false positives, at least
//! `k2` false negatives).
//!
//! * [`models`]: per-stream laws, LLR increments, information numbers.
//! * [`statistics`]: the running LLR vector, its order-statistic views and
//!   the adaptive statistics used for composite hypotheses.
//! * [`procedures`]: the stopping-and-decision rules.
//! * [`theory`]: first-order constants (optimal ESS slopes, Chernoff rates).
//! * [`calibration`]: analytic and Monte-Carlo thresholds.
//! * [`engine`]: the simulation kernel shared by calibration and the harness.
//! * [`harness`]: declarative experiments, results and figure datasets.

pub mod calibration;
pub mod engine;
pub mod error;
pub mod extreal;
pub mod harness;
pub mod models;
pub mod procedures;
pub mod rng;
pub mod statistics;
pub mod theory;

pub use error::{Error, Result};
pub use extreal::ExtReal;
