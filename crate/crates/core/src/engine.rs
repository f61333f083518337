//! Simulation kernel shared by calibration and the harness.
//!
//! A *scenario* is a model bank plus a list of truth configurations. Every
//! trial draws one set of per-stream random sources from its [`TrialKey`]
//! and evaluates all configurations on it:
//!
//! * simple banks simulate the LLR path `ν` under the null only; a stream
//!   that carries signal in configuration `A` sees `−ν`, which has the law of
//!   its LLR under the alternative for every shipped (symmetric) model;
//! * composite banks share the Gaussian noise and shift it by each
//!   configuration's parameters.
//!
//! Sequential rules resolve a whole ascending grid of thresholds from one
//! path through their stopping scores; the fixed-sample rule resolves a grid
//! of sample sizes. Trials are split into fixed chunks, run on a dedicated
//! worker pool and merged in chunk order with integer counters, so results
//! do not depend on the number of workers.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{Sampler, StreamModel, StreamTruth, TruthAssignment};
use crate::procedures::{mnp_rejects, Decision, Procedure, ProcedureSpec, Rule, Shape};
use crate::rng::TrialKey;
use crate::statistics::{AdaptiveState, OrderedLlrView};

const CHUNK: u64 = 128;

/// Error metric counted per trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Metric {
    /// `|A △ D| ≥ k`.
    Gmis { k: usize },
    /// `|D \ A| ≥ k1` (slot 0) and `|A \ D| ≥ k2` (slot 1).
    Gfwer { k1: usize, k2: usize },
}

impl Metric {
    #[inline]
    fn errors(&self, truth: &[bool], d: &[bool]) -> [bool; 2] {
        let mut fp = 0;
        let mut fn_ = 0;
        for (&t, &r) in truth.iter().zip(d) {
            if r && !t {
                fp += 1;
            } else if t && !r {
                fn_ += 1;
            }
        }
        match *self {
            Metric::Gmis { k } => [fp + fn_ >= k, false],
            Metric::Gfwer { k1, k2 } => [fp >= k1, fn_ >= k2],
        }
    }

    pub fn slots(&self) -> usize {
        match self {
            Metric::Gmis { .. } => 1,
            Metric::Gfwer { .. } => 2,
        }
    }
}

/// Integer tallies for one (configuration, grid point) cell.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub trials: u64,
    pub aborted: u64,
    /// Trials with an error of each kind (see [`Metric`]).
    pub errors: [u64; 2],
    pub sum_t: u64,
    pub sum_t2: u128,
    /// Stopping times in trial order, when requested.
    #[serde(skip)]
    pub times: Vec<u32>,
}

impl Counters {
    fn record(&mut self, t: u64, aborted: bool, err: [bool; 2], keep_time: bool) {
        self.trials += 1;
        self.aborted += aborted as u64;
        self.errors[0] += err[0] as u64;
        self.errors[1] += err[1] as u64;
        self.sum_t += t;
        self.sum_t2 += (t as u128) * (t as u128);
        if keep_time {
            self.times.push(t as u32);
        }
    }

    pub fn merge(&mut self, other: &Counters) {
        self.trials += other.trials;
        self.aborted += other.aborted;
        self.errors[0] += other.errors[0];
        self.errors[1] += other.errors[1];
        self.sum_t += other.sum_t;
        self.sum_t2 += other.sum_t2;
        self.times.extend_from_slice(&other.times);
    }
}

/// Counters indexed `[configuration][grid point]`.
pub type Grid = Vec<Vec<Counters>>;

/// Trial budget and addressing of one simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunPlan {
    pub trials: u64,
    pub seed: u64,
    pub domain: u64,
    pub cell: u64,
    pub horizon_cap: u64,
    pub workers: usize,
    pub record_times: bool,
}

/// Model bank plus the truth configurations to evaluate.
#[derive(Debug, Clone)]
pub struct Scenario<'a> {
    pub models: &'a [StreamModel],
    pub configs: &'a [TruthAssignment],
}

impl Scenario<'_> {
    fn composite(&self) -> Result<bool> {
        let c = self.models.iter().filter(|m| m.is_composite()).count();
        if c != 0 && c != self.models.len() {
            return Err(Error::Config("a bank must be all simple or all composite".into()));
        }
        Ok(c != 0)
    }

    fn validate(&self) -> Result<bool> {
        if self.models.is_empty() {
            return Err(Error::Config("empty model bank".into()));
        }
        if self.configs.is_empty() {
            return Err(Error::Config("no truth configurations".into()));
        }
        for c in self.configs {
            if c.len() != self.models.len() {
                return Err(Error::LengthMismatch {
                    expected: self.models.len(),
                    got: c.len(),
                });
            }
            TruthAssignment::from_truths(self.models, c.truths().to_vec())?;
        }
        self.composite()
    }
}

/// Null-law LLR paths of a simple bank.
struct SimplePaths {
    rngs: Vec<ChaCha8Rng>,
    samplers: Vec<Sampler>,
    affine: Vec<(f64, f64)>,
    nu: Vec<f64>,
    sorted: Vec<(f64, usize)>,
}

impl SimplePaths {
    fn new(models: &[StreamModel], key: &TrialKey) -> Result<Self> {
        let mut samplers = Vec::with_capacity(models.len());
        let mut affine = Vec::with_capacity(models.len());
        for m in models {
            samplers.push(m.sampler(StreamTruth::Null)?);
            affine.push(m.llr_affine()?);
        }
        Ok(Self {
            rngs: key.streams(models.len()),
            samplers,
            affine,
            nu: vec![0.0; models.len()],
            sorted: Vec::with_capacity(models.len()),
        })
    }

    fn step(&mut self) {
        for j in 0..self.nu.len() {
            let x = self.samplers[j].draw(&mut self.rngs[j]);
            let (s, c) = self.affine[j];
            self.nu[j] += s * x + c;
        }
        self.sorted.clear();
        self.sorted
            .extend(self.nu.iter().enumerate().map(|(j, &l)| (l.abs(), j)));
        self.sorted
            .sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    }

    /// `λ^j` under a configuration with signal mask `a`.
    #[inline]
    fn lambda(&self, a: &[bool], j: usize) -> f64 {
        if a[j] {
            -self.nu[j]
        } else {
            self.nu[j]
        }
    }
}

/// Shared noise and per-configuration adaptive states of a composite bank.
struct CompositePaths {
    rngs: Vec<ChaCha8Rng>,
    thetas: Vec<Vec<f64>>,
    states: Vec<AdaptiveState>,
    sums: Vec<Vec<f64>>,
    noise: Vec<f64>,
    obs: Vec<f64>,
}

impl CompositePaths {
    fn new(models: &[StreamModel], configs: &[TruthAssignment], key: &TrialKey) -> Result<Self> {
        let mut rngs = key.streams(models.len());
        let thetas: Vec<Vec<f64>> = configs
            .iter()
            .map(|c| {
                c.truths()
                    .iter()
                    .map(|t| match t {
                        StreamTruth::Parameter(th) => *th,
                        _ => 0.0,
                    })
                    .collect()
            })
            .collect();
        let pre: Vec<Vec<f64>> = models
            .iter()
            .zip(rngs.iter_mut())
            .map(|(m, r)| (0..m.initial_samples()).map(|_| StandardNormal.sample(r)).collect())
            .collect();
        let mut states = Vec::with_capacity(configs.len());
        for th in &thetas {
            let init: Vec<Vec<f64>> = pre
                .iter()
                .zip(th)
                .map(|(z, t)| z.iter().map(|z| t + z).collect())
                .collect();
            states.push(AdaptiveState::new(models, &init)?);
        }
        Ok(Self {
            rngs,
            states,
            sums: vec![vec![0.0; models.len()]; configs.len()],
            thetas,
            noise: vec![0.0; models.len()],
            obs: vec![0.0; models.len()],
        })
    }

    fn step_noise(&mut self) {
        for (z, r) in self.noise.iter_mut().zip(self.rngs.iter_mut()) {
            *z = StandardNormal.sample(r);
        }
    }

    fn step_config(&mut self, c: usize) {
        for j in 0..self.noise.len() {
            self.obs[j] = self.thetas[c][j] + self.noise[j];
            self.sums[c][j] += self.obs[j];
        }
        self.states[c].update(&self.obs).expect("lengths fixed at construction");
    }
}

/// Score that does not depend on the signs of `λ`, when the shape has one:
/// it then gates the per-configuration work.
#[inline]
fn shared_score(shape: Shape, ratio: f64, sorted: &[(f64, usize)]) -> Option<f64> {
    match shape {
        Shape::SumIntersection { k } => Some(sorted[..k].iter().map(|e| e.0).sum()),
        Shape::Intersection if ratio == 1.0 => Some(sorted[0].0),
        _ => None,
    }
}

fn check_grid_f64(g: &[f64]) -> Result<()> {
    if g.is_empty() {
        return Err(Error::Config("empty threshold grid".into()));
    }
    if g.iter().any(|x| !(x.is_finite() && *x > 0.0)) || g.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "threshold grid must be positive, finite and strictly ascending".into(),
        ));
    }
    Ok(())
}

fn check_grid_u64(g: &[u64]) -> Result<()> {
    if g.is_empty() || g[0] == 0 || g.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "sample-size grid must be positive and strictly ascending".into(),
        ));
    }
    Ok(())
}

fn run_chunks<F>(plan: &RunPlan, configs: usize, points: usize, per_trial: F) -> Result<Grid>
where
    F: Fn(&TrialKey, &mut Grid) -> Result<()> + Sync,
{
    let chunks = plan.trials.div_ceil(CHUNK);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let parts: Vec<Result<Grid>> = pool.install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut g = vec![vec![Counters::default(); points]; configs];
                let end = ((c + 1) * CHUNK).min(plan.trials);
                for t in c * CHUNK..end {
                    let key = TrialKey::new(plan.seed, plan.domain, plan.cell, t);
                    per_trial(&key, &mut g)?;
                }
                Ok(g)
            })
            .collect()
    });
    let mut out = vec![vec![Counters::default(); points]; configs];
    for part in parts {
        let part = part?;
        for (o, p) in out.iter_mut().zip(&part) {
            for (oc, pc) in o.iter_mut().zip(p) {
                oc.merge(pc);
            }
        }
    }
    Ok(out)
}

/// Sequential rule `shape` at `a = ratio·b` for every `b` in `thresholds`.
pub fn sweep_sequential(
    sc: &Scenario,
    shape: Shape,
    ratio: f64,
    thresholds: &[f64],
    metric: Metric,
    plan: &RunPlan,
) -> Result<Grid> {
    let composite = sc.validate()?;
    check_grid_f64(thresholds)?;
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::Config(format!("threshold ratio must be > 0, got {ratio}")));
    }
    let j = sc.models.len();
    shape.with_thresholds(ratio, thresholds[0]).validate(j)?;
    let masks: Vec<&[bool]> = sc.configs.iter().map(|c| c.signal_mask()).collect();
    let g = thresholds.len();
    run_chunks(plan, masks.len(), g, |key, grid| {
        let mut next = vec![0usize; masks.len()];
        let mut active = masks.len();
        let mut view = OrderedLlrView::default();
        let mut scores = Vec::with_capacity(shape.component_count());
        let mut d = vec![false; j];
        let mut lam = vec![0.0; j];
        let mut simple = if composite {
            None
        } else {
            Some(SimplePaths::new(sc.models, key)?)
        };
        let mut comp = if composite {
            Some(CompositePaths::new(sc.models, sc.configs, key)?)
        } else {
            None
        };
        let mut n = 0u64;
        while active > 0 && n < plan.horizon_cap {
            n += 1;
            if let Some(p) = simple.as_mut() {
                p.step();
            }
            if let Some(p) = comp.as_mut() {
                p.step_noise();
            }
            let shared = simple.as_ref().and_then(|p| shared_score(shape, ratio, &p.sorted));
            for c in 0..masks.len() {
                if next[c] == g || shared.is_some_and(|s| s < thresholds[next[c]]) {
                    continue;
                }
                let a = masks[c];
                if let Some(p) = simple.as_ref() {
                    view.rebuild_from_sorted(&p.sorted, |i| if a[i] { p.nu[i] < 0.0 } else { p.nu[i] > 0.0 });
                } else {
                    let p = comp.as_mut().expect("composite paths");
                    p.step_config(c);
                    if !p.states[c].lambda_star_into(&mut lam) {
                        continue;
                    }
                    view.rebuild(&lam);
                }
                shape.component_scores(ratio, &view, &mut scores);
                let s = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                while next[c] < g && s >= thresholds[next[c]] {
                    shape.decision_mask(thresholds[next[c]], &view, &scores, &mut d);
                    grid[c][next[c]].record(n, false, metric.errors(a, &d), plan.record_times);
                    next[c] += 1;
                }
                if next[c] == g {
                    active -= 1;
                }
            }
        }
        for c in 0..masks.len() {
            if next[c] == g {
                continue;
            }
            let a = masks[c];
            for (i, di) in d.iter_mut().enumerate() {
                *di = match (&simple, &comp) {
                    (Some(p), _) => p.lambda(a, i) > 0.0,
                    (None, Some(p)) => p.states[c].lambda_star(i).is_some_and(|v| v > 0.0),
                    _ => unreachable!(),
                };
            }
            let err = metric.errors(a, &d);
            for cell in &mut grid[c][next[c]..] {
                cell.record(plan.horizon_cap, true, err, plan.record_times);
            }
        }
        Ok(())
    })
}

/// Fixed-sample rule with drifts `h` at every sample size in `ns`. Simple
/// banks reject `j` when `λ^j(n) > n·h_j`; composite banks when
/// `X̄^j(n) > h_j`.
pub fn sweep_fixed(sc: &Scenario, h: &[f64], ns: &[u64], metric: Metric, plan: &RunPlan) -> Result<Grid> {
    let composite = sc.validate()?;
    check_grid_u64(ns)?;
    let j = sc.models.len();
    Rule::Mnp {
        n: ns[0],
        h: h.to_vec(),
    }
    .validate(j)?;
    let masks: Vec<&[bool]> = sc.configs.iter().map(|c| c.signal_mask()).collect();
    run_chunks(plan, masks.len(), ns.len(), |key, grid| {
        let mut d = vec![false; j];
        let mut simple = if composite {
            None
        } else {
            Some(SimplePaths::new(sc.models, key)?)
        };
        let mut comp = if composite {
            Some(CompositePaths::new(sc.models, sc.configs, key)?)
        } else {
            None
        };
        let mut gi = 0;
        let mut n = 0u64;
        while gi < ns.len() {
            n += 1;
            if let Some(p) = simple.as_mut() {
                p.step();
            }
            if let Some(p) = comp.as_mut() {
                p.step_noise();
                for c in 0..masks.len() {
                    p.step_config(c);
                }
            }
            if n != ns[gi] {
                continue;
            }
            for (c, a) in masks.iter().enumerate() {
                for (i, di) in d.iter_mut().enumerate() {
                    let stat = match (&simple, &comp) {
                        (Some(p), _) => p.lambda(a, i),
                        (None, Some(p)) => p.sums[c][i],
                        _ => unreachable!(),
                    };
                    *di = mnp_rejects(n, h[i], stat);
                }
                grid[c][gi].record(n, false, metric.errors(a, &d), plan.record_times);
            }
            gi += 1;
        }
        Ok(())
    })
}

/// One trial of `spec` under `truth`, driven through the incremental
/// [`Procedure`] on the same random sources as the sweeps.
pub fn simulate_trial(
    models: &[StreamModel],
    truth: &TruthAssignment,
    spec: &ProcedureSpec,
    key: &TrialKey,
) -> Result<Decision> {
    let configs = std::slice::from_ref(truth);
    let sc = Scenario { models, configs };
    let composite = sc.validate()?;
    let mut proc = Procedure::new(spec.clone(), models)?;
    let j = models.len();
    let a = truth.signal_mask();
    let mnp = matches!(spec.rule, Rule::Mnp { .. });
    let mut row = vec![0.0; j];
    if composite {
        let mut p = CompositePaths::new(models, configs, key)?;
        loop {
            p.step_noise();
            p.step_config(0);
            let defined = if mnp {
                row.copy_from_slice(&p.sums[0]);
                true
            } else {
                p.states[0].lambda_star_into(&mut row)
            };
            if let Some(d) = proc.advance(defined.then_some(row.as_slice()))? {
                return Ok(d.clone());
            }
        }
    } else {
        let mut p = SimplePaths::new(models, key)?;
        loop {
            p.step();
            for (i, r) in row.iter_mut().enumerate() {
                *r = p.lambda(a, i);
            }
            if let Some(d) = proc.advance(Some(&row))? {
                return Ok(d.clone());
            }
        }
    }
}
