//! Repeated risk minimization with empirical sensitivity estimation.
//!
//! Each iteration trains on the data induced by the previous deployment,
//! deploys, and collects the next induced dataset from the map. For the
//! max-margin learner the balancing parameter is re-derived every iteration
//! as `C = alpha / eps_bar`, where `eps_bar` is the running mean of the
//! measured sensitivities, which keeps `eps_bar * C = alpha < 1/2`.

use std::io::{BufRead, Write};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::fmt::format_sig;
use crate::kernel::{model_cosine, model_diff_norm, model_norm, KernelModel, KernelSpec};
use crate::metrics::accuracy;
use crate::rng::derive_seed;
use crate::shift::{DecisionFunction, MapSpec};
use crate::solver::{solve_warm, SolveSettings};

/// Which model decides margin violators in the step estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolatorFilter {
    /// `y f_{t-1}(x) < 1`, the previous deployment.
    Previous,
    /// `y f_t(x) < 1`, the freshly trained model.
    Current,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RrmSettings {
    /// Target `eps_bar * C`; must lie in `(0, 0.5)`.
    pub alpha: f64,
    pub t_max: usize,
    /// Trial count used by experiment drivers; a single run is one trial.
    pub trials: usize,
    pub burn_in: usize,
    pub c_init: f64,
    pub convergence_consistency: f64,
    pub seed: u64,
    pub solver: SolveSettings,
    pub violator_filter: ViolatorFilter,
    /// Draw fresh map randomness every iteration. When false the map reuses
    /// one random stream per trial, making `D(theta)` a deterministic
    /// function of the deployed model.
    pub resample_each_iteration: bool,
    pub stop_on_convergence: bool,
}

impl Default for RrmSettings {
    fn default() -> Self {
        Self {
            alpha: 0.49,
            t_max: 100,
            trials: 10,
            burn_in: 20,
            c_init: 1.0,
            convergence_consistency: 1.0 - 1e-6,
            seed: 0,
            solver: SolveSettings::default(),
            violator_filter: ViolatorFilter::Previous,
            resample_each_iteration: false,
            stop_on_convergence: true,
        }
    }
}

impl RrmSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(invalid(format!("alpha must lie in (0, 0.5), got {}", self.alpha)));
        }
        if self.t_max == 0 {
            return Err(invalid("t_max must be at least 1"));
        }
        if self.burn_in >= self.t_max {
            return Err(invalid(format!(
                "burn_in ({}) must be below t_max ({})",
                self.burn_in, self.t_max
            )));
        }
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if !(self.c_init > 0.0 && self.c_init.is_finite()) {
            return Err(invalid(format!("c_init must be positive, got {}", self.c_init)));
        }
        self.solver.validate()
    }
}

/// One deployment. Quantities that do not apply (no predecessor, no
/// sensitivity measured, not a max-margin learner) are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub t: usize,
    pub epsilon: f64,
    pub epsilon_bar: f64,
    pub c: f64,
    pub accuracy: f64,
    pub consistency: f64,
    pub model_gap: f64,
    pub dual_gap: f64,
    pub n: usize,
    /// `|theta_t|`; kept in memory only.
    pub theta_norm: f64,
    pub solver_converged: bool,
}

impl IterationRecord {
    pub fn empty(t: usize) -> Self {
        Self {
            t,
            epsilon: f64::NAN,
            epsilon_bar: f64::NAN,
            c: f64::NAN,
            accuracy: f64::NAN,
            consistency: f64::NAN,
            model_gap: f64::NAN,
            dual_gap: f64::NAN,
            n: 0,
            theta_norm: f64::NAN,
            solver_converged: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RrmTrace<M> {
    pub records: Vec<IterationRecord>,
    pub final_model: M,
    pub alpha: f64,
    pub burn_in: usize,
    pub converged: bool,
}

/// Relative threshold under which two consecutive models count as equal.
pub const GAP_THRESHOLD: f64 = 1e-8;

pub fn gap_threshold(prev_norm: f64) -> f64 {
    GAP_THRESHOLD * prev_norm.max(1.0)
}

fn check_width(data: &Dataset, model: &KernelModel) -> Result<()> {
    if model.width() != data.n_features() + 1 {
        return Err(invalid("model width does not match augmented data width"));
    }
    Ok(())
}

/// Sensitivity estimate after the first deployment: the change in mean
/// signed margin of `theta1` between the base data and the first induced
/// data, over `|theta1|^2`.
pub fn estimate_epsilon_initial(d0: &Dataset, d1: &Dataset, theta1: &KernelModel) -> Result<f64> {
    check_width(d0, theta1)?;
    check_width(d1, theta1)?;
    let norm_sq = crate::kernel::model_dot(theta1, theta1)?;
    if !(norm_sq > 0.0) {
        return Err(Error::Estimation("first model has zero norm".into()));
    }
    let mean_margin = |d: &Dataset| {
        let f = theta1.scores(d);
        let n = d.n_rows() as f64;
        let terms = f.iter().zip(d.labels()).map(|(f, y)| y * f);
        (terms.clone().sum::<f64>() / n, terms.map(f64::abs).sum::<f64>() / n)
    };
    let (m0, s0) = mean_margin(d0);
    let (m1, s1) = mean_margin(d1);
    Ok(cancel_noise(m0 - m1, s0 + s1) / norm_sq)
}

/// `|diff|`, or 0 when it is within rounding noise of sums whose absolute
/// terms total `scale`.
fn cancel_noise(diff: f64, scale: f64) -> f64 {
    if diff.abs() <= NOISE_FLOOR * scale {
        0.0
    } else {
        diff.abs()
    }
}

const NOISE_FLOOR: f64 = 1e-12;

/// Sensitivity estimate for a later step. Returns `None` when the two
/// models are closer than the gap threshold (the run has converged and the
/// ratio is undefined).
///
/// Each side sums `y_i (f_prev(x_i) - f_cur(x_i))` over its margin violators
/// and divides by that side's row count; an empty violator set contributes 0.
/// In both estimators a difference at the level of floating-point
/// cancellation noise counts as exactly zero.
pub fn estimate_epsilon_step(
    d_prev: &Dataset,
    d_cur: &Dataset,
    theta_prev: &KernelModel,
    theta_cur: &KernelModel,
    filter: ViolatorFilter,
) -> Result<Option<f64>> {
    for (d, m) in [(d_prev, theta_prev), (d_cur, theta_prev), (d_prev, theta_cur)] {
        check_width(d, m)?;
    }
    let gap = model_diff_norm(theta_prev, theta_cur)?;
    if gap <= gap_threshold(model_norm(theta_prev)) {
        return Ok(None);
    }
    let side = |d: &Dataset| {
        let f_prev = theta_prev.scores(d);
        let f_cur = theta_cur.scores(d);
        let filter_scores = match filter {
            ViolatorFilter::Previous => &f_prev,
            ViolatorFilter::Current => &f_cur,
        };
        let terms = d
            .labels()
            .iter()
            .enumerate()
            .filter(|&(i, y)| y * filter_scores[i] < 1.0)
            .map(|(i, y)| y * (f_prev[i] - f_cur[i]));
        let n = d.n_rows() as f64;
        (terms.clone().sum::<f64>() / n, terms.map(f64::abs).sum::<f64>() / n)
    };
    let (a, sa) = side(d_prev);
    let (b, sb) = side(d_cur);
    Ok(Some(cancel_noise(a - b, sa + sb) / (gap * gap)))
}

/// What a learner produced for one deployment.
pub struct Trained<M> {
    pub model: M,
    pub c: f64,
    pub dual_gap: f64,
    pub solver_converged: bool,
}

/// A retraining rule plugged into the shared deployment loop.
pub trait Policy {
    type Model: DecisionFunction + Clone;

    fn train(&mut self, t: usize, data: &Dataset, prev: Option<&Self::Model>) -> Result<Trained<Self::Model>>;

    /// Called after deployment `t` with the data it was trained on and the
    /// data it induced. Returns the sensitivity measured at this step, if
    /// the learner measures one.
    fn observe(
        &mut self,
        _t: usize,
        _trained_on: &Dataset,
        _induced: &Dataset,
        _prev: Option<&Self::Model>,
        _cur: &Self::Model,
    ) -> Result<Option<f64>> {
        Ok(None)
    }

    fn epsilon_bar(&self) -> f64 {
        f64::NAN
    }

    fn model_gap(&self, a: &Self::Model, b: &Self::Model) -> Result<f64>;

    fn consistency(&self, a: &Self::Model, b: &Self::Model) -> Result<f64>;

    fn norm(&self, _m: &Self::Model) -> f64 {
        f64::NAN
    }
}

const SOLVER_STREAM: u64 = 1 << 32;
const MAP_STREAM: u64 = 2 << 32;

/// The shared loop: train on the previous induced data, deploy, collect.
pub fn drive<P: Policy>(base: &Dataset, map: &MapSpec, settings: &RrmSettings, mut policy: P) -> Result<RrmTrace<P::Model>> {
    settings.validate()?;
    map.validate()?;
    let mut records = Vec::with_capacity(settings.t_max);
    let mut trained_on = base.clone();
    let mut prev: Option<P::Model> = None;
    let mut converged = false;

    for t in 1..=settings.t_max {
        let trained = policy.train(t, &trained_on, prev.as_ref())?;
        let model = trained.model;
        let map_seed = if settings.resample_each_iteration {
            derive_seed(settings.seed, MAP_STREAM + t as u64)
        } else {
            derive_seed(settings.seed, MAP_STREAM)
        };
        let induced = map.apply(base, &model, map_seed)?;

        let mut rec = IterationRecord::empty(t);
        rec.c = trained.c;
        rec.dual_gap = trained.dual_gap;
        rec.solver_converged = trained.solver_converged;
        rec.n = induced.n_rows();
        rec.accuracy = accuracy(&model, &induced)?;
        rec.theta_norm = policy.norm(&model);
        if let Some(p) = &prev {
            rec.model_gap = policy.model_gap(p, &model)?;
            rec.consistency = policy.consistency(p, &model)?;
        }
        if let Some(eps) = policy.observe(t, &trained_on, &induced, prev.as_ref(), &model)? {
            rec.epsilon = eps;
        }
        rec.epsilon_bar = policy.epsilon_bar();
        records.push(rec);

        let settled = prev.as_ref().is_some_and(|p| {
            let threshold = gap_threshold(policy.norm(p).max(0.0));
            rec.consistency >= settings.convergence_consistency && rec.model_gap <= threshold
        });
        prev = Some(model);
        trained_on = induced;
        if settled {
            converged = true;
            if settings.stop_on_convergence {
                break;
            }
        }
    }

    Ok(RrmTrace {
        records,
        final_model: prev.expect("t_max >= 1"),
        alpha: settings.alpha,
        burn_in: settings.burn_in,
        converged,
    })
}

/// The max-margin learner with the adaptive `C = alpha / eps_bar` rule.
struct MaxMargin {
    spec: KernelSpec,
    solver: SolveSettings,
    alpha: f64,
    c: f64,
    seed: u64,
    filter: ViolatorFilter,
    epsilons: Vec<f64>,
    warm: Option<Vec<f64>>,
}

impl MaxMargin {
    fn eps_bar(&self) -> f64 {
        if self.epsilons.is_empty() {
            f64::NAN
        } else {
            self.epsilons.iter().sum::<f64>() / self.epsilons.len() as f64
        }
    }
}

impl Policy for MaxMargin {
    type Model = KernelModel;

    fn train(&mut self, t: usize, data: &Dataset, _prev: Option<&KernelModel>) -> Result<Trained<KernelModel>> {
        if t > 1 {
            let eps_bar = self.eps_bar();
            // With no measured sensitivity yet the previous C stays in force.
            if eps_bar > 0.0 {
                self.c = self.alpha / eps_bar;
            }
        }
        let settings = self.solver.with_c(self.c);
        let warm = self.warm.as_deref().filter(|w| w.len() == data.n_rows());
        let report = solve_warm(
            data,
            &self.spec,
            &settings,
            derive_seed(self.seed, SOLVER_STREAM + t as u64),
            warm,
        )?;
        let solver_converged = report.converged || report.gap <= 1e3 * settings.tol;
        self.warm = Some(report.alpha);
        Ok(Trained {
            model: report.model,
            c: self.c,
            dual_gap: report.gap,
            solver_converged,
        })
    }

    fn observe(
        &mut self,
        _t: usize,
        trained_on: &Dataset,
        induced: &Dataset,
        prev: Option<&KernelModel>,
        cur: &KernelModel,
    ) -> Result<Option<f64>> {
        let eps = match prev {
            None => Some(estimate_epsilon_initial(trained_on, induced, cur)?),
            Some(p) => estimate_epsilon_step(trained_on, induced, p, cur, self.filter)?,
        };
        if let Some(e) = eps {
            self.epsilons.push(e);
        }
        Ok(eps)
    }

    fn epsilon_bar(&self) -> f64 {
        self.eps_bar()
    }

    fn model_gap(&self, a: &KernelModel, b: &KernelModel) -> Result<f64> {
        model_diff_norm(a, b)
    }

    fn consistency(&self, a: &KernelModel, b: &KernelModel) -> Result<f64> {
        model_cosine(a, b)
    }

    fn norm(&self, m: &KernelModel) -> f64 {
        model_norm(m)
    }
}

/// One trial of the adaptive max-margin procedure on `base` under `map`.
pub fn run_rrm(base: &Dataset, spec: &KernelSpec, map: &MapSpec, settings: &RrmSettings) -> Result<RrmTrace<KernelModel>> {
    spec.validate()?;
    let policy = MaxMargin {
        spec: *spec,
        solver: settings.solver,
        alpha: settings.alpha,
        c: settings.c_init,
        seed: settings.seed,
        filter: settings.violator_filter,
        epsilons: Vec::new(),
        warm: None,
    };
    drive(base, map, settings, policy)
}

/// Empirical contraction check on consecutive model gaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionAudit {
    /// Largest `gap_{t+1} / gap_t` over the whole trace.
    pub max_ratio: f64,
    /// Largest ratio with `t > burn_in`.
    pub post_burn_in_max_ratio: f64,
    /// `post_burn_in_max_ratio <= 1`.
    pub satisfied: bool,
}

/// Ratios of successive model gaps, skipping any gap at or below the
/// convergence threshold (the iteration has settled there). A trace with no
/// measurable ratio reports 0.
pub fn contraction_audit(records: &[IterationRecord], burn_in: usize) -> Result<ContractionAudit> {
    if records.len() < 3 {
        return Err(invalid(format!(
            "contraction audit needs at least 3 iterations, got {}",
            records.len()
        )));
    }
    let mut max_ratio: f64 = 0.0;
    let mut post: f64 = 0.0;
    for w in records.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if !a.model_gap.is_finite() || !b.model_gap.is_finite() {
            continue;
        }
        let norm = if a.theta_norm.is_finite() { a.theta_norm } else { 0.0 };
        if a.model_gap <= gap_threshold(norm) {
            continue;
        }
        let ratio = b.model_gap / a.model_gap;
        max_ratio = max_ratio.max(ratio);
        if a.t > burn_in {
            post = post.max(ratio);
        }
    }
    Ok(ContractionAudit {
        max_ratio,
        post_burn_in_max_ratio: post,
        satisfied: post <= 1.0,
    })
}

pub const TRACE_HEADER: &str = "t,epsilon,epsilon_bar,C,accuracy,consistency,model_gap,dual_gap,n";

/// Writes the trace as CSV with 12 significant digits and LF endings.
pub fn write_trace_csv(records: &[IterationRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in records {
        let g = |v: f64| format_sig(v, 12);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.t,
            g(r.epsilon),
            g(r.epsilon_bar),
            g(r.c),
            g(r.accuracy),
            g(r.consistency),
            g(r.model_gap),
            g(r.dual_gap),
            r.n
        )?;
    }
    Ok(())
}

pub fn trace_csv_string(records: &[IterationRecord]) -> String {
    let mut buf = Vec::new();
    write_trace_csv(records, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("ASCII output")
}

/// Parses a trace CSV produced by [`write_trace_csv`].
pub fn read_trace_csv(input: impl BufRead) -> Result<Vec<IterationRecord>> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| invalid("empty trace file"))?
        .map_err(|e| invalid(e.to_string()))?;
    if header.trim_end() != TRACE_HEADER {
        return Err(invalid(format!("unexpected trace header `{header}`")));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| invalid(e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 9 {
            return Err(invalid(format!("trace line {}: expected 9 cells, got {}", i + 2, cells.len())));
        }
        let f = |k: usize| -> Result<f64> {
            cells[k]
                .parse::<f64>()
                .map_err(|_| invalid(format!("trace line {}: bad number `{}`", i + 2, cells[k])))
        };
        let u = |k: usize| -> Result<usize> {
            cells[k]
                .parse::<usize>()
                .map_err(|_| invalid(format!("trace line {}: bad integer `{}`", i + 2, cells[k])))
        };
        records.push(IterationRecord {
            t: u(0)?,
            epsilon: f(1)?,
            epsilon_bar: f(2)?,
            c: f(3)?,
            accuracy: f(4)?,
            consistency: f(5)?,
            model_gap: f(6)?,
            dual_gap: f(7)?,
            n: u(8)?,
            theta_norm: f64::NAN,
            solver_converged: true,
        });
    }
    Ok(records)
}
