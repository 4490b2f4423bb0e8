//! Full runs: initialization, `T` local iterations per worker with
//! period-boundary barriers, metric sampling and divergence handling.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::{build_problem, Algorithm, ProblemConfig, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricRow, MetricTrace};
use crate::objectives::{self, Optimum, Problem};
use crate::optimizers::{
    self, delta_direct, v_direct, GlobalState, PeriodHistory, WorkerState,
};
use crate::schedule::SyncSchedule;
use crate::vector::{mean_of, ModelVector};

/// Runs abort once the loss of the averaged model exceeds this.
pub const DIVERGENCE_LOSS: f64 = 1e12;

/// How VRL-SGD's warm-up is carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WarmUpPath {
    /// A first communication period of length 1.
    #[default]
    Schedule,
    /// Direct initialization of `Δ_i` from centred first gradients.
    Direct,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads between barriers; 0 picks the available parallelism,
    /// 1 runs sequentially. Results do not depend on this.
    pub threads: usize,
    /// Check the algebraic identities of VRL-SGD while running. Keeps one
    /// period of per-worker gradients.
    pub diagnostics: bool,
    /// Keep the full state trajectory (every `t`).
    pub record_states: bool,
    /// VRL-SGD with the correction held at zero.
    pub zero_delta: bool,
    pub warm_up_path: WarmUpPath,
}

/// Worker states at time `t`: before synchronization in `trajectory`, after
/// it in `sync_states`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: u64,
    pub x_hat: ModelVector,
    pub models: Vec<ModelVector>,
    pub deltas: Vec<ModelVector>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateRecord {
    pub trajectory: Vec<Snapshot>,
    pub sync_states: Vec<Snapshot>,
}

/// Worst-case residuals of the identities VRL-SGD satisfies in exact
/// arithmetic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    /// `max ‖Σ_i Δ_i‖∞` over syncs.
    pub max_delta_sum: f64,
    /// Largest deviation of the averaged model from
    /// `x̂^{t+1} = x̂^t - γ (1/N) Σ_i ∇f_i(x_i^t, ξ)`.
    pub max_average_update_residual: f64,
    /// Recursive `Δ_i` against its direct-sum form.
    pub max_delta_form_gap: f64,
    /// `v_i = g_i - Δ_i` against its direct-sum form.
    pub max_v_form_gap: f64,
    pub syncs_checked: u64,
    pub steps_checked: u64,
    /// Heterogeneity constant of the first period.
    pub c_constant: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: RunConfig,
    pub final_state: GlobalState,
    pub trace: MetricTrace,
    pub diverged: bool,
    pub divergence: Option<String>,
    pub syncs: u64,
    /// Stochastic gradient draws per worker (`T · b` for a complete run).
    pub grad_evals: u64,
    pub wall: Duration,
    pub diagnostics: Option<DiagnosticReport>,
    pub states: Option<StateRecord>,
}

impl RunResult {
    pub fn final_row(&self) -> Option<&MetricRow> {
        self.trace.last()
    }
}

pub fn run(cfg: &RunConfig, p: &dyn Problem) -> Result<RunResult> {
    run_with(cfg, p, &RunOptions::default())
}

pub fn run_with(cfg: &RunConfig, p: &dyn Problem, opts: &RunOptions) -> Result<RunResult> {
    Engine::new(cfg, p, opts)?.run()
}

#[cfg(not(target_arch = "wasm32"))]
struct Stopwatch(std::time::Instant);

#[cfg(not(target_arch = "wasm32"))]
impl Stopwatch {
    fn start() -> Self {
        Self(std::time::Instant::now())
    }

    fn elapsed(&self) -> Duration {
        self.0.elapsed()
    }
}

#[cfg(target_arch = "wasm32")]
struct Stopwatch;

#[cfg(target_arch = "wasm32")]
impl Stopwatch {
    fn start() -> Self {
        Stopwatch
    }

    fn elapsed(&self) -> Duration {
        Duration::ZERO
    }
}

struct StepLog {
    x: ModelVector,
    g: ModelVector,
    v: ModelVector,
}

#[derive(Default)]
struct WorkerLog {
    samples: Vec<(ModelVector, ModelVector)>,
    steps: Vec<StepLog>,
}

struct Engine<'a> {
    cfg: &'a RunConfig,
    p: &'a dyn Problem,
    opts: &'a RunOptions,
    schedule: SyncSchedule,
    every: u64,
    optimum: Option<Optimum>,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a RunConfig, p: &'a dyn Problem, opts: &'a RunOptions) -> Result<Self> {
        cfg.validate()?;
        if p.worker_count() != cfg.workers {
            return Err(Error::InvalidConfig(format!(
                "config has {} workers but the problem has {}",
                cfg.workers,
                p.worker_count()
            )));
        }
        if let Some(x0) = &cfg.x0 {
            ModelVector::from(x0.clone()).check_dim(p.dim())?;
        }
        #[cfg(feature = "parallel")]
        let pool = {
            let threads = match opts.threads {
                0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
                n => n,
            }
            .min(cfg.workers);
            if threads > 1 {
                Some(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(threads)
                        .build()
                        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?,
                )
            } else {
                None
            }
        };
        Ok(Self {
            cfg,
            p,
            opts,
            schedule: SyncSchedule::new(cfg.k, cfg.effective_warm_up()),
            every: cfg.sample_every(),
            optimum: p.optimum(),
            #[cfg(feature = "parallel")]
            pool,
        })
    }

    fn for_each_worker<R, F>(&self, workers: &mut [WorkerState], f: F) -> Result<Vec<R>>
    where
        R: Send,
        F: Fn(&mut WorkerState) -> Result<R> + Sync,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| workers.par_iter_mut().map(&f).collect());
        }
        workers.iter_mut().map(f).collect()
    }

    fn is_vrl(&self) -> bool {
        self.cfg.algorithm == Algorithm::VrlSgd && !self.opts.zero_delta
    }

    fn record_steps(&self) -> bool {
        self.opts.diagnostics || self.opts.record_states
    }

    fn sampled(&self, t: u64, period_end: u64) -> bool {
        t % self.every == 0 || t == period_end
    }

    fn epoch(&self, t: u64) -> f64 {
        match self.p.sample_count() {
            Some(n) if n > 0 => {
                t as f64 * self.cfg.workers as f64 * self.cfg.batch_size as f64 / n as f64
            }
            _ => t as f64,
        }
    }

    fn row(
        &self,
        t: u64,
        models: &[ModelVector],
        directions: &[ModelVector],
        deltas: &[ModelVector],
        center: Option<&ModelVector>,
    ) -> Result<MetricRow> {
        let x_hat = match center {
            Some(z) => z.clone(),
            None => mean_of(models)?,
        };
        Ok(MetricRow {
            t,
            epoch: self.epoch(t),
            loss: objectives::loss(self.p, &x_hat)?,
            grad_norm_sq: metrics::grad_norm_sq(self.p, &x_hat)?,
            drift: metrics::worker_drift(models)?,
            v_variance: metrics::v_variance(directions)?,
            delta_residual: metrics::delta_residual(deltas)?,
            dist_to_opt: self
                .optimum
                .as_ref()
                .and_then(|o| x_hat.sub(&o.x).ok())
                .map(|d| d.norm()),
        })
    }

    fn snapshot(&self, state: &GlobalState, t: u64, models: Vec<ModelVector>) -> Result<Snapshot> {
        let x_hat = match self.cfg.algorithm {
            Algorithm::Easgd | Algorithm::Ssgd => state.x_hat.clone(),
            _ => mean_of(&models)?,
        };
        Ok(Snapshot {
            t,
            x_hat,
            models,
            deltas: state.deltas(),
        })
    }

    fn run(self) -> Result<RunResult> {
        let clock = Stopwatch::start();
        let cfg = self.cfg;
        let x0 = cfg
            .x0
            .clone()
            .map(ModelVector::from)
            .unwrap_or_else(|| ModelVector::zeros(self.p.dim()));
        let mut state = GlobalState::new(x0, cfg.workers, cfg.seed);
        let mut run = RunState {
            trace: MetricTrace::new(),
            syncs: 0,
            grad_evals: 0,
            history: PeriodHistory::default(),
            diag: self.opts.diagnostics.then(DiagnosticReport::default),
            states: self.opts.record_states.then(StateRecord::default),
            divergence: None,
        };
        if let Some(rec) = &mut run.states {
            rec.trajectory.push(self.snapshot(&state, 0, state.local_models())?);
        }

        let total = cfg.iterations;
        let mut synced = false;
        if total > 0 && self.is_vrl() && self.schedule.warm_up() && self.opts.warm_up_path == WarmUpPath::Direct {
            synced = self.direct_warm_up(&mut state, &mut run)?;
        }

        while state.t < total && run.divergence.is_none() {
            if !synced {
                if let Err(e) = self.synchronize(&mut state, &mut run) {
                    self.fail(&mut run, e)?;
                    break;
                }
            }
            synced = false;
            let t = state.t;
            let len = self.schedule.period_len_from(t).min(total - t);
            let outcome = if cfg.algorithm == Algorithm::Ssgd {
                self.ssgd_iteration(&mut state, &mut run)
            } else {
                self.local_period(&mut state, &mut run, len)
            };
            if let Err(e) = outcome {
                self.fail(&mut run, e)?;
                break;
            }
            self.check_divergence(&state, &mut run)?;
        }

        // Also after a divergence, so the reported model is the current
        // average rather than the last synchronized one.
        if total > 0 {
            match cfg.algorithm {
                Algorithm::VrlSgd | Algorithm::LocalSgd => optimizers::local_sgd_sync(&mut state)?,
                Algorithm::Easgd | Algorithm::Ssgd => {}
            }
        }

        Ok(RunResult {
            config: cfg.clone(),
            final_state: state,
            trace: run.trace,
            diverged: run.divergence.is_some(),
            divergence: run.divergence,
            syncs: run.syncs,
            grad_evals: run.grad_evals,
            wall: clock.elapsed(),
            diagnostics: run.diag,
            states: run.states,
        })
    }

    /// Non-finite arithmetic ends the run as diverged; anything else is a
    /// genuine error.
    fn fail(&self, run: &mut RunState, e: Error) -> Result<()> {
        match e {
            Error::NonFinite { .. } => {
                run.divergence = Some(e.to_string());
                Ok(())
            }
            other => Err(other),
        }
    }

    fn check_divergence(&self, state: &GlobalState, run: &mut RunState) -> Result<()> {
        let x_hat = match self.cfg.algorithm {
            Algorithm::Easgd | Algorithm::Ssgd => state.x_hat.clone(),
            _ => state.model_average()?,
        };
        let loss = objectives::loss(self.p, &x_hat)?;
        let finite = x_hat.is_finite() && state.workers.iter().all(|w| w.x.is_finite() && w.delta.is_finite());
        if !finite || !loss.is_finite() {
            run.divergence = Some(format!("non-finite state at t={}", state.t));
        } else if loss > DIVERGENCE_LOSS {
            run.divergence = Some(format!("loss {loss:e} exceeded {DIVERGENCE_LOSS:e} at t={}", state.t));
        }
        Ok(())
    }

    fn synchronize(&self, state: &mut GlobalState, run: &mut RunState) -> Result<()> {
        let t = state.t;
        match self.cfg.algorithm {
            Algorithm::VrlSgd if !self.opts.zero_delta => {
                optimizers::vrl_sync(state, &self.schedule, self.cfg.gamma)?;
                if let Some(diag) = &mut run.diag {
                    diag.max_delta_sum = diag.max_delta_sum.max(metrics::delta_residual(&state.deltas())?);
                    if let Some(k_prev) = self.schedule.previous_period_len(t) {
                        if run.history.len() == k_prev as usize {
                            for w in &state.workers {
                                let direct = delta_direct(&run.history, w.worker_id, k_prev as usize)?;
                                diag.max_delta_form_gap = diag.max_delta_form_gap.max(direct.max_abs_diff(&w.delta));
                            }
                            diag.syncs_checked += 1;
                        }
                    }
                }
            }
            Algorithm::VrlSgd | Algorithm::LocalSgd => optimizers::local_sgd_sync(state)?,
            Algorithm::Easgd => optimizers::easgd_sync(state, self.cfg.easgd_alpha())?,
            Algorithm::Ssgd => {}
        }
        run.syncs += 1;
        if let Some(rec) = &mut run.states {
            rec.sync_states.push(self.snapshot(state, t, state.local_models())?);
        }
        Ok(())
    }

    /// Warm-up by direct initialization; leaves the state synchronized at
    /// `t = 1`.
    fn direct_warm_up(&self, state: &mut GlobalState, run: &mut RunState) -> Result<bool> {
        let x0 = state.x_hat.clone();
        let initial = self.opts.record_states.then(|| self.snapshot(state, 0, state.local_models()));
        if let Err(e) = optimizers::warm_up_init(state, self.p, self.cfg.gamma, self.cfg.batch_size) {
            self.fail(run, e)?;
            return Ok(false);
        }
        run.syncs += 2;
        run.grad_evals += self.cfg.batch_size as u64;
        let grads: Vec<ModelVector> = state.workers.iter().map(|w| w.v.clone()).collect();
        // What the workers would hold at t = 1 before averaging.
        let pre_sync = grads
            .iter()
            .map(|g| crate::vector::vec_axpy(-self.cfg.gamma, g, &x0))
            .collect::<Result<Vec<_>>>()?;
        let zeros = vec![ModelVector::zeros(x0.dim()); grads.len()];
        if self.opts.diagnostics {
            run.history = PeriodHistory { grads: vec![grads.clone()] };
            if let Some(diag) = &mut run.diag {
                diag.c_constant = Some(metrics::c_constant(self.p, std::slice::from_ref(&x0))?);
                diag.max_delta_sum = diag.max_delta_sum.max(metrics::delta_residual(&state.deltas())?);
            }
        }
        if self.sampled(1, 1) {
            let row = self.row(1, &pre_sync, &grads, &zeros, None)?;
            run.trace.push(row);
        }
        if let Some(rec) = &mut run.states {
            let x_hat = mean_of(&pre_sync)?;
            rec.trajectory.push(Snapshot {
                t: 1,
                x_hat,
                models: pre_sync,
                deltas: zeros,
            });
            rec.sync_states.extend(initial.transpose()?);
            rec.sync_states.push(self.snapshot(state, 1, state.local_models())?);
        }
        self.check_divergence(state, run)?;
        Ok(true)
    }

    fn ssgd_iteration(&self, state: &mut GlobalState, run: &mut RunState) -> Result<()> {
        let t = state.t;
        let (p, batch) = (self.p, self.cfg.batch_size);
        let x_hat = state.x_hat.clone();
        let grads = self.for_each_worker(&mut state.workers, |w| {
            optimizers::draw_gradient(w, p, &x_hat, batch, t)
        })?;
        optimizers::ssgd_apply(state, &grads, self.cfg.gamma)?;
        state.t = t + 1;
        run.grad_evals += batch as u64;
        if self.sampled(t + 1, t + 1) {
            let models = state.local_models();
            let row = self.row(t + 1, &models, &grads, &state.deltas(), Some(&state.x_hat))?;
            run.trace.push(row);
        }
        if let Some(rec) = &mut run.states {
            rec.trajectory.push(self.snapshot(state, t + 1, state.local_models())?);
        }
        Ok(())
    }

    fn local_period(&self, state: &mut GlobalState, run: &mut RunState, len: u64) -> Result<()> {
        let t0 = state.t;
        let end = t0 + len;
        let cfg = self.cfg;
        let (p, gamma, batch) = (self.p, cfg.gamma, cfg.batch_size);
        let vrl = cfg.algorithm == Algorithm::VrlSgd;
        let record = self.record_steps();
        let samples: Vec<u64> = (t0 + 1..=end).filter(|&s| self.sampled(s, end)).collect();
        let x_start = state.x_hat.clone();

        let logs = self.for_each_worker(&mut state.workers, |w| {
            let mut log = WorkerLog::default();
            let mut next = samples.iter().peekable();
            for tau in t0..end {
                let g = if vrl {
                    optimizers::vrl_local_step(w, p, gamma, batch, tau)?
                } else {
                    optimizers::local_sgd_step(w, p, gamma, batch, tau)?
                };
                if record {
                    log.steps.push(StepLog {
                        x: w.x.clone(),
                        g,
                        v: w.v.clone(),
                    });
                }
                if next.peek() == Some(&&(tau + 1)) {
                    next.next();
                    log.samples.push((w.x.clone(), w.v.clone()));
                }
            }
            Ok(log)
        })?;
        state.t = end;
        run.grad_evals += len * batch as u64;

        let deltas = state.deltas();
        let center = (cfg.algorithm == Algorithm::Easgd).then_some(&state.x_hat);
        for (j, &s) in samples.iter().enumerate() {
            let models: Vec<ModelVector> = logs.iter().map(|l| l.samples[j].0.clone()).collect();
            let dirs: Vec<ModelVector> = logs.iter().map(|l| l.samples[j].1.clone()).collect();
            let row = self.row(s, &models, &dirs, &deltas, center)?;
            run.trace.push(row);
        }

        if let Some(rec) = &mut run.states {
            for step in 0..len as usize {
                let models = logs.iter().map(|l| l.steps[step].x.clone()).collect();
                rec.trajectory.push(self.snapshot(state, t0 + step as u64 + 1, models)?);
            }
        }

        if self.opts.diagnostics {
            self.check_identities(state, run, &logs, t0, len, x_start)?;
        }
        Ok(())
    }

    /// Averaged-model recursion, direct `v` form and the first-period
    /// constant, from one period of per-step logs.
    fn check_identities(
        &self,
        state: &GlobalState,
        run: &mut RunState,
        logs: &[WorkerLog],
        t0: u64,
        len: u64,
        x_start: ModelVector,
    ) -> Result<()> {
        let gamma = self.cfg.gamma;
        let is_vrl = self.is_vrl();
        let diag = run.diag.as_mut().expect("diagnostics enabled");
        let mut prev = x_start;
        let mut first_period = vec![prev.clone()];
        for step in 0..len as usize {
            let grads: Vec<ModelVector> = logs.iter().map(|l| l.steps[step].g.clone()).collect();
            let models: Vec<ModelVector> = logs.iter().map(|l| l.steps[step].x.clone()).collect();
            let next = mean_of(&models)?;
            if is_vrl {
                let g_mean = mean_of(&grads)?;
                let predicted: Vec<f64> = prev
                    .as_slice()
                    .iter()
                    .zip(g_mean.as_slice())
                    .map(|(x, g)| x - gamma * g)
                    .collect();
                let resid = next.max_abs_diff(&ModelVector::from(predicted));
                diag.max_average_update_residual = diag.max_average_update_residual.max(resid);
                for (i, l) in logs.iter().enumerate() {
                    let direct = v_direct(&l.steps[step].g, &run.history, i)?;
                    diag.max_v_form_gap = diag.max_v_form_gap.max(direct.max_abs_diff(&l.steps[step].v));
                }
                diag.steps_checked += 1;
            }
            if t0 == 0 && (step as u64) + 1 < len {
                first_period.push(next.clone());
            }
            prev = next;
        }
        if t0 == 0 {
            diag.c_constant = Some(metrics::c_constant(self.p, &first_period)?);
        }
        if len == self.schedule.period_len_from(t0) {
            run.history = PeriodHistory {
                grads: (0..len as usize)
                    .map(|s| logs.iter().map(|l| l.steps[s].g.clone()).collect())
                    .collect(),
            };
        }
        let _ = state;
        Ok(())
    }
}

struct RunState {
    trace: MetricTrace,
    syncs: u64,
    grad_evals: u64,
    history: PeriodHistory,
    diag: Option<DiagnosticReport>,
    states: Option<StateRecord>,
    divergence: Option<String>,
}

/// Parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    K,
    Gamma,
    Workers,
    BParam,
    BatchSize,
    Algorithm,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "k" => SweepAxis::K,
            "gamma" => SweepAxis::Gamma,
            "N" | "n" | "workers" => SweepAxis::Workers,
            "b_param" | "b-param" => SweepAxis::BParam,
            "batch_size" | "batch-size" => SweepAxis::BatchSize,
            "algorithm" | "algo" => SweepAxis::Algorithm,
            other => return Err(Error::InvalidAxis(other.to_owned())),
        })
    }
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::K => "k",
            SweepAxis::Gamma => "gamma",
            SweepAxis::Workers => "N",
            SweepAxis::BParam => "b_param",
            SweepAxis::BatchSize => "batch_size",
            SweepAxis::Algorithm => "algorithm",
        }
    }

    /// `base` with this axis set to `value`. Sweeping the algorithm to
    /// `ssgd` also sets `k = 1`.
    pub fn apply(&self, base: &RunConfig, value: &str) -> Result<RunConfig> {
        let bad = |e: String| Error::InvalidConfig(format!("{} value `{value}`: {e}", self.as_str()));
        let mut cfg = base.clone();
        match self {
            SweepAxis::K => cfg.k = value.parse().map_err(|e| bad(format!("{e}")))?,
            SweepAxis::Gamma => cfg.gamma = value.parse().map_err(|e| bad(format!("{e}")))?,
            SweepAxis::Workers => cfg.workers = value.parse().map_err(|e| bad(format!("{e}")))?,
            SweepAxis::BatchSize => cfg.batch_size = value.parse().map_err(|e| bad(format!("{e}")))?,
            SweepAxis::BParam => match &mut cfg.problem {
                ProblemConfig::Quad { b_param, .. } => {
                    *b_param = value.parse().map_err(|e| bad(format!("{e}")))?
                }
                other => return Err(bad(format!("problem `{}` has no b_param", other.name()))),
            },
            SweepAxis::Algorithm => {
                cfg.algorithm = value.parse()?;
                if cfg.algorithm == Algorithm::Ssgd {
                    cfg.k = 1;
                }
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: String,
    pub result: RunResult,
}

/// One run per value, all sharing `base.seed`, in the order given.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[String], opts: &RunOptions) -> Result<Vec<SweepPoint>> {
    values
        .iter()
        .map(|v| {
            let cfg = axis.apply(base, v)?.resolved();
            let p = build_problem(&cfg)?;
            Ok(SweepPoint {
                value: v.clone(),
                result: run_with(&cfg, p.as_ref(), opts)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{QuadraticPairProblem, SeparableQuadratic};

    fn quad_cfg(algorithm: Algorithm, k: u64, iterations: u64) -> RunConfig {
        RunConfig {
            algorithm,
            k,
            iterations,
            ..RunConfig::default()
        }
    }

    fn sep_cfg(algorithm: Algorithm, workers: usize, k: u64, sigma: f64) -> (RunConfig, SeparableQuadratic) {
        let cfg = RunConfig {
            algorithm,
            k,
            workers,
            iterations: 200,
            gamma: 0.05,
            seed: 11,
            problem: ProblemConfig::SepQuad {
                dim: 3,
                spread: 1.0,
                sigma,
                problem_seed: 5,
            },
            ..RunConfig::default()
        };
        let p = SeparableQuadratic::random(workers, 3, 1.0, sigma, 5);
        (cfg, p)
    }

    #[test]
    fn zero_iterations_leave_the_initial_state() {
        let p = QuadraticPairProblem::new(1.0, 0.0);
        let cfg = RunConfig {
            x0: Some(vec![0.5]),
            ..quad_cfg(Algorithm::VrlSgd, 10, 0)
        };
        let r = run(&cfg, &p).unwrap();
        assert!(r.trace.is_empty());
        assert_eq!(r.final_state.x_hat.as_slice(), &[0.5]);
        assert_eq!(r.syncs, 0);
        assert_eq!(r.grad_evals, 0);
        assert!(!r.diverged);
    }

    #[test]
    fn vrl_reaches_the_optimum_and_local_sgd_the_biased_point() {
        let p = QuadraticPairProblem::new(1.0, 0.0);
        let vrl = run(&quad_cfg(Algorithm::VrlSgd, 10, 5000), &p).unwrap();
        assert!(vrl.final_state.x_hat.max_abs() <= 1e-8);
        let local = run(&quad_cfg(Algorithm::LocalSgd, 10, 5000), &p).unwrap();
        let x = local.final_state.x_hat.as_slice()[0];
        assert!((x - -0.0592305435265231).abs() <= 1e-6, "{x}");
        let row = local.final_row().unwrap();
        assert_eq!(row.t, 5000);
        assert_eq!(row.dist_to_opt, Some(x.abs()));
    }

    #[test]
    fn counts_syncs_and_gradient_draws() {
        let p = QuadraticPairProblem::new(1.0, 0.1);
        for (algo, k, t, syncs) in [
            (Algorithm::VrlSgd, 10, 95, 10),
            (Algorithm::LocalSgd, 10, 100, 10),
            (Algorithm::Easgd, 7, 50, 8),
            (Algorithm::Ssgd, 1, 30, 30),
        ] {
            let cfg = RunConfig {
                batch_size: 3,
                ..quad_cfg(algo, k, t)
            };
            let r = run(&cfg, &p).unwrap();
            assert_eq!(r.syncs, syncs, "{algo}");
            assert_eq!(r.grad_evals, 3 * t, "{algo}");
            assert_eq!(r.final_state.t, t);
        }
    }

    #[test]
    fn warm_up_adds_one_round() {
        let p = QuadraticPairProblem::new(1.0, 0.0);
        let cfg = RunConfig {
            warm_up: true,
            ..quad_cfg(Algorithm::VrlSgd, 10, 100)
        };
        let a = run(&cfg, &p).unwrap();
        assert_eq!(a.syncs, 11);
        let opts = RunOptions {
            warm_up_path: WarmUpPath::Direct,
            ..RunOptions::default()
        };
        let b = run_with(&cfg, &p, &opts).unwrap();
        assert_eq!(b.syncs, 11);
        assert_eq!(b.grad_evals, 100);
    }

    #[test]
    fn trace_rows_are_sampled_at_cadence_and_period_ends() {
        let p = QuadraticPairProblem::new(1.0, 0.0);
        let cfg = RunConfig {
            sample_every: Some(4),
            ..quad_cfg(Algorithm::LocalSgd, 10, 25)
        };
        let r = run(&cfg, &p).unwrap();
        let ts: Vec<u64> = r.trace.rows().iter().map(|row| row.t).collect();
        assert_eq!(ts, vec![4, 8, 10, 12, 16, 20, 24, 25]);
    }

    #[test]
    fn runs_are_deterministic_across_thread_counts() {
        let (cfg, p) = sep_cfg(Algorithm::VrlSgd, 4, 5, 0.5);
        let single = run_with(&cfg, &p, &RunOptions { threads: 1, ..RunOptions::default() }).unwrap();
        let again = run_with(&cfg, &p, &RunOptions { threads: 1, ..RunOptions::default() }).unwrap();
        let multi = run_with(&cfg, &p, &RunOptions { threads: 4, ..RunOptions::default() }).unwrap();
        assert_eq!(single.trace.to_csv_string(), again.trace.to_csv_string());
        assert_eq!(single.trace.to_csv_string(), multi.trace.to_csv_string());
        assert!(single.final_state.x_hat.bits_eq(&multi.final_state.x_hat));
    }

    #[test]
    fn diagnostics_hold_on_a_stochastic_run() {
        let (cfg, p) = sep_cfg(Algorithm::VrlSgd, 4, 5, 0.5);
        let opts = RunOptions {
            diagnostics: true,
            ..RunOptions::default()
        };
        let r = run_with(&cfg, &p, &opts).unwrap();
        let d = r.diagnostics.unwrap();
        assert!(d.max_delta_sum <= 1e-10, "{d:?}");
        assert!(d.max_average_update_residual <= 1e-12, "{d:?}");
        assert!(d.max_delta_form_gap <= 1e-9, "{d:?}");
        assert!(d.max_v_form_gap <= 1e-9, "{d:?}");
        assert_eq!(d.steps_checked, 200);
        assert_eq!(d.syncs_checked, 39);
        assert!(d.c_constant.unwrap() > 0.0);
    }

    #[test]
    fn diagnostics_do_not_perturb_the_trajectory() {
        let (cfg, p) = sep_cfg(Algorithm::VrlSgd, 2, 4, 0.5);
        let plain = run(&cfg, &p).unwrap();
        let opts = RunOptions {
            diagnostics: true,
            record_states: true,
            ..RunOptions::default()
        };
        let diag = run_with(&cfg, &p, &opts).unwrap();
        assert_eq!(plain.trace.to_csv_string(), diag.trace.to_csv_string());
        let states = diag.states.unwrap();
        assert_eq!(states.trajectory.len(), 201);
        assert_eq!(states.sync_states.len(), 50);
    }

    #[test]
    fn c_vanishes_with_warm_up_and_k_one() {
        let p = QuadraticPairProblem::new(2.0, 0.0);
        let opts = RunOptions {
            diagnostics: true,
            ..RunOptions::default()
        };
        let warm = RunConfig {
            warm_up: true,
            ..quad_cfg(Algorithm::VrlSgd, 10, 50)
        };
        for cfg in [warm, quad_cfg(Algorithm::VrlSgd, 1, 50)] {
            let r = run_with(&cfg, &p, &opts).unwrap();
            assert_eq!(r.diagnostics.unwrap().c_constant, Some(0.0));
        }
        let r = run_with(&quad_cfg(Algorithm::VrlSgd, 10, 50), &p, &opts).unwrap();
        assert!(r.diagnostics.unwrap().c_constant.unwrap() > 0.0);
    }

    #[test]
    fn large_steps_are_flagged_as_divergence() {
        let p = QuadraticPairProblem::new(1.0, 0.0);
        let cfg = RunConfig {
            gamma: 1.0,
            x0: Some(vec![0.25]),
            ..quad_cfg(Algorithm::LocalSgd, 10, 10_000)
        };
        let r = run(&cfg, &p).unwrap();
        assert!(r.diverged);
        assert!(r.divergence.is_some());
        assert!(r.final_state.t < 10_000);
        assert!(r.trace.len() < 10_000);
    }

    #[test]
    fn mismatched_worker_count_is_rejected() {
        let p = SeparableQuadratic::random(3, 2, 1.0, 0.0, 1);
        let cfg = RunConfig {
            workers: 4,
            problem: ProblemConfig::SepQuad {
                dim: 2,
                spread: 1.0,
                sigma: 0.0,
                problem_seed: 1,
            },
            ..RunConfig::default()
        };
        assert!(matches!(run(&cfg, &p), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn easgd_with_zero_alpha_decouples_workers() {
        let p = QuadraticPairProblem::new(1.0, 0.0);
        let cfg = RunConfig {
            easgd_alpha: Some(0.0),
            ..quad_cfg(Algorithm::Easgd, 10, 3000)
        };
        let r = run(&cfg, &p).unwrap();
        let xs = r.final_state.local_models();
        assert!((xs[0].as_slice()[0] + 2.0).abs() < 1e-8);
        assert!((xs[1].as_slice()[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn sweep_over_k_one_matches_a_plain_run() {
        let base = quad_cfg(Algorithm::VrlSgd, 10, 300).resolved();
        let pts = sweep(&base, SweepAxis::K, &["1".into()], &RunOptions::default()).unwrap();
        let cfg = RunConfig { k: 1, ..base };
        let p = build_problem(&cfg).unwrap();
        let direct = run(&cfg, p.as_ref()).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].result.trace.to_csv_string(), direct.trace.to_csv_string());
    }

    #[test]
    fn sweep_axes_parse_and_apply() {
        assert_eq!("N".parse::<SweepAxis>().unwrap(), SweepAxis::Workers);
        assert!(matches!("lr".parse::<SweepAxis>(), Err(Error::InvalidAxis(_))));
        let base = quad_cfg(Algorithm::LocalSgd, 10, 10);
        let c = SweepAxis::Algorithm.apply(&base, "ssgd").unwrap();
        assert_eq!((c.algorithm, c.k), (Algorithm::Ssgd, 1));
        let c = SweepAxis::BParam.apply(&base, "4").unwrap();
        assert_eq!(c.problem, ProblemConfig::Quad { b_param: 4.0, sigma: 0.0 });
        assert!(SweepAxis::K.apply(&base, "ten").is_err());
    }
}
