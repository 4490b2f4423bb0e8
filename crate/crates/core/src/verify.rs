//! The identity checks behind `verify`: invariants of VRL-SGD, its
//! equivalences with the baselines, the heterogeneity constant, and
//! agreement with the brute-force oracle.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, ProblemConfig, RunConfig};
use crate::error::Result;
use crate::objectives::{Problem, QuadraticPairProblem, SeparableQuadratic};
use crate::oracle;
use crate::simulator::{run_with, RunOptions, RunResult, Snapshot, WarmUpPath};

pub const DELTA_SUM_TOL: f64 = 1e-10;
pub const AVERAGE_UPDATE_TOL: f64 = 1e-12;
pub const DIRECT_FORM_TOL: f64 = 1e-9;
pub const ORACLE_TOL: f64 = 1e-9;
/// Allowed gap for the two equivalences that only hold up to rounding on
/// general inputs (see [`check_equivalences`]).
pub const EQUIVALENCE_TOL: f64 = 1e-10;

/// One cell of the test matrix: a random separable quadratic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub workers: usize,
    pub k: u64,
    pub dim: usize,
    pub sigma: f64,
}

impl Case {
    pub fn config(&self, algorithm: Algorithm, iterations: u64, seed: u64) -> RunConfig {
        RunConfig {
            algorithm,
            gamma: 0.05,
            k: self.k,
            workers: self.workers,
            iterations,
            seed,
            problem: ProblemConfig::SepQuad {
                dim: self.dim,
                spread: 1.0,
                sigma: self.sigma,
                problem_seed: seed ^ 0x5eed,
            },
            ..RunConfig::default()
        }
    }

    pub fn problem(&self, seed: u64) -> SeparableQuadratic {
        SeparableQuadratic::random(self.workers, self.dim, 1.0, self.sigma, seed ^ 0x5eed)
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N={} k={} d={} sigma={}", self.workers, self.k, self.dim, self.sigma)
    }
}

/// `N ∈ {2,4,8} × k ∈ {1,5,20} × d ∈ {1,8} × σ ∈ {0, 0.5}`.
pub fn default_matrix() -> Vec<Case> {
    let mut out = Vec::new();
    for workers in [2, 4, 8] {
        for k in [1, 5, 20] {
            for dim in [1, 8] {
                for sigma in [0.0, 0.5] {
                    out.push(Case { workers, k, dim, sigma });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    /// Largest observed violation.
    pub worst: f64,
    pub tolerance: f64,
    pub cases: usize,
    pub pass: bool,
    /// Case that produced `worst`, or the first failure.
    pub detail: String,
}

impl IdentityCheck {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            worst: 0.0,
            tolerance,
            cases: 0,
            pass: true,
            detail: String::new(),
        }
    }

    fn record(&mut self, gap: f64, what: impl fmt::Display) {
        self.cases += 1;
        let bad = !(gap <= self.tolerance);
        if bad && self.pass {
            self.pass = false;
            self.detail = format!("{what}: {gap:e}");
        }
        if gap > self.worst || gap.is_nan() {
            self.worst = gap;
            if self.pass {
                self.detail = what.to_string();
            }
        }
    }

    /// A requirement that has no numeric gap.
    fn require(&mut self, ok: bool, what: impl fmt::Display) {
        self.record(if ok { 0.0 } else { f64::INFINITY }, what);
    }
}

impl fmt::Display for IdentityCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.pass { "pass" } else { "FAIL" };
        write!(
            f,
            "[{mark}] {:<22} worst {:.3e} (tol {:.0e}) over {} cases",
            self.name, self.worst, self.tolerance, self.cases
        )?;
        if !self.detail.is_empty() {
            write!(f, "; {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<IdentityCheck>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&IdentityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let passed = self.checks.iter().filter(|c| c.pass).count();
        write!(f, "{passed}/{} identity checks passed", self.checks.len())
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub matrix: Vec<Case>,
    pub iterations: u64,
    pub seed: u64,
    pub threads: usize,
}

impl VerifyOptions {
    pub fn full() -> Self {
        Self {
            matrix: default_matrix(),
            iterations: 1000,
            seed: 7,
            threads: 1,
        }
    }

    pub fn quick() -> Self {
        Self {
            iterations: 200,
            ..Self::full()
        }
    }
}

fn snapshot_gap(a: &[Snapshot], b: &[Snapshot]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x.t != y.t {
                return f64::INFINITY;
            }
            x.models
                .iter()
                .zip(&y.models)
                .chain(x.deltas.iter().zip(&y.deltas))
                .map(|(m, n)| m.max_abs_diff(n))
                .fold(x.x_hat.max_abs_diff(&y.x_hat), f64::max)
        })
        .fold(0.0, f64::max)
}

fn x_hat_gap(a: &[Snapshot], b: &[Snapshot]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| if x.t == y.t { x.x_hat.max_abs_diff(&y.x_hat) } else { f64::INFINITY })
        .fold(0.0, f64::max)
}

fn bit_identical(a: &RunResult, b: &RunResult) -> bool {
    a.trace.to_csv_string() == b.trace.to_csv_string()
        && a.final_state
            .workers
            .iter()
            .zip(&b.final_state.workers)
            .all(|(x, y)| x.x.bits_eq(&y.x))
        && a.final_state.x_hat.bits_eq(&b.final_state.x_hat)
}

fn traced(threads: usize) -> RunOptions {
    RunOptions {
        threads,
        diagnostics: true,
        record_states: true,
        ..RunOptions::default()
    }
}

/// A run small enough that every intermediate value is a dyadic rational:
/// the two-worker quadratic with `σ = 0`, `γ = 1/4`, `x⁰ = 1`. Both sides of
/// an equivalence then compute exactly and must agree to the bit.
pub fn dyadic_config(algorithm: Algorithm, k: u64, warm_up: bool) -> (RunConfig, QuadraticPairProblem) {
    let cfg = RunConfig {
        algorithm,
        gamma: 0.25,
        k,
        iterations: 24,
        warm_up,
        x0: Some(vec![1.0]),
        sample_every: Some(1),
        ..RunConfig::default()
    };
    (cfg, QuadraticPairProblem::new(1.0, 0.0))
}

/// The three equivalences, returned as (k=1 vs S-SGD, zero correction vs
/// Local SGD, warm-up paths).
///
/// The zero-correction run performs the same floating-point operations as
/// Local SGD and must match bit for bit everywhere. The other two compare
/// different expression trees: they are required to be bit-identical on the
/// dyadic instance, where all arithmetic is exact, and within
/// [`EQUIVALENCE_TOL`] on the matrix.
pub fn check_equivalences(opts: &VerifyOptions) -> Result<[IdentityCheck; 3]> {
    let mut k1 = IdentityCheck::new("vrl_k1_eq_ssgd", EQUIVALENCE_TOL);
    let mut zero = IdentityCheck::new("vrl_zero_delta_eq_local", 0.0);
    let mut warm = IdentityCheck::new("warm_up_paths_agree", EQUIVALENCE_TOL);
    let plain = RunOptions {
        threads: opts.threads,
        ..RunOptions::default()
    };
    let direct = RunOptions {
        warm_up_path: WarmUpPath::Direct,
        ..traced(opts.threads)
    };

    let (vrl, p) = dyadic_config(Algorithm::VrlSgd, 1, false);
    let (ssgd, _) = dyadic_config(Algorithm::Ssgd, 1, false);
    let a = run_with(&vrl, &p, &traced(opts.threads))?;
    let b = run_with(&ssgd, &p, &traced(opts.threads))?;
    let same = x_hat_gap(&a.states.unwrap().trajectory, &b.states.unwrap().trajectory) == 0.0
        && a.final_state.x_hat.bits_eq(&b.final_state.x_hat);
    k1.require(same, "dyadic instance");
    let (warm_cfg, _) = dyadic_config(Algorithm::VrlSgd, 3, true);
    let a = run_with(&warm_cfg, &p, &traced(opts.threads))?;
    let b = run_with(&warm_cfg, &p, &direct)?;
    let states_equal = a.states == b.states;
    warm.require(bit_identical(&a, &b) && states_equal, "dyadic instance");

    for case in &opts.matrix {
        let p = case.problem(opts.seed);
        let base = case.config(Algorithm::VrlSgd, opts.iterations, opts.seed);

        let local = run_with(&RunConfig { algorithm: Algorithm::LocalSgd, ..base.clone() }, &p, &plain)?;
        let zeroed = run_with(&base, &p, &RunOptions { zero_delta: true, ..plain.clone() })?;
        zero.require(bit_identical(&local, &zeroed), case);

        if case.k == 1 {
            let ssgd_cfg = RunConfig { algorithm: Algorithm::Ssgd, ..base.clone() };
            let a = run_with(&base, &p, &traced(opts.threads))?;
            let b = run_with(&ssgd_cfg, &p, &traced(opts.threads))?;
            let gap = x_hat_gap(&a.states.unwrap().trajectory, &b.states.unwrap().trajectory)
                .max(a.final_state.x_hat.max_abs_diff(&b.final_state.x_hat));
            k1.record(gap, case);
        }

        let warm_cfg = RunConfig { warm_up: true, ..base };
        let a = run_with(&warm_cfg, &p, &traced(opts.threads))?;
        let b = run_with(&warm_cfg, &p, &direct)?;
        let (sa, sb) = (a.states.unwrap(), b.states.unwrap());
        let gap = snapshot_gap(&sa.trajectory, &sb.trajectory).max(snapshot_gap(&sa.sync_states, &sb.sync_states));
        warm.record(gap, case);
    }
    Ok([k1, zero, warm])
}

/// Runs all seven checks.
pub fn verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut delta_sum = IdentityCheck::new("delta_sum", DELTA_SUM_TOL);
    let mut average = IdentityCheck::new("average_update", AVERAGE_UPDATE_TOL);
    let mut forms = IdentityCheck::new("direct_forms", DIRECT_FORM_TOL);
    let mut c_zero = IdentityCheck::new("c_constant_zero", 0.0);
    let mut agree = IdentityCheck::new("oracle_agreement", ORACLE_TOL);

    for case in &opts.matrix {
        let p = case.problem(opts.seed);
        let cfg = case.config(Algorithm::VrlSgd, opts.iterations, opts.seed);
        let r = run_with(&cfg, &p, &RunOptions { threads: opts.threads, diagnostics: true, ..RunOptions::default() })?;
        let d = r.diagnostics.expect("diagnostics requested");
        delta_sum.record(d.max_delta_sum, case);
        average.record(d.max_average_update_residual, case);
        forms.record(d.max_delta_form_gap.max(d.max_v_form_gap), case);
        if case.k == 1 {
            c_zero.require(d.c_constant == Some(0.0), format!("{case} k=1"));
        }

        let warm = RunConfig { warm_up: true, ..cfg.clone() };
        for path in [WarmUpPath::Schedule, WarmUpPath::Direct] {
            let r = run_with(&warm, &p, &RunOptions { diagnostics: true, warm_up_path: path, ..RunOptions::default() })?;
            c_zero.require(r.diagnostics.and_then(|d| d.c_constant) == Some(0.0), format!("{case} warm-up {path:?}"));
        }
        let identical = p.to_identical();
        let r = run_with(&cfg, &identical, &RunOptions { diagnostics: true, ..RunOptions::default() })?;
        c_zero.require(r.diagnostics.and_then(|d| d.c_constant) == Some(0.0), format!("{case} identical"));

        if case.workers <= oracle::MAX_WORKERS && case.dim <= oracle::MAX_DIM {
            for algo in Algorithm::ALL {
                let cfg = RunConfig {
                    algorithm: algo,
                    k: if algo == Algorithm::Ssgd { 1 } else { case.k },
                    ..cfg.clone()
                };
                let gap = oracle_gap(&cfg, &p, opts.threads)?;
                if algo == Algorithm::VrlSgd {
                    agree.record(gap, format!("{case} {algo}"));
                } else {
                    agree.require(gap == 0.0, format!("{case} {algo} bit-exact"));
                }
            }
        }
    }
    let [k1, zero, warm] = check_equivalences(opts)?;
    let mut triple = IdentityCheck::new("equivalence_triple", EQUIVALENCE_TOL);
    for c in [&k1, &zero, &warm] {
        triple.cases += c.cases;
        triple.worst = triple.worst.max(c.worst);
        if !c.pass && triple.pass {
            triple.pass = false;
            triple.detail = format!("{}: {}", c.name, c.detail);
        }
    }
    Ok(VerifyReport {
        checks: vec![delta_sum, average, forms, triple, c_zero, agree, fixed_point_check(opts)?],
    })
}

/// Largest difference between engine and oracle states over the run. For
/// Local SGD, EASGD and S-SGD the two perform identical arithmetic and the
/// gap is 0.
pub fn oracle_gap(cfg: &RunConfig, p: &dyn Problem, threads: usize) -> Result<f64> {
    let engine = run_with(cfg, p, &RunOptions { threads, record_states: true, ..RunOptions::default() })?;
    let reference = oracle::oracle_run(cfg, p)?;
    let states = engine.states.expect("states requested");
    if states.trajectory.len() != reference.states.len() {
        return Ok(f64::INFINITY);
    }
    let mut gap: f64 = 0.0;
    for (e, o) in states.trajectory.iter().zip(&reference.states) {
        for (m, n) in e.models.iter().zip(&o.models) {
            gap = gap.max(m.max_abs_diff(&n.clone().into()));
        }
        gap = gap.max(e.x_hat.max_abs_diff(&o.x_hat.clone().into()));
    }
    gap = gap.max(engine.final_state.x_hat.max_abs_diff(&reference.final_x_hat.clone().into()));
    Ok(gap)
}

/// The Local SGD fixed point: closed form against a long oracle run.
fn fixed_point_check(opts: &VerifyOptions) -> Result<IdentityCheck> {
    let mut check = IdentityCheck::new("localsgd_fixed_point", 1e-10);
    let iterations = if opts.iterations >= 1000 { 100_000 } else { 20_000 };
    for (b, k) in [(1.0, 10), (2.0, 20), (4.0, 40)] {
        let cfg = RunConfig {
            algorithm: Algorithm::LocalSgd,
            k,
            iterations,
            problem: ProblemConfig::Quad { b_param: b, sigma: 0.0 },
            ..RunConfig::default()
        };
        let traj = oracle::oracle_run(&cfg, &QuadraticPairProblem::new(b, 0.0))?;
        let limit = traj.synced.last().map(|s| s.1[0]).unwrap_or(f64::NAN);
        let fp = oracle::localsgd_fixed_point(b, k, cfg.gamma)?;
        check.record((limit - fp).abs(), format!("b={b} k={k}"));
    }
    Ok(check)
}
