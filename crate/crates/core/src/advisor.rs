//! Advisory check of step size and communication period against the
//! convergence conditions. Never blocks a run.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::objectives::{Lipschitz, Problem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceInput {
    pub workers: usize,
    pub iterations: u64,
    pub k: u64,
    pub gamma: f64,
    pub lipschitz: Option<Lipschitz>,
    pub sigma: Option<f64>,
}

impl AdviceInput {
    pub fn from_run(cfg: &RunConfig, p: &dyn Problem) -> Self {
        Self {
            workers: cfg.workers,
            iterations: cfg.iterations,
            k: cfg.k,
            gamma: cfg.gamma,
            lipschitz: p.lipschitz(),
            sigma: p.noise_std(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamReport {
    pub input: AdviceInput,
    /// `γ ≤ 1/(2L)` and `72 k² γ² L² ≤ 1`; empty when `L` is unknown.
    pub conditions: Vec<Condition>,
    /// `√N / (σ √T)`; needs `σ > 0` and `T > 0`.
    pub suggested_gamma: Option<f64>,
    /// `⌊√T / N^{3/2}⌋`, at least 1.
    pub suggested_k: u64,
}

impl HyperparamReport {
    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }
}

pub fn suggested_k(workers: usize, iterations: u64) -> u64 {
    let k = (iterations as f64).sqrt() / (workers as f64).powf(1.5);
    (k.floor() as u64).max(1)
}

pub fn suggested_gamma(workers: usize, iterations: u64, sigma: f64) -> Option<f64> {
    (sigma > 0.0 && iterations > 0).then(|| (workers as f64).sqrt() / (sigma * (iterations as f64).sqrt()))
}

pub fn advise(input: AdviceInput) -> HyperparamReport {
    let mut conditions = Vec::new();
    if let Some(l) = input.lipschitz {
        let l = l.value();
        let g = input.gamma;
        let k = input.k as f64;
        conditions.push(Condition {
            name: "gamma <= 1/(2L)".into(),
            lhs: g,
            rhs: 1.0 / (2.0 * l),
            pass: g <= 1.0 / (2.0 * l),
        });
        let lhs = 72.0 * k * k * g * g * l * l;
        conditions.push(Condition {
            name: "72 k^2 gamma^2 L^2 <= 1".into(),
            lhs,
            rhs: 1.0,
            pass: lhs <= 1.0,
        });
    }
    HyperparamReport {
        suggested_gamma: input
            .sigma
            .and_then(|s| suggested_gamma(input.workers, input.iterations, s)),
        suggested_k: suggested_k(input.workers, input.iterations),
        conditions,
        input,
    }
}

pub fn check_hyperparams(cfg: &RunConfig, p: &dyn Problem) -> HyperparamReport {
    advise(AdviceInput::from_run(cfg, p))
}

impl fmt::Display for HyperparamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = &self.input;
        writeln!(f, "hyperparameter check (advisory, runs are never blocked)")?;
        writeln!(f, "  N = {}, T = {}, k = {}, gamma = {}", i.workers, i.iterations, i.k, i.gamma)?;
        match i.lipschitz {
            Some(l) => writeln!(f, "  L = {} ({})", l.value(), l.label())?,
            None => writeln!(f, "  L unknown, conditions not checked")?,
        }
        for c in &self.conditions {
            let mark = if c.pass { "pass" } else { "FAIL" };
            writeln!(f, "  [{mark}] {}: {} vs {}", c.name, c.lhs, c.rhs)?;
        }
        match (self.suggested_gamma, i.sigma) {
            (Some(g), Some(s)) => writeln!(f, "  suggested gamma = sqrt(N)/(sigma sqrt(T)) = {g} (sigma = {s})")?,
            (_, Some(s)) => writeln!(f, "  suggested gamma = sqrt(N)/(sigma sqrt(T)): undefined for sigma = {s}")?,
            (_, None) => writeln!(f, "  suggested gamma = sqrt(N)/(sigma sqrt(T)): sigma unknown")?,
        }
        write!(f, "  suggested k = floor(sqrt(T)/N^1.5) = {}", self.suggested_k)
    }
}
