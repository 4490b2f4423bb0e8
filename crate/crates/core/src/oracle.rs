//! Brute-force reference runs for cross-checking the engine on small
//! instances.
//!
//! Everything is recomputed step by step with fresh allocations. VRL-SGD
//! never stores a correction: each step direction is rebuilt from the
//! previous period's raw gradients. Stochastic gradients come from the same
//! per-worker streams as the engine and averages use the same fixed-order
//! mean, so agreement is exact except where VRL-SGD's two forms round
//! differently.

use crate::config::{Algorithm, RunConfig};
use crate::error::{Error, Result};
use crate::objectives::{self, Problem};
use crate::rng::WorkerRng;
use crate::vector::{vec_mean, ModelVector};

pub const MAX_WORKERS: usize = 4;
pub const MAX_DIM: usize = 8;
pub const MAX_ITERATIONS: u64 = 100_000;

/// Worker models at time `t` before any synchronization at `t`, and the
/// model the algorithm would report there.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleState {
    pub t: u64,
    pub x_hat: Vec<f64>,
    pub models: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleTrajectory {
    /// One entry per `t` in `0..=T`.
    pub states: Vec<OracleState>,
    /// `(t, x̂)` right after each synchronization.
    pub synced: Vec<(u64, Vec<f64>)>,
    /// Reported model after the run.
    pub final_x_hat: Vec<f64>,
}

fn mean(vs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let owned: Vec<ModelVector> = vs.iter().cloned().map(ModelVector::from).collect();
    Ok(vec_mean(&owned)?.into_vec())
}

fn gradient(p: &dyn Problem, cfg: &RunConfig, worker: usize, x: &[f64], t: u64) -> Result<Vec<f64>> {
    let mut rng = WorkerRng::new(cfg.seed, worker).at(t);
    let g = objectives::stochastic_gradient(p, worker, &ModelVector::from(x.to_vec()), &mut rng, cfg.batch_size)?;
    if !g.is_finite() {
        return Err(Error::NonFinite { what: "gradient", t });
    }
    Ok(g.into_vec())
}

fn is_sync_time(cfg: &RunConfig, t: u64) -> bool {
    if cfg.effective_warm_up() {
        t == 0 || (t - 1) % cfg.k == 0
    } else {
        t % cfg.k == 0
    }
}

pub fn oracle_run(cfg: &RunConfig, p: &dyn Problem) -> Result<OracleTrajectory> {
    cfg.validate()?;
    let n = cfg.workers;
    let d = p.dim();
    if n > MAX_WORKERS || d > MAX_DIM || cfg.iterations > MAX_ITERATIONS {
        return Err(Error::InstanceTooLarge(format!(
            "oracle handles N <= {MAX_WORKERS}, d <= {MAX_DIM}, T <= {MAX_ITERATIONS}; got N={n}, d={d}, T={}",
            cfg.iterations
        )));
    }
    if p.worker_count() != n {
        return Err(Error::InvalidConfig(format!(
            "config has {n} workers but the problem has {}",
            p.worker_count()
        )));
    }
    let x0 = cfg.x0.clone().unwrap_or_else(|| vec![0.0; d]);
    if x0.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: x0.len() });
    }
    let total = cfg.iterations;
    let gamma = cfg.gamma;

    let mut models = vec![x0.clone(); n];
    let mut center = x0;
    let mut states = Vec::new();
    let mut synced = Vec::new();
    // Gradients of the last completed period and of the current one, [τ][i].
    let mut previous: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut current: Vec<Vec<Vec<f64>>> = Vec::new();

    for t in 0..=total {
        let reported = match cfg.algorithm {
            Algorithm::Easgd | Algorithm::Ssgd => center.clone(),
            _ => mean(&models)?,
        };
        states.push(OracleState {
            t,
            x_hat: reported,
            models: models.clone(),
        });
        if t == total {
            break;
        }

        if is_sync_time(cfg, t) {
            match cfg.algorithm {
                Algorithm::LocalSgd | Algorithm::VrlSgd => {
                    let avg = mean(&models)?;
                    models = vec![avg.clone(); n];
                    center = avg;
                    if t > 0 {
                        previous = std::mem::take(&mut current);
                    }
                }
                Algorithm::Easgd => {
                    let alpha = cfg.easgd_alpha();
                    let mut pull = vec![0.0; d];
                    for x in models.iter_mut() {
                        for j in 0..d {
                            let e = x[j] - center[j];
                            pull[j] += e;
                            x[j] -= alpha * e;
                        }
                    }
                    for j in 0..d {
                        center[j] += alpha * pull[j];
                    }
                }
                Algorithm::Ssgd => {}
            }
            synced.push((t, center.clone()));
        }

        match cfg.algorithm {
            Algorithm::Ssgd => {
                let grads = (0..n)
                    .map(|i| gradient(p, cfg, i, &center, t))
                    .collect::<Result<Vec<_>>>()?;
                let g = mean(&grads)?;
                center = center.iter().zip(&g).map(|(x, g)| x - gamma * g).collect();
                models = vec![center.clone(); n];
            }
            Algorithm::LocalSgd | Algorithm::Easgd => {
                let mut next = Vec::with_capacity(n);
                for (i, x) in models.iter().enumerate() {
                    let g = gradient(p, cfg, i, x, t)?;
                    next.push(x.iter().zip(&g).map(|(x, g)| x - gamma * g).collect());
                }
                models = next;
            }
            Algorithm::VrlSgd => {
                let grads = models
                    .iter()
                    .enumerate()
                    .map(|(i, x)| gradient(p, cfg, i, x, t))
                    .collect::<Result<Vec<_>>>()?;
                let k_prev = previous.len() as f64;
                let mut next = Vec::with_capacity(n);
                for (i, x) in models.iter().enumerate() {
                    let mut v = grads[i].clone();
                    if !previous.is_empty() {
                        for j in 0..d {
                            let own: f64 = previous.iter().map(|step| step[i][j]).sum();
                            let all: f64 = previous
                                .iter()
                                .map(|step| step.iter().map(|g| g[j]).sum::<f64>())
                                .sum();
                            v[j] += all / (n as f64 * k_prev) - own / k_prev;
                        }
                    }
                    next.push(x.iter().zip(&v).map(|(x, v)| x - gamma * v).collect());
                }
                current.push(grads);
                models = next;
            }
        }
    }

    let final_x_hat = match cfg.algorithm {
        Algorithm::LocalSgd | Algorithm::VrlSgd if total > 0 => mean(&models)?,
        Algorithm::LocalSgd | Algorithm::VrlSgd => center,
        Algorithm::Easgd | Algorithm::Ssgd => center,
    };
    Ok(OracleTrajectory {
        states,
        synced,
        final_x_hat,
    })
}

fn period_maps(k: u64, gamma: f64) -> Result<(f64, f64)> {
    let (r1, r2) = (1.0 - 2.0 * gamma, 1.0 - 4.0 * gamma);
    if r1.abs() >= 1.0 || r2.abs() >= 1.0 {
        return Err(Error::NotContractive { gamma });
    }
    let k = i32::try_from(k).map_err(|_| Error::InvalidConfig(format!("k={k} too large")))?;
    Ok((r1.powi(k), r2.powi(k)))
}

/// Limit of Local SGD's post-sync model on the two-worker quadratic with
/// `σ = 0`. Worker 1 contracts towards `-2b` with factor `1-2γ` per step,
/// worker 2 towards `b` with `1-4γ`; averaging their `k`-step affine maps
/// gives a scalar affine map whose fixed point is returned. It is negative
/// for `b > 0` and `k ≥ 2`.
pub fn localsgd_fixed_point(b_param: f64, k: u64, gamma: f64) -> Result<f64> {
    let (a1, a2) = period_maps(k, gamma)?;
    let offset = ((1.0 - a1) * (-2.0 * b_param) + (1.0 - a2) * b_param) / 2.0;
    Ok(offset / (1.0 - (a1 + a2) / 2.0))
}

/// Variance among Local SGD's step directions at the last local step of a
/// period, once the post-sync model sits at the fixed point. This is the
/// level `v_variance` settles to on period-end rows.
pub fn localsgd_variance_limit(b_param: f64, k: u64, gamma: f64) -> Result<f64> {
    let x = localsgd_fixed_point(b_param, k, gamma)?;
    let (a1, a2) = period_maps(k - 1, gamma)?;
    let y1 = a1 * x + (1.0 - a1) * (-2.0 * b_param);
    let y2 = a2 * x + (1.0 - a2) * b_param;
    let (g1, g2) = (2.0 * (y1 + 2.0 * b_param), 4.0 * (y2 - b_param));
    let half = (g1 - g2) / 2.0;
    Ok(half * half)
}
