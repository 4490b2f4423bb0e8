//! Finite-sum objectives `f(x) = (1/N) Σ_i f_i(x)`, one local objective per
//! worker, with full and stochastic gradients.

mod dataset;
mod quadratic;

pub use dataset::{make_partition, Dataset, PartitionMode, PartitionedLeastSquares, PartitionedLogistic};
pub use quadratic::{QuadraticPairProblem, SeparableQuadratic};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{self, ModelVector};

/// Smoothness constant of the local objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Lipschitz {
    Analytic(f64),
    /// Power-iteration estimate of the largest Hessian eigenvalue over a few
    /// sampled points. Reported, never used to gate a run.
    Estimated(f64),
}

impl Lipschitz {
    pub fn value(&self) -> f64 {
        match *self {
            Lipschitz::Analytic(v) | Lipschitz::Estimated(v) => v,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Lipschitz::Analytic(_) => "analytic",
            Lipschitz::Estimated(_) => "estimated",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub x: ModelVector,
    pub value: f64,
}

/// A distributed finite-sum problem.
///
/// Implementations may assume `worker < worker_count()` and slices of length
/// `dim()`; the free functions in this module validate both.
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn worker_count(&self) -> usize;
    fn local_loss(&self, worker: usize, x: &[f64]) -> f64;
    /// Exact `∇f_i(x)`, written into `out`.
    fn local_gradient(&self, worker: usize, x: &[f64], out: &mut [f64]);
    /// One single-sample draw of `∇f_i(x, ξ)`; must be unbiased.
    fn sample_gradient(&self, worker: usize, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]);

    fn lipschitz(&self) -> Option<Lipschitz> {
        None
    }
    /// Standard deviation of the per-sample gradient noise, when known.
    fn noise_std(&self) -> Option<f64> {
        None
    }
    fn optimum(&self) -> Option<Optimum> {
        None
    }
    /// Number of training samples `n`, for problems backed by a dataset.
    fn sample_count(&self) -> Option<usize> {
        None
    }
}

fn check_args(p: &dyn Problem, worker: usize, x: &ModelVector) -> Result<()> {
    if worker >= p.worker_count() {
        return Err(Error::WorkerOutOfRange {
            worker,
            count: p.worker_count(),
        });
    }
    x.check_dim(p.dim())
}

pub fn full_gradient(p: &dyn Problem, worker: usize, x: &ModelVector) -> Result<ModelVector> {
    check_args(p, worker, x)?;
    let mut g = ModelVector::zeros(p.dim());
    p.local_gradient(worker, x.as_slice(), g.as_mut_slice());
    Ok(g)
}

/// Mini-batch stochastic gradient: the mean of `batch` independent
/// single-sample draws taken from `rng` in order.
pub fn stochastic_gradient(
    p: &dyn Problem,
    worker: usize,
    x: &ModelVector,
    rng: &mut dyn RngCore,
    batch: usize,
) -> Result<ModelVector> {
    check_args(p, worker, x)?;
    if batch == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let mut out = ModelVector::zeros(p.dim());
    stochastic_gradient_into(p, worker, x.as_slice(), rng, batch, out.as_mut_slice());
    Ok(out)
}

/// Unchecked [`stochastic_gradient`] into a caller-owned buffer.
pub(crate) fn stochastic_gradient_into(
    p: &dyn Problem,
    worker: usize,
    x: &[f64],
    rng: &mut dyn RngCore,
    batch: usize,
    out: &mut [f64],
) {
    p.sample_gradient(worker, x, rng, out);
    if batch > 1 {
        let mut draw = vec![0.0; out.len()];
        for j in 2..=batch {
            p.sample_gradient(worker, x, rng, &mut draw);
            vector::mean_update(out, &draw, j);
        }
    }
}

/// `f(x) = (1/N) Σ_i f_i(x)`.
pub fn loss(p: &dyn Problem, x: &ModelVector) -> Result<f64> {
    x.check_dim(p.dim())?;
    let mut mean = 0.0;
    for i in 0..p.worker_count() {
        let fi = p.local_loss(i, x.as_slice());
        mean += (fi - mean) / (i + 1) as f64;
    }
    Ok(mean)
}

/// `∇f(x) = (1/N) Σ_i ∇f_i(x)`, reduced in worker order.
pub fn average_gradient(p: &dyn Problem, x: &ModelVector) -> Result<ModelVector> {
    x.check_dim(p.dim())?;
    let mut mean = ModelVector::zeros(p.dim());
    let mut g = vec![0.0; p.dim()];
    for i in 0..p.worker_count() {
        p.local_gradient(i, x.as_slice(), &mut g);
        if i == 0 {
            mean.as_mut_slice().copy_from_slice(&g);
        } else {
            vector::mean_update(mean.as_mut_slice(), &g, i + 1);
        }
    }
    Ok(mean)
}

/// Adds `sigma * z`, `z ~ N(0, I)`, to `out`. No draws are taken when
/// `sigma == 0`.
pub(crate) fn add_gaussian_noise(sigma: f64, rng: &mut dyn RngCore, out: &mut [f64]) {
    if sigma == 0.0 {
        return;
    }
    for o in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *o += sigma * z;
    }
}

/// Largest Hessian eigenvalue over all local objectives, estimated by power
/// iteration on central-difference Hessian-vector products at `points` random
/// locations drawn from `N(0, scale² I)`.
pub fn estimate_lipschitz(p: &dyn Problem, points: usize, scale: f64, seed: u64) -> f64 {
    const ITERS: usize = 50;
    const H: f64 = 1e-4;
    let d = p.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0_f64;
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for _ in 0..points.max(1) {
        let x: Vec<f64> = (0..d)
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        for w in 0..p.worker_count() {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut lambda = 0.0;
            for _ in 0..ITERS {
                let n = vector::norm_sq(&v).sqrt();
                if n == 0.0 {
                    break;
                }
                v.iter_mut().for_each(|e| *e /= n);
                let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + H * b).collect();
                let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - H * b).collect();
                p.local_gradient(w, &xp, &mut gp);
                p.local_gradient(w, &xm, &mut gm);
                let hv: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * H)).collect();
                lambda = vector::norm_sq(&hv).sqrt();
                v = hv;
            }
            best = best.max(lambda);
        }
    }
    best
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::WorkerRng;

    #[test]
    fn worker_out_of_range_is_an_error() {
        let p = QuadraticPairProblem::new(1.0, 0.0);
        let x = ModelVector::zeros(1);
        assert!(matches!(
            full_gradient(&p, 2, &x),
            Err(Error::WorkerOutOfRange { worker: 2, count: 2 })
        ));
        let mut rng = WorkerRng::new(0, 0).at(0);
        assert!(stochastic_gradient(&p, 5, &x, &mut rng, 1).is_err());
        assert!(full_gradient(&p, 0, &ModelVector::zeros(2)).is_err());
    }

    #[test]
    fn zero_noise_stochastic_gradient_is_exact() {
        let p = SeparableQuadratic::random(4, 8, 2.0, 0.0, 3);
        let x = ModelVector::from((0..8).map(|j| j as f64 * 0.3 - 1.0).collect::<Vec<_>>());
        for w in 0..4 {
            let mut rng = WorkerRng::new(1, w).at(17);
            let s = stochastic_gradient(&p, w, &x, &mut rng, 4).unwrap();
            assert!(s.bits_eq(&full_gradient(&p, w, &x).unwrap()));
        }
    }

    fn sample_stats(p: &dyn Problem, batch: usize, draws: u64) -> (f64, f64) {
        // mean and variance of the first coordinate, worker 0, x = 0.7
        let x = ModelVector::filled(p.dim(), 0.7);
        let r = WorkerRng::new(99, 0);
        let (mut mean, mut m2) = (0.0, 0.0);
        for t in 0..draws {
            let mut rng = r.at(t);
            let g = stochastic_gradient(p, 0, &x, &mut rng, batch).unwrap()[0];
            let delta = g - mean;
            mean += delta / (t + 1) as f64;
            m2 += delta * (g - mean);
        }
        (mean, m2 / (draws - 1) as f64)
    }

    #[test]
    fn monte_carlo_mean_and_batch_variance() {
        let sigma = 0.5;
        let p = QuadraticPairProblem::new(1.0, sigma);
        let exact = full_gradient(&p, 0, &ModelVector::filled(1, 0.7)).unwrap()[0];
        let m = 100_000u64;
        for b in [1usize, 4] {
            let (mean, _) = sample_stats(&p, b, m);
            let bound = 5.0 * sigma / ((m as f64) * b as f64).sqrt();
            assert!((mean - exact).abs() <= bound, "b={b}: {mean} vs {exact}");
        }
        let (_, v1) = sample_stats(&p, 1, m);
        let (_, v4) = sample_stats(&p, 4, m);
        let ratio = v4 / v1;
        assert!((0.2..=0.3).contains(&ratio), "variance ratio {ratio}");
        // declared noise bounds the per-sample second moment
        assert!(v1 <= sigma * sigma * 1.05);
    }

    #[test]
    fn sample_mean_error_shrinks_like_inverse_sqrt() {
        let p = SeparableQuadratic::random(2, 3, 1.0, 1.0, 5);
        let x = ModelVector::filled(3, 0.2);
        let exact = full_gradient(&p, 1, &x).unwrap();
        let err = |m: u64| {
            let r = WorkerRng::new(4, 1);
            let mut mean = ModelVector::zeros(3);
            for t in 0..m {
                let g = stochastic_gradient(&p, 1, &x, &mut r.at(t), 1).unwrap();
                vector::mean_update(mean.as_mut_slice(), g.as_slice(), t as usize + 1);
            }
            mean.sub(&exact).unwrap().norm()
        };
        // error at 40k draws is well inside 5σ√d/√M
        let e = err(40_000);
        assert!(e <= 5.0 * 3f64.sqrt() / 200.0, "{e}");
    }

    #[test]
    fn lipschitz_estimate_recovers_quadratic_curvature() {
        let p = QuadraticPairProblem::new(1.0, 0.0);
        let est = estimate_lipschitz(&p, 3, 1.0, 0);
        assert!((est - 4.0).abs() < 1e-5, "{est}");
    }
}
