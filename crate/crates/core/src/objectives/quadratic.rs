use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::{add_gaussian_noise, Lipschitz, Optimum, Problem};
use crate::vector::ModelVector;

/// The two-worker scalar problem `f_1(x) = (x + 2b)²`, `f_2(x) = 2(x - b)²`,
/// so `f(x) = ½(f_1 + f_2) = 1.5x² + 3b²` with minimum `x* = 0`. The offset `b_param` sets how
/// far apart the workers' local minima are.
///
/// In the identical case both workers hold `f` itself.
#[derive(Debug, Clone)]
pub struct QuadraticPairProblem {
    b_param: f64,
    sigma: f64,
    identical: bool,
}

impl QuadraticPairProblem {
    pub fn new(b_param: f64, sigma: f64) -> Self {
        Self {
            b_param,
            sigma,
            identical: false,
        }
    }

    pub fn identical(b_param: f64, sigma: f64) -> Self {
        Self {
            b_param,
            sigma,
            identical: true,
        }
    }

    pub fn b_param(&self) -> f64 {
        self.b_param
    }
}

impl Problem for QuadraticPairProblem {
    fn name(&self) -> &str {
        "quad"
    }

    fn dim(&self) -> usize {
        1
    }

    fn worker_count(&self) -> usize {
        2
    }

    fn local_loss(&self, worker: usize, x: &[f64]) -> f64 {
        let (x, b) = (x[0], self.b_param);
        match (self.identical, worker) {
            (true, _) => 1.5 * x * x + 3.0 * b * b,
            (false, 0) => (x + 2.0 * b).powi(2),
            _ => 2.0 * (x - b).powi(2),
        }
    }

    fn local_gradient(&self, worker: usize, x: &[f64], out: &mut [f64]) {
        let (x, b) = (x[0], self.b_param);
        out[0] = match (self.identical, worker) {
            (true, _) => 3.0 * x,
            (false, 0) => 2.0 * (x + 2.0 * b),
            _ => 4.0 * (x - b),
        };
    }

    fn sample_gradient(&self, worker: usize, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        self.local_gradient(worker, x, out);
        add_gaussian_noise(self.sigma, rng, out);
    }

    fn lipschitz(&self) -> Option<Lipschitz> {
        Some(Lipschitz::Analytic(if self.identical { 3.0 } else { 4.0 }))
    }

    fn noise_std(&self) -> Option<f64> {
        Some(self.sigma)
    }

    fn optimum(&self) -> Option<Optimum> {
        Some(Optimum {
            x: ModelVector::zeros(1),
            value: 3.0 * self.b_param * self.b_param,
        })
    }
}

/// `f_i(x) = ½ Σ_j a_ij (x_j - c_ij)²` with per-worker diagonal curvature
/// `a_i` and centre `c_i`; stochastic gradients add isotropic Gaussian noise.
#[derive(Debug, Clone)]
pub struct SeparableQuadratic {
    curvature: Vec<Vec<f64>>,
    center: Vec<Vec<f64>>,
    offset: Vec<f64>,
    sigma: f64,
}

impl SeparableQuadratic {
    /// # Panics
    /// If the per-worker rows are ragged, empty, or a curvature is not
    /// positive.
    pub fn new(curvature: Vec<Vec<f64>>, center: Vec<Vec<f64>>, sigma: f64) -> Self {
        assert!(!curvature.is_empty() && curvature.len() == center.len());
        let d = curvature[0].len();
        assert!(curvature.iter().chain(&center).all(|r| r.len() == d));
        assert!(curvature.iter().flatten().all(|&a| a > 0.0));
        let offset = vec![0.0; curvature.len()];
        Self {
            curvature,
            center,
            offset,
            sigma,
        }
    }

    /// Heterogeneous workers: curvatures uniform in `[0.5, 2]`, centres
    /// `N(0, spread²)`.
    pub fn random(workers: usize, dim: usize, spread: f64, sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unif = Uniform::new(0.5, 2.0).expect("valid range");
        let curvature = (0..workers)
            .map(|_| (0..dim).map(|_| unif.sample(&mut rng)).collect())
            .collect();
        let center = (0..workers)
            .map(|_| {
                (0..dim)
                    .map(|_| spread * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect()
            })
            .collect();
        Self::new(curvature, center, sigma)
    }

    /// Every worker holds the average objective of `self`.
    pub fn to_identical(&self) -> Self {
        self.shared_by(self.curvature.len())
    }

    /// The average objective of `self`, held identically by `workers`
    /// workers.
    pub fn shared_by(&self, workers: usize) -> Self {
        assert!(workers > 0);
        let n = self.curvature.len();
        let opt = self.optimum_point();
        let fstar = self.average_at(&opt);
        let d = self.dim();
        let a: Vec<f64> = (0..d)
            .map(|j| self.curvature.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        Self {
            curvature: vec![a; workers],
            center: vec![opt; workers],
            offset: vec![fstar; workers],
            sigma: self.sigma,
        }
    }

    fn optimum_point(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| {
                let (num, den) = self
                    .curvature
                    .iter()
                    .zip(&self.center)
                    .fold((0.0, 0.0), |(n, d), (a, c)| (n + a[j] * c[j], d + a[j]));
                num / den
            })
            .collect()
    }

    fn average_at(&self, x: &[f64]) -> f64 {
        let n = self.worker_count();
        (0..n).map(|i| self.local_loss(i, x)).sum::<f64>() / n as f64
    }
}

impl Problem for SeparableQuadratic {
    fn name(&self) -> &str {
        "sepquad"
    }

    fn dim(&self) -> usize {
        self.curvature[0].len()
    }

    fn worker_count(&self) -> usize {
        self.curvature.len()
    }

    fn local_loss(&self, worker: usize, x: &[f64]) -> f64 {
        let (a, c) = (&self.curvature[worker], &self.center[worker]);
        0.5 * x
            .iter()
            .zip(a.iter().zip(c))
            .map(|(x, (a, c))| a * (x - c) * (x - c))
            .sum::<f64>()
            + self.offset[worker]
    }

    fn local_gradient(&self, worker: usize, x: &[f64], out: &mut [f64]) {
        let (a, c) = (&self.curvature[worker], &self.center[worker]);
        for (j, o) in out.iter_mut().enumerate() {
            *o = a[j] * (x[j] - c[j]);
        }
    }

    fn sample_gradient(&self, worker: usize, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        self.local_gradient(worker, x, out);
        add_gaussian_noise(self.sigma, rng, out);
    }

    fn lipschitz(&self) -> Option<Lipschitz> {
        let l = self.curvature.iter().flatten().fold(0.0_f64, |m, &a| m.max(a));
        Some(Lipschitz::Analytic(l))
    }

    fn noise_std(&self) -> Option<f64> {
        Some(self.sigma)
    }

    fn optimum(&self) -> Option<Optimum> {
        let x = self.optimum_point();
        let value = self.average_at(&x);
        Some(Optimum {
            x: ModelVector::from(x),
            value,
        })
    }
}
