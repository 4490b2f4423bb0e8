//! Run configuration, mirrored one-to-one by the CLI's `config.json`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{
    make_partition, Dataset, PartitionMode, PartitionedLeastSquares, PartitionedLogistic, Problem,
    QuadraticPairProblem, SeparableQuadratic,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ssgd,
    LocalSgd,
    Easgd,
    VrlSgd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Ssgd,
        Algorithm::LocalSgd,
        Algorithm::Easgd,
        Algorithm::VrlSgd,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Ssgd => "ssgd",
            Algorithm::LocalSgd => "localsgd",
            Algorithm::Easgd => "easgd",
            Algorithm::VrlSgd => "vrlsgd",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "ssgd" => Ok(Algorithm::Ssgd),
            "localsgd" | "local" => Ok(Algorithm::LocalSgd),
            "easgd" => Ok(Algorithm::Easgd),
            "vrlsgd" | "vrl" => Ok(Algorithm::VrlSgd),
            other => Err(Error::InvalidConfig(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Synthetic (or imported) objective to optimise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProblemConfig {
    /// The two-worker scalar quadratic with offset `b_param`.
    Quad { b_param: f64, sigma: f64 },
    /// Random separable quadratic, one heterogeneous local objective per
    /// worker.
    SepQuad {
        dim: usize,
        spread: f64,
        sigma: f64,
        problem_seed: u64,
    },
    /// Least squares on Gaussian clusters (or a CSV file).
    Lsq {
        samples: usize,
        classes: usize,
        features: usize,
        sigma: f64,
        data_seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        csv: Option<PathBuf>,
    },
    /// Softmax regression on Gaussian clusters (or a CSV file).
    Logistic {
        samples: usize,
        classes: usize,
        features: usize,
        reg: f64,
        sigma: f64,
        data_seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        csv: Option<PathBuf>,
    },
}

impl ProblemConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemConfig::Quad { .. } => "quad",
            ProblemConfig::SepQuad { .. } => "sepquad",
            ProblemConfig::Lsq { .. } => "lsq",
            ProblemConfig::Logistic { .. } => "logistic",
        }
    }
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig::Quad {
            b_param: 1.0,
            sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    /// Communication period.
    pub k: u64,
    #[serde(alias = "n")]
    pub workers: usize,
    /// Total local iterations `T` per worker.
    #[serde(alias = "t")]
    pub iterations: u64,
    pub batch_size: usize,
    /// VRL-SGD only: run the first period with length 1.
    pub warm_up: bool,
    pub seed: u64,
    /// EASGD elastic coefficient; `0.9 / N` when unset.
    #[serde(default)]
    pub easgd_alpha: Option<f64>,
    pub partition: PartitionMode,
    pub problem: ProblemConfig,
    /// Initial model; the zero vector when unset.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Metric row cadence; `⌈T/1000⌉` when unset. Sync points are always
    /// sampled.
    #[serde(default)]
    pub sample_every: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::VrlSgd,
            gamma: 0.01,
            k: 10,
            workers: 2,
            iterations: 5000,
            batch_size: 1,
            warm_up: false,
            seed: 0,
            easgd_alpha: None,
            partition: PartitionMode::NonIdentical,
            problem: ProblemConfig::default(),
            x0: None,
            sample_every: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("need at least one worker".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.algorithm == Algorithm::Ssgd && self.k != 1 {
            return bad(format!("ssgd communicates every iteration; k must be 1, got {}", self.k));
        }
        if self.sample_every == Some(0) {
            return bad("sample_every must be at least 1".into());
        }
        if let Some(a) = self.easgd_alpha {
            let max = 1.0 / self.workers as f64;
            if !(0.0..=max).contains(&a) {
                return bad(format!("easgd_alpha must lie in [0, 1/N] = [0, {max}], got {a}"));
            }
        }
        if matches!(self.problem, ProblemConfig::Quad { .. }) && self.workers != 2 {
            return bad(format!("the quad problem has exactly 2 workers, got {}", self.workers));
        }
        Ok(())
    }

    pub fn easgd_alpha(&self) -> f64 {
        self.easgd_alpha.unwrap_or(0.9 / self.workers as f64)
    }

    pub fn sample_every(&self) -> u64 {
        self.sample_every
            .unwrap_or_else(|| self.iterations.div_ceil(1000).max(1))
    }

    /// Warm-up only changes VRL-SGD.
    pub fn effective_warm_up(&self) -> bool {
        self.warm_up && self.algorithm == Algorithm::VrlSgd
    }

    /// A copy with every defaulted field made explicit, so the file alone
    /// describes the run.
    pub fn resolved(&self) -> RunConfig {
        let mut cfg = self.clone();
        if cfg.algorithm == Algorithm::Easgd {
            cfg.easgd_alpha = Some(self.easgd_alpha());
        }
        cfg.sample_every = Some(self.sample_every());
        cfg
    }
}

/// Instantiates the objective described by `cfg.problem` for `cfg.workers`
/// workers and `cfg.partition`.
pub fn build_problem(cfg: &RunConfig) -> Result<Box<dyn Problem>> {
    let identical = cfg.partition == PartitionMode::Identical;
    Ok(match &cfg.problem {
        ProblemConfig::Quad { b_param, sigma } => {
            if cfg.workers != 2 {
                return Err(Error::InvalidConfig("the quad problem has exactly 2 workers".into()));
            }
            if identical {
                Box::new(QuadraticPairProblem::identical(*b_param, *sigma))
            } else {
                Box::new(QuadraticPairProblem::new(*b_param, *sigma))
            }
        }
        ProblemConfig::SepQuad {
            dim,
            spread,
            sigma,
            problem_seed,
        } => {
            if *dim == 0 {
                return Err(Error::InvalidConfig("dim must be at least 1".into()));
            }
            let p = SeparableQuadratic::random(cfg.workers, *dim, *spread, *sigma, *problem_seed);
            Box::new(if identical { p.to_identical() } else { p })
        }
        ProblemConfig::Lsq {
            samples,
            classes,
            features,
            sigma,
            data_seed,
            csv,
        } => {
            let data = load_dataset(csv, *samples, *classes, *features, *data_seed)?;
            let shards = make_partition(&data, cfg.workers, cfg.partition)?;
            Box::new(PartitionedLeastSquares::new(data, shards, *sigma)?)
        }
        ProblemConfig::Logistic {
            samples,
            classes,
            features,
            reg,
            sigma,
            data_seed,
            csv,
        } => {
            let data = load_dataset(csv, *samples, *classes, *features, *data_seed)?;
            let shards = make_partition(&data, cfg.workers, cfg.partition)?;
            Box::new(PartitionedLogistic::new(data, shards, *reg, *sigma)?)
        }
    })
}

fn load_dataset(
    csv: &Option<PathBuf>,
    samples: usize,
    classes: usize,
    features: usize,
    seed: u64,
) -> Result<Dataset> {
    match csv {
        Some(path) => Dataset::from_csv(path),
        None => {
            if samples == 0 || classes == 0 || features == 0 {
                return Err(Error::InvalidConfig(
                    "samples, classes and features must be positive".into(),
                ));
            }
            Ok(Dataset::gaussian_clusters(samples, classes, features, seed))
        }
    }
}
