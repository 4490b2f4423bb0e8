use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use localsgd_lab::config::{Algorithm, ProblemConfig, RunConfig};
use localsgd_lab::objectives::PartitionMode;

use crate::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "localsgd-lab", version, about = "Simulate local-update distributed SGD")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write trace.csv, summary.json and config.json.
    Run {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// One run per value of a parameter, plus a combined sweep.csv.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// k, gamma, N, b_param, batch_size or algorithm.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Check the algorithm identities and oracle agreement.
    Verify {
        /// Shorter runs over the same matrix.
        #[arg(long)]
        quick: bool,
        #[arg(long, env = "LOCALSGD_LAB_THREADS", default_value_t = 1)]
        threads: usize,
    },
    /// Check step size and period against the convergence conditions.
    Advise {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProblemKind {
    Quad,
    Sepquad,
    Lsq,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Partition {
    Identical,
    NonIdentical,
}

/// Run configuration: an optional JSON file, overridden by any flag given.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON file with RunConfig fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_algorithm)]
    pub algo: Option<Algorithm>,
    #[arg(long, value_enum)]
    pub problem: Option<ProblemKind>,
    #[arg(long)]
    pub b_param: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub t: Option<u64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub warm_up: Option<bool>,
    /// EASGD elastic coefficient.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub partition: Option<Partition>,
    /// Initial model, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long)]
    pub sample_every: Option<u64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub problem_seed: Option<u64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub reg: Option<f64>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Dataset CSV (features then an integer label) for lsq/logistic.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Worker threads; 0 picks the available parallelism.
    #[arg(long, env = "LOCALSGD_LAB_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Track the algorithm identities during the run.
    #[arg(long)]
    pub diagnostics: bool,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: localsgd_lab::Error| e.to_string())
}

fn default_problem(kind: ProblemKind) -> ProblemConfig {
    match kind {
        ProblemKind::Quad => ProblemConfig::Quad { b_param: 1.0, sigma: 0.0 },
        ProblemKind::Sepquad => ProblemConfig::SepQuad {
            dim: 4,
            spread: 1.0,
            sigma: 0.0,
            problem_seed: 0,
        },
        ProblemKind::Lsq => ProblemConfig::Lsq {
            samples: 1000,
            classes: 10,
            features: 8,
            sigma: 0.0,
            data_seed: 0,
            csv: None,
        },
        ProblemKind::Logistic => ProblemConfig::Logistic {
            samples: 1000,
            classes: 10,
            features: 8,
            reg: 1e-3,
            sigma: 0.0,
            data_seed: 0,
            csv: None,
        },
    }
}

fn kind_of(p: &ProblemConfig) -> ProblemKind {
    match p {
        ProblemConfig::Quad { .. } => ProblemKind::Quad,
        ProblemConfig::SepQuad { .. } => ProblemKind::Sepquad,
        ProblemConfig::Lsq { .. } => ProblemKind::Lsq,
        ProblemConfig::Logistic { .. } => ProblemKind::Logistic,
    }
}

fn set<T: Copy>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

impl RunArgs {
    /// File, then flags, then validation.
    pub fn to_config(&self) -> CliResult<RunConfig> {
        let cfg = self.to_config_unchecked()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_config_unchecked(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(algo) = self.algo {
            cfg.algorithm = algo;
            // S-SGD averages every step; only an explicit --k can contradict it.
            if algo == Algorithm::Ssgd && self.k.is_none() {
                cfg.k = 1;
            }
        }
        set(&mut cfg.k, self.k);
        set(&mut cfg.workers, self.n);
        set(&mut cfg.gamma, self.gamma);
        set(&mut cfg.iterations, self.t);
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.batch_size, self.batch_size);
        set(&mut cfg.warm_up, self.warm_up);
        if self.alpha.is_some() {
            cfg.easgd_alpha = self.alpha;
        }
        if let Some(p) = self.partition {
            cfg.partition = match p {
                Partition::Identical => PartitionMode::Identical,
                Partition::NonIdentical => PartitionMode::NonIdentical,
            };
        }
        if let Some(x0) = &self.x0 {
            cfg.x0 = Some(x0.clone());
        }
        if self.sample_every.is_some() {
            cfg.sample_every = self.sample_every;
        }
        if let Some(kind) = self.problem {
            if kind != kind_of(&cfg.problem) {
                cfg.problem = default_problem(kind);
            }
        }
        self.apply_problem_flags(&mut cfg.problem)?;
        Ok(cfg)
    }

    fn apply_problem_flags(&self, problem: &mut ProblemConfig) -> CliResult<()> {
        let name = problem.name();
        let unused = |flag: &str, given: bool| -> CliResult<()> {
            if given {
                Err(CliError::Config(format!("--{flag} does not apply to the {name} problem")))
            } else {
                Ok(())
            }
        };
        let data_flags = self.samples.is_some()
            || self.classes.is_some()
            || self.features.is_some()
            || self.data_seed.is_some()
            || self.csv.is_some();
        match problem {
            ProblemConfig::Quad { b_param, sigma } => {
                set(b_param, self.b_param);
                set(sigma, self.sigma);
                unused("dim/--spread/--problem-seed", self.dim.is_some() || self.spread.is_some() || self.problem_seed.is_some())?;
                unused("samples/--classes/--features/--data-seed/--csv", data_flags)?;
                unused("reg", self.reg.is_some())?;
            }
            ProblemConfig::SepQuad { dim, spread, sigma, problem_seed } => {
                set(dim, self.dim);
                set(spread, self.spread);
                set(sigma, self.sigma);
                set(problem_seed, self.problem_seed);
                unused("b-param", self.b_param.is_some())?;
                unused("samples/--classes/--features/--data-seed/--csv", data_flags)?;
                unused("reg", self.reg.is_some())?;
            }
            ProblemConfig::Lsq { samples, classes, features, sigma, data_seed, csv } => {
                set(samples, self.samples);
                set(classes, self.classes);
                set(features, self.features);
                set(sigma, self.sigma);
                set(data_seed, self.data_seed);
                if self.csv.is_some() {
                    *csv = self.csv.clone();
                }
                unused("b-param", self.b_param.is_some())?;
                unused("dim/--spread/--problem-seed", self.dim.is_some() || self.spread.is_some() || self.problem_seed.is_some())?;
                unused("reg", self.reg.is_some())?;
            }
            ProblemConfig::Logistic { samples, classes, features, reg, sigma, data_seed, csv } => {
                set(samples, self.samples);
                set(classes, self.classes);
                set(features, self.features);
                set(reg, self.reg);
                set(sigma, self.sigma);
                set(data_seed, self.data_seed);
                if self.csv.is_some() {
                    *csv = self.csv.clone();
                }
                unused("b-param", self.b_param.is_some())?;
                unused("dim/--spread/--problem-seed", self.dim.is_some() || self.spread.is_some() || self.problem_seed.is_some())?;
            }
        }
        Ok(())
    }
}
