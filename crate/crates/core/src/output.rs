//! Run directories: `trace.csv`, `summary.json`, `config.json`, and the
//! combined `sweep.csv`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, RunConfig};
use crate::error::Result;
use crate::metrics::{self, fmt_real};
use crate::objectives::{self, Problem};
use crate::simulator::{RunResult, SweepAxis, SweepPoint};

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Final metrics of one run. Non-finite values are written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: Algorithm,
    pub final_loss: Option<f64>,
    pub final_grad_norm_sq: Option<f64>,
    pub final_dist_to_opt: Option<f64>,
    pub diverged: bool,
    pub syncs: u64,
    pub grad_evals: u64,
    pub wall_ms: f64,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl Summary {
    /// Metrics at the reported model after the terminal averaging.
    pub fn of(result: &RunResult, p: &dyn Problem) -> Result<Self> {
        let x = &result.final_state.x_hat;
        let usable = x.is_finite();
        Ok(Self {
            algorithm: result.config.algorithm,
            final_loss: if usable { finite(objectives::loss(p, x)?) } else { None },
            final_grad_norm_sq: if usable { finite(metrics::grad_norm_sq(p, x)?) } else { None },
            final_dist_to_opt: if usable { metrics::dist_to_opt(p, x).and_then(finite) } else { None },
            diverged: result.diverged,
            syncs: result.syncs,
            grad_evals: result.grad_evals,
            wall_ms: result.wall.as_secs_f64() * 1e3,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    write_json(path, cfg)
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes the three run files into `dir`, creating it if needed.
pub fn write_run_dir(dir: &Path, result: &RunResult, p: &dyn Problem) -> Result<Summary> {
    fs::create_dir_all(dir)?;
    let summary = Summary::of(result, p)?;
    let mut trace = BufWriter::new(File::create(dir.join(TRACE_FILE))?);
    result.trace.write_csv(&mut trace)?;
    trace.flush()?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    write_config(&dir.join(CONFIG_FILE), &result.config)?;
    Ok(summary)
}

pub const SWEEP_COLUMNS: [&str; 11] = [
    "axis",
    "value",
    "dir",
    "algorithm",
    "final_loss",
    "final_grad_norm_sq",
    "final_dist_to_opt",
    "diverged",
    "syncs",
    "grad_evals",
    "wall_ms",
];

/// Directory name of one sweep point.
pub fn sweep_dir_name(axis: SweepAxis, value: &str) -> String {
    format!("{}={value}", axis.as_str())
}

/// One run directory per point under `out`, plus `sweep.csv`.
pub fn write_sweep(out: &Path, axis: SweepAxis, points: &[SweepPoint]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut csv = csv::Writer::from_path(out.join(SWEEP_FILE))?;
    csv.write_record(SWEEP_COLUMNS)?;
    let mut dirs = Vec::with_capacity(points.len());
    for pt in points {
        let name = sweep_dir_name(axis, &pt.value);
        let dir = out.join(&name);
        let p = crate::config::build_problem(&pt.result.config)?;
        let s = write_run_dir(&dir, &pt.result, p.as_ref())?;
        let opt = |v: Option<f64>| v.map(fmt_real).unwrap_or_default();
        csv.write_record([
            axis.as_str().to_owned(),
            pt.value.clone(),
            name,
            s.algorithm.to_string(),
            opt(s.final_loss),
            opt(s.final_grad_norm_sq),
            opt(s.final_dist_to_opt),
            s.diverged.to_string(),
            s.syncs.to_string(),
            s.grad_evals.to_string(),
            format!("{:.3}", s.wall_ms),
        ])?;
        dirs.push(dir);
    }
    csv.flush()?;
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricTrace;
    use crate::objectives::QuadraticPairProblem;
    use crate::simulator::{run, sweep, RunOptions};

    #[test]
    fn run_dir_round_trips() {
        let cfg = RunConfig {
            iterations: 200,
            ..RunConfig::default()
        }
        .resolved();
        let p = QuadraticPairProblem::new(1.0, 0.0);
        let r = run(&cfg, &p).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let s = write_run_dir(tmp.path(), &r, &p).unwrap();
        assert_eq!(s.syncs, 20);
        assert_eq!(s.grad_evals, 200);

        let echoed = read_config(&tmp.path().join(CONFIG_FILE)).unwrap();
        assert_eq!(echoed, cfg);
        let again = run(&echoed, &p).unwrap();
        let trace = fs::read_to_string(tmp.path().join(TRACE_FILE)).unwrap();
        assert_eq!(trace, again.trace.to_csv_string());
        let parsed = MetricTrace::read_csv(trace.as_bytes()).unwrap();
        assert_eq!(&parsed, &r.trace);

        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(tmp.path().join(SUMMARY_FILE)).unwrap()).unwrap();
        for key in [
            "algorithm",
            "final_loss",
            "final_grad_norm_sq",
            "final_dist_to_opt",
            "diverged",
            "syncs",
            "grad_evals",
            "wall_ms",
        ] {
            assert!(summary.get(key).is_some(), "{key}");
        }
        assert_eq!(summary["algorithm"], "vrlsgd");
    }

    #[test]
    fn diverged_summary_uses_nulls() {
        let cfg = RunConfig {
            algorithm: Algorithm::LocalSgd,
            gamma: 1.0,
            x0: Some(vec![0.25]),
            iterations: 10_000,
            ..RunConfig::default()
        };
        let p = QuadraticPairProblem::new(1.0, 0.0);
        let r = run(&cfg, &p).unwrap();
        let s = Summary::of(&r, &p).unwrap();
        assert!(s.diverged);
        let text = serde_json::to_string(&s).unwrap();
        assert!(!text.contains("NaN") && !text.contains("inf"), "{text}");
    }

    #[test]
    fn sweep_writes_one_dir_per_value() {
        let base = RunConfig {
            algorithm: Algorithm::LocalSgd,
            iterations: 100,
            ..RunConfig::default()
        }
        .resolved();
        let values: Vec<String> = ["10", "20", "40"].map(String::from).to_vec();
        let pts = sweep(&base, SweepAxis::K, &values, &RunOptions::default()).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let dirs = write_sweep(tmp.path(), SweepAxis::K, &pts).unwrap();
        assert_eq!(dirs.len(), 3);
        for d in &dirs {
            assert!(d.join(TRACE_FILE).exists());
        }
        let mut rd = csv::Reader::from_path(tmp.path().join(SWEEP_FILE)).unwrap();
        assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), SWEEP_COLUMNS);
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 3);
        assert_eq!(&rows[1][2], "k=20");
    }
}
