//! Convergence diagnostics. Every function here is pure: no RNG draws, so
//! recording metrics never perturbs a trajectory.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{self, Problem};
use crate::vector::{mean_of, ModelVector};

pub const TRACE_COLUMNS: [&str; 8] = [
    "t",
    "epoch",
    "loss",
    "grad_norm_sq",
    "drift",
    "v_variance",
    "delta_residual",
    "dist_to_opt",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub t: u64,
    pub epoch: f64,
    pub loss: f64,
    pub grad_norm_sq: f64,
    pub drift: f64,
    pub v_variance: f64,
    pub delta_residual: f64,
    pub dist_to_opt: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTrace {
    rows: Vec<MetricRow>,
}

impl MetricTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// # Panics
    /// If `row.t` does not exceed the previous row's `t`.
    pub fn push(&mut self, row: MetricRow) {
        if let Some(last) = self.rows.last() {
            assert!(row.t > last.t, "trace rows must be strictly increasing in t");
        }
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&MetricRow> {
        self.rows.last()
    }

    /// CSV with a header row; reals as 17 significant digits, `dist_to_opt`
    /// empty when the optimum is unknown.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.t.to_string(),
                fmt_real(r.epoch),
                fmt_real(r.loss),
                fmt_real(r.grad_norm_sq),
                fmt_real(r.drift),
                fmt_real(r.v_variance),
                fmt_real(r.delta_residual),
                r.dist_to_opt.map(fmt_real).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header != TRACE_COLUMNS {
            return Err(Error::InvalidConfig(format!("unexpected trace header {header:?}")));
        }
        let mut trace = MetricTrace::new();
        for rec in r.records() {
            let rec = rec?;
            let real = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|e| Error::InvalidConfig(format!("column {}: {e}", TRACE_COLUMNS[i])))
            };
            trace.rows.push(MetricRow {
                t: rec[0]
                    .parse()
                    .map_err(|e| Error::InvalidConfig(format!("column t: {e}")))?,
                epoch: real(1)?,
                loss: real(2)?,
                grad_norm_sq: real(3)?,
                drift: real(4)?,
                v_variance: real(5)?,
                delta_residual: real(6)?,
                dist_to_opt: if rec[7].is_empty() { None } else { Some(real(7)?) },
            });
        }
        Ok(trace)
    }
}

pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// `‖∇f(x̂)‖²` using full gradients.
pub fn grad_norm_sq(p: &dyn Problem, x_hat: &ModelVector) -> Result<f64> {
    Ok(objectives::average_gradient(p, x_hat)?.norm_sq())
}

/// `(1/N) Σ_i ‖x_i - x̄‖²` around the mean of the local models.
pub fn worker_drift(models: &[ModelVector]) -> Result<f64> {
    spread(models)
}

/// `(1/N) Σ_i ‖v_i - v̄‖²`.
pub fn v_variance(directions: &[ModelVector]) -> Result<f64> {
    spread(directions)
}

fn spread(vs: &[ModelVector]) -> Result<f64> {
    let mean = mean_of(vs)?;
    let mut acc = 0.0;
    for v in vs {
        acc += v.sub(&mean)?.norm_sq();
    }
    Ok(acc / vs.len() as f64)
}

/// `‖Σ_i Δ_i‖∞`, zero in exact arithmetic after every VRL-SGD sync.
pub fn delta_residual(deltas: &[ModelVector]) -> Result<f64> {
    let first = deltas.first().ok_or(Error::EmptyInput)?;
    let mut sum = vec![0.0; first.dim()];
    for d in deltas {
        d.check_dim(sum.len())?;
        for (s, v) in sum.iter_mut().zip(d.as_slice()) {
            *s += v;
        }
    }
    Ok(sum.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

/// Distance `‖x̂ - x*‖`, when the optimum is known.
pub fn dist_to_opt(p: &dyn Problem, x_hat: &ModelVector) -> Option<f64> {
    p.optimum().and_then(|o| x_hat.sub(&o.x).ok()).map(|d| d.norm())
}

/// First-period heterogeneity constant
/// `C = (1/N) Σ_{t<k} Σ_i ‖Σ_{τ<t} (∇f_i(x̂^τ) - ∇f(x̂^τ))‖²`
/// over the averaged-model trajectory `x̂^0 .. x̂^{k-1}` of the first period.
pub fn c_constant(p: &dyn Problem, first_period: &[ModelVector]) -> Result<f64> {
    if first_period.is_empty() {
        return Err(Error::HistoryLength {
            expected: 1,
            found: 0,
        });
    }
    let n = p.worker_count();
    let mut partial = vec![ModelVector::zeros(p.dim()); n];
    let mut total = 0.0;
    for (t, x) in first_period.iter().enumerate() {
        if t > 0 {
            total += partial.iter().map(ModelVector::norm_sq).sum::<f64>();
        }
        let avg = objectives::average_gradient(p, x)?;
        for (i, s) in partial.iter_mut().enumerate() {
            let gi = objectives::full_gradient(p, i, x)?;
            for ((s, g), a) in s.as_mut_slice().iter_mut().zip(gi.as_slice()).zip(avg.as_slice()) {
                *s += g - a;
            }
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{QuadraticPairProblem, SeparableQuadratic};

    fn s(v: f64) -> ModelVector {
        ModelVector::filled(1, v)
    }

    #[test]
    fn gradient_norm_values() {
        assert_eq!(grad_norm_sq(&QuadraticPairProblem::new(1.0, 0.0), &s(0.0)).unwrap(), 0.0);
        // ∇f(x) = 3x
        assert_eq!(grad_norm_sq(&QuadraticPairProblem::new(1.0, 0.0), &s(1.0)).unwrap(), 9.0);
        assert_eq!(grad_norm_sq(&QuadraticPairProblem::new(3.0, 0.0), &s(-0.5)).unwrap(), 2.25);
    }

    #[test]
    fn drift_values() {
        assert_eq!(worker_drift(&[s(1.0), s(3.0)]).unwrap(), 1.0);
        assert_eq!(worker_drift(&[s(2.0), s(2.0), s(2.0)]).unwrap(), 0.0);
        assert_eq!(worker_drift(&[s(-7.0)]).unwrap(), 0.0);
        assert_eq!(v_variance(&[s(0.5), s(0.5)]).unwrap(), 0.0);
    }

    #[test]
    fn residual_and_distance() {
        assert_eq!(delta_residual(&[s(4.0), s(-4.0)]).unwrap(), 0.0);
        assert_eq!(delta_residual(&[s(1.0), s(0.5)]).unwrap(), 1.5);
        let p = QuadraticPairProblem::new(2.0, 0.0);
        assert_eq!(dist_to_opt(&p, &s(-0.25)), Some(0.25));
    }

    #[test]
    fn c_constant_cases() {
        let p = QuadraticPairProblem::new(1.0, 0.0);
        assert_eq!(c_constant(&p, &[s(0.3)]).unwrap(), 0.0);
        assert!(c_constant(&p, &[]).is_err());
        // two steps at x = 0: gradients ±4 deviate by ±4 from the mean 0
        assert_eq!(c_constant(&p, &[s(0.0), s(0.0)]).unwrap(), 16.0);
        let id = SeparableQuadratic::random(4, 3, 2.0, 0.0, 1).to_identical();
        let traj: Vec<ModelVector> = (0..6).map(|t| ModelVector::filled(3, t as f64 * 0.37)).collect();
        assert_eq!(c_constant(&id, &traj).unwrap(), 0.0);
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let mut tr = MetricTrace::new();
        tr.push(MetricRow {
            t: 1,
            epoch: 0.1,
            loss: 1.0 / 3.0,
            grad_norm_sq: 1e-300,
            drift: 0.0,
            v_variance: std::f64::consts::PI,
            delta_residual: 2.0_f64.sqrt(),
            dist_to_opt: None,
        });
        tr.push(MetricRow {
            t: 5,
            dist_to_opt: Some(-0.0),
            ..tr.rows()[0].clone()
        });
        let text = tr.to_csv_string();
        assert!(text.starts_with("t,epoch,loss,grad_norm_sq,drift,v_variance,delta_residual,dist_to_opt\n"));
        let back = MetricTrace::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, tr);
        assert_eq!(back.to_csv_string(), text);
    }

    #[test]
    #[should_panic(expected = "strictly increasing")]
    fn rows_must_increase() {
        let row = MetricRow {
            t: 3,
            epoch: 0.0,
            loss: 0.0,
            grad_norm_sq: 0.0,
            drift: 0.0,
            v_variance: 0.0,
            delta_residual: 0.0,
            dist_to_opt: None,
        };
        let mut tr = MetricTrace::new();
        tr.push(row.clone());
        tr.push(row);
    }
}
