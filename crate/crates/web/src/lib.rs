//! WebAssembly bindings for the browser demo: simulate the two-worker
//! quadratic, tabulate Local SGD's bias against the period, and run the
//! hyperparameter check. Every export returns JSON or plain text.

use localsgd_lab::advisor::{advise, AdviceInput};
use localsgd_lab::config::{Algorithm, ProblemConfig, RunConfig};
use localsgd_lab::objectives::{Lipschitz, QuadraticPairProblem};
use localsgd_lab::oracle::{localsgd_fixed_point, localsgd_variance_limit};
use localsgd_lab::simulator::{run_with, RunOptions};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Longest run the page may request.
pub const MAX_ITERATIONS: u64 = 200_000;

#[derive(Debug, Serialize)]
pub struct Curve {
    pub algorithm: String,
    pub t: Vec<u64>,
    pub loss: Vec<f64>,
    pub dist_to_opt: Vec<f64>,
    pub v_variance: Vec<f64>,
    pub final_x: f64,
    pub diverged: bool,
}

#[derive(Debug, Serialize)]
pub struct BiasPoint {
    pub k: u64,
    pub fixed_point: f64,
    pub variance: f64,
}

pub fn quadratic_curve(
    algorithm: &str,
    b_param: f64,
    k: u64,
    gamma: f64,
    iterations: u64,
    warm_up: bool,
) -> localsgd_lab::Result<Curve> {
    if iterations > MAX_ITERATIONS {
        return Err(localsgd_lab::Error::InvalidConfig(format!(
            "at most {MAX_ITERATIONS} iterations in the browser"
        )));
    }
    let algorithm: Algorithm = algorithm.parse()?;
    let cfg = RunConfig {
        algorithm,
        gamma,
        k: if algorithm == Algorithm::Ssgd { 1 } else { k },
        iterations,
        warm_up,
        problem: ProblemConfig::Quad { b_param, sigma: 0.0 },
        sample_every: Some(iterations.div_ceil(400).max(1)),
        ..RunConfig::default()
    };
    let p = QuadraticPairProblem::new(b_param, 0.0);
    let r = run_with(&cfg, &p, &RunOptions { threads: 1, ..RunOptions::default() })?;
    let rows = r.trace.rows();
    Ok(Curve {
        algorithm: algorithm.to_string(),
        t: rows.iter().map(|row| row.t).collect(),
        loss: rows.iter().map(|row| row.loss).collect(),
        dist_to_opt: rows.iter().map(|row| row.dist_to_opt.unwrap_or(f64::NAN)).collect(),
        v_variance: rows.iter().map(|row| row.v_variance).collect(),
        final_x: r.final_state.x_hat.as_slice()[0],
        diverged: r.diverged,
    })
}

pub fn bias_curve(b_param: f64, gamma: f64, k_max: u64) -> localsgd_lab::Result<Vec<BiasPoint>> {
    (1..=k_max.max(1))
        .map(|k| {
            Ok(BiasPoint {
                k,
                fixed_point: localsgd_fixed_point(b_param, k, gamma)?,
                variance: localsgd_variance_limit(b_param, k, gamma)?,
            })
        })
        .collect()
}

pub fn advice_text(workers: usize, iterations: u64, k: u64, gamma: f64, sigma: f64) -> String {
    advise(AdviceInput {
        workers: workers.max(1),
        iterations,
        k,
        gamma,
        lipschitz: Some(Lipschitz::Analytic(4.0)),
        sigma: Some(sigma),
    })
    .to_string()
}

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Trace of one run on the σ = 0 quadratic, as JSON.
#[wasm_bindgen(js_name = simulateQuadratic)]
pub fn simulate_quadratic(
    algorithm: &str,
    b_param: f64,
    k: u32,
    gamma: f64,
    iterations: u32,
    warm_up: bool,
) -> Result<String, JsValue> {
    let curve = quadratic_curve(algorithm, b_param, k as u64, gamma, iterations as u64, warm_up).map_err(js_err)?;
    serde_json::to_string(&curve).map_err(js_err)
}

/// Local SGD's limit point and its variance level for k = 1..=k_max.
#[wasm_bindgen(js_name = localSgdBias)]
pub fn local_sgd_bias(b_param: f64, gamma: f64, k_max: u32) -> Result<String, JsValue> {
    let pts = bias_curve(b_param, gamma, k_max as u64).map_err(js_err)?;
    serde_json::to_string(&pts).map_err(js_err)
}

/// The hyperparameter report for the quadratic (L = 4).
#[wasm_bindgen(js_name = adviseHyperparameters)]
pub fn advise_hyperparameters(workers: u32, iterations: u32, k: u32, gamma: f64, sigma: f64) -> String {
    advice_text(workers as usize, iterations as u64, k as u64, gamma, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_converge_where_expected() {
        let vrl = quadratic_curve("vrlsgd", 1.0, 10, 0.01, 5000, false).unwrap();
        assert!(vrl.final_x.abs() <= 1e-8);
        assert!(!vrl.diverged);
        assert_eq!(vrl.t.len(), vrl.loss.len());
        assert_eq!(vrl.t.last(), Some(&5000));
        let local = quadratic_curve("localsgd", 1.0, 10, 0.01, 5000, false).unwrap();
        assert!((local.final_x - localsgd_fixed_point(1.0, 10, 0.01).unwrap()).abs() < 1e-6);
        let ssgd = quadratic_curve("ssgd", 1.0, 10, 0.01, 100, false).unwrap();
        assert_eq!(ssgd.algorithm, "ssgd");
    }

    #[test]
    fn curve_json_has_the_series() {
        let c = quadratic_curve("easgd", 2.0, 20, 0.01, 200, false).unwrap();
        let v: serde_json::Value = serde_json::to_value(&c).unwrap();
        for key in ["t", "loss", "dist_to_opt", "v_variance", "final_x", "diverged"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(quadratic_curve("adam", 1.0, 10, 0.01, 10, false).is_err());
        assert!(quadratic_curve("vrlsgd", 1.0, 10, 0.01, MAX_ITERATIONS + 1, false).is_err());
        assert!(bias_curve(1.0, 0.6, 5).is_err());
    }

    #[test]
    fn bias_grows_with_k() {
        let pts = bias_curve(1.0, 0.01, 40).unwrap();
        assert_eq!(pts.len(), 40);
        assert_eq!(pts[0].fixed_point.abs(), 0.0);
        assert!(pts.windows(2).all(|w| w[1].fixed_point.abs() > w[0].fixed_point.abs()));
    }

    #[test]
    fn advice_mentions_the_period() {
        assert!(advice_text(8, 117_187, 10, 0.01, 0.0).ends_with("= 15"));
    }
}
