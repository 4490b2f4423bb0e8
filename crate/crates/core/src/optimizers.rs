//! Per-worker steps and synchronization rules for VRL-SGD, Local SGD, EASGD
//! and S-SGD.
//!
//! Worker steps only touch the worker's own state, so a period of `k` steps
//! can run on any thread. Synchronizations reduce over workers in ascending
//! `worker_id` order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{self, Problem};
use crate::rng::WorkerRng;
use crate::schedule::SyncSchedule;
use crate::vector::{self, mean_of, ModelVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerState {
    pub worker_id: usize,
    /// Local model `x_i`.
    pub x: ModelVector,
    /// Correction `Δ_i`; stays zero for algorithms other than VRL-SGD.
    pub delta: ModelVector,
    /// Direction used by the most recent local step (`v_i`).
    pub v: ModelVector,
    pub rng: WorkerRng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub t: u64,
    /// Averaged model `x̂` (the elastic centre for EASGD).
    pub x_hat: ModelVector,
    pub workers: Vec<WorkerState>,
}

impl GlobalState {
    pub fn new(x0: ModelVector, workers: usize, seed: u64) -> Self {
        let d = x0.dim();
        let workers = (0..workers)
            .map(|i| WorkerState {
                worker_id: i,
                x: x0.clone(),
                delta: ModelVector::zeros(d),
                v: ModelVector::zeros(d),
                rng: WorkerRng::new(seed, i),
            })
            .collect();
        Self {
            t: 0,
            x_hat: x0,
            workers,
        }
    }

    pub fn dim(&self) -> usize {
        self.x_hat.dim()
    }

    /// Element-wise mean of the local models.
    pub fn model_average(&self) -> Result<ModelVector> {
        mean_of(self.workers.iter().map(|w| &w.x))
    }

    pub fn local_models(&self) -> Vec<ModelVector> {
        self.workers.iter().map(|w| w.x.clone()).collect()
    }

    pub fn deltas(&self) -> Vec<ModelVector> {
        self.workers.iter().map(|w| w.delta.clone()).collect()
    }

    fn broadcast(&mut self, x: &ModelVector) {
        for w in &mut self.workers {
            w.x.as_mut_slice().copy_from_slice(x.as_slice());
        }
    }
}

pub(crate) fn draw_gradient(
    w: &WorkerState,
    p: &dyn Problem,
    at: &ModelVector,
    batch: usize,
    t: u64,
) -> Result<ModelVector> {
    let mut rng = w.rng.at(t);
    let g = objectives::stochastic_gradient(p, w.worker_id, at, &mut rng, batch)?;
    if !g.is_finite() {
        return Err(Error::NonFinite { what: "gradient", t });
    }
    Ok(g)
}

/// One VRL-SGD local iteration at time `t`: `v = ∇f_i(x_i, ξ) - Δ_i`,
/// `x_i ← x_i - γ v`. Returns the stochastic gradient that was drawn.
pub fn vrl_local_step(
    w: &mut WorkerState,
    p: &dyn Problem,
    gamma: f64,
    batch: usize,
    t: u64,
) -> Result<ModelVector> {
    let g = draw_gradient(w, p, &w.x, batch, t)?;
    for ((v, gi), di) in w.v.as_mut_slice().iter_mut().zip(g.as_slice()).zip(w.delta.as_slice()) {
        *v = gi - di;
    }
    for (x, v) in w.x.as_mut_slice().iter_mut().zip(w.v.as_slice()) {
        *x -= gamma * v;
    }
    Ok(g)
}

/// Communication step of VRL-SGD at sync point `state.t`:
/// `x̂ ← mean_i x_i`, then `Δ_i ← Δ_i + (x̂ - x_i) / (k_prev γ)` where
/// `k_prev` is the length of the period that just ended, then `x_i ← x̂`.
/// The correction is computed before the local models are reset.
pub fn vrl_sync(state: &mut GlobalState, schedule: &SyncSchedule, gamma: f64) -> Result<()> {
    if !schedule.is_sync_point(state.t) {
        return Err(Error::OffSchedule { t: state.t });
    }
    let x_hat = state.model_average()?;
    if let Some(k_prev) = schedule.previous_period_len(state.t) {
        let scale = k_prev as f64 * gamma;
        for w in &mut state.workers {
            for ((d, xh), xi) in w
                .delta
                .as_mut_slice()
                .iter_mut()
                .zip(x_hat.as_slice())
                .zip(w.x.as_slice())
            {
                *d += (xh - xi) / scale;
            }
        }
    }
    state.broadcast(&x_hat);
    state.x_hat = x_hat;
    Ok(())
}

/// Warm-up by direct initialization: one S-SGD step from `x̂^0` and
/// `Δ_i = ∇f_i(x̂^0, ξ_i^0) - (1/N) Σ_j ∇f_j(x̂^0, ξ_j^0)`. Leaves the state
/// synchronized at `t = 1`, exactly where a length-1 first period ends.
pub fn warm_up_init(state: &mut GlobalState, p: &dyn Problem, gamma: f64, batch: usize) -> Result<()> {
    if state.t != 0 {
        return Err(Error::OffSchedule { t: state.t });
    }
    let grads = state
        .workers
        .iter()
        .map(|w| draw_gradient(w, p, &state.x_hat, batch, 0))
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_of(&grads)?;
    let x_hat = vector::vec_axpy(-gamma, &mean, &state.x_hat)?;
    for (w, g) in state.workers.iter_mut().zip(&grads) {
        w.delta = g.sub(&mean)?;
        w.v = g.clone();
    }
    state.broadcast(&x_hat);
    state.x_hat = x_hat;
    state.t = 1;
    Ok(())
}

/// Plain local SGD iteration `x_i ← x_i - γ ∇f_i(x_i, ξ)`; also the local
/// step of EASGD.
pub fn local_sgd_step(
    w: &mut WorkerState,
    p: &dyn Problem,
    gamma: f64,
    batch: usize,
    t: u64,
) -> Result<ModelVector> {
    let g = draw_gradient(w, p, &w.x, batch, t)?;
    w.v.as_mut_slice().copy_from_slice(g.as_slice());
    for (x, gi) in w.x.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *x -= gamma * gi;
    }
    Ok(g)
}

/// Model averaging: `x̂ ← mean_i x_i`, `x_i ← x̂`.
pub fn local_sgd_sync(state: &mut GlobalState) -> Result<()> {
    let x_hat = state.model_average()?;
    state.broadcast(&x_hat);
    state.x_hat = x_hat;
    Ok(())
}

/// Elastic averaging with centre `z = state.x_hat`. With `e_i = x_i - z`
/// (pre-update): `x_i ← x_i - α e_i`, `z ← z + α Σ_i e_i`.
pub fn easgd_sync(state: &mut GlobalState, alpha: f64) -> Result<()> {
    let n = state.workers.len();
    if !(0.0..=1.0 / n as f64).contains(&alpha) {
        return Err(Error::InvalidConfig(format!(
            "easgd alpha {alpha} outside [0, 1/{n}]"
        )));
    }
    let d = state.dim();
    let mut pull = vec![0.0; d];
    for w in &mut state.workers {
        for ((x, z), s) in w
            .x
            .as_mut_slice()
            .iter_mut()
            .zip(state.x_hat.as_slice())
            .zip(pull.iter_mut())
        {
            let e = *x - z;
            *s += e;
            *x -= alpha * e;
        }
    }
    vector::axpy_in_place(alpha, &pull, state.x_hat.as_mut_slice());
    Ok(())
}

/// One synchronous SGD iteration: every worker draws a gradient at the shared
/// model, `x̂ ← x̂ - γ (1/N) Σ_i ∇f_i(x̂, ξ_i)`. Returns the gradients.
pub fn ssgd_step(state: &mut GlobalState, p: &dyn Problem, gamma: f64, batch: usize) -> Result<Vec<ModelVector>> {
    let t = state.t;
    let grads = state
        .workers
        .iter()
        .map(|w| draw_gradient(w, p, &state.x_hat, batch, t))
        .collect::<Result<Vec<_>>>()?;
    ssgd_apply(state, &grads, gamma)?;
    state.t += 1;
    Ok(grads)
}

/// The reduction half of [`ssgd_step`].
pub(crate) fn ssgd_apply(state: &mut GlobalState, grads: &[ModelVector], gamma: f64) -> Result<()> {
    let mean = mean_of(grads)?;
    for (x, g) in state.x_hat.as_mut_slice().iter_mut().zip(mean.as_slice()) {
        *x -= gamma * g;
    }
    let x_hat = state.x_hat.clone();
    state.broadcast(&x_hat);
    for (w, g) in state.workers.iter_mut().zip(grads) {
        w.v.as_mut_slice().copy_from_slice(g.as_slice());
    }
    Ok(())
}

/// Stochastic gradients of every worker over one completed period,
/// `grads[τ][i]`. Kept only in diagnostic mode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PeriodHistory {
    pub grads: Vec<Vec<ModelVector>>,
}

impl PeriodHistory {
    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    fn check(&self, expected: usize, worker: usize) -> Result<()> {
        if self.grads.len() != expected || expected == 0 {
            return Err(Error::HistoryLength {
                expected,
                found: self.grads.len(),
            });
        }
        let n = self.grads[0].len();
        if worker >= n {
            return Err(Error::WorkerOutOfRange { worker, count: n });
        }
        Ok(())
    }
}

/// Direct form of the correction after a period of length `period_len`:
/// `Δ_i = (1/k) Σ_τ (∇f_i(x_i^τ, ξ) - (1/N) Σ_j ∇f_j(x_j^τ, ξ))`.
pub fn delta_direct(history: &PeriodHistory, worker: usize, period_len: usize) -> Result<ModelVector> {
    history.check(period_len, worker)?;
    let d = history.grads[0][worker].dim();
    let mut acc = vec![0.0; d];
    for step in &history.grads {
        let mean = mean_of(step)?;
        for ((a, g), m) in acc.iter_mut().zip(step[worker].as_slice()).zip(mean.as_slice()) {
            *a += g - m;
        }
    }
    Ok(ModelVector::from(
        acc.into_iter().map(|a| a / period_len as f64).collect::<Vec<_>>(),
    ))
}

/// Direct form of the step direction given the previous period's history:
/// `v_i = g_i - (1/k) Σ_τ g_i^τ + (1/(Nk)) Σ_τ Σ_j g_j^τ`.
/// An empty history (first period) gives `v_i = g_i`.
pub fn v_direct(current: &ModelVector, history: &PeriodHistory, worker: usize) -> Result<ModelVector> {
    if history.is_empty() {
        return Ok(current.clone());
    }
    let k = history.len();
    history.check(k, worker)?;
    current.check_dim(history.grads[0][worker].dim())?;
    let d = current.dim();
    let n = history.grads[0].len();
    let mut own = vec![0.0; d];
    let mut all = vec![0.0; d];
    for step in &history.grads {
        vector::axpy_in_place(1.0, step[worker].as_slice(), &mut own);
        for g in step {
            vector::axpy_in_place(1.0, g.as_slice(), &mut all);
        }
    }
    let k = k as f64;
    Ok(ModelVector::from(
        current
            .as_slice()
            .iter()
            .zip(own.iter().zip(&all))
            .map(|(g, (o, a))| g - o / k + a / (n as f64 * k))
            .collect::<Vec<_>>(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{QuadraticPairProblem, SeparableQuadratic};

    fn s(v: f64) -> ModelVector {
        ModelVector::filled(1, v)
    }

    #[test]
    fn sync_at_start_leaves_deltas() {
        let mut st = GlobalState::new(s(3.0), 2, 0);
        vrl_sync(&mut st, &SyncSchedule::new(4, false), 0.1).unwrap();
        assert!(st.workers.iter().all(|w| w.delta[0] == 0.0 && w.x[0] == 3.0));
    }

    #[test]
    fn sync_correction_evaluation() {
        // k = 1, γ = 0.1, Δ_prev = 0, x̂ = 2, x_i = 1 → Δ_i = 10
        let mut st = GlobalState::new(s(0.0), 2, 0);
        st.t = 1;
        st.workers[0].x = s(1.0);
        st.workers[1].x = s(3.0);
        vrl_sync(&mut st, &SyncSchedule::new(1, false), 0.1).unwrap();
        assert_eq!(st.x_hat[0], 2.0);
        assert!((st.workers[0].delta[0] - 10.0).abs() < 1e-12);
        assert!((st.workers[1].delta[0] + 10.0).abs() < 1e-12);
        assert!(st.workers.iter().all(|w| w.x[0] == 2.0));
    }

    #[test]
    fn sync_off_schedule_is_rejected() {
        let mut st = GlobalState::new(s(0.0), 2, 0);
        st.t = 3;
        assert!(matches!(
            vrl_sync(&mut st, &SyncSchedule::new(2, false), 0.1),
            Err(Error::OffSchedule { t: 3 })
        ));
    }

    #[test]
    fn zero_correction_step_is_plain_sgd() {
        let p = SeparableQuadratic::random(2, 4, 1.0, 0.5, 1);
        let mut st = GlobalState::new(ModelVector::filled(4, 0.3), 2, 9);
        let mut a = st.workers[1].clone();
        let g = vrl_local_step(&mut a, &p, 0.05, 2, 7).unwrap();
        let b = &mut st.workers[1];
        local_sgd_step(b, &p, 0.05, 2, 7).unwrap();
        assert!(a.x.bits_eq(&b.x));
        assert!(a.v.bits_eq(&g));
    }

    #[test]
    fn corrected_step_cancels_local_gradient() {
        let p = QuadraticPairProblem::new(1.0, 0.0);
        let mut st = GlobalState::new(s(0.0), 2, 0);
        st.workers[0].delta = s(4.0);
        st.workers[1].delta = s(-4.0);
        for w in &mut st.workers {
            vrl_local_step(w, &p, 0.1, 1, 0).unwrap();
        }
        assert_eq!(st.workers[0].v[0], 0.0);
        assert_eq!(st.workers[0].x[0], 0.0);
        assert_eq!(st.workers[1].x[0], 0.0);
    }

    #[test]
    fn warm_up_direct_values() {
        let p = QuadraticPairProblem::new(1.0, 0.0);
        let mut st = GlobalState::new(s(0.0), 2, 0);
        warm_up_init(&mut st, &p, 0.01, 1).unwrap();
        assert_eq!(st.t, 1);
        assert_eq!(st.workers[0].delta[0], 4.0);
        assert_eq!(st.workers[1].delta[0], -4.0);
        assert_eq!(st.x_hat[0], 0.0);
        let sum: f64 = st.workers.iter().map(|w| w.delta[0]).sum();
        assert_eq!(sum, 0.0);
    }

    #[test]
    fn easgd_elastic_update() {
        let mut st = GlobalState::new(s(0.0), 2, 0);
        st.workers[0].x = s(1.0);
        st.workers[1].x = s(3.0);
        easgd_sync(&mut st, 0.25).unwrap();
        assert_eq!(st.workers[0].x[0], 0.75);
        assert_eq!(st.workers[1].x[0], 2.25);
        assert_eq!(st.x_hat[0], 1.0);
        assert!(easgd_sync(&mut st, 0.6).is_err());
        // α = 0 never couples
        let before = st.clone();
        easgd_sync(&mut st, 0.0).unwrap();
        assert_eq!(st, before);
    }

    #[test]
    fn ssgd_contracts_quadratic() {
        // ∇f(x) = 3x on the pair problem, so γ = 0.1 gives x ← 0.7 x
        let p = QuadraticPairProblem::new(2.5, 0.0);
        let mut st = GlobalState::new(s(1.0), 2, 0);
        let mut expect = 1.0;
        for _ in 0..20 {
            ssgd_step(&mut st, &p, 0.1, 1).unwrap();
            expect *= 0.7;
            assert!((st.x_hat[0] - expect).abs() < 1e-12);
            assert!(st.workers.iter().all(|w| w.x.bits_eq(&st.x_hat)));
        }
    }

    #[test]
    fn ssgd_single_worker_is_sgd() {
        let p = SeparableQuadratic::random(1, 3, 1.0, 0.5, 2);
        let mut st = GlobalState::new(ModelVector::filled(3, 1.0), 1, 4);
        let mut w = st.workers[0].clone();
        for t in 0..10 {
            ssgd_step(&mut st, &p, 0.1, 1).unwrap();
            local_sgd_step(&mut w, &p, 0.1, 1, t).unwrap();
            assert!(st.x_hat.bits_eq(&w.x));
        }
    }

    fn history(vals: &[&[f64]]) -> PeriodHistory {
        PeriodHistory {
            grads: vals
                .iter()
                .map(|step| step.iter().map(|&g| s(g)).collect())
                .collect(),
        }
    }

    #[test]
    fn direct_forms() {
        let h = history(&[&[1.0, 3.0], &[2.0, 2.0]]);
        // worker 0: ((1 - 2) + (2 - 2)) / 2
        assert_eq!(delta_direct(&h, 0, 2).unwrap()[0], -0.5);
        assert!(matches!(delta_direct(&h, 0, 3), Err(Error::HistoryLength { .. })));
        let same = history(&[&[5.0, 5.0, 5.0]]);
        assert_eq!(delta_direct(&same, 2, 1).unwrap()[0], 0.0);
        // k = 1: own gradient minus the mean
        let one = history(&[&[1.0, 4.0]]);
        assert_eq!(delta_direct(&one, 1, 1).unwrap()[0], 1.5);

        let g = s(7.0);
        assert_eq!(v_direct(&g, &PeriodHistory::default(), 0).unwrap()[0], 7.0);
        assert_eq!(v_direct(&g, &history(&[&[0.0, 0.0]]), 1).unwrap()[0], 7.0);
        // N = 1: correction cancels
        assert_eq!(v_direct(&g, &history(&[&[3.0], &[9.0]]), 0).unwrap()[0], 7.0);
        // v = g - Δ
        let v = v_direct(&g, &h, 0).unwrap()[0];
        assert!((v - (7.0 - delta_direct(&h, 0, 2).unwrap()[0])).abs() < 1e-15);
    }
}
