//! Parallel discretized Wonham-Shiryaev filters, one per expert.
//!
//! Each expert carries a posterior over which latent expert currently
//! drives the target, updated from the innovations in that expert's own
//! running loss. The update is the Euler-Maruyama discretization of the
//! filtering SDE: a `Q`-driven drift plus a diffusion term scaled by the
//! normalized loss surprise.
//!
//! Helper functions:
//! * `helper_a` is the loss-gradient rate under the hypothesis that basis
//!   expert `i` is active,
//! * `helper_a_bar` averages it under the current posterior,
//! * `helper_b` is the loss gradient with respect to the target alone and
//!   serves as the innovation denominator (floored at `eps_b`).
//!
//! With `delta = 1` the decay factors are exactly 1 and the helpers reduce
//! to their unit-variance forms; with `delta < 1` they carry `delta^(8t)`
//! and `delta^(4t)` noise-decay factors.

use crate::error::{MoefError, Result};
use crate::types::{
    project_to_simplex, FusionConfig, IntensityMatrix, LossKind, ObservationRecord, SimplexVector,
};

/// Mutable state of one expert's filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertFilterState {
    /// Posterior over all N experts held by this expert's filter.
    pub pi: SimplexVector,
    /// Previous running-loss value; zero before any observation.
    pub last_loss: f64,
    /// Prediction at the previous tick; `None` before any observation, in
    /// which case the sensitivity difference is defined as zero.
    pub last_prediction: Option<f64>,
}

impl ExpertFilterState {
    pub fn uniform(n: usize) -> Self {
        ExpertFilterState {
            pi: SimplexVector::uniform(n),
            last_loss: 0.0,
            last_prediction: None,
        }
    }
}

/// The whole filter bank: N per-expert posteriors plus the current Q
/// estimate and the last processed tick (-1 before the first).
#[derive(Debug, Clone)]
pub struct BeliefState {
    pub experts: Vec<ExpertFilterState>,
    pub q: IntensityMatrix,
    pub t: i64,
}

/// Backward difference of an expert's prediction; the continuous-time
/// sensitivity has no value at the boundary, so the first tick returns 0.
pub fn expert_sensitivity(f_now: f64, f_prev: Option<f64>) -> f64 {
    match f_prev {
        Some(prev) => f_now - prev,
        None => 0.0,
    }
}

/// Loss-gradient rate under the hypothesis that basis expert `i` is active.
///
/// MSE: `2 (y - f_n) (F_i - df_n + delta^(8t))`; the trailing factor is 1 at
/// `delta = 1`. BCE: `-(y - f_n) df_n / ((1 - f_n) f_n) - logit(f_n) * F_i`.
pub fn helper_a(
    loss: LossKind,
    basis_index: usize,
    y: f64,
    f_n: f64,
    delta_f_n: f64,
    predictions: &[f64],
    t: i64,
    delta: f64,
) -> Result<f64> {
    let f_i = predictions[basis_index];
    match loss {
        LossKind::Mse => {
            let decay = delta.powi(4).powi(2).powf(t as f64); // delta^(8t)
            Ok(2.0 * (y - f_n) * (f_i - delta_f_n + decay))
        }
        LossKind::Bce => {
            if f_n <= 0.0 || f_n >= 1.0 {
                return Err(MoefError::domain(format!(
                    "BCE helper A requires a clamped prediction in (0,1), got {f_n}"
                )));
            }
            let logit = (f_n / (1.0 - f_n)).ln();
            Ok(-((y - f_n) * delta_f_n) / ((1.0 - f_n) * f_n) - logit * f_i)
        }
    }
}

/// Posterior average of `helper_a` over the basis hypotheses.
pub fn helper_a_bar(
    loss: LossKind,
    pi: &SimplexVector,
    y: f64,
    f_n: f64,
    delta_f_n: f64,
    predictions: &[f64],
    t: i64,
    delta: f64,
) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..pi.len() {
        acc += helper_a(loss, i, y, f_n, delta_f_n, predictions, t, delta)? * pi[i];
    }
    Ok(acc)
}

/// Loss gradient with respect to the target path alone; the raw innovation
/// denominator before flooring.
///
/// MSE: `2^(3/2) (y - f_n) delta^(4t)`. BCE: `-logit(f_n) delta^(4t)`; the
/// decay factor appears only in the generalized dynamics and is exactly 1
/// at `delta = 1`.
pub fn helper_b(loss: LossKind, y: f64, f_n: f64, t: i64, delta: f64) -> f64 {
    let decay = delta.powi(4).powf(t as f64); // delta^(4t)
    match loss {
        LossKind::Mse => 2.0f64.powf(1.5) * (y - f_n) * decay,
        LossKind::Bce => -(f_n / (1.0 - f_n)).ln() * decay,
    }
}

/// Replaces a vanishing denominator by `sign(b) * eps_b` (with `sign(0)` =
/// +1). Returns the floored value and whether flooring fired.
pub fn floor_denominator(b: f64, eps_b: f64) -> (f64, bool) {
    if b == 0.0 {
        (eps_b, true)
    } else if b.abs() < eps_b {
        (b.signum() * eps_b, true)
    } else {
        (b, false)
    }
}

/// Loss value; lower is better. BCE is the nonnegative negative
/// log-likelihood, with the prediction clamped into `[eps_f, 1-eps_f]`.
pub fn loss_value(loss: LossKind, y_hat: f64, y: f64, eps_f: f64) -> f64 {
    match loss {
        LossKind::Mse => (y - y_hat) * (y - y_hat),
        LossKind::Bce => {
            let p = y_hat.clamp(eps_f, 1.0 - eps_f);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        }
    }
}

/// Normalized loss surprise driving the diffusion term.
pub fn innovation(delta_l: f64, a_bar: f64, b_floored: f64) -> f64 {
    (delta_l - a_bar) / b_floored
}

/// Posterior-weighted estimate of the target from the prediction vector.
pub fn expert_estimate(pi: &SimplexVector, predictions: &[f64]) -> f64 {
    debug_assert_eq!(pi.len(), predictions.len());
    pi.weights()
        .iter()
        .zip(predictions)
        .map(|(w, f)| w * f)
        .sum()
}

/// Reliability score of one expert's estimate: its loss against the target.
pub fn expert_score(y: f64, y_hat_n: f64, loss: LossKind, eps_f: f64) -> f64 {
    loss_value(loss, y_hat_n, y, eps_f)
}

/// Outcome of one filter update.
#[derive(Debug, Clone)]
pub struct FilterStepOutput {
    pub state: ExpertFilterState,
    /// Whether the innovation denominator was floored this step.
    pub floored: bool,
}

/// One Euler-Maruyama step of expert `index`'s filter.
///
/// Computes the loss increment against the stored running loss, the helper
/// averages, the floored innovation, and the drift (scaled by `dt`) plus
/// diffusion posterior update, then projects back onto the simplex.
/// Deterministic given its inputs. Predictions must already be clamped in
/// BCE mode.
pub fn filter_step(
    state: &ExpertFilterState,
    index: usize,
    q: &IntensityMatrix,
    obs: &ObservationRecord,
    cfg: &FusionConfig,
) -> Result<FilterStepOutput> {
    let n = state.pi.len();
    let f_now = obs.predictions[index];
    let delta_f = expert_sensitivity(f_now, state.last_prediction);

    let current_loss = loss_value(cfg.loss, f_now, obs.y, cfg.eps_f);
    let delta_l = current_loss - state.last_loss;

    let a_bar = helper_a_bar(
        cfg.loss,
        &state.pi,
        obs.y,
        f_now,
        delta_f,
        &obs.predictions,
        obs.t,
        cfg.delta,
    )?;
    let b_raw = helper_b(cfg.loss, obs.y, f_now, obs.t, cfg.delta);
    let (b, floored) = floor_denominator(b_raw, cfg.eps_b);
    let dw = innovation(delta_l, a_bar, b);

    let drift = q.matrix().transpose_mul_vec(state.pi.weights());
    let mut updated = vec![0.0; n];
    for i in 0..n {
        let a_i = helper_a(
            cfg.loss,
            i,
            obs.y,
            f_now,
            delta_f,
            &obs.predictions,
            obs.t,
            cfg.delta,
        )?;
        let diffusion = state.pi[i] * (a_i - a_bar) / b;
        updated[i] = state.pi[i] + drift[i] * cfg.dt + diffusion * dw;
    }

    if updated.iter().any(|x| !x.is_finite()) {
        return Err(MoefError::numerical(format!(
            "posterior for expert {index} became non-finite at t={}",
            obs.t
        )));
    }
    let pi = project_to_simplex(&updated, cfg.eps_pi)?;

    Ok(FilterStepOutput {
        state: ExpertFilterState {
            pi,
            last_loss: current_loss,
            last_prediction: Some(f_now),
        },
        floored,
    })
}
