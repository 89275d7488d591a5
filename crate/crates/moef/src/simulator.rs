//! Synthetic regime-switching target generator.
//!
//! A hidden Markov chain (simulated exactly via the per-step matrix
//! exponential of the true intensity matrix) selects which expert drives
//! the target's drift; the target integrates that drift plus decaying
//! Gaussian noise:
//!
//! ```text
//! y[t+1] = y[t] + F[w[t]](t) * dt + sigma(t) * sqrt(dt) * xi[t]
//! sigma(t) = c * exp(-alpha_decay * t * dt)
//! ```
//!
//! With `alpha_decay = 0` the accumulated noise variance is `t`; otherwise
//! it stabilizes at `c^2 / (2 alpha_decay)`. Ground-truth hidden states are
//! emitted alongside the observations so the filter can be validated.

use crate::error::{MoefError, Result};
use crate::linalg::expm;
use crate::rng::SimRng;
use crate::types::{IntensityMatrix, ObservationRecord, RowStochasticMatrix};
use serde::{Deserialize, Serialize};

/// One synthetic expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ExpertSpec {
    /// Always predicts `value`.
    Constant { value: f64 },
    /// `amplitude * sin(2 pi (t * dt) / period + phase)`.
    Sinusoid {
        amplitude: f64,
        period: f64,
        phase: f64,
    },
    /// Echoes the target `k` ticks ago (the initial value before enough
    /// history exists).
    Lag { k: usize },
}

impl ExpertSpec {
    /// Prediction at tick `t` given the target history `y[0..=t]`.
    fn predict(&self, t: usize, dt: f64, history: &[f64]) -> f64 {
        match self {
            ExpertSpec::Constant { value } => *value,
            ExpertSpec::Sinusoid {
                amplitude,
                period,
                phase,
            } => amplitude * (std::f64::consts::TAU * (t as f64 * dt) / period + phase).sin(),
            ExpertSpec::Lag { k } => {
                let idx = t.saturating_sub(*k);
                history[idx]
            }
        }
    }
}

/// Idiosyncratic-noise parameters: `sigma(t) = c * exp(-alpha_decay * t * dt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub alpha_decay: f64,
    pub c: f64,
}

impl NoiseSpec {
    /// Converts the classification-error budget `delta` in (0,1] to the
    /// decay rate `alpha = ln(1/delta^4)`, keeping the two
    /// parameterizations from silently diverging.
    pub fn alpha_from_delta(delta: f64) -> Result<f64> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(MoefError::domain(format!(
                "delta must lie in (0,1], got {delta}"
            )));
        }
        Ok((1.0 / delta.powi(4)).ln())
    }
}

/// Full description of a synthetic path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub q_true: IntensityMatrix,
    pub experts: Vec<ExpertSpec>,
    pub noise: NoiseSpec,
    pub t_max: usize,
    pub dt: f64,
    pub seed: u64,
    /// Starting value of the target; defaults to 0.
    #[serde(default)]
    pub y0: f64,
}

impl Scenario {
    /// Checks shape and discretization sanity.
    pub fn validate(&self) -> Result<()> {
        let n = self.experts.len();
        if n == 0 {
            return Err(MoefError::domain("scenario needs at least one expert"));
        }
        if self.q_true.dim() != n {
            return Err(MoefError::domain(format!(
                "q_true is {}x{} but there are {n} experts",
                self.q_true.dim(),
                self.q_true.dim()
            )));
        }
        if !self.q_true.is_valid() {
            return Err(MoefError::domain(
                "q_true is not a valid intensity matrix (off-diagonals >= 0, zero row sums)",
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(MoefError::domain(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        let max_rate = (0..n)
            .map(|i| self.q_true.matrix()[(i, i)].abs())
            .fold(0.0, f64::max);
        if self.dt * max_rate > 0.1 + 1e-12 {
            return Err(MoefError::domain(format!(
                "dt * max |Q_ii| = {} exceeds the 0.1 discretization budget",
                self.dt * max_rate
            )));
        }
        if !(self.noise.alpha_decay >= 0.0 && self.noise.alpha_decay.is_finite()) {
            return Err(MoefError::domain("alpha_decay must be >= 0"));
        }
        if !(self.noise.c >= 0.0 && self.noise.c <= 1.0) {
            return Err(MoefError::domain(format!(
                "noise scale c must lie in [0,1], got {}",
                self.noise.c
            )));
        }
        for spec in &self.experts {
            match spec {
                ExpertSpec::Sinusoid { period, .. } if *period <= 0.0 => {
                    return Err(MoefError::domain("sinusoid period must be positive"));
                }
                ExpertSpec::Lag { k } if *k == 0 => {
                    return Err(MoefError::domain("lag must look at least one tick back"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }
}

/// A generated path: per-tick observations plus the hidden truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    pub observations: Vec<ObservationRecord>,
    /// True active-expert index at each tick.
    pub hidden: Vec<usize>,
}

/// Exact transition matrix `exp(Q dt)`, rows renormalized onto the simplex
/// to absorb residual truncation at the 1e-12 level.
pub fn transition_matrix(q: &IntensityMatrix, dt: f64) -> Result<RowStochasticMatrix> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(MoefError::domain(format!("dt must be positive, got {dt}")));
    }
    let mut p = expm(&q.matrix().scale(dt));
    let n = p.dim();
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..n {
            if p[(i, j)] < 0.0 {
                if p[(i, j)] < -1e-12 {
                    return Err(MoefError::numerical(format!(
                        "transition matrix entry ({i},{j}) = {} is materially negative",
                        p[(i, j)]
                    )));
                }
                p[(i, j)] = 0.0;
            }
            sum += p[(i, j)];
        }
        for j in 0..n {
            p[(i, j)] /= sum;
        }
    }
    RowStochasticMatrix::new(p)
}

/// Simulates the hidden chain for `t_max` ticks; uniform start, exact
/// per-step transition kernel, deterministic per seed.
pub fn sample_hidden_chain(
    q_true: &IntensityMatrix,
    t_max: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = q_true.dim();
    let p = transition_matrix(q_true, dt)?;
    let mut rng = SimRng::from_seed(seed);
    let mut states = Vec::with_capacity(t_max);
    if t_max == 0 {
        return Ok(states);
    }
    let uniform = vec![1.0 / n as f64; n];
    let mut state = rng.categorical(&uniform);
    states.push(state);
    for _ in 1..t_max {
        state = rng.categorical(p.row(state));
        states.push(state);
    }
    Ok(states)
}

/// Generates the full path: hidden chain, expert predictions, and the
/// Euler-Maruyama target. Reproducible: identical scenarios (including the
/// seed) yield identical paths.
pub fn synthesize(scenario: &Scenario) -> Result<SimulatedPath> {
    scenario.validate()?;
    let n = scenario.n_experts();
    let hidden = sample_hidden_chain(&scenario.q_true, scenario.t_max, scenario.dt, scenario.seed)?;
    let mut noise_rng = SimRng::noise_stream(scenario.seed);

    let mut observations = Vec::with_capacity(scenario.t_max);
    let mut history = Vec::with_capacity(scenario.t_max);
    let mut y = scenario.y0;
    let sqrt_dt = scenario.dt.sqrt();
    for t in 0..scenario.t_max {
        history.push(y);
        let predictions: Vec<f64> = (0..n)
            .map(|i| scenario.experts[i].predict(t, scenario.dt, &history))
            .collect();
        let drift = predictions[hidden[t]];
        observations.push(ObservationRecord::new(t as i64, y, predictions));

        let sigma = scenario.noise.c * (-scenario.noise.alpha_decay * t as f64 * scenario.dt).exp();
        y += drift * scenario.dt + sigma * sqrt_dt * noise_rng.standard_normal();
    }
    Ok(SimulatedPath {
        observations,
        hidden,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SquareMatrix;
    use approx::assert_relative_eq;

    fn symmetric_q(rate: f64) -> IntensityMatrix {
        IntensityMatrix::new(SquareMatrix::from_nested(&[
            vec![-rate, rate],
            vec![rate, -rate],
        ]))
        .unwrap()
    }

    #[test]
    fn transition_two_state_closed_form() {
        // For the symmetric unit-rate chain, P(t) = [(1 +- e^-2t)/2]; at
        // t = ln(2)/2 the off-diagonal is exactly 1/4.
        let q = symmetric_q(1.0);
        let p = transition_matrix(&q, std::f64::consts::LN_2 / 2.0).unwrap();
        assert_relative_eq!(p.row(0)[0], 0.75, epsilon = 1e-12);
        assert_relative_eq!(p.row(0)[1], 0.25, epsilon = 1e-12);
        assert_relative_eq!(p.row(1)[0], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn transition_of_zero_chain_is_identity() {
        let q = IntensityMatrix::zero(3);
        let p = transition_matrix(&q, 5.0).unwrap();
        assert_eq!(p.matrix(), &SquareMatrix::identity(3));
    }

    #[test]
    fn transition_small_dt_matches_first_order() {
        let q = symmetric_q(1.0);
        let dt = 1e-4;
        let p = transition_matrix(&q, dt).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let first_order =
                    if i == j { 1.0 } else { 0.0 } + dt * q.matrix()[(i, j)];
                assert!((p.matrix()[(i, j)] - first_order).abs() < 10.0 * dt * dt);
            }
        }
    }

    #[test]
    fn transition_semigroup_property() {
        let q = IntensityMatrix::new(SquareMatrix::from_nested(&[
            vec![-0.7, 0.3, 0.4],
            vec![0.2, -0.5, 0.3],
            vec![0.1, 0.6, -0.7],
        ]))
        .unwrap();
        let a = 0.35;
        let b = 0.85;
        let p_ab = transition_matrix(&q, a + b).unwrap();
        let product = transition_matrix(&q, a)
            .unwrap()
            .matrix()
            .matmul(transition_matrix(&q, b).unwrap().matrix());
        let n = 3;
        for i in 0..n {
            for j in 0..n {
                assert!((p_ab.matrix()[(i, j)] - product[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn frozen_chain_never_moves() {
        let q = IntensityMatrix::zero(2);
        let states = sample_hidden_chain(&q, 500, 0.05, 3).unwrap();
        assert!(states.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn symmetric_chain_occupancy_is_balanced() {
        let q = symmetric_q(0.5);
        let states = sample_hidden_chain(&q, 100_000, 0.2, 11).unwrap();
        let ones = states.iter().filter(|s| **s == 1).count() as f64;
        let frac = ones / states.len() as f64;
        assert!((frac - 0.5).abs() < 0.02, "occupancy {frac}");
    }

    #[test]
    fn chain_is_deterministic_per_seed() {
        let q = symmetric_q(0.5);
        let a = sample_hidden_chain(&q, 1000, 0.1, 19).unwrap();
        let b = sample_hidden_chain(&q, 1000, 0.1, 19).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn drift_only_path_is_arithmetic_progression() {
        // Hidden chain frozen in state 1 needs a Q that cannot leave
        // state 1... a zero matrix freezes wherever it starts, so pick the
        // seed-independent construction: both experts constant, no noise,
        // and check against whichever expert the chain froze on.
        let scenario = Scenario {
            q_true: IntensityMatrix::zero(2),
            experts: vec![
                ExpertSpec::Constant { value: 0.0 },
                ExpertSpec::Constant { value: 1.0 },
            ],
            noise: NoiseSpec {
                alpha_decay: 0.0,
                c: 0.0,
            },
            t_max: 50,
            dt: 0.5,
            seed: 123,
            y0: 0.0,
        };
        let path = synthesize(&scenario).unwrap();
        let active = path.hidden[0];
        let rate = if active == 1 { 1.0 } else { 0.0 };
        for (t, obs) in path.observations.iter().enumerate() {
            assert_relative_eq!(obs.y, t as f64 * 0.5 * rate, epsilon = 1e-12);
        }
    }

    #[test]
    fn synthesize_is_reproducible() {
        let scenario = Scenario {
            q_true: symmetric_q(0.4),
            experts: vec![
                ExpertSpec::Constant { value: -1.0 },
                ExpertSpec::Sinusoid {
                    amplitude: 0.5,
                    period: 8.0,
                    phase: 0.3,
                },
            ],
            noise: NoiseSpec {
                alpha_decay: 0.1,
                c: 0.8,
            },
            t_max: 300,
            dt: 0.25,
            seed: 77,
            y0: 0.0,
        };
        let a = synthesize(&scenario).unwrap();
        let b = synthesize(&scenario).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lag_expert_echoes_history() {
        let scenario = Scenario {
            q_true: IntensityMatrix::zero(2),
            experts: vec![
                ExpertSpec::Constant { value: 1.0 },
                ExpertSpec::Lag { k: 2 },
            ],
            noise: NoiseSpec {
                alpha_decay: 0.0,
                c: 0.0,
            },
            t_max: 20,
            dt: 0.1,
            seed: 5,
            y0: 0.5,
        };
        let path = synthesize(&scenario).unwrap();
        for t in 2..20 {
            assert_eq!(
                path.observations[t].predictions[1],
                path.observations[t - 2].y
            );
        }
        // Before enough history exists the lag clamps to the start.
        assert_eq!(path.observations[0].predictions[1], 0.5);
        assert_eq!(path.observations[1].predictions[1], 0.5);
    }

    #[test]
    fn driftless_variance_matches_brownian_law() {
        // Monte-Carlo check of the alpha = 0 case: var(y_T) ~ T * dt.
        let t_max = 200;
        let dt = 0.1;
        let n_paths = 2000;
        let mut values = Vec::with_capacity(n_paths);
        for seed in 0..n_paths as u64 {
            let scenario = Scenario {
                q_true: IntensityMatrix::zero(1),
                experts: vec![ExpertSpec::Constant { value: 0.0 }],
                noise: NoiseSpec {
                    alpha_decay: 0.0,
                    c: 1.0,
                },
                t_max: t_max + 1,
                dt,
                seed,
                y0: 0.0,
            };
            let path = synthesize(&scenario).unwrap();
            values.push(path.observations[t_max].y);
        }
        let mean: f64 = values.iter().sum::<f64>() / n_paths as f64;
        let var: f64 =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n_paths as f64;
        let expected = t_max as f64 * dt;
        assert!(
            (var - expected).abs() / expected < 0.10,
            "var {var} vs expected {expected}"
        );
    }

    #[test]
    fn decaying_noise_variance_stabilizes() {
        // alpha > 0: long-run variance ~ c^2 / (2 alpha).
        let alpha = 0.5;
        let c = 1.0;
        let dt = 0.02;
        let t_max = 800; // physical horizon 16, decay long gone
        let n_paths = 2000;
        let mut values = Vec::with_capacity(n_paths);
        for seed in 0..n_paths as u64 {
            let scenario = Scenario {
                q_true: IntensityMatrix::zero(1),
                experts: vec![ExpertSpec::Constant { value: 0.0 }],
                noise: NoiseSpec {
                    alpha_decay: alpha,
                    c,
                },
                t_max,
                dt,
                seed: 10_000 + seed,
                y0: 0.0,
            };
            let path = synthesize(&scenario).unwrap();
            values.push(path.observations[t_max - 1].y);
        }
        let mean: f64 = values.iter().sum::<f64>() / n_paths as f64;
        let var: f64 =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n_paths as f64;
        let expected = c * c / (2.0 * alpha);
        assert!(
            (var - expected).abs() / expected < 0.10,
            "var {var} vs expected {expected}"
        );
    }

    #[test]
    fn delta_to_alpha_conversion() {
        // delta = 1 means no decay.
        assert_eq!(NoiseSpec::alpha_from_delta(1.0).unwrap(), 0.0);
        let a = NoiseSpec::alpha_from_delta(0.9).unwrap();
        assert_relative_eq!(a, (1.0f64 / 0.9f64.powi(4)).ln(), epsilon = 1e-15);
        assert!(NoiseSpec::alpha_from_delta(0.0).is_err());
    }

    #[test]
    fn scenario_validation_catches_bad_discretization() {
        let scenario = Scenario {
            q_true: symmetric_q(1.0),
            experts: vec![
                ExpertSpec::Constant { value: 0.0 },
                ExpertSpec::Constant { value: 1.0 },
            ],
            noise: NoiseSpec {
                alpha_decay: 0.0,
                c: 0.0,
            },
            t_max: 10,
            dt: 0.5, // dt * |Q_ii| = 0.5 > 0.1
            seed: 1,
            y0: 0.0,
        };
        assert!(scenario.validate().is_err());
    }
}
