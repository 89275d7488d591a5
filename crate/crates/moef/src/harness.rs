//! The streaming engine: wires the parallel filters (step 1) and the robust
//! aggregation (step 2) into a per-tick loop.
//!
//! Each tick runs every expert's filter against the shared observation and
//! the Q estimate from the *previous* tick, scores the resulting estimates,
//! computes the softmin weights and fused prediction, and installs the
//! re-projected Q for the next tick. Per-expert updates are independent and
//! may run on a thread pool; results are identical either way because each
//! expert's arithmetic never mixes with another's.

use crate::aggregation::{aggregate, AggregationStep};
use crate::error::{MoefError, Result};
use crate::filter::{expert_estimate, expert_score, filter_step, BeliefState, ExpertFilterState};
use crate::linalg::SquareMatrix;
use crate::types::{
    FusionConfig, IntensityMatrix, LossKind, ObservationRecord, QDiagMode, SimplexVector,
};
use rayon::prelude::*;

/// Everything one tick reports.
#[derive(Debug, Clone)]
pub struct TickOutput {
    pub t: i64,
    /// Fused prediction; always `pi_bar . per_expert_estimates`.
    pub fused: f64,
    pub per_expert_estimates: Vec<f64>,
    pub pi_bar: SimplexVector,
    pub scores: Vec<f64>,
    pub q_next: IntensityMatrix,
    /// Number of innovation-denominator floor activations this tick.
    pub floor_events: u32,
}

/// The MoE-F orchestrator.
#[derive(Debug, Clone)]
pub struct MoefEngine {
    config: FusionConfig,
    belief: BeliefState,
    floor_events_total: u64,
}

impl MoefEngine {
    /// Initializes `n_experts` uniform posteriors and the default chain:
    /// off-diagonal rates `1/(N-1)` with diagonal -1 (the single-expert
    /// chain is the zero matrix).
    pub fn new(n_experts: usize, config: FusionConfig) -> Result<Self> {
        if n_experts < 1 {
            return Err(MoefError::domain("engine requires at least one expert"));
        }
        config.validate()?;
        let q = initial_intensity(n_experts);
        Ok(MoefEngine {
            config,
            belief: BeliefState {
                experts: vec![ExpertFilterState::uniform(n_experts); n_experts],
                q,
                t: -1,
            },
            floor_events_total: 0,
        })
    }

    pub fn n_experts(&self) -> usize {
        self.belief.experts.len()
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    pub fn floor_events_total(&self) -> u64 {
        self.floor_events_total
    }

    /// Processes one observation. Ticks must arrive with strictly
    /// increasing time indices.
    pub fn tick(&mut self, obs: &ObservationRecord) -> Result<TickOutput> {
        let n = self.n_experts();
        if obs.predictions.len() != n {
            return Err(MoefError::sequence(format!(
                "expected {n} predictions, got {} at t={}",
                obs.predictions.len(),
                obs.t
            )));
        }
        if obs.t <= self.belief.t {
            return Err(MoefError::sequence(format!(
                "non-monotone tick index {} after {}",
                obs.t, self.belief.t
            )));
        }
        if !obs.y.is_finite() || obs.predictions.iter().any(|p| !p.is_finite()) {
            return Err(MoefError::numerical(format!(
                "non-finite observation at t={}",
                obs.t
            )));
        }

        // BCE predictions are clamped on ingestion so every log and ratio
        // downstream stays finite.
        let obs_eff = match self.config.loss {
            LossKind::Bce => {
                let lo = self.config.eps_f;
                let hi = 1.0 - self.config.eps_f;
                ObservationRecord::new(
                    obs.t,
                    obs.y,
                    obs.predictions.iter().map(|p| p.clamp(lo, hi)).collect(),
                )
            }
            LossKind::Mse => obs.clone(),
        };

        let step_one = |(index, state): (usize, &ExpertFilterState)| -> Result<ExpertTickResult> {
            let out = filter_step(state, index, &self.belief.q, &obs_eff, &self.config)?;
            let estimate = expert_estimate(&out.state.pi, &obs_eff.predictions);
            let score = expert_score(obs_eff.y, estimate, self.config.loss, self.config.eps_f);
            Ok(ExpertTickResult {
                state: out.state,
                estimate,
                score,
                floored: out.floored,
            })
        };

        let results: Vec<ExpertTickResult> = if self.config.parallel && n > 1 {
            self.belief
                .experts
                .par_iter()
                .enumerate()
                .map(step_one)
                .collect::<Result<_>>()?
        } else {
            self.belief
                .experts
                .iter()
                .enumerate()
                .map(step_one)
                .collect::<Result<_>>()?
        };

        let estimates: Vec<f64> = results.iter().map(|r| r.estimate).collect();
        let scores: Vec<f64> = results.iter().map(|r| r.score).collect();
        let floor_events = results.iter().filter(|r| r.floored).count() as u32;

        let AggregationStep { result, install } = aggregate(
            &scores,
            &estimates,
            self.config.lambda,
            self.config.alpha,
            self.config.q_diag,
        )?;

        for (slot, r) in self.belief.experts.iter_mut().zip(results) {
            *slot = r.state;
        }
        debug_assert!(
            self.config.q_diag == QDiagMode::Column || install.is_valid(),
            "row-mode Q must always be a valid intensity matrix"
        );
        self.belief.q = install;
        self.belief.t = obs.t;
        self.floor_events_total += floor_events as u64;
        if floor_events > 0 {
            log::debug!("t={}: {floor_events} innovation floor events", obs.t);
        }

        Ok(TickOutput {
            t: obs.t,
            fused: result.fused,
            per_expert_estimates: estimates,
            pi_bar: result.pi_bar,
            scores,
            q_next: result.q_next,
            floor_events,
        })
    }

    /// Folds `tick` over a time-ordered batch, tagging any failure with the
    /// offending tick index.
    pub fn run_stream(&mut self, observations: &[ObservationRecord]) -> Result<Vec<TickOutput>> {
        let mut outputs = Vec::with_capacity(observations.len());
        for obs in observations {
            let out = self.tick(obs).map_err(|e| match e {
                MoefError::Sequence(m) => MoefError::Sequence(format!("t={}: {m}", obs.t)),
                MoefError::Numerical(m) => MoefError::Numerical(format!("t={}: {m}", obs.t)),
                other => other,
            })?;
            outputs.push(out);
        }
        Ok(outputs)
    }
}

struct ExpertTickResult {
    state: ExpertFilterState,
    estimate: f64,
    score: f64,
    floored: bool,
}

/// Default chain initialization: all states equally sticky, unit exit rate.
fn initial_intensity(n: usize) -> IntensityMatrix {
    if n == 1 {
        return IntensityMatrix::zero(1);
    }
    let off = 1.0 / (n as f64 - 1.0);
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = if i == j { -1.0 } else { off };
        }
    }
    IntensityMatrix::new(m).expect("constructed intensity matrix is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn cfg() -> FusionConfig {
        FusionConfig {
            dt: 0.1,
            ..FusionConfig::default()
        }
    }

    fn random_stream(n: usize, len: usize, seed: u64) -> Vec<ObservationRecord> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..len)
            .map(|t| {
                ObservationRecord::new(
                    t as i64,
                    rng.random::<f64>() * 4.0 - 2.0,
                    (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn init_q_matches_convention() {
        let engine = MoefEngine::new(3, cfg()).unwrap();
        let q = engine.belief().q.matrix();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { -1.0 } else { 0.5 };
                assert_eq!(q[(i, j)], expected);
            }
        }

        let single = MoefEngine::new(1, cfg()).unwrap();
        assert_eq!(single.belief().q.matrix()[(0, 0)], 0.0);
        assert_eq!(single.belief().experts[0].pi.weights(), &[1.0]);

        let pair = MoefEngine::new(2, cfg()).unwrap();
        for state in &pair.belief().experts {
            assert_eq!(state.pi.weights(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn init_rejects_zero_experts() {
        assert!(MoefEngine::new(0, cfg()).is_err());
    }

    #[test]
    fn single_expert_is_passthrough() {
        let mut engine = MoefEngine::new(1, cfg()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for t in 0..50 {
            let p = rng.random::<f64>() * 3.0;
            let out = engine
                .tick(&ObservationRecord::new(t, rng.random::<f64>(), vec![p]))
                .unwrap();
            assert_eq!(out.fused, p);
            assert_eq!(out.pi_bar.weights(), &[1.0]);
        }
    }

    #[test]
    fn identical_experts_tie_exactly() {
        let mut engine = MoefEngine::new(2, cfg()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for t in 0..100 {
            let p = rng.random::<f64>() * 2.0 - 1.0;
            let y = rng.random::<f64>() * 2.0 - 1.0;
            let out = engine
                .tick(&ObservationRecord::new(t, y, vec![p, p]))
                .unwrap();
            assert_eq!(out.pi_bar[0], 0.5);
            assert_eq!(out.pi_bar[1], 0.5);
            assert_relative_eq!(out.fused, p, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_non_monotone_ticks() {
        let mut engine = MoefEngine::new(2, cfg()).unwrap();
        engine
            .tick(&ObservationRecord::new(5, 0.0, vec![0.1, 0.2]))
            .unwrap();
        let err = engine
            .tick(&ObservationRecord::new(5, 0.0, vec![0.1, 0.2]))
            .unwrap_err();
        assert!(matches!(err, MoefError::Sequence(_)));
    }

    #[test]
    fn rejects_non_finite_observation() {
        let mut engine = MoefEngine::new(2, cfg()).unwrap();
        let err = engine
            .tick(&ObservationRecord::new(0, f64::NAN, vec![0.1, 0.2]))
            .unwrap_err();
        assert!(matches!(err, MoefError::Numerical(_)));
    }

    #[test]
    fn empty_stream_is_empty_output() {
        let mut engine = MoefEngine::new(2, cfg()).unwrap();
        assert!(engine.run_stream(&[]).unwrap().is_empty());
    }

    #[test]
    fn single_tick_stream_matches_tick() {
        let obs = ObservationRecord::new(0, 0.4, vec![0.3, 0.9]);
        let mut a = MoefEngine::new(2, cfg()).unwrap();
        let mut b = MoefEngine::new(2, cfg()).unwrap();
        let from_stream = a.run_stream(std::slice::from_ref(&obs)).unwrap();
        let from_tick = b.tick(&obs).unwrap();
        assert_eq!(from_stream.len(), 1);
        assert_eq!(from_stream[0].fused.to_bits(), from_tick.fused.to_bits());
    }

    #[test]
    fn replay_is_bitwise_deterministic() {
        let stream = random_stream(3, 200, 4);
        let mut a = MoefEngine::new(3, cfg()).unwrap();
        let mut b = MoefEngine::new(3, cfg()).unwrap();
        let out_a = a.run_stream(&stream).unwrap();
        let out_b = b.run_stream(&stream).unwrap();
        for (x, y) in out_a.iter().zip(&out_b) {
            assert_eq!(x.fused.to_bits(), y.fused.to_bits());
            for (p, q) in x.pi_bar.weights().iter().zip(y.pi_bar.weights()) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    #[test]
    fn parallel_and_serial_agree_bitwise() {
        let stream = random_stream(4, 150, 8);
        let mut serial = MoefEngine::new(
            4,
            FusionConfig {
                parallel: false,
                ..cfg()
            },
        )
        .unwrap();
        let mut parallel = MoefEngine::new(
            4,
            FusionConfig {
                parallel: true,
                ..cfg()
            },
        )
        .unwrap();
        let out_s = serial.run_stream(&stream).unwrap();
        let out_p = parallel.run_stream(&stream).unwrap();
        for (x, y) in out_s.iter().zip(&out_p) {
            assert_eq!(x.fused.to_bits(), y.fused.to_bits());
            for (a, b) in x.scores.iter().zip(&y.scores) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn causality_prefix_equivalence() {
        let stream = random_stream(3, 120, 21);
        let mut full = MoefEngine::new(3, cfg()).unwrap();
        let full_out = full.run_stream(&stream).unwrap();
        let mut prefix = MoefEngine::new(3, cfg()).unwrap();
        let prefix_out = prefix.run_stream(&stream[..60]).unwrap();
        for (a, b) in prefix_out.iter().zip(full_out.iter().take(60)) {
            assert_eq!(a.fused.to_bits(), b.fused.to_bits());
        }
    }

    #[test]
    fn expert_permutation_equivariance() {
        let stream = random_stream(3, 80, 33);
        // Swap experts 0 and 2 in every observation.
        let permuted: Vec<ObservationRecord> = stream
            .iter()
            .map(|o| {
                ObservationRecord::new(
                    o.t,
                    o.y,
                    vec![o.predictions[2], o.predictions[1], o.predictions[0]],
                )
            })
            .collect();
        let mut original = MoefEngine::new(3, cfg()).unwrap();
        let mut swapped = MoefEngine::new(3, cfg()).unwrap();
        let out_o = original.run_stream(&stream).unwrap();
        let out_s = swapped.run_stream(&permuted).unwrap();
        for (a, b) in out_o.iter().zip(&out_s) {
            assert_relative_eq!(a.fused, b.fused, epsilon = 1e-12);
            assert_relative_eq!(a.pi_bar[0], b.pi_bar[2], epsilon = 1e-12);
            assert_relative_eq!(a.pi_bar[1], b.pi_bar[1], epsilon = 1e-12);
            assert_relative_eq!(a.pi_bar[2], b.pi_bar[0], epsilon = 1e-12);
            assert_relative_eq!(
                a.q_next.matrix()[(0, 2)],
                b.q_next.matrix()[(2, 0)],
                epsilon = 1e-12
            );
            assert_relative_eq!(
                a.per_expert_estimates[0],
                b.per_expert_estimates[2],
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn fused_stays_inside_estimate_hull_mse() {
        let stream = random_stream(4, 150, 55);
        let mut engine = MoefEngine::new(4, cfg()).unwrap();
        for out in engine.run_stream(&stream).unwrap() {
            let lo = out
                .per_expert_estimates
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            let hi = out
                .per_expert_estimates
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(out.fused >= lo - 1e-12 && out.fused <= hi + 1e-12);
            // The reported fused value is exactly the dot product.
            let dot: f64 = out
                .pi_bar
                .weights()
                .iter()
                .zip(&out.per_expert_estimates)
                .map(|(w, e)| w * e)
                .sum();
            assert_eq!(out.fused.to_bits(), dot.to_bits());
        }
    }

    #[test]
    fn installed_q_is_always_valid_in_row_mode() {
        let stream = random_stream(3, 100, 77);
        let mut engine = MoefEngine::new(3, cfg()).unwrap();
        for obs in &stream {
            engine.tick(obs).unwrap();
            assert!(engine.belief().q.is_valid());
        }
    }

    #[test]
    fn posteriors_valid_after_every_tick_both_losses() {
        for loss in [LossKind::Mse, LossKind::Bce] {
            let mut rng = ChaCha12Rng::seed_from_u64(101);
            let stream: Vec<ObservationRecord> = (0..200)
                .map(|t| {
                    let y = if loss == LossKind::Bce {
                        rng.random::<f64>()
                    } else {
                        rng.random::<f64>() * 4.0 - 2.0
                    };
                    let preds = (0..3)
                        .map(|_| {
                            if loss == LossKind::Bce {
                                rng.random::<f64>()
                            } else {
                                rng.random::<f64>() * 4.0 - 2.0
                            }
                        })
                        .collect();
                    ObservationRecord::new(t, y, preds)
                })
                .collect();
            let mut engine = MoefEngine::new(3, FusionConfig { loss, ..cfg() }).unwrap();
            for obs in &stream {
                engine.tick(obs).unwrap();
                for state in &engine.belief().experts {
                    assert!(SimplexVector::is_valid(state.pi.weights()));
                }
            }
        }
    }

    #[test]
    fn column_mode_reports_valid_q_but_installs_literal() {
        let stream = random_stream(3, 40, 13);
        let mut engine = MoefEngine::new(
            3,
            FusionConfig {
                q_diag: QDiagMode::Column,
                ..cfg()
            },
        )
        .unwrap();
        for obs in &stream {
            let out = engine.tick(obs).unwrap();
            // The reported q_next is the valid row-sum projection even in
            // column mode.
            assert!(out.q_next.is_valid());
        }
    }
}
