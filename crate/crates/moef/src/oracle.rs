//! Independent verification oracles.
//!
//! Every routine here deliberately avoids the production code path it
//! checks: the matrix logarithm is recomputed from the eigenstructure, the
//! softmin weights are re-derived by exhaustive grid search over the
//! simplex, the KL bound is compared against directly measured divergences,
//! and the noise law is checked by Monte-Carlo simulation. The CLI exposes
//! these as `oracle-check` suites and the acceptance tests reuse them.

use crate::aggregation::{
    build_perturbed_p, inner_objective, kl_divergence, kl_perturbation_bound, matrix_log_perturbed,
    softmin_weights,
};
use crate::error::{MoefError, Result};
use crate::linalg::{expm, SquareMatrix};
use crate::simulator::{synthesize, ExpertSpec, NoiseSpec, Scenario};
use crate::types::{IntensityMatrix, SimplexVector};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Outcome of one oracle suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed discrepancy, suite-specific meaning.
    pub worst: f64,
    pub tolerance: f64,
    /// Serialized description of the worst-case instance.
    pub worst_case: String,
}

impl SuiteReport {
    fn new(name: &'static str, worst: f64, tolerance: f64, worst_case: String) -> Self {
        SuiteReport {
            name,
            passed: worst <= tolerance,
            worst,
            tolerance,
            worst_case,
        }
    }
}

/// General matrix logarithm from the eigenstructure: eigenvalues are taken
/// from the real Schur form, clustered, and the spectral projectors are
/// built by Lagrange interpolation on the matrix. Exact for diagonalizable
/// matrices with well-separated real positive eigenvalue clusters, which
/// covers every perturbed weight matrix.
pub fn eigen_matrix_log(m: &SquareMatrix) -> Result<SquareMatrix> {
    let n = m.dim();
    let dm = DMatrix::from_row_slice(n, n, m.as_slice());
    let eigen = dm.complex_eigenvalues();

    let mut values: Vec<f64> = Vec::with_capacity(n);
    for ev in eigen.iter() {
        if ev.im.abs() > 1e-9 {
            return Err(MoefError::numerical(format!(
                "eigen log oracle expects a real spectrum, found {ev}"
            )));
        }
        if ev.re <= 0.0 {
            return Err(MoefError::domain(format!(
                "principal logarithm undefined for eigenvalue {}",
                ev.re
            )));
        }
        values.push(ev.re);
    }

    // Cluster numerically equal eigenvalues.
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut clusters: Vec<f64> = Vec::new();
    for v in values {
        match clusters.last() {
            Some(last) if (v - last).abs() < 1e-6 * last.max(1.0) => {}
            _ => clusters.push(v),
        }
    }

    if clusters.len() == 1 {
        // Scalar matrix: log is log(lambda) I.
        return Ok(SquareMatrix::identity(n).scale(clusters[0].ln()));
    }

    // log(A) = sum_i log(lambda_i) * prod_{j != i} (A - lambda_j I) / (lambda_i - lambda_j)
    let mut result = SquareMatrix::zeros(n);
    for (i, li) in clusters.iter().enumerate() {
        let mut projector = SquareMatrix::identity(n);
        for (j, lj) in clusters.iter().enumerate() {
            if i == j {
                continue;
            }
            let shifted = m.add(&SquareMatrix::identity(n).scale(-lj));
            projector = projector.matmul(&shifted).scale(1.0 / (li - lj));
        }
        result = result.add(&projector.scale(li.ln()));
    }
    Ok(result)
}

/// Stationary distribution of an intensity matrix via the eigenvector of
/// `Q^T` for eigenvalue 0 (computed from an SVD null space).
pub fn stationary_distribution(q: &IntensityMatrix) -> Result<Vec<f64>> {
    let n = q.dim();
    let mut qt = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            qt[(j, i)] = q.matrix()[(i, j)];
        }
    }
    let svd = qt.svd(true, true);
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| MoefError::numerical("SVD failed to produce V^T"))?;
    // Null vector = right singular vector for the smallest singular value.
    let row = v_t.row(n - 1);
    let mut pi: Vec<f64> = row.iter().copied().collect();
    let sum: f64 = pi.iter().sum();
    if sum.abs() < 1e-12 {
        return Err(MoefError::numerical(
            "null vector has zero mass, cannot normalize",
        ));
    }
    for p in pi.iter_mut() {
        *p /= sum;
    }
    if pi.iter().any(|p| *p < -1e-9) {
        return Err(MoefError::numerical(
            "null vector is not a probability distribution",
        ));
    }
    Ok(pi.iter().map(|p| p.max(0.0)).collect())
}

fn random_simplex(rng: &mut ChaCha12Rng, n: usize, floor: f64) -> SimplexVector {
    loop {
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + floor).collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.into_iter().map(|x| x / sum).collect();
        if weights.iter().all(|w| *w >= 1e-3) {
            return SimplexVector::new(weights).expect("normalized weights are a simplex");
        }
    }
}

/// Round-trip and eigendecomposition agreement for the closed-form matrix
/// logarithm: `exp(log(P^alpha))` must reproduce `P^alpha` within 1e-8 and
/// the closed form must match the eigen oracle within 1e-10.
pub fn matrix_log_roundtrip_suite(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut worst_case = String::from("none");
    for trial in 0..trials {
        let n = rng.random_range(2..=10);
        let pi = random_simplex(&mut rng, n, 1e-3);
        let alphas = [0.5, 0.9, 1.0 - 1.0 / (n as f64 * n as f64)];
        let alpha = alphas[trial % alphas.len()];

        let log_p = matrix_log_perturbed(&pi, alpha)?;
        let p = build_perturbed_p(&pi, alpha)?;

        let roundtrip = {
            let reconstructed = expm(&log_p);
            let mut err: f64 = 0.0;
            for i in 0..n {
                let row_err: f64 = (0..n)
                    .map(|j| (reconstructed[(i, j)] - p.matrix()[(i, j)]).abs())
                    .sum();
                err = err.max(row_err);
            }
            err / 1e-8
        };

        let eigen_gap = {
            let reference = eigen_matrix_log(p.matrix())?;
            let mut err: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    err = err.max((reference[(i, j)] - log_p[(i, j)]).abs());
                }
            }
            err / 1e-10
        };

        let score = roundtrip.max(eigen_gap);
        if score > worst {
            worst = score;
            worst_case = format!(
                "n={n} alpha={alpha} pi={:?} roundtrip={:.3e} eigen_gap={:.3e}",
                pi.weights(),
                roundtrip * 1e-8,
                eigen_gap * 1e-10
            );
        }
    }
    // `worst` is normalized so 1.0 sits exactly on tolerance.
    Ok(SuiteReport::new(
        "matrix-log-roundtrip",
        worst,
        1.0,
        worst_case,
    ))
}

/// Exhaustive-grid optimality of the softmin weights: on a 0.001-step
/// simplex grid (N in {2,3}) the grid minimizer of the inner objective must
/// sit within one grid cell of the softmin output.
pub fn softmin_grid_suite(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let step = 0.001;
    let mut worst: f64 = 0.0;
    let mut worst_case = String::from("none");
    for trial in 0..trials {
        let n = 2 + trial % 2;
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 3.0).collect();
        let lambda = 0.5 + rng.random::<f64>() * 4.5;
        let softmin = softmin_weights(&scores, lambda)?;

        let grid_min = grid_minimizer(&scores, lambda, step)?;
        let coord_gap = softmin
            .weights()
            .iter()
            .zip(grid_min.weights())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // The softmin must also dominate the grid minimizer's objective.
        let dominance_gap = (inner_objective(&softmin, &scores, lambda)
            - inner_objective(&grid_min, &scores, lambda))
        .max(0.0);

        let score = (coord_gap / (2.0 * step)).max(dominance_gap / 1e-9);
        if score > worst {
            worst = score;
            worst_case = format!(
                "n={n} lambda={lambda:.4} scores={scores:?} coord_gap={coord_gap:.3e} dominance_gap={dominance_gap:.3e}"
            );
        }
    }
    Ok(SuiteReport::new("softmin-grid", worst, 1.0, worst_case))
}

/// Grid argmin of the inner objective over the probability simplex.
pub fn grid_minimizer(scores: &[f64], lambda: f64, step: f64) -> Result<SimplexVector> {
    let n = scores.len();
    let cells = (1.0 / step).round() as usize;
    let mut best_val = f64::INFINITY;
    let mut best = vec![0.0; n];
    match n {
        2 => {
            for i in 0..=cells {
                let w = [i as f64 * step, 1.0 - i as f64 * step];
                let pi = SimplexVector::new(w.to_vec())?;
                let v = inner_objective(&pi, scores, lambda);
                if v < best_val {
                    best_val = v;
                    best = w.to_vec();
                }
            }
        }
        3 => {
            for i in 0..=cells {
                let wi = i as f64 * step;
                for j in 0..=(cells - i) {
                    let wj = j as f64 * step;
                    let w = [wi, wj, 1.0 - wi - wj];
                    let pi = SimplexVector::new(w.to_vec())?;
                    let v = inner_objective(&pi, scores, lambda);
                    if v < best_val {
                        best_val = v;
                        best = w.to_vec();
                    }
                }
            }
        }
        _ => {
            return Err(MoefError::domain(
                "grid search implemented for 2 or 3 experts only",
            ))
        }
    }
    SimplexVector::new(best)
}

/// Measured KL divergences between the weights and every row of the
/// perturbed matrix must stay below the closed-form bound.
pub fn kl_bound_suite(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut worst_case = String::from("none");
    for _ in 0..trials {
        let n = rng.random_range(2..=8);
        let pi = random_simplex(&mut rng, n, 0.05);
        let alpha = rng.random::<f64>() * 0.98 + 0.01;
        let bound = kl_perturbation_bound(&pi, alpha)?;
        let p = build_perturbed_p(&pi, alpha)?;
        for i in 0..n {
            let row = SimplexVector::new(p.row(i).to_vec())?;
            let excess = kl_divergence(&pi, &row)? - bound;
            if excess > worst {
                worst = excess;
                worst_case = format!(
                    "n={n} alpha={alpha:.6} pi={:?} kl_excess={excess:.3e} bound={bound:.6}",
                    pi.weights()
                );
            }
        }
    }
    Ok(SuiteReport::new("kl-bound", worst, 1e-12, worst_case))
}

/// Monte-Carlo check of the accumulated-noise variance law on driftless
/// paths: variance `t` when the decay rate is zero, else
/// `c^2 (1 - e^(-2 alpha t)) / (2 alpha)`.
pub fn variance_mc_suite(paths: usize, seed: u64) -> Result<SuiteReport> {
    let mut worst: f64 = 0.0;
    let mut worst_case = String::from("none");

    let cases = [
        // (alpha_decay, c, dt, t_max)
        (0.0, 1.0, 0.1, 200usize),
        (0.5, 1.0, 0.02, 800usize),
    ];
    for (alpha, c, dt, t_max) in cases {
        let mut values = Vec::with_capacity(paths);
        for k in 0..paths {
            let scenario = Scenario {
                q_true: IntensityMatrix::zero(1),
                experts: vec![ExpertSpec::Constant { value: 0.0 }],
                noise: NoiseSpec {
                    alpha_decay: alpha,
                    c,
                },
                t_max: t_max + 1,
                dt,
                seed: seed.wrapping_add(k as u64),
                y0: 0.0,
            };
            let path = synthesize(&scenario)?;
            values.push(path.observations[t_max].y);
        }
        let mean: f64 = values.iter().sum::<f64>() / paths as f64;
        let var: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / paths as f64;
        let horizon = t_max as f64 * dt;
        let expected = if alpha == 0.0 {
            horizon
        } else {
            c * c * (1.0 - (-2.0 * alpha * horizon).exp()) / (2.0 * alpha)
        };
        let rel = (var - expected).abs() / expected;
        if rel > worst {
            worst = rel;
            worst_case = format!(
                "alpha={alpha} c={c} dt={dt} t={horizon}: var={var:.5} expected={expected:.5} rel={rel:.4}"
            );
        }
    }
    Ok(SuiteReport::new("variance-mc", worst, 0.05, worst_case))
}

/// Runs the four oracle suites with a shared trial count and seed.
pub fn run_all_suites(trials: usize, seed: u64) -> Result<Vec<SuiteReport>> {
    let mc_paths = (trials * 100).max(10_000);
    Ok(vec![
        matrix_log_roundtrip_suite(trials, seed)?,
        softmin_grid_suite(trials.min(50), seed.wrapping_add(1))?,
        kl_bound_suite(trials, seed.wrapping_add(2))?,
        variance_mc_suite(mc_paths, seed.wrapping_add(3))?,
    ])
}
