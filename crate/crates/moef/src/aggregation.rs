//! Robust aggregation: Gibbs/softmin weights over expert scores, the fused
//! prediction, and the intensity-matrix re-estimate.
//!
//! The weights solve an entropy-regularized minimization (expected score
//! plus KL-to-uniform at temperature `1/lambda`), so the softmin formula is
//! the exact unique minimizer. The weights are packaged into the rank-one
//! row-stochastic matrix `P`, perturbed to `P^alpha = (1-alpha) P + alpha I`
//! so a principal matrix logarithm exists, and the rectified logarithm is
//! projected onto valid intensity matrices.
//!
//! Because `P` is the outer product of the all-ones vector with the weight
//! row, `1 pi^T` is idempotent and the perturbed matrix is a function of a
//! rank-one projector: `log(P^alpha) = log(alpha) (I - 1 pi^T)` exactly.
//! The closed form is O(N^2); the general eigendecomposition route exists
//! only inside the verification oracles.

use crate::error::{MoefError, Result};
use crate::linalg::SquareMatrix;
use crate::types::{IntensityMatrix, QDiagMode, RowStochasticMatrix, SimplexVector};

/// Everything step 2 produces for one tick.
#[derive(Debug, Clone)]
pub struct AggregationResult {
    /// Softmin weights over the expert scores.
    pub pi_bar: SimplexVector,
    /// Fused prediction: weights applied to the per-expert estimates.
    pub fused: f64,
    pub p_alpha: RowStochasticMatrix,
    /// Q installed for the next tick (row-sum diagonal, always valid).
    pub q_next: IntensityMatrix,
    pub scores: Vec<f64>,
}

/// Gibbs/softmin weights `e^(-lambda s_n) / sum_i e^(-lambda s_i)`.
///
/// The smallest exponent is subtracted before exponentiation so large score
/// scales cannot overflow. Equal scores produce equal weights.
pub fn softmin_weights(scores: &[f64], lambda: f64) -> Result<SimplexVector> {
    if scores.is_empty() {
        return Err(MoefError::domain("softmin requires at least one score"));
    }
    if !(lambda > 0.0) {
        return Err(MoefError::domain(format!(
            "softmin temperature lambda must be > 0, got {lambda}"
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MoefError::numerical("softmin received non-finite scores"));
    }
    let min = scores
        .iter()
        .map(|s| lambda * s)
        .fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = scores.iter().map(|s| (-(lambda * s - min)).exp()).collect();
    let sum: f64 = weights.iter().sum();
    Ok(SimplexVector::new(
        weights.into_iter().map(|w| w / sum).collect(),
    )?)
}

/// Objective the softmin weights minimize: expected score plus
/// `1/lambda` times the KL divergence to the uniform distribution.
/// Kept as the optimality oracle for `softmin_weights`.
pub fn inner_objective(pi: &SimplexVector, scores: &[f64], lambda: f64) -> f64 {
    let mut expected = 0.0;
    let mut kl = 0.0;
    let n = pi.len() as f64;
    for (w, s) in pi.weights().iter().zip(scores) {
        expected += w * s;
        if *w > 0.0 {
            kl += w * (w * n).ln();
        }
    }
    expected + kl / lambda
}

/// Fused prediction: dot product of the weights with the estimates.
pub fn fuse(pi_bar: &SimplexVector, estimates: &[f64]) -> f64 {
    debug_assert_eq!(pi_bar.len(), estimates.len());
    pi_bar
        .weights()
        .iter()
        .zip(estimates)
        .map(|(w, e)| w * e)
        .sum()
}

/// `P^alpha` with rows `(1-alpha) pi_bar + alpha e_i`; invertible and row
/// stochastic for any `alpha` in (0,1), with eigenvalues {1, alpha}.
pub fn build_perturbed_p(pi_bar: &SimplexVector, alpha: f64) -> Result<RowStochasticMatrix> {
    check_alpha(alpha)?;
    let n = pi_bar.len();
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = (1.0 - alpha) * pi_bar[j] + if i == j { alpha } else { 0.0 };
        }
    }
    RowStochasticMatrix::new(m)
}

/// Principal logarithm of `P^alpha` in closed form:
/// `log(alpha) * (I - 1 pi_bar^T)`. Rows sum to zero exactly.
pub fn matrix_log_perturbed(pi_bar: &SimplexVector, alpha: f64) -> Result<SquareMatrix> {
    check_alpha(alpha)?;
    let n = pi_bar.len();
    let log_alpha = alpha.ln();
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let proj = if i == j { 1.0 - pi_bar[j] } else { -pi_bar[j] };
            m[(i, j)] = log_alpha * proj;
        }
    }
    Ok(m)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MoefError::domain(format!(
            "alpha must lie in the open interval (0,1), got {alpha}"
        )));
    }
    Ok(())
}

/// Nearest valid intensity matrix to a matrix logarithm: rectify the
/// off-diagonals, zero the diagonal, then set each diagonal entry to minus
/// its row sum so rows sum to zero.
pub fn q_projection(log_p: &SquareMatrix) -> Result<IntensityMatrix> {
    if !log_p.is_finite() {
        return Err(MoefError::numerical("q projection requires a finite input"));
    }
    let n = log_p.dim();
    let mut q = SquareMatrix::zeros(n);
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            if i != j {
                let v = log_p[(i, j)].max(0.0);
                q[(i, j)] = v;
                row_sum += v;
            }
        }
        q[(i, i)] = -row_sum;
    }
    IntensityMatrix::new(q)
}

/// Paper-literal variant: diagonal from column sums of the rectified log.
/// The result does not have zero row sums in general, so it is returned
/// unchecked; selected by [`QDiagMode::Column`] for comparison runs.
pub fn q_projection_column_literal(log_p: &SquareMatrix) -> Result<IntensityMatrix> {
    if !log_p.is_finite() {
        return Err(MoefError::numerical("q projection requires a finite input"));
    }
    let n = log_p.dim();
    let mut relu = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                relu[(i, j)] = log_p[(i, j)].max(0.0);
            }
        }
    }
    let mut q = relu.clone();
    for j in 0..n {
        let col_sum: f64 = (0..n).map(|i| relu[(i, j)]).sum();
        q[(j, j)] = relu[(j, j)] - col_sum;
    }
    Ok(IntensityMatrix::new_unchecked(q))
}

/// Operator infinity-norm distance between two square matrices.
pub fn infnorm_distance(a: &SquareMatrix, b: &SquareMatrix) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let n = a.dim();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let row_sum: f64 = (0..n).map(|j| (a[(i, j)] - b[(i, j)]).abs()).sum();
        worst = worst.max(row_sum);
    }
    worst
}

/// KL divergence between two distributions on the expert set, with the
/// convention `0 log(0/q) = 0`.
pub fn kl_divergence(p: &SimplexVector, q: &SimplexVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(MoefError::sequence(
            "KL divergence requires equal-length distributions",
        ));
    }
    let mut acc = 0.0;
    for (pi, qi) in p.weights().iter().zip(q.weights()) {
        if *pi == 0.0 {
            continue;
        }
        if *qi <= 0.0 {
            return Err(MoefError::domain(
                "KL divergence undefined: q has a zero where p has mass",
            ));
        }
        acc += pi * (pi / qi).ln();
    }
    Ok(acc)
}

/// Upper bound on `max_i KL(pi_bar || row i of P^alpha)` via the reverse
/// Pinsker inequality:
/// `2 alpha (-log(p_min)/(1 - p_min) - log((1-alpha) p_min)/(1 - (1-alpha) p_min))`.
///
/// The reverse-Pinsker constant is `-log(x)/(1 - x)`; dominance over the
/// measured divergences holds for every weight vector with positive mass
/// everywhere and every `alpha` in [0,1), and the bound is monotone
/// nondecreasing in `alpha`.
pub fn kl_perturbation_bound(pi_bar: &SimplexVector, alpha: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(MoefError::domain(format!(
            "alpha must lie in [0,1), got {alpha}"
        )));
    }
    let p_min = pi_bar.min_entry();
    if p_min <= 0.0 {
        return Err(MoefError::domain(
            "perturbation bound requires a strictly positive minimum weight",
        ));
    }
    // A single expert has p_min = 1 and an exactly zero divergence.
    if p_min >= 1.0 {
        return Ok(0.0);
    }
    let term = |x: f64| -> f64 { -x.ln() / (1.0 - x) };
    Ok(2.0 * alpha * (term(p_min) + term((1.0 - alpha) * p_min)))
}

/// Lower bound on the smallest eigenvalue of `P^alpha` from its first two
/// trace moments: `m - s sqrt(N-1)` with `m = tr/N`, `s^2 = tr(P^2)/N - m^2`.
/// Positive whenever `alpha >= 1 - 1/N^2`.
pub fn min_eigenvalue_certificate(pi_bar: &SimplexVector, alpha: f64) -> Result<f64> {
    let p = build_perturbed_p(pi_bar, alpha)?;
    let n = p.dim() as f64;
    let m = p.matrix().trace() / n;
    let sq = p.matrix().matmul(p.matrix());
    let s2 = (sq.trace() / n - m * m).max(0.0);
    Ok(m - s2.sqrt() * (n - 1.0).sqrt())
}

/// One tick's aggregation output plus the matrix the engine should install.
#[derive(Debug, Clone)]
pub struct AggregationStep {
    pub result: AggregationResult,
    /// Equals `result.q_next` in row mode; in column mode this is the
    /// paper-literal column-sum variant instead.
    pub install: IntensityMatrix,
}

/// Runs the full aggregation step for one tick.
pub fn aggregate(
    scores: &[f64],
    estimates: &[f64],
    lambda: f64,
    alpha: f64,
    q_diag: QDiagMode,
) -> Result<AggregationStep> {
    let pi_bar = softmin_weights(scores, lambda)?;
    let fused = fuse(&pi_bar, estimates);
    let p_alpha = build_perturbed_p(&pi_bar, alpha)?;
    let log_p = matrix_log_perturbed(&pi_bar, alpha)?;
    let q_next = q_projection(&log_p)?;
    let install = match q_diag {
        QDiagMode::Row => q_next.clone(),
        QDiagMode::Column => q_projection_column_literal(&log_p)?,
    };
    Ok(AggregationStep {
        result: AggregationResult {
            pi_bar,
            fused,
            p_alpha,
            q_next,
            scores: scores.to_vec(),
        },
        install,
    })
}
