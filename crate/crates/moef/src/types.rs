//! Shared numeric domain types and their validity checks.
//!
//! Everything else in the crate builds on these: probability vectors over
//! the expert set, row-stochastic and intensity matrices for the hidden
//! chain, per-tick observations, and the engine configuration.

use crate::error::{MoefError, Result};
use crate::linalg::SquareMatrix;
use serde::{Deserialize, Serialize};

/// Tolerance for simplex and row-stochastic sum checks.
pub const SUM_TOL: f64 = 1e-9;
/// Tolerance for intensity-matrix row sums.
pub const INTENSITY_ROW_TOL: f64 = 1e-10;
/// Tolerance below zero allowed for intensity off-diagonals.
pub const INTENSITY_OFFDIAG_TOL: f64 = -1e-12;

/// A probability distribution over the N experts: a filter posterior or the
/// aggregation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector(Vec<f64>);

impl Serialize for SimplexVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SimplexVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let weights = Vec::<f64>::deserialize(d)?;
        SimplexVector::new(weights).map_err(serde::de::Error::custom)
    }
}

impl SimplexVector {
    /// Validates nonnegativity and unit sum (within `SUM_TOL`).
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(MoefError::domain("simplex vector must be nonempty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(MoefError::domain(
                "simplex entries must be finite and nonnegative",
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(MoefError::domain(format!(
                "simplex entries sum to {sum}, expected 1 within {SUM_TOL:e}"
            )));
        }
        Ok(SimplexVector(weights))
    }

    pub fn uniform(n: usize) -> Self {
        SimplexVector(vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn min_entry(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Checks the invariants without constructing.
    pub fn is_valid(weights: &[f64]) -> bool {
        !weights.is_empty()
            && weights.iter().all(|w| w.is_finite() && *w >= 0.0)
            && (weights.iter().sum::<f64>() - 1.0).abs() <= SUM_TOL
    }
}

impl std::ops::Index<usize> for SimplexVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Nonnegative square matrix with unit row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct RowStochasticMatrix(SquareMatrix);

impl RowStochasticMatrix {
    pub fn new(m: SquareMatrix) -> Result<Self> {
        let n = m.dim();
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let v = m[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(MoefError::domain(format!(
                        "row-stochastic entry ({i},{j}) = {v} is negative or non-finite"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > SUM_TOL {
                return Err(MoefError::domain(format!(
                    "row {i} sums to {sum}, expected 1 within {SUM_TOL:e}"
                )));
            }
        }
        Ok(RowStochasticMatrix(m))
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }
}

/// Q-matrix of the hidden chain: nonnegative off-diagonals, zero row sums.
/// `exp(Q*t)` is the chain's transition matrix over horizon `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMatrix(SquareMatrix);

impl Serialize for IntensityMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = (0..self.0.dim()).map(|i| self.0.row(i)).collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for IntensityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        if rows.iter().any(|r| r.len() != rows.len()) {
            return Err(serde::de::Error::custom(
                "intensity matrix must be square (N rows of N entries)",
            ));
        }
        IntensityMatrix::new(SquareMatrix::from_nested(&rows)).map_err(serde::de::Error::custom)
    }
}

impl IntensityMatrix {
    pub fn new(m: SquareMatrix) -> Result<Self> {
        if !validate_intensity(&m) {
            return Err(MoefError::domain(
                "not a valid intensity matrix: off-diagonals must be >= 0 and rows must sum to 0",
            ));
        }
        Ok(IntensityMatrix(m))
    }

    /// Wraps without validation. Used only for the paper-literal column-sum
    /// diagonal variant, which does not produce a valid intensity matrix in
    /// general.
    pub fn new_unchecked(m: SquareMatrix) -> Self {
        IntensityMatrix(m)
    }

    pub fn zero(n: usize) -> Self {
        IntensityMatrix(SquareMatrix::zeros(n))
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn is_valid(&self) -> bool {
        validate_intensity(&self.0)
    }
}

/// True iff `q` has off-diagonals at least `-1e-12` and absolute row sums at
/// most `1e-10`.
pub fn validate_intensity(q: &SquareMatrix) -> bool {
    let n = q.dim();
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..n {
            let v = q[(i, j)];
            if !v.is_finite() {
                return false;
            }
            if i != j && v < INTENSITY_OFFDIAG_TOL {
                return false;
            }
            sum += v;
        }
        if sum.abs() > INTENSITY_ROW_TOL {
            return false;
        }
    }
    true
}

/// Floors entries at `eps_pi` and renormalizes to unit sum.
///
/// The Euler-Maruyama update can drive posterior entries negative; flooring
/// before renormalization keeps the state strictly interior so later log and
/// ratio terms stay finite. Idempotent on vectors already on the simplex.
pub fn project_to_simplex(v: &[f64], eps_pi: f64) -> Result<SimplexVector> {
    if v.is_empty() {
        return Err(MoefError::domain("cannot project an empty vector"));
    }
    if v.iter().all(|x| !x.is_finite()) {
        return Err(MoefError::numerical(
            "all entries non-finite in simplex projection",
        ));
    }
    let clamped: Vec<f64> = v.iter().map(|x| x.max(eps_pi)).collect();
    let sum: f64 = clamped.iter().sum();
    if !sum.is_finite() || sum <= 0.0 {
        return Err(MoefError::numerical(format!(
            "simplex projection sum {sum} is not a positive finite value"
        )));
    }
    Ok(SimplexVector(clamped.iter().map(|x| x / sum).collect()))
}

/// One tick of input: time index, realized target, and the N expert
/// predictions. In BCE mode predictions are probabilities and are clamped
/// to `[eps_f, 1-eps_f]` on ingestion by the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub t: i64,
    pub y: f64,
    pub predictions: Vec<f64>,
}

impl ObservationRecord {
    pub fn new(t: i64, y: f64, predictions: Vec<f64>) -> Self {
        ObservationRecord { t, y, predictions }
    }

    pub fn n_experts(&self) -> usize {
        self.predictions.len()
    }
}

/// Loss driving both the filters and the expert scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Negative log-likelihood form of binary cross entropy (nonnegative, so
    /// lower loss means better score under the softmin convention).
    Bce,
    Mse,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Bce => write!(f, "bce"),
            LossKind::Mse => write!(f, "mse"),
        }
    }
}

/// Which diagonal convention the Q projection uses.
///
/// `Row` subtracts row sums of the rectified log so the result is a valid
/// intensity matrix. `Column` reproduces the literal column-sum diagonal for
/// side-by-side study; its output does not have zero row sums in general.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QDiagMode {
    #[default]
    Row,
    Column,
}

/// Engine configuration: loss kind, Gibbs temperature, perturbation weight,
/// noise-decay hyperparameter, numerical clamps, and step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub loss: LossKind,
    /// Gibbs temperature, > 0.
    pub lambda: f64,
    /// Perturbation weight in (0,1) for `P^alpha = (1-alpha) P + alpha I`.
    pub alpha: f64,
    /// Noise-decay hyperparameter in (0,1]; 1 recovers the unit-variance case.
    pub delta: f64,
    /// Prediction clamp for BCE mode.
    pub eps_f: f64,
    /// Denominator floor for the innovation term.
    pub eps_b: f64,
    /// Simplex floor applied before renormalization.
    pub eps_pi: f64,
    /// Step size multiplying the drift term.
    pub dt: f64,
    pub q_diag: QDiagMode,
    /// Run per-expert filter updates on a thread pool; output is identical
    /// either way.
    pub parallel: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            loss: LossKind::Mse,
            lambda: 1.0,
            alpha: 0.9,
            delta: 1.0,
            eps_f: 1e-6,
            eps_b: 1e-8,
            eps_pi: 1e-12,
            dt: 1.0,
            q_diag: QDiagMode::Row,
            parallel: true,
        }
    }
}

impl FusionConfig {
    /// Checks the documented parameter ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(MoefError::domain(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(MoefError::domain(format!(
                "alpha must lie in the open interval (0,1), got {}",
                self.alpha
            )));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(MoefError::domain(format!(
                "delta must lie in (0,1], got {}",
                self.delta
            )));
        }
        for (name, v) in [
            ("eps_f", self.eps_f),
            ("eps_b", self.eps_b),
            ("eps_pi", self.eps_pi),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MoefError::domain(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        if self.eps_f >= 0.5 {
            return Err(MoefError::domain(format!(
                "eps_f must be below 0.5 so the clamp interval is nonempty, got {}",
                self.eps_f
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(MoefError::domain(format!(
                "dt must be strictly positive, got {}",
                self.dt
            )));
        }
        Ok(())
    }
}
