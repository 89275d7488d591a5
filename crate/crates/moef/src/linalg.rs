//! Small dense row-major matrix with the handful of operations the engine needs.
//!
//! The matrices involved are tiny (N experts, typically single digits), so a
//! flat `Vec<f64>` with explicit loops beats pulling a full linear-algebra
//! stack into the core. The matrix exponential uses scaling-and-squaring of
//! the truncated Taylor series.

/// Dense square matrix, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds from a row-major slice; panics if the length is not `n*n`.
    pub fn from_rows(n: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), n * n, "row-major data must have n*n entries");
        SquareMatrix {
            n,
            data: data.to_vec(),
        }
    }

    pub fn from_nested(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            assert_eq!(row.len(), n, "matrix must be square");
            data.extend_from_slice(row);
        }
        SquareMatrix { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn matmul(&self, other: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// Computes `self^T * v`, the transpose-vector product used by the
    /// filter drift term.
    pub fn transpose_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        let n = self.n;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let vi = v[i];
            for j in 0..n {
                out[j] += self[(i, j)] * vi;
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> SquareMatrix {
        SquareMatrix {
            n: self.n,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.n, other.n);
        SquareMatrix {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    /// Operator infinity norm: maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// Matrix exponential by scaling-and-squaring of the truncated Taylor series.
///
/// The argument is scaled by `2^-s` until its infinity norm is at most 0.5,
/// the series is summed until terms vanish at f64 precision, and the result
/// is squared back `s` times.
pub fn expm(a: &SquareMatrix) -> SquareMatrix {
    let n = a.dim();
    let norm = a.inf_norm();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.scale(0.5f64.powi(squarings as i32));

    let mut result = SquareMatrix::identity(n);
    let mut term = SquareMatrix::identity(n);
    for k in 1..=30 {
        term = term.matmul(&scaled).scale(1.0 / k as f64);
        result = result.add(&term);
        if term.inf_norm() < 1e-18 * result.inf_norm().max(1.0) {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.matmul(&result);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn expm_of_zero_is_identity() {
        let z = SquareMatrix::zeros(3);
        assert_eq!(expm(&z), SquareMatrix::identity(3));
    }

    #[test]
    fn expm_diagonal() {
        let mut d = SquareMatrix::zeros(2);
        d[(0, 0)] = 1.0;
        d[(1, 1)] = -2.0;
        let e = expm(&d);
        assert_relative_eq!(e[(0, 0)], 1f64.exp(), max_relative = 1e-14);
        assert_relative_eq!(e[(1, 1)], (-2f64).exp(), max_relative = 1e-14);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn transpose_mul_vec_matches_manual() {
        let m = SquareMatrix::from_nested(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let v = m.transpose_mul_vec(&[1.0, 1.0]);
        assert_eq!(v, vec![4.0, 6.0]);
    }

    #[test]
    fn inf_norm_is_max_abs_row_sum() {
        let m = SquareMatrix::from_nested(&[vec![0.0, 2.0], vec![-1.0, 0.0]]);
        assert_eq!(m.inf_norm(), 2.0);
    }
}
