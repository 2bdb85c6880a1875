//! Exact propagation of linear rate systems dp/dt = G·p.
//!
//! The generator is shifted by its most negative diagonal before the
//! scaling-and-squaring Taylor series, so every factor in the product is
//! entrywise nonnegative when G is a true rate generator (nonnegative
//! off-diagonals). Populations then stay nonnegative by construction rather
//! than by cancellation.

use super::matrix::ComplexMatrix;
use crate::{Error, Result};

/// Validate a rate generator: real entries, finite, column sums ≤ 0.
pub fn check_generator(g: &ComplexMatrix) -> Result<()> {
    g.check_finite()?;
    let n = g.dim();
    let scale = g.max_abs().max(1.0);
    if !g.is_real(1e-12 * scale) {
        return Err(Error::InvalidParam(
            "rate generator must have real entries".into(),
        ));
    }
    for j in 0..n {
        let colsum: f64 = (0..n).map(|i| g[(i, j)].re).sum();
        if colsum > 1e-9 * scale {
            return Err(Error::InvalidParam(format!(
                "column {j} of the generator sums to {colsum:.3e} > 0"
            )));
        }
    }
    Ok(())
}

/// Matrix exponential exp(A) of a real matrix given as rows.
fn expm_real(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    // Shift so the series has nonnegative terms for rate generators.
    let min_offdiag = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| a[i][j])
        .fold(f64::INFINITY, f64::min);
    let alpha = if n > 1 && min_offdiag >= -1e-14 {
        (0..n).map(|i| -a[i][i]).fold(0.0f64, f64::max)
    } else {
        0.0
    };

    let mut b = a.to_vec();
    for (i, row) in b.iter_mut().enumerate() {
        row[i] += alpha;
    }

    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| b[i][j].abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let squarings = if norm1 > 0.5 {
        (norm1 / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let inv_scale = 0.5f64.powi(squarings as i32);
    for row in b.iter_mut() {
        for x in row.iter_mut() {
            *x *= inv_scale;
        }
    }

    // Taylor series; terms are nonnegative after the shift, norm ≤ 0.5.
    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..=30 {
        term = mat_mul(&term, &b);
        let inv_k = 1.0 / k as f64;
        for row in term.iter_mut() {
            for x in row.iter_mut() {
                *x *= inv_k;
            }
        }
        let mut tmax = 0.0f64;
        for (i, row) in term.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                result[i][j] += x;
                tmax = tmax.max(x.abs());
            }
        }
        if tmax < 1e-18 {
            break;
        }
    }
    // Undo the shift before squaring so each factor stays nonnegative.
    let decay = (-alpha * inv_scale).exp();
    for row in result.iter_mut() {
        for x in row.iter_mut() {
            *x *= decay;
        }
    }
    for _ in 0..squarings {
        result = mat_mul(&result, &result);
    }
    result
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

/// Propagator exp(G·t) of a rate generator, as a real matrix.
pub fn propagator(g: &ComplexMatrix, t_ns: f64) -> Result<Vec<Vec<f64>>> {
    check_generator(g)?;
    if !t_ns.is_finite() || t_ns < 0.0 {
        return Err(Error::InvalidParam(format!(
            "propagation time {t_ns} must be finite and nonnegative"
        )));
    }
    let n = g.dim();
    let mut gt = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            gt[i][j] = g[(i, j)].re * t_ns;
        }
    }
    Ok(expm_real(&gt))
}

/// Exact solution of dp/dt = G·p: returns exp(G·t)·p0.
pub fn propagate_linear(g: &ComplexMatrix, p0: &[f64], t_ns: f64) -> Result<Vec<f64>> {
    if p0.len() != g.dim() {
        return Err(Error::Dimension(format!(
            "state length {} does not match generator dimension {}",
            p0.len(),
            g.dim()
        )));
    }
    if p0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { i: 0, j: 0 });
    }
    let u = propagator(g, t_ns)?;
    Ok(apply(&u, p0))
}

/// Apply a real matrix (rows) to a real vector.
pub fn apply(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Solve the real linear system A·x = b by Gaussian elimination with
/// partial pivoting. A is given as rows and consumed.
pub fn solve_real(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        if pivot < 1e-14 {
            return Err(Error::Dimension(format!(
                "singular linear system at column {col}"
            )));
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for r in (col + 1)..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in (r + 1)..n {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    Ok(x)
}

/// Convenience: real matrix from a `ComplexMatrix` known to be real.
pub fn to_real_rows(m: &ComplexMatrix) -> Vec<Vec<f64>> {
    let n = m.dim();
    (0..n)
        .map(|i| (0..n).map(|j| m[(i, j)].re).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_generator_is_identity() {
        let g = ComplexMatrix::zeros(4);
        let p0 = [0.1, 0.2, 0.3, 0.4];
        let p = propagate_linear(&g, &p0, 123.0).unwrap();
        for (a, b) in p.iter().zip(p0.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn scalar_decay() {
        let k = 0.37;
        let mut g = ComplexMatrix::zeros(1);
        g[(0, 0)] = num_complex::Complex64::new(-k, 0.0);
        for &t in &[0.0, 1.0, 5.0, 42.0] {
            let p = propagate_linear(&g, &[1.0], t).unwrap();
            assert_abs_diff_eq!(p[0], (-k * t).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn conserving_generator_conserves_sum_and_sign() {
        // Simple 3-state cycle.
        let g = ComplexMatrix::from_real_rows(&[
            vec![-0.3, 0.0, 0.5],
            vec![0.3, -0.2, 0.0],
            vec![0.0, 0.2, -0.5],
        ]);
        let p0 = [1.0, 0.0, 0.0];
        for &t in &[0.1, 1.0, 10.0, 1e3, 1e4] {
            let p = propagate_linear(&g, &p0, t).unwrap();
            let sum: f64 = p.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-10);
            assert!(p.iter().all(|&x| x >= -1e-12), "negative population at t={t}: {p:?}");
        }
    }

    #[test]
    fn rejects_positive_column_sum() {
        let g = ComplexMatrix::from_real_rows(&[vec![0.1, 0.0], vec![0.0, -0.1]]);
        assert!(propagate_linear(&g, &[1.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let g = ComplexMatrix::from_real_rows(&[vec![f64::NAN, 0.0], vec![0.0, 0.0]]);
        assert!(propagate_linear(&g, &[1.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn solve_real_roundtrip() {
        let a = vec![
            vec![2.0, 1.0, 0.0],
            vec![1.0, 3.0, 1.0],
            vec![0.0, 1.0, 4.0],
        ];
        let x_true = [0.5, -1.0, 2.0];
        let b: Vec<f64> = a
            .iter()
            .map(|row| row.iter().zip(&x_true).map(|(m, x)| m * x).sum())
            .collect();
        let x = solve_real(a, b).unwrap();
        for (xi, ti) in x.iter().zip(&x_true) {
            assert_abs_diff_eq!(xi, ti, epsilon = 1e-12);
        }
    }
}
