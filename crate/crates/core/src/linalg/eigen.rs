//! Hermitian eigensystems via cyclic Jacobi on the embedded real-symmetric form.
//!
//! An n×n Hermitian H = A + iB embeds into the 2n×2n real symmetric
//! [[A, −B], [B, A]], whose spectrum is that of H with every eigenvalue
//! doubled. Complex eigenvectors are recovered from the real ones; the real
//! plane spanned by (x, y) and (−y, x) maps to the complex line through
//! v = x + iy, so Gram-Schmidt over those planes is exactly Gram-Schmidt
//! over ℂ.

use num_complex::Complex64;

use super::matrix::{inner, norm, ComplexMatrix};
use crate::{Error, Result};

/// Sorted eigenvalues with matched orthonormal eigenvectors.
///
/// `vectors` holds the eigenvectors as columns, column k pairing with
/// `values[k]`. The phase convention fixes the largest-magnitude component of
/// each vector to be real and positive, so identical inputs give identical
/// output bytes.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl EigenSystem {
    /// Eigenvector for `values[k]`.
    pub fn vector(&self, k: usize) -> Vec<Complex64> {
        self.vectors.column(k)
    }
}

/// Cyclic Jacobi diagonalization of a real symmetric matrix.
///
/// Returns unsorted eigenvalues and the accumulated rotation matrix (columns
/// are eigenvectors). Tolerance is absolute against the input scale.
pub fn jacobi_real_symmetric(a: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let scale = m
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |s, &x| s.max(x.abs()))
        .max(1e-300);
    let tol = 1e-15 * scale;

    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    const MAX_SWEEPS: usize = 60;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[p][q].abs());
            }
        }
        if off <= tol {
            let values = (0..n).map(|i| m[i][i]).collect();
            return Ok((values, v));
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = m[p][q];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let theta = 0.5 * (m[q][q] - m[p][p]) / apq;
                let t = if theta.abs() > 1e12 {
                    0.5 / theta
                } else {
                    let s = if theta >= 0.0 { 1.0 } else { -1.0 };
                    s / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                let h = t * apq;
                m[p][p] -= h;
                m[q][q] += h;
                m[p][q] = 0.0;
                m[q][p] = 0.0;
                for j in 0..n {
                    if j != p && j != q {
                        let g = m[j][p];
                        let hh = m[j][q];
                        m[j][p] = g - s * (hh + g * tau);
                        m[j][q] = hh + s * (g - hh * tau);
                        m[p][j] = m[j][p];
                        m[q][j] = m[j][q];
                    }
                }
                for row in v.iter_mut() {
                    let g = row[p];
                    let hh = row[q];
                    row[p] = g - s * (hh + g * tau);
                    row[q] = hh + s * (g - hh * tau);
                }
            }
        }
    }
    Err(Error::NoConvergence {
        what: "Jacobi rotation".into(),
        detail: format!("off-diagonal not reduced below {tol:.2e} in {MAX_SWEEPS} sweeps"),
    })
}

/// Eigenvalues and eigenvectors of a real symmetric matrix, sorted ascending.
pub fn real_symmetric_eigensystem(a: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (values, v) = jacobi_real_symmetric(a)?;
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let sorted_values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let mut cols = Vec::with_capacity(n);
    for &k in &order {
        cols.push((0..n).map(|i| v[i][k]).collect::<Vec<f64>>());
    }
    Ok((sorted_values, cols))
}

/// Eigensystem of a Hermitian matrix.
///
/// Input must be Hermitian within `1e-12 · max(1, |H|)`; violations are
/// rejected with the offending entry pair. Eigenvalues are sorted ascending
/// and eigenvectors are orthonormal with the fixed phase convention.
pub fn hermitian_eigensystem(h: &ComplexMatrix) -> Result<EigenSystem> {
    h.check_finite()?;
    let scale = h.max_abs().max(1.0);
    let (i, j, defect) = h.hermiticity_defect();
    if defect > 1e-12 * scale {
        return Err(Error::NotHermitian { i, j, delta: defect });
    }

    let n = h.dim();

    // Real symmetric inputs skip the embedding; the convention is unchanged.
    if h.is_real(1e-14 * scale) {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| 0.5 * (h[(i, j)].re + h[(j, i)].re)).collect())
            .collect();
        let (values, cols) = real_symmetric_eigensystem(&rows)?;
        let mut mat = ComplexMatrix::zeros(n);
        for (k, col) in cols.iter().enumerate() {
            // Phase convention: largest-magnitude component positive.
            let mut idx = 0;
            let mut mag = 0.0;
            for (i, &x) in col.iter().enumerate() {
                if x.abs() > mag + 1e-12 {
                    mag = x.abs();
                    idx = i;
                }
            }
            let sign = if col[idx] < 0.0 { -1.0 } else { 1.0 };
            for (i, &x) in col.iter().enumerate() {
                mat[(i, k)] = Complex64::new(sign * x, 0.0);
            }
        }
        return Ok(EigenSystem {
            values,
            vectors: mat,
        });
    }

    // Embed H = A + iB into [[A, -B], [B, A]].
    let mut big = vec![vec![0.0; 2 * n]; 2 * n];
    for r in 0..n {
        for c in 0..n {
            // Symmetrize first so the embedding is exactly symmetric.
            let z = 0.5 * (h[(r, c)] + h[(c, r)].conj());
            big[r][c] = z.re;
            big[r + n][c + n] = z.re;
            big[r][c + n] = -z.im;
            big[r + n][c] = z.im;
        }
    }

    let (values2n, cols2n) = real_symmetric_eigensystem(&big)?;

    // Group the doubled spectrum into clusters of numerically equal values.
    let cluster_tol = 1e-8 * scale;
    let mut clusters: Vec<(usize, usize)> = Vec::new(); // [start, end)
    let mut start = 0;
    for k in 1..=2 * n {
        if k == 2 * n || values2n[k] - values2n[k - 1] > cluster_tol {
            clusters.push((start, k));
            start = k;
        }
    }

    let to_complex = |u: &[f64]| -> Vec<Complex64> {
        (0..n).map(|i| Complex64::new(u[i], u[i + n])).collect()
    };

    let mut values = Vec::with_capacity(n);
    let mut vectors: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    for &(lo, hi) in &clusters {
        let count = hi - lo;
        debug_assert!(count % 2 == 0, "embedded eigenvalues must pair up");
        let want = count / 2;
        let candidates: Vec<Vec<Complex64>> =
            (lo..hi).map(|k| to_complex(&cols2n[k])).collect();
        let mut accepted: Vec<Vec<Complex64>> = Vec::with_capacity(want);
        let mut used = vec![false; count];
        while accepted.len() < want {
            // Pick the candidate with the largest residual after projecting
            // out accepted directions; guaranteed ≥ 1/√n before threshold.
            let mut best: Option<(usize, Vec<Complex64>, f64)> = None;
            for (ci, cand) in candidates.iter().enumerate() {
                if used[ci] {
                    continue;
                }
                let mut w = cand.clone();
                for acc in &accepted {
                    let ov = inner(acc, &w);
                    for (wi, ai) in w.iter_mut().zip(acc) {
                        *wi -= ov * ai;
                    }
                }
                let r = norm(&w);
                if best.as_ref().map_or(true, |b| r > b.2) {
                    best = Some((ci, w, r));
                }
            }
            let (ci, w, r) = best.expect("candidate pool exhausted");
            used[ci] = true;
            if r < 0.1 {
                // Same complex line as an accepted vector; try the next one.
                continue;
            }
            let inv = 1.0 / r;
            accepted.push(w.iter().map(|z| z * inv).collect());
        }
        // Eigenvalues within a cluster agree to cluster_tol; emit the exact
        // per-pair means of the doubled spectrum so sums match the trace.
        for k in 0..want {
            values.push(0.5 * (values2n[lo + 2 * k] + values2n[lo + 2 * k + 1]));
        }
        vectors.extend(accepted);
    }

    // Phase convention: largest-magnitude component real and positive,
    // ties broken by the lowest index.
    for v in vectors.iter_mut() {
        let mut k_best = 0;
        let mut mag_best = 0.0;
        for (k, z) in v.iter().enumerate() {
            let m = z.norm();
            if m > mag_best + 1e-12 {
                mag_best = m;
                k_best = k;
            }
        }
        let z = v[k_best];
        if z.norm() > 0.0 {
            let phase = z.conj() / z.norm();
            for e in v.iter_mut() {
                *e *= phase;
            }
        }
    }

    let mut mat = ComplexMatrix::zeros(n);
    for (k, v) in vectors.iter().enumerate() {
        for (i, &z) in v.iter().enumerate() {
            mat[(i, k)] = z;
        }
    }
    Ok(EigenSystem {
        values,
        vectors: mat,
    })
}

/// Unitary time evolution `exp(-i 2π H t)` for Hermitian `H` in GHz, `t` in ns.
pub fn unitary_evolution(eig: &EigenSystem, t_ns: f64) -> ComplexMatrix {
    let n = eig.values.len();
    let v = &eig.vectors;
    let mut out = ComplexMatrix::zeros(n);
    // V · diag(exp(-i 2π λ t)) · V†
    let phases: Vec<Complex64> = eig
        .values
        .iter()
        .map(|&lam| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * lam * t_ns))
        .collect();
    for i in 0..n {
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                acc += v[(i, k)] * phases[k] * v[(j, k)].conj();
            }
            out[(i, j)] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn diagonal_case_sorted() {
        let h = ComplexMatrix::from_real_rows(&[
            vec![3.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 2.0],
        ]);
        let eig = hermitian_eigensystem(&h).unwrap();
        assert_abs_diff_eq!(eig.values[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.values[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.values[2], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_off_diagonal_pair() {
        let delta = 0.37;
        let h = ComplexMatrix::from_real_rows(&[vec![0.0, delta], vec![delta, 0.0]]);
        let eig = hermitian_eigensystem(&h).unwrap();
        assert_abs_diff_eq!(eig.values[0], -delta, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.values[1], delta, epsilon = 1e-14);
    }

    #[test]
    fn rejects_non_hermitian_with_indices() {
        let h = ComplexMatrix::from_rows(&[
            vec![c(0.0, 0.0), c(1.0, 0.0)],
            vec![c(0.5, 0.0), c(0.0, 0.0)],
        ]);
        match hermitian_eigensystem(&h) {
            Err(Error::NotHermitian { i, j, .. }) => assert_eq!((i, j), (0, 1)),
            other => panic!("expected NotHermitian, got {other:?}"),
        }
    }

    #[test]
    fn complex_2x2_known_solution() {
        // Pauli-y scaled: eigenvalues ±1.
        let h = ComplexMatrix::from_rows(&[
            vec![c(0.0, 0.0), c(0.0, -1.0)],
            vec![c(0.0, 1.0), c(0.0, 0.0)],
        ]);
        let eig = hermitian_eigensystem(&h).unwrap();
        assert_abs_diff_eq!(eig.values[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.values[1], 1.0, epsilon = 1e-14);
        for k in 0..2 {
            let v = eig.vector(k);
            let hv = h.matvec(&v);
            for i in 0..2 {
                assert_abs_diff_eq!(hv[i].re, eig.values[k] * v[i].re, epsilon = 1e-12);
                assert_abs_diff_eq!(hv[i].im, eig.values[k] * v[i].im, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_phase_convention() {
        let h = ComplexMatrix::from_rows(&[
            vec![c(1.0, 0.0), c(0.3, 0.4), c(0.0, -0.2)],
            vec![c(0.3, -0.4), c(-0.5, 0.0), c(0.1, 0.0)],
            vec![c(0.0, 0.2), c(0.1, 0.0), c(2.0, 0.0)],
        ]);
        let a = hermitian_eigensystem(&h).unwrap();
        let b = hermitian_eigensystem(&h).unwrap();
        assert_eq!(a.vectors, b.vectors);
        for k in 0..3 {
            let v = a.vector(k);
            let (mut idx, mut mag) = (0, 0.0);
            for (i, z) in v.iter().enumerate() {
                if z.norm() > mag + 1e-12 {
                    mag = z.norm();
                    idx = i;
                }
            }
            assert!(v[idx].im.abs() < 1e-12 && v[idx].re > 0.0);
        }
    }

    #[test]
    fn degenerate_eigenvalues_give_orthonormal_vectors() {
        // 4x4 with a doubly degenerate eigenvalue and complex couplings.
        let h = ComplexMatrix::from_rows(&[
            vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.5), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.5, 0.0)],
            vec![c(0.0, -0.5), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(0.5, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
        ]);
        let eig = hermitian_eigensystem(&h).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let ip = inner(&eig.vector(a), &eig.vector(b));
                let expect = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(ip.re, expect, epsilon = 1e-10);
                assert_abs_diff_eq!(ip.im, 0.0, epsilon = 1e-10);
            }
        }
    }
}
