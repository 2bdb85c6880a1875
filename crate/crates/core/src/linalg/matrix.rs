//! Dense complex matrices for Hamiltonians and rate generators.
//!
//! Everything in this crate lives in dimension ≤ 16 (spin-1 ⊗ nucleus, the
//! six-level ³E manifold, the five-level optical cycle), so a plain row-major
//! `Vec<Complex64>` beats any external linear-algebra dependency.

use num_complex::Complex64;

use crate::{Error, Result};

/// Maximum supported matrix dimension.
pub const MAX_DIM: usize = 16;

/// A dense square complex matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    entries: Vec<Complex64>,
}

impl ComplexMatrix {
    /// Zero matrix of the given dimension (must be 1..=16).
    pub fn zeros(dim: usize) -> Self {
        assert!(
            dim >= 1 && dim <= MAX_DIM,
            "matrix dimension {dim} outside 1..={MAX_DIM}"
        );
        Self {
            dim,
            entries: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    /// Identity matrix.
    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Build from rows of real entries.
    pub fn from_real_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.len();
        let mut m = Self::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), dim, "row {i} has wrong length");
            for (j, &x) in row.iter().enumerate() {
                m[(i, j)] = Complex64::new(x, 0.0);
            }
        }
        m
    }

    /// Build from rows of complex entries.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Self {
        let dim = rows.len();
        let mut m = Self::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), dim, "row {i} has wrong length");
            for (j, &x) in row.iter().enumerate() {
                m[(i, j)] = x;
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    /// Matrix sum.
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (a, b) in out.entries.iter_mut().zip(&other.entries) {
            *a += b;
        }
        out
    }

    /// In-place accumulate `scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: Complex64) {
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            *a += scale * b;
        }
    }

    /// Scalar multiple.
    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = self.clone();
        for a in out.entries.iter_mut() {
            *a *= s;
        }
        out
    }

    /// Scalar multiple by a real factor.
    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(Complex64::new(s, 0.0))
    }

    /// Matrix product `self * other`.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self[(i, k)];
                if aik == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += aik * other[(k, j)];
                }
            }
        }
        out
    }

    /// Matrix-vector product.
    pub fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.dim);
        let n = self.dim;
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n {
                acc += self[(i, j)] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = self[(j, i)].conj();
            }
        }
        out
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let n = self.dim;
        let m = other.dim;
        let mut out = Self::zeros(n * m);
        for i in 0..n {
            for j in 0..n {
                let a = self[(i, j)];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for k in 0..m {
                    for l in 0..m {
                        out[(i * m + k, j * m + l)] = a * other[(k, l)];
                    }
                }
            }
        }
        out
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest deviation from Hermiticity, with the offending index pair.
    pub fn hermiticity_defect(&self) -> (usize, usize, f64) {
        let mut worst = (0, 0, 0.0);
        for i in 0..self.dim {
            for j in i..self.dim {
                let d = (self[(i, j)] - self[(j, i)].conj()).norm();
                if d > worst.2 {
                    worst = (i, j, d);
                }
            }
        }
        worst
    }

    /// Reject matrices with NaN or infinite entries.
    pub fn check_finite(&self) -> Result<()> {
        for i in 0..self.dim {
            for j in 0..self.dim {
                let z = self[(i, j)];
                if !z.re.is_finite() || !z.im.is_finite() {
                    return Err(Error::NonFinite { i, j });
                }
            }
        }
        Ok(())
    }

    /// True when every entry has zero imaginary part (within `tol`).
    pub fn is_real(&self, tol: f64) -> bool {
        self.entries.iter().all(|z| z.im.abs() <= tol)
    }

    /// Extract the `k`-th column.
    pub fn column(&self, k: usize) -> Vec<Complex64> {
        (0..self.dim).map(|i| self[(i, k)]).collect()
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.entries[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.entries[i * self.dim + j]
    }
}

/// Complex inner product `⟨a, b⟩ = Σ conj(a_i) b_i`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Euclidean norm of a complex vector.
pub fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn kron_matches_hand_expansion() {
        let a = ComplexMatrix::from_real_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = ComplexMatrix::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let k = a.kron(&b);
        assert_eq!(k.dim(), 4);
        assert_eq!(k[(0, 1)], c(1.0, 0.0));
        assert_eq!(k[(0, 3)], c(2.0, 0.0));
        assert_eq!(k[(3, 0)], c(3.0, 0.0));
        assert_eq!(k[(2, 3)], c(4.0, 0.0));
    }

    #[test]
    fn dagger_and_hermiticity() {
        let m = ComplexMatrix::from_rows(&[
            vec![c(1.0, 0.0), c(0.0, 1.0)],
            vec![c(0.0, -1.0), c(2.0, 0.0)],
        ]);
        assert_eq!(m.hermiticity_defect().2, 0.0);
        let skew = ComplexMatrix::from_rows(&[
            vec![c(1.0, 0.0), c(0.0, 1.0)],
            vec![c(0.0, 1.0), c(2.0, 0.0)],
        ]);
        let (i, j, d) = skew.hermiticity_defect();
        assert_eq!((i, j), (0, 1));
        assert!(d > 1.9);
        assert_eq!(m.dagger(), m);
    }

    #[test]
    fn matvec_and_trace() {
        let m = ComplexMatrix::from_real_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]);
        let v = m.matvec(&[c(1.0, 0.0), c(1.0, 0.0)]);
        assert_eq!(v, vec![c(2.0, 0.0), c(3.0, 0.0)]);
        assert_eq!(m.trace(), c(5.0, 0.0));
    }
}
