//! Minimal dense complex linear algebra for 2×2 through 12×12 Hermitian
//! problems: spin operators, eigensystems, and exact propagation of linear
//! rate systems.
//!
//! All operations are pure functions of their inputs; values are immutable
//! after construction and safe to share across threads.

mod eigen;
mod expm;
mod matrix;

pub use eigen::{
    hermitian_eigensystem, jacobi_real_symmetric, real_symmetric_eigensystem,
    unitary_evolution, EigenSystem,
};
pub use expm::{apply, check_generator, propagate_linear, propagator, solve_real, to_real_rows};
pub use matrix::{inner, norm, ComplexMatrix, MAX_DIM};

use num_complex::Complex64;

/// The canonical spin-1 operators (Sx, Sy, Sz) in the {+1, 0, −1} basis,
/// with Sz = diag(+1, 0, −1).
pub fn spin1_operators() -> (ComplexMatrix, ComplexMatrix, ComplexMatrix) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let sx = ComplexMatrix::from_real_rows(&[
        vec![0.0, s, 0.0],
        vec![s, 0.0, s],
        vec![0.0, s, 0.0],
    ]);
    let sy = ComplexMatrix::from_rows(&[
        vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, -s),
            Complex64::new(0.0, 0.0),
        ],
        vec![
            Complex64::new(0.0, s),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, -s),
        ],
        vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, s),
            Complex64::new(0.0, 0.0),
        ],
    ]);
    let sz = ComplexMatrix::from_real_rows(&[
        vec![1.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0],
        vec![0.0, 0.0, -1.0],
    ]);
    (sx, sy, sz)
}

/// Spin-1/2 operators (Ix, Iy, Iz) in the {+1/2, −1/2} basis.
pub fn spin_half_operators() -> (ComplexMatrix, ComplexMatrix, ComplexMatrix) {
    let ix = ComplexMatrix::from_real_rows(&[vec![0.0, 0.5], vec![0.5, 0.0]]);
    let iy = ComplexMatrix::from_rows(&[
        vec![Complex64::new(0.0, 0.0), Complex64::new(0.0, -0.5)],
        vec![Complex64::new(0.0, 0.5), Complex64::new(0.0, 0.0)],
    ]);
    let iz = ComplexMatrix::from_real_rows(&[vec![0.5, 0.0], vec![0.0, -0.5]]);
    (ix, iy, iz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sz_eigenvalues_are_plus_zero_minus() {
        let (_, _, sz) = spin1_operators();
        let eig = hermitian_eigensystem(&sz).unwrap();
        assert_abs_diff_eq!(eig.values[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.values[1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.values[2], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn commutator_sx_sy_is_i_sz() {
        let (sx, sy, sz) = spin1_operators();
        let comm = sx.mul(&sy).add(&sy.mul(&sx).scale_re(-1.0));
        let isz = sz.scale(Complex64::new(0.0, 1.0));
        for i in 0..3 {
            for j in 0..3 {
                let d = (comm[(i, j)] - isz[(i, j)]).norm();
                assert!(d < 1e-14, "entry ({i},{j}) differs by {d}");
            }
        }
    }

    #[test]
    fn casimir_is_two_identity() {
        let (sx, sy, sz) = spin1_operators();
        let total = sx.mul(&sx).add(&sy.mul(&sy)).add(&sz.mul(&sz));
        let two_id = ComplexMatrix::identity(3).scale_re(2.0);
        for i in 0..3 {
            for j in 0..3 {
                let d = (total[(i, j)] - two_id[(i, j)]).norm();
                assert!(d < 1e-14);
            }
        }
    }

    #[test]
    fn spin_half_commutator() {
        let (ix, iy, iz) = spin_half_operators();
        let comm = ix.mul(&iy).add(&iy.mul(&ix).scale_re(-1.0));
        let iiz = iz.scale(Complex64::new(0.0, 1.0));
        for i in 0..2 {
            for j in 0..2 {
                assert!((comm[(i, j)] - iiz[(i, j)]).norm() < 1e-15);
            }
        }
    }
}
