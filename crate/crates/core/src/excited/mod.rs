//! The six-level ³E excited-state fine structure.
//!
//! The Hamiltonian is built in the product basis |orbital⟩⊗|mS⟩ with circular
//! orbital states E± = (|x⟩ ± i|y⟩)/√2 and Lz = diag(+1, −1):
//!
//! ```text
//! H = D_es·(Sz² − 2/3) + λz·(Lz⊗Sz)
//!   + Δ₁·(|E+⟩⟨E−| ⊗ |+1⟩⟨−1| + h.c.)
//!   + √2·Δ₂·(|E+⟩⟨E−| ⊗ |0⟩⟨+1| + |E−⟩⟨E+| ⊗ |0⟩⟨−1| + h.c.)
//!   + ((δx + iδy)·|E−⟩⟨E+| ⊗ 1 + h.c.),  δx = δ⟂·cos φ, δy = δ⟂·sin φ
//! ```
//!
//! At zero strain and Δ₂ = 0 this gives Ex/Ey at −2D_es/3, the degenerate
//! E₁/E₂ pair at D_es − λz above them, and A₂/A₁ at D_es + λz ∓ Δ₁. Δ₂ mixes
//! E₁/E₂ with Ex/Ey, which is what turns strain into a spin-flip channel.
//!
//! Placement of the Δ₁ and Δ₂ raising/lowering patterns follows the level
//! ordering above (Δ₁ splits the upper A pair, Δ₂ couples the lower E pair to
//! the mS = 0 states); the azimuth φ is a gauge angle that never shifts the
//! spectrum.

mod lines;

pub use lines::{ple_lines, spin_flip_probability, strain_fan, PleLine, StrainFan};

use num_complex::Complex64;

use crate::linalg::{hermitian_eigensystem, inner, ComplexMatrix, EigenSystem};
use crate::{Error, Result};

/// The four ³E coupling constants, all in GHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcitedStateParams {
    /// Axial spin-orbit splitting λz.
    pub lambda_z: f64,
    /// Excited-state axial spin-spin term.
    pub d_es: f64,
    /// Spin-spin term splitting A₁/A₂.
    pub delta1: f64,
    /// Spin-mixing spin-spin term.
    pub delta2: f64,
}

impl ExcitedStateParams {
    pub fn new(lambda_z: f64, d_es: f64, delta1: f64, delta2: f64) -> Result<Self> {
        let p = Self {
            lambda_z,
            d_es,
            delta1,
            delta2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_z > 0.0) {
            return Err(Error::InvalidParam(format!(
                "lambda_z = {} must be > 0",
                self.lambda_z
            )));
        }
        for (name, v) in [
            ("d_es", self.d_es),
            ("delta1", self.delta1),
            ("delta2", self.delta2),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidParam(format!("{name} = {v} must be ≥ 0")));
            }
        }
        Ok(())
    }

    /// Fitted (hh) divacancy values.
    pub fn hh() -> Self {
        Self {
            lambda_z: 3.538,
            d_es: 0.855,
            delta1: 0.577,
            delta2: 0.031,
        }
    }

    /// Fitted (kk) divacancy values.
    pub fn kk() -> Self {
        Self {
            lambda_z: 6.090,
            d_es: 0.852,
            delta1: 0.584,
            delta2: 0.044,
        }
    }

    /// 3C divacancy values; the spin-spin terms carry only upper bounds
    /// (< 1 GHz) and default to zero here.
    pub fn c3c() -> Self {
        Self {
            lambda_z: 15.7,
            d_es: 2.0,
            delta1: 0.0,
            delta2: 0.0,
        }
    }

    /// NV-like reference for spin-mixing comparisons: the NV spin-orbit and
    /// mixing strengths (λz = 5.3 GHz, Δ₂ = 0.2 GHz) with the remaining
    /// spin-spin terms held at the (hh) values so the comparison isolates
    /// the two parameters that differ.
    pub fn nv_like() -> Self {
        Self {
            lambda_z: 5.3,
            d_es: 0.855,
            delta1: 0.577,
            delta2: 0.2,
        }
    }
}

/// Nominal ZPL anchors, THz.
pub const ZPL_HH_THZ: f64 = 264.91;
pub const ZPL_KK_THZ: f64 = 265.31;
pub const ZPL_3C_THZ: f64 = 270.95;

/// Transverse strain magnitude and azimuth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrainVector {
    /// δ⟂ ≥ 0, GHz.
    pub delta_perp: f64,
    /// Azimuth, degrees. Gauge angle for the spectrum.
    pub phi_deg: f64,
}

impl StrainVector {
    pub fn new(delta_perp: f64, phi_deg: f64) -> Result<Self> {
        if !(delta_perp >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "delta_perp = {delta_perp} must be ≥ 0"
            )));
        }
        Ok(Self {
            delta_perp,
            phi_deg,
        })
    }

    pub fn zero() -> Self {
        Self {
            delta_perp: 0.0,
            phi_deg: 0.0,
        }
    }
}

/// Excited-state level labels by adiabatic connection to zero strain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EsLabel {
    Ey,
    Ex,
    E1,
    E2,
    A2,
    A1,
}

impl EsLabel {
    pub const ALL: [EsLabel; 6] = [
        EsLabel::Ey,
        EsLabel::Ex,
        EsLabel::E1,
        EsLabel::E2,
        EsLabel::A2,
        EsLabel::A1,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EsLabel::Ey => "Ey",
            EsLabel::Ex => "Ex",
            EsLabel::E1 => "E1",
            EsLabel::E2 => "E2",
            EsLabel::A2 => "A2",
            EsLabel::A1 => "A1",
        }
    }
}

impl std::str::FromStr for EsLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Ey" | "ey" => Ok(EsLabel::Ey),
            "Ex" | "ex" => Ok(EsLabel::Ex),
            "E1" | "e1" => Ok(EsLabel::E1),
            "E2" | "e2" => Ok(EsLabel::E2),
            "A2" | "a2" => Ok(EsLabel::A2),
            "A1" | "a1" => Ok(EsLabel::A1),
            other => Err(Error::InvalidParam(format!("unknown level label {other}"))),
        }
    }
}

/// Basis index helpers: orbital ∈ {E+ = 0, E− = 1}, spin mS ∈ {+1, 0, −1}
/// mapped to {0, 1, 2}. Product index = 3·orbital + spin.
fn idx(orbital: usize, spin: usize) -> usize {
    3 * orbital + spin
}

/// The six-level ³E Hamiltonian in GHz.
pub fn es_hamiltonian(p: &ExcitedStateParams, s: &StrainVector) -> ComplexMatrix {
    let mut h = ComplexMatrix::zeros(6);
    let d3 = p.d_es / 3.0;
    // D_es (Sz² − 2/3): +D/3 on mS = ±1, −2D/3 on mS = 0.
    // λz Lz Sz: Lz = +1 on E+, −1 on E−.
    for orbital in 0..2 {
        let lz = if orbital == 0 { 1.0 } else { -1.0 };
        for (spin, sz) in [(0usize, 1.0f64), (1, 0.0), (2, -1.0)] {
            let k = idx(orbital, spin);
            let e = if spin == 1 { -2.0 * d3 } else { d3 } + p.lambda_z * lz * sz;
            h[(k, k)] = Complex64::new(e, 0.0);
        }
    }
    // Δ₁ couples |E+,+1⟩ ↔ |E−,−1⟩ (splits A₁/A₂).
    let d1 = Complex64::new(p.delta1, 0.0);
    h[(idx(0, 0), idx(1, 2))] += d1;
    h[(idx(1, 2), idx(0, 0))] += d1;
    // √2 Δ₂ couples the mS = 0 states to the E₁/E₂ pair. Δ₂ is the
    // three-fold-symmetric term (ΔL + ΔmS = ±3), so it co-rotates with the
    // strain azimuth at 3φ/2; rotating φ is then an exact gauge
    // transformation and the spectrum depends on strain only through δ⟂.
    let phi = s.phi_deg.to_radians();
    let d2 = Complex64::from_polar(std::f64::consts::SQRT_2 * p.delta2, -1.5 * phi);
    h[(idx(0, 1), idx(1, 0))] += d2;
    h[(idx(1, 0), idx(0, 1))] += d2.conj();
    h[(idx(1, 1), idx(0, 2))] += d2.conj();
    h[(idx(0, 2), idx(1, 1))] += d2;
    // Transverse strain (δx + iδy)|E−⟩⟨E+| ⊗ 1 + h.c.
    let strain = Complex64::new(
        s.delta_perp * phi.cos(),
        s.delta_perp * phi.sin(),
    );
    for spin in 0..3 {
        h[(idx(1, spin), idx(0, spin))] += strain;
        h[(idx(0, spin), idx(1, spin))] += strain.conj();
    }
    h
}

/// Fast eigenvalues and mS = 0 weights via the parity block decomposition.
///
/// At φ = 0 the Hamiltonian splits into two real-symmetric 3×3 blocks in the
/// symmetrized basis {(E±,0), (E+,+1)±(E−,−1), (E+,−1)±(E−,+1)}; the spectrum
/// depends on strain only through δ⟂, so this covers every azimuth. Returns
/// six (energy GHz, ms0 weight) pairs sorted by energy.
pub fn es_energies_ms0(p: &ExcitedStateParams, delta_perp: f64) -> Result<[(f64, f64); 6]> {
    let d3 = p.d_es / 3.0;
    let c = std::f64::consts::SQRT_2 * p.delta2;
    let build = |sign: f64| -> Vec<Vec<f64>> {
        vec![
            vec![-2.0 * d3 + sign * delta_perp, 0.0, sign * c],
            vec![0.0, d3 + p.lambda_z + sign * p.delta1, sign * delta_perp],
            vec![sign * c, sign * delta_perp, d3 - p.lambda_z],
        ]
    };
    let mut out = Vec::with_capacity(6);
    for sign in [1.0, -1.0] {
        let (vals, vecs) = crate::linalg::real_symmetric_eigensystem(&build(sign))?;
        for k in 0..3 {
            out.push((vals[k], vecs[k][0] * vecs[k][0]));
        }
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok([out[0], out[1], out[2], out[3], out[4], out[5]])
}

/// Six labeled levels at one strain point.
#[derive(Debug, Clone)]
pub struct EsLevels {
    /// Eigenvalues (GHz) and eigenvectors, sorted ascending.
    pub eigen: EigenSystem,
    /// Adiabatic label per eigenstate index.
    pub labels: [EsLabel; 6],
    /// Weight of each eigenstate on the two mS = 0 product states.
    pub ms0_fraction: [f64; 6],
    /// ⟨Lz⊗Sz⟩ per eigenstate.
    pub lzsz: [f64; 6],
}

impl EsLevels {
    /// Eigenstate index carrying a label.
    pub fn index_of(&self, label: EsLabel) -> usize {
        self.labels
            .iter()
            .position(|&l| l == label)
            .expect("all six labels present")
    }

    /// Indices of the two most mS = 0-dominant states, most dominant first.
    pub fn ms0_dominant(&self) -> [usize; 2] {
        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&a, &b| {
            self.ms0_fraction[b]
                .partial_cmp(&self.ms0_fraction[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        [order[0], order[1]]
    }
}

fn ms0_weight(vector: &[Complex64]) -> f64 {
    vector[idx(0, 1)].norm_sqr() + vector[idx(1, 1)].norm_sqr()
}

fn lzsz_expectation(vector: &[Complex64]) -> f64 {
    let mut acc = 0.0;
    for orbital in 0..2 {
        let lz = if orbital == 0 { 1.0 } else { -1.0 };
        for (spin, sz) in [(0usize, 1.0f64), (1, 0.0), (2, -1.0)] {
            acc += lz * sz * vector[idx(orbital, spin)].norm_sqr();
        }
    }
    acc
}

fn diagonalize(p: &ExcitedStateParams, s: &StrainVector) -> Result<EsLevels> {
    let eigen = hermitian_eigensystem(&es_hamiltonian(p, s))?;
    let mut ms0 = [0.0; 6];
    let mut lzsz = [0.0; 6];
    for k in 0..6 {
        let v = eigen.vector(k);
        ms0[k] = ms0_weight(&v);
        lzsz[k] = lzsz_expectation(&v);
    }
    Ok(EsLevels {
        eigen,
        labels: [EsLabel::Ey; 6], // assigned by the caller
        ms0_fraction: ms0,
        lzsz,
    })
}

/// Structural labels valid at (or infinitesimally away from) zero strain:
/// the two mS0-dominant states are Ey/Ex by energy order, negative ⟨LzSz⟩
/// states are E₁/E₂, positive ones A₂/A₁, ties broken by energy order.
fn assign_structural_labels(levels: &mut EsLevels) {
    let [m0, m1] = levels.ms0_dominant();
    let (ey, ex) = if levels.eigen.values[m0] <= levels.eigen.values[m1] {
        (m0, m1)
    } else {
        (m1, m0)
    };
    levels.labels[ey] = EsLabel::Ey;
    levels.labels[ex] = EsLabel::Ex;
    let mut rest: Vec<usize> = (0..6).filter(|k| *k != ey && *k != ex).collect();
    rest.sort_by(|&a, &b| levels.eigen.values[a].partial_cmp(&levels.eigen.values[b]).unwrap());
    let (mut e_pair, mut a_pair): (Vec<usize>, Vec<usize>) =
        rest.iter().partition(|&&k| levels.lzsz[k] < 0.0);
    // Structural labeling is only used near zero strain where the split is
    // clean; fall back to energy order if mixing blurs the sign.
    while e_pair.len() > 2 {
        a_pair.push(e_pair.pop().unwrap());
    }
    while a_pair.len() > 2 {
        e_pair.insert(0, a_pair.remove(0));
    }
    e_pair.sort_by(|&a, &b| levels.eigen.values[a].partial_cmp(&levels.eigen.values[b]).unwrap());
    a_pair.sort_by(|&a, &b| levels.eigen.values[a].partial_cmp(&levels.eigen.values[b]).unwrap());
    levels.labels[e_pair[0]] = EsLabel::E1;
    levels.labels[e_pair[1]] = EsLabel::E2;
    levels.labels[a_pair[0]] = EsLabel::A2;
    levels.labels[a_pair[1]] = EsLabel::A1;
}

/// Greedy maximal-overlap assignment from labeled `prev` to `next`.
/// Returns the labels for `next` and the smallest matched overlap.
fn match_labels(prev: &EsLevels, next: &EsLevels) -> ([EsLabel; 6], f64) {
    let mut overlap = [[0.0f64; 6]; 6];
    for i in 0..6 {
        let vi = prev.eigen.vector(i);
        for k in 0..6 {
            let vk = next.eigen.vector(k);
            overlap[i][k] = inner(&vi, &vk).norm_sqr();
        }
    }
    let mut used_prev = [false; 6];
    let mut used_next = [false; 6];
    let mut labels = [EsLabel::Ey; 6];
    let mut min_overlap = 1.0f64;
    for _ in 0..6 {
        let mut best = (0usize, 0usize, -1.0f64);
        for i in 0..6 {
            if used_prev[i] {
                continue;
            }
            for k in 0..6 {
                if used_next[k] {
                    continue;
                }
                if overlap[i][k] > best.2 {
                    best = (i, k, overlap[i][k]);
                }
            }
        }
        used_prev[best.0] = true;
        used_next[best.1] = true;
        labels[best.1] = prev.labels[best.0];
        min_overlap = min_overlap.min(best.2);
    }
    (labels, min_overlap)
}

/// Advance labels from a labeled point to strain `d_to`, bisecting whenever
/// the eigenvector overlap drops below the tracking threshold.
fn advance(
    p: &ExcitedStateParams,
    phi_deg: f64,
    from: &EsLevels,
    d_from: f64,
    d_to: f64,
    depth: usize,
) -> Result<EsLevels> {
    let mut next = diagonalize(
        p,
        &StrainVector {
            delta_perp: d_to,
            phi_deg,
        },
    )?;
    let (labels, min_overlap) = match_labels(from, &next);
    if min_overlap >= 0.6 {
        next.labels = labels;
        return Ok(next);
    }
    if depth >= 48 {
        return Err(Error::Tracking {
            lo: d_from,
            hi: d_to,
            overlap: min_overlap,
        });
    }
    let mid = 0.5 * (d_from + d_to);
    let at_mid = advance(p, phi_deg, from, d_from, mid, depth + 1)?;
    advance(p, phi_deg, &at_mid, mid, d_to, depth + 1)
}

/// Labeled levels at the requested strain, with labels assigned by adiabatic
/// eigenvector tracking from zero strain.
pub fn es_levels(p: &ExcitedStateParams, s: &StrainVector) -> Result<EsLevels> {
    p.validate()?;
    let seed_delta = 1e-6 * p.lambda_z.max(1.0);
    if s.delta_perp <= seed_delta {
        let mut levels = diagonalize(p, s)?;
        assign_structural_labels(&mut levels);
        return Ok(levels);
    }
    let mut current = diagonalize(
        p,
        &StrainVector {
            delta_perp: seed_delta,
            phi_deg: s.phi_deg,
        },
    )?;
    assign_structural_labels(&mut current);
    let mut d = seed_delta;
    let step = 0.25 * p.lambda_z.max(1.0).min(4.0);
    while d < s.delta_perp {
        let d_next = (d + step).min(s.delta_perp);
        current = advance(p, s.phi_deg, &current, d, d_next, 0)?;
        d = d_next;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_strain_closed_form_block_diagonal() {
        // Δ₂ = 0, δ = 0 → {−2D/3 ×2, D/3−λz ×2, D/3+λz−Δ₁, D/3+λz+Δ₁}.
        let p = ExcitedStateParams::new(4.2, 0.9, 0.4, 0.0).unwrap();
        let eigen = hermitian_eigensystem(&es_hamiltonian(&p, &StrainVector::zero())).unwrap();
        let d3 = p.d_es / 3.0;
        let mut expect = vec![
            -2.0 * d3,
            -2.0 * d3,
            d3 - p.lambda_z,
            d3 - p.lambda_z,
            d3 + p.lambda_z - p.delta1,
            d3 + p.lambda_z + p.delta1,
        ];
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in eigen.values.iter().zip(&expect) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn kk_zero_strain_levels_relative_to_ms0() {
        let p = ExcitedStateParams::kk();
        let levels = es_levels(&p, &StrainVector::zero()).unwrap();
        let ms0_energy = levels.eigen.values[levels.index_of(EsLabel::Ex)];
        let rel = |l: EsLabel| levels.eigen.values[levels.index_of(l)] - ms0_energy;
        assert_abs_diff_eq!(rel(EsLabel::E1), -5.238, epsilon = 5e-3);
        assert_abs_diff_eq!(rel(EsLabel::E2), -5.238, epsilon = 5e-3);
        assert_abs_diff_eq!(rel(EsLabel::A2), 6.358, epsilon = 5e-3);
        assert_abs_diff_eq!(rel(EsLabel::A1), 7.526, epsilon = 5e-3);
    }

    #[test]
    fn strain_azimuth_is_gauge() {
        let p = ExcitedStateParams::hh();
        for &delta in &[0.5, 3.0, 12.0] {
            let base = hermitian_eigensystem(&es_hamiltonian(
                &p,
                &StrainVector {
                    delta_perp: delta,
                    phi_deg: 0.0,
                },
            ))
            .unwrap();
            for &phi in &[17.0, 90.0, 213.5] {
                let rot = hermitian_eigensystem(&es_hamiltonian(
                    &p,
                    &StrainVector {
                        delta_perp: delta,
                        phi_deg: phi,
                    },
                ))
                .unwrap();
                for k in 0..6 {
                    assert_abs_diff_eq!(base.values[k], rot.values[k], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn trace_is_zero_for_all_inputs() {
        let p = ExcitedStateParams::new(7.3, 2.1, 0.9, 0.15).unwrap();
        for &delta in &[0.0, 1.0, 40.0] {
            let h = es_hamiltonian(
                &p,
                &StrainVector {
                    delta_perp: delta,
                    phi_deg: 33.0,
                },
            );
            assert_abs_diff_eq!(h.trace().norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn fast_blocks_match_full_diagonalization() {
        let p = ExcitedStateParams::new(5.1, 1.3, 0.61, 0.12).unwrap();
        for &delta in &[0.0, 0.7, 4.4, 22.0] {
            let fast = es_energies_ms0(&p, delta).unwrap();
            let full = hermitian_eigensystem(&es_hamiltonian(
                &p,
                &StrainVector {
                    delta_perp: delta,
                    phi_deg: 0.0,
                },
            ))
            .unwrap();
            for k in 0..6 {
                assert_abs_diff_eq!(fast[k].0, full.values[k], epsilon = 1e-10);
            }
            // ms0 weights agree with the eigenvector-based ones.
            let mut full_ms0: Vec<f64> =
                (0..6).map(|k| ms0_weight(&full.vector(k))).collect();
            // Degenerate levels can permute weights; compare as sorted sets
            // alongside the sorted energies.
            let mut fast_ms0: Vec<f64> = fast.iter().map(|x| x.1).collect();
            full_ms0.sort_by(|a, b| a.partial_cmp(b).unwrap());
            fast_ms0.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (a, b) in fast_ms0.iter().zip(&full_ms0) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn ms0_fractions_sum_to_two() {
        let p = ExcitedStateParams::hh();
        for &delta in &[0.0, 2.0, 9.0, 27.0] {
            let levels = es_levels(
                &p,
                &StrainVector {
                    delta_perp: delta,
                    phi_deg: 12.0,
                },
            )
            .unwrap();
            let sum: f64 = levels.ms0_fraction.iter().sum();
            assert_abs_diff_eq!(sum, 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn labels_track_through_strain() {
        let p = ExcitedStateParams::kk();
        let levels = es_levels(
            &p,
            &StrainVector {
                delta_perp: 7.0,
                phi_deg: 0.0,
            },
        )
        .unwrap();
        // All six labels present exactly once.
        let mut seen = std::collections::HashSet::new();
        for l in levels.labels {
            assert!(seen.insert(l), "duplicate label {l:?}");
        }
        // Ex sits above Ey.
        assert!(
            levels.eigen.values[levels.index_of(EsLabel::Ex)]
                > levels.eigen.values[levels.index_of(EsLabel::Ey)]
        );
    }
}
