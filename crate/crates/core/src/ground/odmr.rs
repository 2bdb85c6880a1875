//! ODMR line prediction and hyperfine-tensor fitting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{gs_hamiltonian, GroundStateParams, HyperfineTensor, NucleusSite};
use crate::inference::{least_squares, LsqOptions, Transform, Weights};
use crate::linalg::{hermitian_eigensystem, real_symmetric_eigensystem, spin1_operators};
use crate::{Error, Result};

/// One predicted magnetic-resonance line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdmrLine {
    pub frequency_ghz: f64,
    /// |⟨i|Sx|j⟩|², normalized so the strongest line is 1.
    pub strength: f64,
}

/// One measured resonance at a known field setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdmrRecord {
    pub b_mag_g: f64,
    pub b_theta_deg: f64,
    pub b_phi_deg: f64,
    pub frequency_ghz: f64,
    pub sigma_mhz: f64,
}

/// Transition frequencies between predominantly-mS=0 and predominantly-mS=±1
/// eigenstates, with strengths ∝ |⟨i|Sx|j⟩|² (max normalized to 1).
///
/// One nucleus at most; multi-nucleus spectra are composed by convolving
/// single-nucleus line lists at the caller.
pub fn odmr_lines(
    params: &GroundStateParams,
    hf: Option<&HyperfineTensor>,
) -> Result<Vec<OdmrLine>> {
    let h = gs_hamiltonian(params, hf)?;
    let eig = hermitian_eigensystem(&h)?;
    let dim = h.dim();
    let per_manifold = dim / 3;

    // Weight of each eigenvector on the electron mS = 0 subspace.
    let ms0_weight = |k: usize| -> f64 {
        let v = eig.vector(k);
        if dim == 3 {
            v[1].norm_sqr()
        } else {
            v[2].norm_sqr() + v[3].norm_sqr()
        }
    };
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        ms0_weight(b)
            .partial_cmp(&ms0_weight(a))
            .unwrap()
            .then(a.cmp(&b))
    });
    let zero_group = &order[..per_manifold];
    let pm_group = &order[per_manifold..];

    let (sx, _, _) = spin1_operators();
    let sx_full = if dim == 3 {
        sx
    } else {
        sx.kron(&crate::linalg::ComplexMatrix::identity(2))
    };

    let mut lines = Vec::with_capacity(zero_group.len() * pm_group.len());
    for &i in zero_group {
        let vi = eig.vector(i);
        let sx_vi = sx_full.matvec(&vi);
        for &j in pm_group {
            let vj = eig.vector(j);
            let amp: num_complex::Complex64 = vj
                .iter()
                .zip(&sx_vi)
                .map(|(a, b)| a.conj() * b)
                .sum();
            lines.push(OdmrLine {
                frequency_ghz: (eig.values[j] - eig.values[i]).abs(),
                strength: amp.norm_sqr(),
            });
        }
    }
    let max_strength = lines.iter().map(|l| l.strength).fold(0.0f64, f64::max);
    if max_strength > 0.0 {
        for l in lines.iter_mut() {
            l.strength /= max_strength;
        }
    }
    lines.sort_by(|a, b| a.frequency_ghz.partial_cmp(&b.frequency_ghz).unwrap());
    Ok(lines)
}

/// Fitted hyperfine tensor with 95% half-widths per free parameter.
#[derive(Debug, Clone)]
pub struct HyperfineFit {
    pub tensor: HyperfineTensor,
    pub axx_half_width_95: f64,
    pub ayy_half_width_95: Option<f64>,
    pub azz_half_width_95: f64,
    pub theta_half_width_95: f64,
    pub cost: f64,
    pub n_records: usize,
    /// Smallest relative singular value of the column-normalized Jacobian
    /// including the Ayy direction; small values mean Ayy is unresolved.
    pub ayy_condition: f64,
}

/// Records grouped by exact field setting, sorted by frequency in-group.
struct SettingGroup {
    b_mag_g: f64,
    b_theta_deg: f64,
    b_phi_deg: f64,
    /// Indices into the record list, ascending in observed frequency.
    members: Vec<usize>,
}

fn group_by_setting(records: &[OdmrRecord]) -> Vec<SettingGroup> {
    let mut groups: Vec<SettingGroup> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match groups.iter_mut().find(|g| {
            g.b_mag_g.to_bits() == r.b_mag_g.to_bits()
                && g.b_theta_deg.to_bits() == r.b_theta_deg.to_bits()
                && g.b_phi_deg.to_bits() == r.b_phi_deg.to_bits()
        }) {
            Some(g) => g.members.push(i),
            None => groups.push(SettingGroup {
                b_mag_g: r.b_mag_g,
                b_theta_deg: r.b_theta_deg,
                b_phi_deg: r.b_phi_deg,
                members: vec![i],
            }),
        }
    }
    for g in groups.iter_mut() {
        g.members.sort_by(|&a, &b| {
            records[a]
                .frequency_ghz
                .partial_cmp(&records[b].frequency_ghz)
                .unwrap()
        });
    }
    groups
}

/// Predicted frequency per record: at each field setting the k observed
/// resonances pair with the k strongest predicted lines, both in ascending
/// frequency order. Matching against the bright subset keeps a wrong tensor
/// from hiding behind nominally dark transitions.
fn forward(
    d_ghz: f64,
    groups: &[SettingGroup],
    n_records: usize,
    tensor: &HyperfineTensor,
) -> Vec<f64> {
    let mut out = vec![f64::INFINITY; n_records];
    for g in groups {
        let p = GroundStateParams {
            d_ghz,
            gamma_e_mhz_per_g: super::GAMMA_E_MHZ_PER_G,
            b_mag_g: g.b_mag_g,
            b_theta_deg: g.b_theta_deg,
            b_phi_deg: g.b_phi_deg,
        };
        let Ok(mut lines) = odmr_lines(&p, Some(tensor)) else {
            continue;
        };
        lines.sort_by(|a, b| {
            b.strength
                .partial_cmp(&a.strength)
                .unwrap()
                .then(a.frequency_ghz.partial_cmp(&b.frequency_ghz).unwrap())
        });
        let k = g.members.len().min(lines.len());
        let mut bright: Vec<f64> = lines[..k].iter().map(|l| l.frequency_ghz).collect();
        bright.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (slot, &rec_idx) in g.members.iter().enumerate() {
            if slot < bright.len() {
                out[rec_idx] = bright[slot];
            }
        }
    }
    out
}

fn distinct_settings(records: &[OdmrRecord]) -> usize {
    let mut settings: Vec<(u64, u64)> = records
        .iter()
        .map(|r| (r.b_mag_g.to_bits(), r.b_theta_deg.to_bits()))
        .collect();
    settings.sort_unstable();
    settings.dedup();
    settings.len()
}

/// Smallest relative singular value of the column-normalized Jacobian of the
/// model over (Axx, Ayy, Azz, θ) at the given tensor.
pub fn ayy_resolvability(
    d_ghz: f64,
    records: &[OdmrRecord],
    tensor: &HyperfineTensor,
) -> Result<(f64, Vec<f64>)> {
    let base = [
        tensor.axx_mhz,
        tensor.ayy_mhz,
        tensor.azz_mhz,
        tensor.theta_deg,
    ];
    let m = records.len();
    let groups = group_by_setting(records);
    let mut jac = vec![vec![0.0; 4]; m];
    for j in 0..4 {
        let h = 1e-4 * base[j].abs().max(1.0);
        let mut plus = base;
        plus[j] += h;
        let mut minus = base;
        minus[j] -= h;
        let t_plus = tensor_with(tensor, plus)?;
        let t_minus = tensor_with(tensor, minus)?;
        let fp = forward(d_ghz, &groups, m, &t_plus);
        let fm = forward(d_ghz, &groups, m, &t_minus);
        for i in 0..m {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h) / (records[i].sigma_mhz * 1e-3);
        }
    }
    // Normalize columns so units drop out.
    let mut norms = [0.0f64; 4];
    for (j, n) in norms.iter_mut().enumerate() {
        *n = jac.iter().map(|row| row[j] * row[j]).sum::<f64>().sqrt().max(1e-300);
    }
    let mut gram = vec![vec![0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            let mut acc = 0.0;
            for row in &jac {
                acc += row[a] * row[b];
            }
            gram[a][b] = acc / (norms[a] * norms[b]);
        }
    }
    let (evals, evecs) = real_symmetric_eigensystem(&gram)?;
    let cond = (evals[0].max(0.0) / evals[3].max(1e-300)).sqrt();
    Ok((cond, evecs[0].clone()))
}

fn tensor_with(base: &HyperfineTensor, vals: [f64; 4]) -> Result<HyperfineTensor> {
    let mut t = *base;
    t.axx_mhz = vals[0];
    t.ayy_mhz = vals[1];
    t.azz_mhz = vals[2];
    // Unclamped: the rotated tensor is smooth in θ, and clamping would zero
    // the gradient at the domain edge.
    t.theta_deg = vals[3];
    Ok(t)
}

/// Fit a hyperfine tensor to resonance records spanning several field
/// settings.
///
/// Fits (Axx, Azz, θ) with Ayy tied to Axx, then frees Ayy only when the
/// data resolve it; otherwise the returned tensor keeps the tie and sets its
/// degeneracy flag. Data at fewer than three distinct (B, θ_B) settings are
/// rejected as non-identifiable.
pub fn fit_hyperfine(
    records: &[OdmrRecord],
    d_ghz: f64,
    nucleus: NucleusSite,
) -> Result<HyperfineFit> {
    if records.len() < 8 {
        return Err(Error::NonIdentifiable(format!(
            "need at least 8 resonance records, got {}",
            records.len()
        )));
    }
    if distinct_settings(records) < 3 {
        return Err(Error::NonIdentifiable(
            "records span fewer than 3 distinct (B, θ) settings; \
             the tensor orientation cannot be separated from its principal values"
                .into(),
        ));
    }

    let data: Vec<f64> = records.iter().map(|r| r.frequency_ghz).collect();
    let sigmas: Vec<f64> = records.iter().map(|r| r.sigma_mhz * 1e-3).collect();
    let weights = Weights::Sigma(sigmas);
    let groups = group_by_setting(records);
    let n_rec = records.len();

    // Coupling scale from the largest in-setting splitting, in MHz.
    let mut scale_mhz: f64 = 0.0;
    {
        let mut by_setting: std::collections::BTreeMap<(u64, u64), (f64, f64)> =
            std::collections::BTreeMap::new();
        for r in records {
            let key = (r.b_mag_g.to_bits(), r.b_theta_deg.to_bits());
            let e = by_setting
                .entry(key)
                .or_insert((f64::INFINITY, f64::NEG_INFINITY));
            e.0 = e.0.min(r.frequency_ghz);
            e.1 = e.1.max(r.frequency_ghz);
        }
        for (_, (lo, hi)) in by_setting {
            scale_mhz = scale_mhz.max((hi - lo) * 1e3);
        }
        scale_mhz = scale_mhz.max(1.0);
    }

    let make_tensor = move |p: &[f64], tied: bool| -> HyperfineTensor {
        HyperfineTensor {
            axx_mhz: p[0],
            ayy_mhz: if tied { p[0] } else { p[3] },
            azz_mhz: p[1],
            theta_deg: p[2],
            nucleus,
            gamma_n_khz_per_g: nucleus.gamma_n_khz_per_g(),
            ayy_tied: tied,
        }
    };

    // Multi-start over tilt and coupling scale, Ayy tied.
    let mut best: Option<(f64, crate::inference::LsqFit)> = None;
    for &theta0 in &[5.0, 30.0, 55.0, 80.0] {
        for &(fx, fz) in &[(0.4, 1.0), (0.9, 0.9)] {
            let init = [fx * scale_mhz, fz * scale_mhz, theta0];
            let fit = least_squares(
                |p| forward(d_ghz, &groups, n_rec, &make_tensor(p, true)),
                &data,
                &weights,
                &init,
                &LsqOptions {
                    max_iters: 120,
                    transforms: Some(vec![Transform::Log, Transform::Log, Transform::Linear]),
                    covariance: false,
                    ..Default::default()
                },
            );
            if let Ok(f) = fit {
                if best.as_ref().map_or(true, |(c, _)| f.cost < *c) {
                    best = Some((f.cost, f));
                }
            }
        }
    }
    let (_, mut rough) = best.ok_or_else(|| Error::NoConvergence {
        what: "hyperfine fit".into(),
        detail: "no starting point converged".into(),
    })?;
    // θ and θ+180° give the same rotated tensor exactly; fold, then try the
    // mirrored start when the fold lands outside the domain.
    rough.params[2] = rough.params[2].rem_euclid(180.0);
    if rough.params[2] > 90.0 {
        let mirrored = [rough.params[0], rough.params[1], 180.0 - rough.params[2]];
        if let Ok(f) = least_squares(
            |p| forward(d_ghz, &groups, n_rec, &make_tensor(p, true)),
            &data,
            &weights,
            &mirrored,
            &LsqOptions {
                max_iters: 120,
                transforms: Some(vec![Transform::Log, Transform::Log, Transform::Linear]),
                covariance: false,
                ..Default::default()
            },
        ) {
            if f.cost <= rough.cost * (1.0 + 1e-9) {
                rough = f;
                rough.params[2] = rough.params[2].rem_euclid(180.0);
            }
        }
    }
    if !(0.0..=90.0 + 1e-6).contains(&rough.params[2]) {
        return Err(Error::NonIdentifiable(format!(
            "tilt angle converged to {:.2}° outside [0, 90]; the field set cannot pin the axis convention",
            rough.params[2]
        )));
    }

    // Re-run the winner with covariance and the rank check enabled.
    let tied_fit = least_squares(
        |p| forward(d_ghz, &groups, n_rec, &make_tensor(p, true)),
        &data,
        &weights,
        &rough.params,
        &LsqOptions {
            max_iters: 120,
            transforms: Some(vec![Transform::Log, Transform::Log, Transform::Linear]),
            ..Default::default()
        },
    )?;
    let tied_tensor = make_tensor(&tied_fit.params, true);

    // Can the data resolve Ayy at all?
    let (cond, null_dir) = ayy_resolvability(d_ghz, records, &tied_tensor)?;
    let ayy_component = null_dir[1].abs();
    let resolvable = cond > 1e-4 || ayy_component < 0.5;

    if !resolvable {
        return Ok(HyperfineFit {
            tensor: tied_tensor,
            axx_half_width_95: tied_fit.half_width_95(0),
            ayy_half_width_95: None,
            azz_half_width_95: tied_fit.half_width_95(1),
            theta_half_width_95: tied_fit.half_width_95(2),
            cost: tied_fit.cost,
            n_records: records.len(),
            ayy_condition: cond,
        });
    }

    // Free Ayy starting from the tied optimum.
    let init4 = [
        tied_fit.params[0],
        tied_fit.params[1],
        tied_fit.params[2],
        tied_fit.params[0],
    ];
    let free_fit = least_squares(
        |p| forward(d_ghz, &groups, n_rec, &make_tensor(p, false)),
        &data,
        &weights,
        &init4,
        &LsqOptions {
            max_iters: 120,
            transforms: Some(vec![
                Transform::Log,
                Transform::Log,
                Transform::Linear,
                Transform::Log,
            ]),
            ..Default::default()
        },
    );
    match free_fit {
        Ok(f) => Ok(HyperfineFit {
            tensor: make_tensor(&f.params, false),
            axx_half_width_95: f.half_width_95(0),
            ayy_half_width_95: Some(f.half_width_95(3)),
            azz_half_width_95: f.half_width_95(1),
            theta_half_width_95: f.half_width_95(2),
            cost: f.cost,
            n_records: records.len(),
            ayy_condition: cond,
        }),
        // Freeing Ayy degenerated after all; keep the tie.
        Err(Error::RankDeficient { .. }) => Ok(HyperfineFit {
            tensor: tied_tensor,
            axx_half_width_95: tied_fit.half_width_95(0),
            ayy_half_width_95: None,
            azz_half_width_95: tied_fit.half_width_95(1),
            theta_half_width_95: tied_fit.half_width_95(2),
            cost: tied_fit.cost,
            n_records: records.len(),
            ayy_condition: cond,
        }),
        Err(e) => Err(e),
    }
}

/// Synthetic pulsed-ODMR records: the strongest `lines_per_setting` lines at
/// each field setting, with Gaussian frequency noise.
pub fn synthesize_odmr_records(
    d_ghz: f64,
    tensor: &HyperfineTensor,
    settings: &[(f64, f64)],
    lines_per_setting: usize,
    noise_mhz: f64,
    seed: u64,
) -> Result<Vec<OdmrRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, (noise_mhz * 1e-3).max(1e-12)).unwrap();
    let mut out = Vec::new();
    for &(b_mag, b_theta) in settings {
        let p = GroundStateParams {
            d_ghz,
            gamma_e_mhz_per_g: super::GAMMA_E_MHZ_PER_G,
            b_mag_g: b_mag,
            b_theta_deg: b_theta,
            b_phi_deg: 0.0,
        };
        let mut lines = odmr_lines(&p, Some(tensor))?;
        lines.sort_by(|a, b| {
            b.strength
                .partial_cmp(&a.strength)
                .unwrap()
                .then(a.frequency_ghz.partial_cmp(&b.frequency_ghz).unwrap())
        });
        for line in lines.iter().take(lines_per_setting) {
            out.push(OdmrRecord {
                b_mag_g: b_mag,
                b_theta_deg: b_theta,
                b_phi_deg: 0.0,
                frequency_ghz: line.frequency_ghz + noise.sample(&mut rng),
                sigma_mhz: noise_mhz.max(0.05),
            });
        }
    }
    Ok(out)
}
