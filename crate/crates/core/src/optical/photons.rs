//! Photon statistics and spin readout from the optical cycle: g²(τ),
//! background correction, and readout contrast.

use super::{
    build_generator, build_generator_with_leak, propagate_populations, steady_state, RateParams,
    E0, E1, G0, G1,
};
use crate::{Error, Result};

/// Normalized second-order photon correlation.
///
/// The conditional evolution starts from the post-emission state (emission
/// from E0 collapses to G0, from E1 to G1, weighted by the steady-state
/// emission shares); g²(τ) is the conditional PL over the steady-state PL.
/// Only radiative E→G transitions emit; singlet decay is dark, and the
/// background is handled separately by [`background_correct_g2`].
pub fn g2_curve(p: &RateParams, power_mw: f64, tau_ns: &[f64]) -> Result<Vec<f64>> {
    if !(power_mw > 0.0) {
        return Err(Error::InvalidParam("g² requires power > 0".into()));
    }
    let gen = build_generator(p, true, power_mw, false)?;
    let ss = steady_state(&gen)?;
    let emit_total = ss[E0] + ss[E1];
    if emit_total <= 0.0 {
        return Err(Error::InvalidParam("no steady-state emission".into()));
    }
    let mut post = [0.0; 5];
    post[G0] = ss[E0] / emit_total;
    post[G1] = ss[E1] / emit_total;
    let states = propagate_populations(&gen, &post, tau_ns)?;
    let pl_ss = p.k_r * emit_total;
    Ok(states
        .iter()
        .map(|s| p.k_r * (s[E0] + s[E1]) / pl_ss)
        .collect())
}

/// Background correction: corrected(τ) = (raw(τ) − (1 − ρ²)) / ρ² with
/// ρ = signal/(signal+background).
pub fn background_correct_g2(raw: &[f64], rho: f64) -> Result<Vec<f64>> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "signal fraction ρ = {rho} outside (0, 1]"
        )));
    }
    let rho2 = rho * rho;
    Ok(raw.iter().map(|g| (g - (1.0 - rho2)) / rho2).collect())
}

/// Readout drive mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReadoutMode {
    /// Off-resonant pumping of both spin states.
    OffResonant,
    /// Resonant drive of the mS=0 cycling transition only; the spin-flip
    /// probability per optical cycle enters as an E0→G1 leak.
    ResonantMs0 {
        /// Spin-flip probability per optical cycle.
        spin_flip_probability: f64,
    },
}

/// Spin readout contrast over an integration window:
/// 1 − (∫PL | mS=±1 prep)/(∫PL | mS=0 prep), background included.
pub fn readout_contrast(
    p: &RateParams,
    power_mw: f64,
    window_ns: f64,
    mode: ReadoutMode,
) -> Result<f64> {
    if !(window_ns > 0.0) {
        return Err(Error::InvalidParam("window must be > 0".into()));
    }
    let gen = match mode {
        ReadoutMode::OffResonant => build_generator(p, true, power_mw, false)?,
        ReadoutMode::ResonantMs0 {
            spin_flip_probability,
        } => {
            if !(0.0..=1.0).contains(&spin_flip_probability) {
                return Err(Error::InvalidParam(
                    "spin-flip probability outside [0, 1]".into(),
                ));
            }
            // Per-cycle flip probability times the cycling rate out of E0.
            let leak = spin_flip_probability * (p.k_r + p.g_isc0);
            build_generator_with_leak(p, true, power_mw, true, leak)?
        }
    };

    // Simpson integration of the PL rate on a fine uniform grid.
    let n_steps = 1200usize;
    let dt = window_ns / n_steps as f64;
    let times: Vec<f64> = (0..=n_steps).map(|k| k as f64 * dt).collect();
    let integrate = |initial: [f64; 5]| -> Result<f64> {
        let states = propagate_populations(&gen, &initial, &times)?;
        let pl: Vec<f64> = states.iter().map(|s| p.k_r * (s[E0] + s[E1]) + p.bg).collect();
        let mut acc = pl[0] + pl[n_steps];
        for (k, v) in pl.iter().enumerate().take(n_steps).skip(1) {
            acc += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
        }
        Ok(acc * dt / 3.0)
    };

    let bright = integrate([1.0, 0.0, 0.0, 0.0, 0.0])?;
    let dark = integrate([0.0, 1.0, 0.0, 0.0, 0.0])?;
    if bright <= 0.0 {
        return Err(Error::InvalidParam("no photoluminescence in window".into()));
    }
    Ok(1.0 - dark / bright)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn g2_zero_at_zero_delay_and_one_at_infinity() {
        let p = RateParams::default();
        for &power in &[0.35, 1.0, 2.87] {
            let g2 = g2_curve(&p, power, &[0.0, 5000.0]).unwrap();
            assert!(g2[0].abs() <= 1e-12, "g2(0) = {}", g2[0]);
            assert!((g2[1] - 1.0).abs() <= 1e-6, "g2(inf) = {}", g2[1]);
        }
    }

    #[test]
    fn shelving_produces_bunching_shoulder() {
        // Slow singlet decay with hard pumping piles population into the
        // shelf, so g² overshoots 1 at intermediate delays.
        let p = RateParams {
            g_s: 0.002,
            ..Default::default()
        };
        let taus: Vec<f64> = (1..400).map(|k| k as f64 * 5.0).collect();
        let g2 = g2_curve(&p, 2.87, &taus).unwrap();
        let max = g2.iter().cloned().fold(0.0f64, f64::max);
        assert!(max > 1.01, "expected a bunching shoulder, max = {max}");
    }

    #[test]
    fn g2_dip_width_tracks_total_decay_time() {
        // Halving all decay rates (at proportionally smaller pump) should
        // stretch the time to reach g² = 0.5 by about the same factor.
        let base = RateParams::default();
        let slow = RateParams {
            k_r: base.k_r / 2.0,
            g_isc0: base.g_isc0 / 2.0,
            g_isc1: base.g_isc1 / 2.0,
            g_s: base.g_s / 2.0,
            beta: base.beta / 2.0,
            bg: 0.0,
        };
        let half_time = |p: &RateParams| -> f64 {
            let taus: Vec<f64> = (0..4000).map(|k| k as f64 * 0.25).collect();
            let g2 = g2_curve(p, 0.5, &taus).unwrap();
            for (t, g) in taus.iter().zip(&g2) {
                if *g >= 0.5 {
                    return *t;
                }
            }
            f64::NAN
        };
        let ratio = half_time(&slow) / half_time(&base);
        assert!(
            (ratio - 2.0).abs() < 0.4,
            "dip width should scale ~2x, got {ratio}"
        );
    }

    #[test]
    fn background_correction_identities() {
        // ρ = 1 is the identity.
        let raw = vec![0.0, 0.3, 1.0];
        let out = background_correct_g2(&raw, 1.0).unwrap();
        assert_eq!(out, raw);
        // Pure-background coincidences map to zero.
        let rho: f64 = 0.8;
        let out = background_correct_g2(&[1.0 - rho * rho], rho).unwrap();
        assert_abs_diff_eq!(out[0], 0.0, epsilon = 1e-15);
        // Frozen direct evaluation of the formula at the reported point.
        let out = background_correct_g2(&[0.15], 0.95).unwrap();
        assert_abs_diff_eq!(out[0], 0.058171745152, epsilon = 1e-12);
        // ρ = 0 rejected.
        assert!(background_correct_g2(&[0.5], 0.0).is_err());
    }

    #[test]
    fn resonant_contrast_saturates_at_unity_without_leak() {
        let p = RateParams::default();
        for &window in &[100.0, 1000.0, 10_000.0] {
            let c = readout_contrast(
                &p,
                1.0,
                window,
                ReadoutMode::ResonantMs0 {
                    spin_flip_probability: 0.0,
                },
            )
            .unwrap();
            assert_abs_diff_eq!(c, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn background_swamps_contrast() {
        let mut p = RateParams::default();
        let c_clean = readout_contrast(&p, 1.0, 300.0, ReadoutMode::OffResonant).unwrap();
        p.bg = 50.0;
        let c_bg = readout_contrast(&p, 1.0, 300.0, ReadoutMode::OffResonant).unwrap();
        assert!(c_bg < 0.01 && c_bg < c_clean / 10.0, "contrast {c_bg}");
    }

    #[test]
    fn contrast_invariant_under_joint_rate_and_time_rescale() {
        let p = RateParams {
            bg: 0.001,
            ..Default::default()
        };
        let s = 3.0;
        let scaled = RateParams {
            k_r: p.k_r * s,
            g_isc0: p.g_isc0 * s,
            g_isc1: p.g_isc1 * s,
            g_s: p.g_s * s,
            beta: p.beta * s,
            bg: p.bg * s,
        };
        let a = readout_contrast(&p, 1.0, 300.0, ReadoutMode::OffResonant).unwrap();
        let b = readout_contrast(&scaled, 1.0, 300.0 / s, ReadoutMode::OffResonant).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }
}
