//! Optical linewidth versus temperature: Γ(T) = Γ₀ + a·T⁵.
//!
//! The power law grows with temperature (phonon-driven broadening above
//! ~20 K); the exponent defaults to 5 and may optionally be fit.

use super::{least_squares, LsqFit, LsqOptions, Transform, Weights};
use crate::{Error, Result};

/// Result of the linewidth-temperature fit.
#[derive(Debug, Clone)]
pub struct LinewidthFit {
    /// Residual low-temperature linewidth, MHz.
    pub gamma0_mhz: f64,
    /// Power-law coefficient, MHz/K^exponent.
    pub a: f64,
    /// Power-law exponent (5 unless fit).
    pub exponent: f64,
    pub gamma0_half_width_95: f64,
    pub a_half_width_95: f64,
    pub exponent_half_width_95: Option<f64>,
    pub fit: LsqFit,
}

/// Fit Γ(T) = Γ₀ + a·T^p to linewidths in MHz over temperatures in K.
///
/// Requires at least five temperatures spanning both sides of 20 K. With
/// `free_exponent`, p is fit alongside Γ₀ and a; otherwise p = 5.
pub fn fit_linewidth_temperature(
    temperatures_k: &[f64],
    widths_mhz: &[f64],
    sigmas_mhz: Option<&[f64]>,
    free_exponent: bool,
) -> Result<LinewidthFit> {
    if temperatures_k.len() != widths_mhz.len() {
        return Err(Error::Dimension(
            "temperature and width lists differ in length".into(),
        ));
    }
    if temperatures_k.len() < 5 {
        return Err(Error::InvalidParam(
            "need at least 5 temperatures".into(),
        ));
    }
    let t_min = temperatures_k.iter().cloned().fold(f64::INFINITY, f64::min);
    let t_max = temperatures_k.iter().cloned().fold(0.0f64, f64::max);
    if !(t_min < 20.0 && t_max > 20.0) {
        return Err(Error::InvalidParam(
            "temperatures must span below and above 20 K".into(),
        ));
    }
    if temperatures_k.iter().any(|&t| t <= 0.0) {
        return Err(Error::InvalidParam("temperatures must be positive".into()));
    }

    let weights = match sigmas_mhz {
        Some(s) => Weights::Sigma(s.to_vec()),
        None => Weights::Uniform,
    };

    // Moment-based initial guess: Γ₀ from the coldest point, a from the hottest.
    let w_cold = widths_mhz
        .iter()
        .zip(temperatures_k)
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    let (w_hot, t_hot) = widths_mhz
        .iter()
        .zip(temperatures_k)
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let gamma0_init = w_cold.max(1e-3);
    let a_init = ((w_hot - w_cold).max(1e-6) / t_hot.powi(5)).max(1e-12);

    if free_exponent {
        let model = |p: &[f64]| -> Vec<f64> {
            temperatures_k
                .iter()
                .map(|&t| p[0] + p[1] * t.powf(p[2]))
                .collect()
        };
        let fit = least_squares(
            model,
            widths_mhz,
            &weights,
            &[gamma0_init, a_init, 5.0],
            &LsqOptions {
                transforms: Some(vec![Transform::Linear, Transform::Log, Transform::Linear]),
                ..Default::default()
            },
        )?;
        Ok(LinewidthFit {
            gamma0_mhz: fit.params[0],
            a: fit.params[1],
            exponent: fit.params[2],
            gamma0_half_width_95: fit.half_width_95(0),
            a_half_width_95: fit.half_width_95(1),
            exponent_half_width_95: Some(fit.half_width_95(2)),
            fit,
        })
    } else {
        let model = |p: &[f64]| -> Vec<f64> {
            temperatures_k
                .iter()
                .map(|&t| p[0] + p[1] * t.powi(5))
                .collect()
        };
        let fit = least_squares(
            model,
            widths_mhz,
            &weights,
            &[gamma0_init, a_init],
            &LsqOptions::default(),
        )?;
        Ok(LinewidthFit {
            gamma0_mhz: fit.params[0],
            a: fit.params[1],
            exponent: 5.0,
            gamma0_half_width_95: fit.half_width_95(0),
            a_half_width_95: fit.half_width_95(1),
            exponent_half_width_95: None,
            fit,
        })
    }
}
