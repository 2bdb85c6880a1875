//! Fits against the rate-equation model: simultaneous biexponential
//! lifetimes, the global CW rate fit, and spin-flip saturation.

use super::{cw_pl, prepared_ground_split, PlTrace, RateParams};
use crate::inference::{least_squares, LsqOptions, Transform, Weights};
use crate::{Error, Result};

/// Simultaneous biexponential fit of a θ=0 / θ=π trace pair.
#[derive(Debug, Clone)]
pub struct BiexpFit {
    /// Slow (mS=0) apparent lifetime, ns.
    pub tau0_ns: f64,
    /// Fast (mS=±1) apparent lifetime, ns.
    pub tau1_ns: f64,
    /// Ground-state polarization into mS=0 before the π-pulse.
    pub polarization: f64,
    /// τ₀-component fraction of the θ=π trace.
    pub pi_fraction: f64,
    pub tau0_half_width_95: f64,
    pub tau1_half_width_95: f64,
    pub polarization_half_width_95: f64,
    pub cost: f64,
}

/// Fit both pulsed-PL traces simultaneously, sharing τ₀ and τ₁.
///
/// The θ=0 trace is taken after optical polarization; the θ=π trace after an
/// additional π-pulse on the mS=−1 transition. Polarization is the
/// τ₀-amplitude fraction of the θ=0 trace. Component lifetimes closer than
/// 5% are reported as degenerate.
pub fn extract_biexponential(
    trace_theta0: &PlTrace,
    trace_theta_pi: &PlTrace,
    sigmas: Option<(&[f64], &[f64])>,
) -> Result<BiexpFit> {
    if trace_theta0.times_ns != trace_theta_pi.times_ns {
        return Err(Error::InvalidParam(
            "the two traces must share one time grid".into(),
        ));
    }
    let times = &trace_theta0.times_ns;
    if times.len() < 10 {
        return Err(Error::InvalidParam("need at least 10 samples".into()));
    }

    let mut data: Vec<f64> = trace_theta0.pl.clone();
    data.extend_from_slice(&trace_theta_pi.pl);
    let weights = match sigmas {
        Some((a, b)) => {
            let mut s = a.to_vec();
            s.extend_from_slice(b);
            Weights::Sigma(s)
        }
        None => Weights::Uniform,
    };

    // params: [tau0, tau1, f0, fpi, a0, api]. The fractions stay unclamped
    // inside the model so their gradients never vanish at the domain edge.
    let model = |p: &[f64]| -> Vec<f64> {
        let (tau0, tau1) = (p[0], p[1]);
        let (f0, fpi) = (p[2], p[3]);
        let (a0, api) = (p[4], p[5]);
        let mut out = Vec::with_capacity(2 * times.len());
        for &t in times {
            out.push(a0 * (f0 * (-t / tau0).exp() + (1.0 - f0) * (-t / tau1).exp()));
        }
        for &t in times {
            out.push(api * (fpi * (-t / tau0).exp() + (1.0 - fpi) * (-t / tau1).exp()));
        }
        out
    };

    let peak0 = trace_theta0.pl.iter().cloned().fold(0.0f64, f64::max);
    let peak_pi = trace_theta_pi.pl.iter().cloned().fold(0.0f64, f64::max);
    let span = times.iter().cloned().fold(0.0f64, f64::max);
    let init = [span / 4.0, span / 6.0, 0.9, 0.1, peak0.max(1e-9), peak_pi.max(1e-9)];
    let fit = least_squares(
        model,
        &data,
        &weights,
        &init,
        &LsqOptions {
            transforms: Some(vec![
                Transform::Log,
                Transform::Log,
                Transform::Linear,
                Transform::Linear,
                Transform::Log,
                Transform::Log,
            ]),
            rel_step_tol: 1e-12,
            ..Default::default()
        },
    )
    .map_err(|e| match e {
        // A flat amplitude-fraction direction means the two components
        // cannot be told apart at this noise level.
        Error::RankDeficient { .. } => Error::NonIdentifiable(
            "lifetime components indistinguishable (flat amplitude direction)".into(),
        ),
        other => other,
    })?;

    let (mut tau0, mut tau1) = (fit.params[0], fit.params[1]);
    let (mut f0, mut fpi) = (fit.params[2], fit.params[3]);
    if !(-0.05..=1.05).contains(&f0) || !(-0.05..=1.05).contains(&fpi) {
        return Err(Error::NonIdentifiable(format!(
            "component fractions ({f0:.3}, {fpi:.3}) far outside [0, 1]"
        )));
    }
    let (mut w_tau0, mut w_tau1) = (fit.half_width_95(0), fit.half_width_95(1));
    let mut w_f0 = fit.half_width_95(2);
    // Canonical ordering: τ₀ is the slow (mS=0) component.
    if tau0 < tau1 {
        std::mem::swap(&mut tau0, &mut tau1);
        std::mem::swap(&mut w_tau0, &mut w_tau1);
        f0 = 1.0 - f0;
        fpi = 1.0 - fpi;
        w_f0 = fit.half_width_95(3);
    }
    let ratio = tau0 / tau1;
    if ratio < 1.05 {
        return Err(Error::NonIdentifiable(format!(
            "lifetime components indistinguishable: τ₀/τ₁ = {ratio:.4} < 1.05"
        )));
    }
    Ok(BiexpFit {
        tau0_ns: tau0,
        tau1_ns: tau1,
        polarization: f0,
        pi_fraction: fpi,
        tau0_half_width_95: w_tau0,
        tau1_half_width_95: w_tau1,
        polarization_half_width_95: w_f0,
        cost: fit.cost,
    })
}

/// ISC rates and polarization carried from the biexponential experiment into
/// the global CW fit.
#[derive(Debug, Clone, Copy)]
pub struct IscConstraints {
    pub g_isc0: f64,
    pub g_isc1: f64,
    pub polarization: f64,
    /// π-pulse fidelity for the mS=±1 preparation.
    pub pi_fidelity: f64,
}

/// Global rate fit across CW traces at several powers and two preparations.
#[derive(Debug, Clone)]
pub struct GlobalRateFit {
    pub params: RateParams,
    pub k_r_half_width_95: f64,
    pub g_s_half_width_95: f64,
    pub beta_half_width_95: f64,
    pub cost: f64,
    /// RMS residual per trace, in trace order.
    pub per_trace_rms: Vec<f64>,
}

/// Fit (k_r, G_s, β) jointly across all traces; the pump for each trace is
/// β times its recorded power, ISC rates and polarization are fixed by the
/// biexponential constraints, and the background is taken from `template`.
pub fn global_rate_fit(
    traces: &[PlTrace],
    constraints: &IscConstraints,
    template: &RateParams,
) -> Result<GlobalRateFit> {
    if traces.len() < 2 {
        return Err(Error::InvalidParam("need at least two traces".into()));
    }
    for tr in traces {
        if !(tr.power_mw > 0.0) {
            return Err(Error::InvalidParam(
                "global fit expects CW traces with power > 0".into(),
            ));
        }
        if tr.times_ns.len() < 4 {
            return Err(Error::InvalidParam("trace too short".into()));
        }
    }

    let data: Vec<f64> = traces.iter().flat_map(|t| t.pl.iter().cloned()).collect();
    let predict = |p: &[f64]| -> Vec<f64> {
        let rates = RateParams {
            k_r: p[0],
            g_s: p[1],
            beta: p[2],
            g_isc0: constraints.g_isc0,
            g_isc1: constraints.g_isc1,
            bg: template.bg,
        };
        let mut out = Vec::with_capacity(data.len());
        for tr in traces {
            let split = prepared_ground_split(
                constraints.polarization,
                tr.preparation,
                constraints.pi_fidelity,
            );
            match cw_pl(&rates, tr.power_mw, split, tr.preparation, &tr.times_ns) {
                Ok(sim) => out.extend(sim.pl),
                Err(_) => out.extend(std::iter::repeat(f64::INFINITY).take(tr.times_ns.len())),
            }
        }
        out
    };

    let init = [
        template.k_r.max(1e-4),
        template.g_s.max(1e-4),
        template.beta.max(1e-4),
    ];
    let fit = least_squares(
        predict,
        &data,
        &Weights::Uniform,
        &init,
        &LsqOptions {
            transforms: Some(vec![Transform::Log, Transform::Log, Transform::Log]),
            ..Default::default()
        },
    )
    .map_err(|e| match e {
        Error::NoConvergence { what: _, detail } => Error::NoConvergence {
            what: "global rate fit".into(),
            detail,
        },
        other => other,
    })?;

    if !fit.converged {
        // Report per-trace residuals with the failure.
        let pred = predict(&fit.params);
        let mut idx = 0;
        let mut per_trace = Vec::new();
        for tr in traces {
            let n = tr.times_ns.len();
            let rms = (tr
                .pl
                .iter()
                .zip(&pred[idx..idx + n])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / n as f64)
                .sqrt();
            per_trace.push(rms);
            idx += n;
        }
        return Err(Error::NoConvergence {
            what: "global rate fit".into(),
            detail: format!("per-trace RMS residuals: {per_trace:?}"),
        });
    }

    let pred = predict(&fit.params);
    let mut idx = 0;
    let mut per_trace_rms = Vec::new();
    for tr in traces {
        let n = tr.times_ns.len();
        let rms = (tr
            .pl
            .iter()
            .zip(&pred[idx..idx + n])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        per_trace_rms.push(rms);
        idx += n;
    }

    Ok(GlobalRateFit {
        params: RateParams {
            k_r: fit.params[0],
            g_s: fit.params[1],
            beta: fit.params[2],
            g_isc0: constraints.g_isc0,
            g_isc1: constraints.g_isc1,
            bg: template.bg,
        },
        k_r_half_width_95: fit.half_width_95(0),
        g_s_half_width_95: fit.half_width_95(1),
        beta_half_width_95: fit.half_width_95(2),
        cost: fit.cost,
        per_trace_rms,
    })
}

/// Saturation fit result for R(P) = R_max·P/(P + P_sat).
#[derive(Debug, Clone)]
pub struct SaturationFit {
    pub r_max_khz: f64,
    pub p_sat_mw: f64,
    pub r_max_half_width_95: f64,
    pub p_sat_half_width_95: f64,
    pub cost: f64,
}

/// Saturation model evaluated at one power.
pub fn saturation_rate(r_max: f64, p_sat: f64, power: f64) -> f64 {
    r_max * power / (power + p_sat)
}

/// Least-squares fit of the spin-flip saturation curve.
pub fn saturation_fit(
    powers_mw: &[f64],
    rates_khz: &[f64],
    sigmas_khz: Option<&[f64]>,
) -> Result<SaturationFit> {
    if powers_mw.len() != rates_khz.len() {
        return Err(Error::Dimension("powers and rates differ in length".into()));
    }
    if powers_mw.len() < 4 {
        return Err(Error::InvalidParam("need at least 4 points".into()));
    }
    let weights = match sigmas_khz {
        Some(s) => Weights::Sigma(s.to_vec()),
        None => Weights::Uniform,
    };
    let r_hi = rates_khz.iter().cloned().fold(0.0f64, f64::max);
    let mut ps = powers_mw.to_vec();
    ps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p_med = ps[ps.len() / 2];
    let fit = least_squares(
        |p| {
            powers_mw
                .iter()
                .map(|&x| saturation_rate(p[0], p[1], x))
                .collect()
        },
        rates_khz,
        &weights,
        &[r_hi.max(1e-6) * 1.2, p_med.max(1e-6)],
        &LsqOptions {
            transforms: Some(vec![Transform::Log, Transform::Log]),
            ..Default::default()
        },
    )?;
    Ok(SaturationFit {
        r_max_khz: fit.params[0],
        p_sat_mw: fit.params[1],
        r_max_half_width_95: fit.half_width_95(0),
        p_sat_half_width_95: fit.half_width_95(1),
        cost: fit.cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optical::{pulsed_pl, Preparation};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_distr::Distribution;

    fn pulse_pair(p: &RateParams, pol: f64, pi_fidelity: f64) -> (PlTrace, PlTrace) {
        let times: Vec<f64> = (0..400).map(|i| i as f64 * 0.25).collect();
        let t0 = pulsed_pl(p, pol, &times).unwrap();
        // π-pulse swaps the ground populations before excitation.
        let p0_pi = pi_fidelity * (1.0 - pol) + (1.0 - pi_fidelity) * pol;
        let mut tpi = pulsed_pl(p, p0_pi, &times).unwrap();
        tpi.preparation = Preparation::Ms1;
        (t0, tpi)
    }

    #[test]
    fn noiseless_pair_inverts_exactly() {
        let p = RateParams::default();
        let (t0, tpi) = pulse_pair(&p, 0.965, 1.0);
        let fit = extract_biexponential(&t0, &tpi, None).unwrap();
        let (tau0, tau1) = p.apparent_lifetimes();
        assert_abs_diff_eq!(fit.tau0_ns, tau0, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.tau1_ns, tau1, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.polarization, 0.965, epsilon = 1e-6);
    }

    #[test]
    fn noisy_pair_recovers_within_reported_uncertainties() {
        // 2% relative (counting-style) noise with matching weights.
        let p = RateParams::default();
        let (mut t0, mut tpi) = pulse_pair(&p, 0.965, 1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let noise = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let mut s0 = Vec::new();
        let mut spi = Vec::new();
        for y in t0.pl.iter_mut() {
            let sigma = 0.02 * *y + 1e-4 * p.k_r;
            *y += sigma * noise.sample(&mut rng);
            s0.push(sigma);
        }
        for y in tpi.pl.iter_mut() {
            let sigma = 0.02 * *y + 1e-4 * p.k_r;
            *y += sigma * noise.sample(&mut rng);
            spi.push(sigma);
        }
        let fit = extract_biexponential(&t0, &tpi, Some((&s0, &spi))).unwrap();
        let (tau0, tau1) = p.apparent_lifetimes();
        assert!((fit.tau0_ns - tau0).abs() < 0.3, "tau0 {}", fit.tau0_ns);
        assert!((fit.tau1_ns - tau1).abs() < 0.3, "tau1 {}", fit.tau1_ns);
        assert!(
            fit.polarization > 0.925 && fit.polarization < 1.0,
            "polarization {}",
            fit.polarization
        );
    }

    #[test]
    fn imperfect_pi_pulse_biases_pi_fraction() {
        let p = RateParams::default();
        let pol = 0.95;
        let (t0, tpi) = pulse_pair(&p, pol, 0.9);
        let fit = extract_biexponential(&t0, &tpi, None).unwrap();
        // Residual mS=0 population raises the θ=π τ₀ fraction by exactly the
        // leakage predicted by the forward model.
        let expect_fpi = 0.9 * (1.0 - pol) + 0.1 * pol;
        assert_abs_diff_eq!(fit.pi_fraction, expect_fpi, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.polarization, pol, epsilon = 1e-6);
    }

    #[test]
    fn degenerate_lifetimes_reported() {
        let p = RateParams {
            g_isc1: 0.0105,
            ..Default::default()
        };
        let (t0, tpi) = pulse_pair(&p, 0.9, 1.0);
        match extract_biexponential(&t0, &tpi, None) {
            Err(Error::NonIdentifiable(msg)) => {
                assert!(msg.contains("indistinguishable"), "{msg}")
            }
            other => panic!("expected degeneracy report, got {other:?}"),
        }
    }

    #[test]
    fn saturation_roundtrip() {
        let truth = (330.0, 0.8);
        let powers: Vec<f64> = (1..=9).map(|i| i as f64 * 0.35).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let noise = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let rates: Vec<f64> = powers
            .iter()
            .map(|&p| saturation_rate(truth.0, truth.1, p) * (1.0 + 0.02 * noise.sample(&mut rng) / 2.0))
            .collect();
        let fit = saturation_fit(&powers, &rates, None).unwrap();
        assert!(
            (fit.r_max_khz - truth.0).abs() / truth.0 < 0.05,
            "R_max {}",
            fit.r_max_khz
        );
    }

    #[test]
    fn below_saturation_data_poorly_constrains_rmax() {
        let truth = (330.0, 5.0);
        // Deep in the linear regime only the ratio R_max/P_sat is measured.
        let powers = [0.02, 0.04, 0.06, 0.08, 0.1];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let noise = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let rates: Vec<f64> = powers
            .iter()
            .map(|&p| {
                let r = saturation_rate(truth.0, truth.1, p);
                r * (1.0 + 0.02 * noise.sample(&mut rng))
            })
            .collect();
        match saturation_fit(&powers, &rates, None) {
            Ok(fit) => assert!(
                fit.r_max_half_width_95 > 0.5 * fit.r_max_khz,
                "interval should be wide: {} ± {}",
                fit.r_max_khz,
                fit.r_max_half_width_95
            ),
            // A flat R_max/P_sat trade-off direction is the same diagnosis.
            Err(Error::RankDeficient { .. }) => {}
            Err(other) => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn saturation_model_is_zero_at_zero_power() {
        assert_eq!(saturation_rate(330.0, 0.8, 0.0), 0.0);
    }
}
