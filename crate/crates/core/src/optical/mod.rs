//! Five-level rate-equation model of the optical cycle: ground mS=0/±1,
//! excited mS=0/±1, and one singlet shelving level.
//!
//! State order (G0, G1, E0, E1, S). Pumping drives G0→E0 and G1→E1 at
//! β·P; radiative decay E→G at k_r; spin-selective intersystem crossing
//! E0→S and E1→S; singlet decay S→G0 only. All rates in 1/ns, powers in mW.

mod fits;
mod photons;

pub use fits::{
    extract_biexponential, global_rate_fit, saturation_fit, BiexpFit, GlobalRateFit,
    IscConstraints, SaturationFit,
};
pub use photons::{background_correct_g2, g2_curve, readout_contrast, ReadoutMode};

use crate::linalg::{propagator, solve_real, ComplexMatrix};
use crate::{Error, Result};

/// Population state indices.
pub const G0: usize = 0;
pub const G1: usize = 1;
pub const E0: usize = 2;
pub const E1: usize = 3;
pub const S: usize = 4;

/// Transition rates of the five-level optical cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    /// Radiative decay E→G, 1/ns.
    pub k_r: f64,
    /// mS=0 excited→singlet intersystem crossing, 1/ns.
    pub g_isc0: f64,
    /// mS=±1 excited→singlet intersystem crossing, 1/ns.
    pub g_isc1: f64,
    /// Singlet→ground(mS=0) decay, 1/ns. The singlet→mS=±1 channel is
    /// identically zero in this model.
    pub g_s: f64,
    /// Pump rate per unit optical power, 1/(ns·mW).
    pub beta: f64,
    /// Background added to the photoluminescence rate, 1/ns.
    pub bg: f64,
}

impl Default for RateParams {
    /// Defaults reproduce the measured apparent lifetimes: 1/k_r = 23 ns
    /// shortened to τ₀ = 18.7 ns by the mS=0 ISC and τ₁ = 15.7 ns by the
    /// mS=±1 ISC, with a singlet lifetime of 11 ns.
    fn default() -> Self {
        Self {
            k_r: 1.0 / 23.0,
            g_isc0: 0.0100,
            g_isc1: 0.0202,
            g_s: 20.0 / 220.0,
            beta: 0.045,
            bg: 0.0,
        }
    }
}

impl RateParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k_r", self.k_r),
            ("g_isc0", self.g_isc0),
            ("g_isc1", self.g_isc1),
            ("g_s", self.g_s),
            ("beta", self.beta),
            ("bg", self.bg),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParam(format!("{name} = {v} must be ≥ 0")));
            }
        }
        Ok(())
    }

    /// Apparent excited-state lifetimes (τ₀, τ₁), ns.
    pub fn apparent_lifetimes(&self) -> (f64, f64) {
        (
            1.0 / (self.k_r + self.g_isc0),
            1.0 / (self.k_r + self.g_isc1),
        )
    }
}

/// Populations of (G0, G1, E0, E1, S) at a point in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationState {
    pub populations: [f64; 5],
    pub time_ns: f64,
}

impl PopulationState {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.populations.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam(format!(
                "populations sum to {sum}, not 1"
            )));
        }
        if self.populations.iter().any(|&p| !(-1e-12..=1.0 + 1e-12).contains(&p)) {
            return Err(Error::InvalidParam("population outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Which spin state the preparation sequence targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preparation {
    Ms0,
    Ms1,
}

impl std::str::FromStr for Preparation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ms0" | "MS0" | "Ms0" => Ok(Preparation::Ms0),
            "ms1" | "MS1" | "Ms1" => Ok(Preparation::Ms1),
            other => Err(Error::InvalidParam(format!("unknown preparation {other}"))),
        }
    }
}

/// Ground-state populations after preparation: optical polarization `pol`
/// into mS=0, optionally followed by a π-pulse of the given fidelity.
pub fn prepared_ground_split(pol: f64, prep: Preparation, pi_fidelity: f64) -> (f64, f64) {
    match prep {
        Preparation::Ms0 => (pol, 1.0 - pol),
        Preparation::Ms1 => {
            let f = pi_fidelity.clamp(0.0, 1.0);
            let g0 = f * (1.0 - pol) + (1.0 - f) * pol;
            (g0, 1.0 - g0)
        }
    }
}

/// A photoluminescence time trace.
#[derive(Debug, Clone)]
pub struct PlTrace {
    pub times_ns: Vec<f64>,
    /// PL rate: k_r·(E0+E1) + bg, 1/ns.
    pub pl: Vec<f64>,
    /// Laser power during the trace, mW (0 for pulsed decays).
    pub power_mw: f64,
    pub preparation: Preparation,
}

/// Rate-equation generator; columns sum to zero.
///
/// `resonant_ms0_only` pumps only G0→E0 (resonant drive of a cycling
/// transition); otherwise both ground states are pumped at β·P.
pub fn build_generator(
    p: &RateParams,
    pump_on: bool,
    power_mw: f64,
    resonant_ms0_only: bool,
) -> Result<ComplexMatrix> {
    build_generator_with_leak(p, pump_on, power_mw, resonant_ms0_only, 0.0)
}

/// Generator with an extra E0→G1 spin-flip leak rate (resonant readout).
pub fn build_generator_with_leak(
    p: &RateParams,
    pump_on: bool,
    power_mw: f64,
    resonant_ms0_only: bool,
    leak: f64,
) -> Result<ComplexMatrix> {
    p.validate()?;
    if !(power_mw >= 0.0) || !(leak >= 0.0) {
        return Err(Error::InvalidParam("power and leak must be ≥ 0".into()));
    }
    let mut g = [[0.0f64; 5]; 5];
    let mut add = |to: usize, from: usize, rate: f64| {
        g[to][from] += rate;
        g[from][from] -= rate;
    };
    if pump_on {
        let pump = p.beta * power_mw;
        add(E0, G0, pump);
        if !resonant_ms0_only {
            add(E1, G1, pump);
        }
    }
    add(G0, E0, p.k_r);
    add(G1, E1, p.k_r);
    add(S, E0, p.g_isc0);
    add(S, E1, p.g_isc1);
    add(G0, S, p.g_s);
    if leak > 0.0 {
        add(G1, E0, leak);
    }
    let rows: Vec<Vec<f64>> = g.iter().map(|r| r.to_vec()).collect();
    Ok(ComplexMatrix::from_real_rows(&rows))
}

/// Populations along a (sorted, nonnegative) time grid under a generator,
/// propagated exactly segment by segment.
pub fn propagate_populations(
    generator: &ComplexMatrix,
    initial: &[f64; 5],
    times_ns: &[f64],
) -> Result<Vec<[f64; 5]>> {
    if times_ns.iter().any(|&t| t < 0.0) {
        return Err(Error::InvalidParam("negative time".into()));
    }
    if times_ns.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParam("time grid must be nondecreasing".into()));
    }
    let mut out = Vec::with_capacity(times_ns.len());
    let mut state = *initial;
    let mut t_prev = 0.0;
    let mut cache: Option<(u64, Vec<Vec<f64>>)> = None;
    for &t in times_ns {
        let dt = t - t_prev;
        if dt > 0.0 {
            let u = match &cache {
                Some((bits, u)) if *bits == dt.to_bits() => u.clone(),
                _ => {
                    let u = propagator(generator, dt)?;
                    cache = Some((dt.to_bits(), u.clone()));
                    u
                }
            };
            let mut next = [0.0; 5];
            for (i, row) in u.iter().enumerate() {
                next[i] = row.iter().zip(&state).map(|(a, b)| a * b).sum();
            }
            state = next;
        }
        t_prev = t;
        out.push(state);
    }
    Ok(out)
}

/// PL transient after a short excitation pulse: the excited manifold starts
/// split P0 : (1−P0) between E0 and E1 with the pump off.
///
/// PL(t) = k_r·(E0 + E1) + bg = a₀·e^(−t/τ₀) + a₁·e^(−t/τ₁) + bg with
/// 1/τᵢ = k_r + G_isc_i and a₀/(a₀+a₁) = P0.
pub fn pulsed_pl(p: &RateParams, p0: f64, times_ns: &[f64]) -> Result<PlTrace> {
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::InvalidParam(format!(
            "initial polarization {p0} outside [0, 1]"
        )));
    }
    let g = build_generator(p, false, 0.0, false)?;
    let initial = [0.0, 0.0, p0, 1.0 - p0, 0.0];
    let states = propagate_populations(&g, &initial, times_ns)?;
    Ok(PlTrace {
        times_ns: times_ns.to_vec(),
        pl: states
            .iter()
            .map(|s| p.k_r * (s[E0] + s[E1]) + p.bg)
            .collect(),
        power_mw: 0.0,
        preparation: Preparation::Ms0,
    })
}

/// PL under continuous excitation from a prepared ground-state split.
pub fn cw_pl(
    p: &RateParams,
    power_mw: f64,
    initial_ground: (f64, f64),
    preparation: Preparation,
    times_ns: &[f64],
) -> Result<PlTrace> {
    if !(power_mw > 0.0) {
        return Err(Error::InvalidParam("CW trace requires power > 0".into()));
    }
    let (g0, g1) = initial_ground;
    if g0 < 0.0 || g1 < 0.0 || (g0 + g1 - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParam(format!(
            "ground split ({g0}, {g1}) must be nonnegative and sum to 1"
        )));
    }
    let gen = build_generator(p, true, power_mw, false)?;
    let states = propagate_populations(&gen, &[g0, g1, 0.0, 0.0, 0.0], times_ns)?;
    Ok(PlTrace {
        times_ns: times_ns.to_vec(),
        pl: states
            .iter()
            .map(|s| p.k_r * (s[E0] + s[E1]) + p.bg)
            .collect(),
        power_mw,
        preparation,
    })
}

/// Stationary distribution of a conserving generator, normalized to sum 1.
pub fn steady_state(generator: &ComplexMatrix) -> Result<[f64; 5]> {
    let n = generator.dim();
    if n != 5 {
        return Err(Error::Dimension("expected the 5-level generator".into()));
    }
    // Replace the last row with the normalization constraint.
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| generator[(i, j)].re).collect())
        .collect();
    for x in a[n - 1].iter_mut() {
        *x = 1.0;
    }
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    let v = solve_real(a, b)?;
    let mut out = [0.0; 5];
    out.copy_from_slice(&v);
    Ok(out)
}
