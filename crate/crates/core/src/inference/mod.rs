//! Shared fitting machinery: weighted nonlinear least squares, ensemble MCMC
//! with credible intervals, the PLE ensemble fit, and the
//! linewidth-temperature fit.

mod least_squares;
mod linewidth;
mod mcmc;
mod ple_fit;

pub use least_squares::{least_squares, LsqFit, LsqOptions, Transform, Weights};
pub use linewidth::{fit_linewidth_temperature, LinewidthFit};
pub use mcmc::{mcmc_sample, mcmc_sample_spread};
pub use ple_fit::{
    fit_ple_ensemble, synthetic_ensemble, EnsemblePleDataset, PleDefectRecord, PleFitConfig,
    PlePriors,
};

use rand::Rng;
use rand_distr::{Distribution, Normal as NormalDist};
use serde_json::{json, Value};

/// Per-parameter prior for Bayesian fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    Uniform { lo: f64, hi: f64 },
    /// Support [0, ∞); reproduces one-sided intervals for boundary truths.
    HalfNormal { scale: f64 },
    Normal { mean: f64, sd: f64 },
}

impl Prior {
    /// Log density up to a constant; −∞ outside the support.
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => {
                if x >= lo && x <= hi {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::HalfNormal { scale } => {
                if x >= 0.0 {
                    -0.5 * (x / scale).powi(2)
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::Normal { mean, sd } => -0.5 * ((x - mean) / sd).powi(2),
        }
    }

    /// Characteristic width used to disperse initial walkers.
    fn width(&self) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => hi - lo,
            Prior::HalfNormal { scale } => scale,
            Prior::Normal { sd, .. } => sd,
        }
    }

    /// Draw a point near `center`, clamped into the support. With no
    /// explicit spread the draw uses 5% of the prior width.
    pub fn disperse<R: Rng>(&self, center: f64, sd: Option<f64>, rng: &mut R) -> f64 {
        let sd = sd
            .unwrap_or(0.05 * self.width())
            .max(1e-12 * self.width().max(1.0));
        let normal = NormalDist::new(0.0, sd).expect("positive dispersal width");
        let x = center + normal.sample(rng);
        match *self {
            Prior::Uniform { lo, hi } => x.clamp(lo + 1e-12 * (hi - lo), hi - 1e-12 * (hi - lo)),
            Prior::HalfNormal { .. } => x.abs(),
            Prior::Normal { .. } => x,
        }
    }
}

/// Posterior draws with reproducibility metadata and convergence diagnostics.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub names: Vec<String>,
    /// Post-burn-in draws, one parameter vector per row.
    pub samples: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    pub seed: u64,
    pub n_walkers: usize,
    pub n_steps: usize,
    /// Split-chain R-hat per parameter.
    pub rhat: Vec<f64>,
    /// Effective sample size per parameter.
    pub ess: Vec<f64>,
    pub acceptance: f64,
    /// Convergence or identifiability warnings; empty when clean.
    pub flags: Vec<String>,
}

impl Posterior {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Posterior median per parameter.
    pub fn median(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| {
                let mut xs: Vec<f64> = self.samples.iter().map(|s| s[j]).collect();
                quantile_inplace(&mut xs, 0.5)
            })
            .collect()
    }

    /// Equal-tailed credible interval per parameter.
    pub fn credible_interval(&self, level: f64) -> Vec<(f64, f64)> {
        let tail = 0.5 * (1.0 - level);
        (0..self.dim())
            .map(|j| {
                let mut xs: Vec<f64> = self.samples.iter().map(|s| s[j]).collect();
                let lo = quantile_inplace(&mut xs, tail);
                let hi = quantile_inplace(&mut xs, 1.0 - tail);
                (lo, hi)
            })
            .collect()
    }

    /// Serialize point estimates, 95% intervals, diagnostics, and the seed.
    pub fn to_json(&self) -> Value {
        let medians = self.median();
        let intervals = self.credible_interval(0.95);
        let params: Vec<Value> = self
            .names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                json!({
                    "name": name,
                    "estimate": medians[j],
                    "interval95": [intervals[j].0, intervals[j].1],
                    "rhat": self.rhat[j],
                    "ess": self.ess[j],
                })
            })
            .collect();
        json!({
            "parameters": params,
            "draws": self.samples.len(),
            "walkers": self.n_walkers,
            "steps": self.n_steps,
            "acceptance": self.acceptance,
            "seed": self.seed,
            "flags": self.flags,
        })
    }
}

/// Equal-tailed quantile interval of raw samples.
///
/// Requires at least 1000 draws so 95% tails are populated.
pub fn credible_interval(samples: &[Vec<f64>], level: f64) -> crate::Result<Vec<(f64, f64)>> {
    if samples.len() < 1000 {
        return Err(crate::Error::InvalidParam(format!(
            "need at least 1000 draws for credible intervals, got {}",
            samples.len()
        )));
    }
    let dim = samples[0].len();
    let tail = 0.5 * (1.0 - level);
    Ok((0..dim)
        .map(|j| {
            let mut xs: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            let lo = quantile_inplace(&mut xs, tail);
            let hi = quantile_inplace(&mut xs, 1.0 - tail);
            (lo, hi)
        })
        .collect())
}

/// Linear-interpolation quantile (sorts its input).
pub(crate) fn quantile_inplace(xs: &mut [f64], q: f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n == 1 {
        return xs[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    xs[lo] * (1.0 - frac) + xs[hi] * frac
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_samples_quantiles() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<Vec<f64>> = (0..100_000).map(|_| vec![rng.gen::<f64>()]).collect();
        let iv = credible_interval(&samples, 0.95).unwrap();
        assert!((iv[0].0 - 0.025).abs() < 0.01);
        assert!((iv[0].1 - 0.975).abs() < 0.01);
    }

    #[test]
    fn point_mass_degenerate_interval() {
        let samples: Vec<Vec<f64>> = (0..2000).map(|_| vec![1.25]).collect();
        let iv = credible_interval(&samples, 0.95).unwrap();
        assert_eq!(iv[0], (1.25, 1.25));
    }

    #[test]
    fn half_normal_matches_analytic_quantiles() {
        // |N(0, σ)| quantiles, checked against the analytic inverse CDF.
        use rand::SeedableRng;
        use rand_distr::Distribution;
        let sigma = 0.7;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let normal = NormalDist::new(0.0, sigma).unwrap();
        let samples: Vec<Vec<f64>> = (0..200_000)
            .map(|_| vec![f64::abs(normal.sample(&mut rng))])
            .collect();
        let iv = credible_interval(&samples, 0.95).unwrap();
        let analytic = |p: f64| {
            // Half-normal quantile = σ · Φ⁻¹((1+p)/2).
            use statrs::distribution::{ContinuousCDF, Normal};
            let std = Normal::new(0.0, 1.0).unwrap();
            sigma * std.inverse_cdf(0.5 * (1.0 + p))
        };
        let lo_true = analytic(0.025);
        let hi_true = analytic(0.975);
        assert!((iv[0].0 - lo_true).abs() / lo_true < 0.02, "{} vs {}", iv[0].0, lo_true);
        assert!((iv[0].1 - hi_true).abs() / hi_true < 0.02, "{} vs {}", iv[0].1, hi_true);
    }

    #[test]
    fn too_few_draws_rejected() {
        let samples: Vec<Vec<f64>> = (0..100).map(|_| vec![0.0]).collect();
        assert!(credible_interval(&samples, 0.95).is_err());
    }
}
