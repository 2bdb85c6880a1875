//! Bayesian ensemble fit of ³E fine-structure constants from PLE line
//! positions of many defects at scattered transverse strains.
//!
//! Shared physics parameters (λz, D_es, Δ₁, Δ₂, ZPL) are sampled jointly with
//! one nuisance strain magnitude per defect; the strain azimuth is gauge and
//! fixed to zero. Line-to-model assignment inside a defect uses the
//! minimum-total-squared-error matching between the sorted observed and
//! predicted lines (order-preserving, which is optimal for squared costs).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{least_squares, mcmc_sample, LsqOptions, Posterior, Prior, Weights};
use crate::excited::{es_energies_ms0, ExcitedStateParams};
use crate::{Error, Result};

/// Observed lines for one defect.
#[derive(Debug, Clone)]
pub struct PleDefectRecord {
    pub defect_id: String,
    /// Absolute line frequencies, THz.
    pub lines_thz: Vec<f64>,
    /// Per-line 1σ uncertainty, MHz (≥ 1 MHz).
    pub sigmas_mhz: Vec<f64>,
    /// Whether microwaves were on for this line; lines taken without
    /// microwaves can only be mS = 0 transitions.
    pub microwaves_on: Vec<bool>,
}

/// A per-form ensemble of defects sharing one set of physics parameters.
#[derive(Debug, Clone)]
pub struct EnsemblePleDataset {
    /// Form label (hh, kk, 3c); metadata only.
    pub form: String,
    /// Nominal ZPL anchor; the fit parameter is the offset from it in GHz.
    pub zpl_nominal_thz: f64,
    /// Ground-state zero-field splitting, GHz (held fixed).
    pub d_ground_ghz: f64,
    pub defects: Vec<PleDefectRecord>,
}

impl EnsemblePleDataset {
    pub fn validate(&self) -> Result<()> {
        if self.defects.is_empty() {
            return Err(Error::InvalidParam("no defects in the ensemble".into()));
        }
        for d in &self.defects {
            let n = d.lines_thz.len();
            if n < 2 || n > 6 {
                return Err(Error::InvalidParam(format!(
                    "defect {} has {n} lines; expected 2–6",
                    d.defect_id
                )));
            }
            if d.sigmas_mhz.len() != n || d.microwaves_on.len() != n {
                return Err(Error::Dimension(format!(
                    "defect {}: per-line arrays differ in length",
                    d.defect_id
                )));
            }
            if d.sigmas_mhz.iter().any(|&s| s < 1.0) {
                return Err(Error::InvalidParam(format!(
                    "defect {}: line σ below the 1 MHz floor",
                    d.defect_id
                )));
            }
        }
        Ok(())
    }
}

/// Priors for the shared parameters and the per-defect strains.
#[derive(Debug, Clone, Copy)]
pub struct PlePriors {
    pub lambda_z: Prior,
    pub d_es: Prior,
    pub delta1: Prior,
    pub delta2: Prior,
    /// Prior on the ZPL offset from the nominal anchor, GHz.
    pub zpl_offset: Prior,
    /// Prior on each per-defect strain magnitude, GHz.
    pub strain: Prior,
}

impl Default for PlePriors {
    fn default() -> Self {
        Self {
            lambda_z: Prior::Uniform { lo: 0.0, hi: 30.0 },
            d_es: Prior::Uniform { lo: 0.0, hi: 30.0 },
            delta1: Prior::Uniform { lo: 0.0, hi: 5.0 },
            delta2: Prior::HalfNormal { scale: 0.2 },
            zpl_offset: Prior::Uniform { lo: -50.0, hi: 50.0 },
            strain: Prior::Uniform { lo: 0.0, hi: 100.0 },
        }
    }
}

/// Sampler configuration.
#[derive(Debug, Clone)]
pub struct PleFitConfig {
    /// Walker count; defaults to max(32, 3·dim) rounded even.
    pub n_walkers: Option<usize>,
    pub n_steps: usize,
    pub seed: u64,
    pub priors: PlePriors,
}

impl Default for PleFitConfig {
    fn default() -> Self {
        Self {
            n_walkers: None,
            n_steps: 1200,
            seed: 42,
            priors: PlePriors::default(),
        }
    }
}

/// Observed line in internal units: offset from nominal ZPL in GHz.
#[derive(Debug, Clone, Copy)]
struct ObsLine {
    offset_ghz: f64,
    sigma_ghz: f64,
    microwaves_on: bool,
}

fn observed_lines(data: &EnsemblePleDataset) -> Vec<Vec<ObsLine>> {
    data.defects
        .iter()
        .map(|d| {
            let mut lines: Vec<ObsLine> = d
                .lines_thz
                .iter()
                .zip(&d.sigmas_mhz)
                .zip(&d.microwaves_on)
                .map(|((&f, &s), &mw)| ObsLine {
                    offset_ghz: (f - data.zpl_nominal_thz) * 1e3,
                    sigma_ghz: s * 1e-3,
                    microwaves_on: mw,
                })
                .collect();
            lines.sort_by(|a, b| a.offset_ghz.partial_cmp(&b.offset_ghz).unwrap());
            lines
        })
        .collect()
}

/// Predicted line offsets (GHz from nominal ZPL) with mS = 0 tags, sorted.
fn predicted_lines(
    shared: &[f64],
    strain: f64,
    d_ground_ghz: f64,
) -> Result<[(f64, bool); 6]> {
    let p = ExcitedStateParams {
        lambda_z: shared[0],
        d_es: shared[1],
        delta1: shared[2],
        delta2: shared[3],
    };
    p.validate()?;
    let levels = es_energies_ms0(&p, strain)?;
    // Two largest ms0 weights are the mS = 0 lines.
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| levels[b].1.partial_cmp(&levels[a].1).unwrap().then(a.cmp(&b)));
    let ms0_a = order[0];
    let ms0_b = order[1];
    let zpl_offset = shared[4];
    let mut out = [(0.0, false); 6];
    for k in 0..6 {
        let ms0 = k == ms0_a || k == ms0_b;
        let f = zpl_offset + levels[k].0 - if ms0 { 0.0 } else { d_ground_ghz };
        out[k] = (f, ms0);
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(out)
}

/// Order-preserving minimum weighted squared error assignment of the sorted
/// observed lines onto the sorted predicted lines (optimal for squared costs
/// on a line). Microwave-off observations may only match mS = 0 predictions.
/// Returns the DP table for cost readout or backtracking.
fn match_table(obs: &[ObsLine], preds: &[(f64, bool)]) -> Vec<Vec<f64>> {
    let n = obs.len();
    let m = preds.len();
    const BIG: f64 = 1e30;
    // dp[i][j] = best cost matching obs[i..] onto predictions j...
    let mut dp = vec![vec![BIG; m + 1]; n + 1];
    for j in 0..=m {
        dp[n][j] = 0.0;
    }
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            // Skip prediction j.
            let mut best = dp[i][j + 1];
            // Or match obs i to prediction j when compatible.
            let compatible = obs[i].microwaves_on || preds[j].1;
            if compatible {
                let r = (obs[i].offset_ghz - preds[j].0) / obs[i].sigma_ghz;
                let c = r * r + dp[i + 1][j + 1];
                if c < best {
                    best = c;
                }
            }
            dp[i][j] = best;
        }
    }
    dp
}

fn match_cost(obs: &[ObsLine], preds: &[(f64, bool)]) -> f64 {
    match_table(obs, preds)[0][0]
}

/// Weighted residual per observed line under the optimal assignment.
fn match_residuals(obs: &[ObsLine], preds: &[(f64, bool)], out: &mut Vec<f64>) {
    let dp = match_table(obs, preds);
    let n = obs.len();
    let m = preds.len();
    let (mut i, mut j) = (0usize, 0usize);
    while i < n && j < m {
        let compatible = obs[i].microwaves_on || preds[j].1;
        if compatible {
            let r = (obs[i].offset_ghz - preds[j].0) / obs[i].sigma_ghz;
            if (r * r + dp[i + 1][j + 1] - dp[i][j]).abs() <= 1e-9 * dp[i][j].abs().max(1.0) {
                out.push(r);
                i += 1;
                j += 1;
                continue;
            }
        }
        j += 1;
    }
    // Unmatchable lines (should not happen with ≤ 6 observations).
    while i < n {
        out.push(1e6);
        i += 1;
    }
}

fn chi_square(
    params: &[f64],
    obs: &[Vec<ObsLine>],
    d_ground_ghz: f64,
) -> f64 {
    let shared = &params[..5];
    let mut total = 0.0;
    for (i, defect_obs) in obs.iter().enumerate() {
        let strain = params[5 + i];
        match predicted_lines(shared, strain, d_ground_ghz) {
            Ok(preds) => total += match_cost(defect_obs, &preds),
            Err(_) => return f64::INFINITY,
        }
    }
    total
}

/// Moment-based starting point from defects with all six lines visible,
/// assuming the low-strain level ordering (E pair, mS0 pair, A pair).
fn heuristic_init(obs: &[Vec<ObsLine>], d_ground_ghz: f64) -> Option<Vec<f64>> {
    let full: Vec<&Vec<ObsLine>> = obs.iter().filter(|d| d.len() == 6).collect();
    if full.is_empty() {
        return None;
    }
    let mut lam = Vec::new();
    let mut des = Vec::new();
    let mut d1 = Vec::new();
    let mut zoff = Vec::new();
    let mut strains_by_defect: Vec<Option<f64>> = Vec::new();
    for d in obs {
        if d.len() != 6 {
            strains_by_defect.push(None);
            continue;
        }
        let v: Vec<f64> = d.iter().map(|l| l.offset_ghz).collect();
        let m_e = 0.5 * (v[0] + v[1]);
        let m_0 = 0.5 * (v[2] + v[3]);
        let m_a = 0.5 * (v[4] + v[5]);
        let delta = 0.5 * (v[3] - v[2]).abs();
        let d_es = (0.5 * (m_a + m_e) + d_ground_ghz - m_0).max(0.05);
        let r = 0.5 * (m_a - m_e);
        let lambda = (r * r - delta * delta).max(0.01).sqrt();
        lam.push(lambda);
        des.push(d_es);
        d1.push(0.5 * (v[5] - v[4]).max(0.0));
        zoff.push(m_0 + 2.0 * d_es / 3.0);
        strains_by_defect.push(Some(delta));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mut init = vec![mean(&lam), mean(&des), mean(&d1), 0.02, mean(&zoff)];
    let fallback = mean(
        &strains_by_defect
            .iter()
            .filter_map(|s| *s)
            .collect::<Vec<f64>>(),
    );
    for s in &strains_by_defect {
        init.push(s.unwrap_or(fallback).max(1e-3));
    }
    Some(init)
}

/// Scan strain per defect on a coarse grid, holding shared parameters fixed.
fn best_strains(
    shared: &[f64],
    obs: &[Vec<ObsLine>],
    d_ground_ghz: f64,
    strain_hi: f64,
) -> Vec<f64> {
    obs.iter()
        .map(|defect_obs| {
            let mut best = (1e-3, f64::INFINITY);
            let steps = 160;
            for k in 0..=steps {
                let s = strain_hi * k as f64 / steps as f64 + 1e-3;
                if let Ok(preds) = predicted_lines(shared, s, d_ground_ghz) {
                    let c = match_cost(defect_obs, &preds);
                    if c < best.1 {
                        best = (s, c);
                    }
                }
            }
            best.0
        })
        .collect()
}

/// Fit the shared ³E parameters and per-defect strains of one ensemble.
///
/// Returns the posterior over (lambda_z, d_es, delta1, delta2,
/// zpl_offset_ghz, strain_<defect>...). ZPL offsets are relative to
/// `data.zpl_nominal_thz`. Under-identified configurations are flagged on
/// the posterior rather than rejected.
pub fn fit_ple_ensemble(data: &EnsemblePleDataset, config: &PleFitConfig) -> Result<Posterior> {
    data.validate()?;
    let obs = observed_lines(data);
    let n_defects = obs.len();
    let dim = 5 + n_defects;
    let d_ground = data.d_ground_ghz;
    let priors_spec = config.priors;

    let mut priors: Vec<Prior> = vec![
        priors_spec.lambda_z,
        priors_spec.d_es,
        priors_spec.delta1,
        priors_spec.delta2,
        priors_spec.zpl_offset,
    ];
    priors.extend(std::iter::repeat(priors_spec.strain).take(n_defects));

    let strain_hi = match priors_spec.strain {
        Prior::Uniform { hi, .. } => hi,
        Prior::HalfNormal { scale } => 4.0 * scale,
        Prior::Normal { mean, sd } => mean + 4.0 * sd,
    };

    // Candidate starting points: the moment heuristic plus prior draws with
    // per-defect strain scans.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    if let Some(h) = heuristic_init(&obs, d_ground) {
        candidates.push(h);
    }
    let draw = |pr: &Prior, rng: &mut ChaCha8Rng| -> f64 {
        match *pr {
            Prior::Uniform { lo, hi } => rng.gen_range(lo..hi),
            Prior::HalfNormal { scale } => {
                let n = Normal::new(0.0, scale).unwrap();
                n.sample(rng).abs()
            }
            Prior::Normal { mean, sd } => {
                let n = Normal::new(mean, sd).unwrap();
                n.sample(rng)
            }
        }
    };
    for _ in 0..12 {
        let shared: Vec<f64> = priors[..5].iter().map(|p| draw(p, &mut rng)).collect();
        let strains = best_strains(&shared, &obs, d_ground, strain_hi);
        let mut cand = shared;
        cand.extend(strains);
        candidates.push(cand);
    }

    // Local refinement of each candidate; keep the best chi-square.
    let residual_count: usize = obs.iter().map(|d| d.len()).sum();
    let zeros = vec![0.0; residual_count];
    let model = |p: &[f64]| -> Vec<f64> {
        let shared = &p[..5];
        let mut out = Vec::with_capacity(residual_count);
        for (i, defect_obs) in obs.iter().enumerate() {
            match predicted_lines(shared, p[5 + i].abs(), d_ground) {
                Ok(preds) => match_residuals(defect_obs, &preds, &mut out),
                Err(_) => out.extend(std::iter::repeat(1e6).take(defect_obs.len())),
            }
        }
        out
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for cand in candidates {
        let refined = least_squares(
            &model,
            &zeros,
            &Weights::Uniform,
            &cand,
            &LsqOptions {
                max_iters: 80,
                covariance: false,
                ..Default::default()
            },
        );
        let point = match refined {
            Ok(f) => f.params,
            Err(_) => cand,
        };
        let cost = chi_square(&point, &obs, d_ground);
        if best.as_ref().map_or(true, |(c, _)| cost < *c) {
            best = Some((cost, point));
        }
    }
    let (_, mut init) = best.expect("at least one candidate");
    // Strain enters the spectrum only through |δ|; fold negatives back.
    for x in init[5..].iter_mut() {
        *x = x.abs();
    }
    // Clamp into prior supports.
    for (x, pr) in init.iter_mut().zip(&priors) {
        *x = match *pr {
            Prior::Uniform { lo, hi } => x.clamp(lo + 1e-9 * (hi - lo), hi - 1e-9 * (hi - lo)),
            Prior::HalfNormal { .. } => x.abs(),
            Prior::Normal { .. } => *x,
        };
    }

    // Laplace spread at the optimum sizes the initial walker cloud; fall
    // back to a fraction of the prior width where the curvature is flat.
    let prior_width = |pr: &Prior| -> f64 {
        match *pr {
            Prior::Uniform { lo, hi } => hi - lo,
            Prior::HalfNormal { scale } => 2.0 * scale,
            Prior::Normal { sd, .. } => 4.0 * sd,
        }
    };
    let spread: Vec<f64> = match least_squares(
        &model,
        &zeros,
        &Weights::Uniform,
        &init,
        &LsqOptions {
            max_iters: 4,
            rank_tol: 0.0,
            ..Default::default()
        },
    ) {
        Ok(f) => (0..dim)
            .map(|j| {
                let w = prior_width(&priors[j]);
                let sigma = f.covariance[j][j].max(0.0).sqrt();
                (2.0 * sigma).clamp(1e-6 * w, 0.25 * w)
            })
            .collect(),
        Err(_) => priors.iter().map(|p| 0.05 * prior_width(p)).collect(),
    };

    let n_walkers = config
        .n_walkers
        .unwrap_or_else(|| (3 * dim).max(32))
        .next_multiple_of(2);
    let log_likelihood = move |p: &[f64]| -> f64 {
        let c = chi_square(p, &obs, d_ground);
        if c.is_finite() {
            -0.5 * c
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut posterior = super::mcmc_sample_spread(
        log_likelihood,
        &priors,
        &init,
        Some(&spread),
        n_walkers,
        config.n_steps,
        config.seed,
    )?;

    let mut names = vec![
        "lambda_z".to_string(),
        "d_es".to_string(),
        "delta1".to_string(),
        "delta2".to_string(),
        "zpl_offset_ghz".to_string(),
    ];
    names.extend(data.defects.iter().map(|d| format!("strain_{}", d.defect_id)));
    posterior.names = names;

    // Flag prior-dominated shared parameters as under-identified.
    let intervals = posterior.credible_interval(0.95);
    for (j, name) in posterior.names.iter().take(5).enumerate() {
        let width = intervals[j].1 - intervals[j].0;
        let prior_width = match priors[j] {
            Prior::Uniform { lo, hi } => hi - lo,
            Prior::HalfNormal { scale } => 2.24 * scale,
            Prior::Normal { sd, .. } => 3.92 * sd,
        };
        if width > 0.7 * prior_width {
            posterior
                .flags
                .push(format!("{name}: posterior spans the prior; under-identified"));
        }
    }

    Ok(posterior)
}

/// Generate a synthetic ensemble from known parameters: all six lines per
/// defect with Gaussian noise of `noise_mhz` and reported uncertainty
/// `sigma_mhz`. The two mS = 0 lines are recorded as microwave-off scans
/// (they are the ones visible without microwave driving), which is also what
/// pins the branch identification in the fit.
pub fn synthetic_ensemble(
    p: &ExcitedStateParams,
    zpl_nominal_thz: f64,
    d_ground_ghz: f64,
    strains_ghz: &[f64],
    sigma_mhz: f64,
    noise_mhz: f64,
    seed: u64,
) -> EnsemblePleDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, (noise_mhz * 1e-3).max(1e-300)).unwrap(); // GHz
    let shared = [p.lambda_z, p.d_es, p.delta1, p.delta2, 0.0];
    let defects = strains_ghz
        .iter()
        .enumerate()
        .map(|(i, &strain)| {
            let preds = predicted_lines(&shared, strain, d_ground_ghz)
                .expect("valid parameters");
            let lines_thz: Vec<f64> = preds
                .iter()
                .map(|(offset, _)| zpl_nominal_thz + (offset + noise.sample(&mut rng)) * 1e-3)
                .collect();
            PleDefectRecord {
                defect_id: format!("d{i:02}"),
                lines_thz,
                sigmas_mhz: vec![sigma_mhz.max(1.0); 6],
                microwaves_on: preds.iter().map(|(_, ms0)| !ms0).collect(),
            }
        })
        .collect();
    EnsemblePleDataset {
        form: "synthetic".into(),
        zpl_nominal_thz,
        d_ground_ghz,
        defects,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn match_cost_prefers_true_assignment() {
        let obs = vec![
            ObsLine {
                offset_ghz: -5.0,
                sigma_ghz: 0.01,
                microwaves_on: true,
            },
            ObsLine {
                offset_ghz: 1.0,
                sigma_ghz: 0.01,
                microwaves_on: true,
            },
        ];
        let preds = [
            (-5.002, false),
            (-1.0, false),
            (0.998, true),
            (2.0, true),
            (3.0, false),
            (9.0, false),
        ];
        let cost = match_cost(&obs, &preds);
        let expect = (0.002f64 / 0.01).powi(2) + (0.002f64 / 0.01).powi(2);
        assert!((cost - expect).abs() < 1e-9, "cost {cost} vs {expect}");
    }

    #[test]
    fn microwave_off_lines_must_match_ms0_predictions() {
        let obs = vec![ObsLine {
            offset_ghz: 0.0,
            sigma_ghz: 0.01,
            microwaves_on: false,
        }];
        // Nearest prediction is not mS0; the matcher must skip to the mS0 one.
        let preds = [(-0.001, false), (0.5, true), (1.0, false)];
        let cost = match_cost(&obs, &preds);
        let expect = (0.5f64 / 0.01).powi(2);
        assert!((cost - expect).abs() < 1e-6, "cost {cost} vs {expect}");
    }

    #[test]
    fn noiseless_single_defect_zero_strain_recovery() {
        // λz, D_es, Δ₁ recovered sharply; Δ₂ interval reaches toward zero.
        let truth = ExcitedStateParams::kk();
        let data = synthetic_ensemble(&truth, 265.31, 1.336, &[1e-3], 1.0, 0.0, 5);
        let config = PleFitConfig {
            n_steps: 1500,
            seed: 9,
            ..Default::default()
        };
        let post = fit_ple_ensemble(&data, &config).unwrap();
        let med = post.median();
        // One strain point leaves an exact-fit manifold parameterized by Δ₂
        // (its line shifts are second order), so λz and D_es drift by up to
        // ~2·Δ₂²/(λz − D_es) over the Δ₂ posterior; Δ₁ is measured directly.
        assert!((med[0] - truth.lambda_z).abs() < 0.01, "lambda_z {}", med[0]);
        assert!((med[1] - truth.d_es).abs() < 0.03, "d_es {}", med[1]);
        assert!((med[2] - truth.delta1).abs() < 3e-3, "delta1 {}", med[2]);
        let iv = post.credible_interval(0.95);
        assert!(iv[3].0 < 0.02, "delta2 interval should reach near zero");
    }

    #[test]
    fn sigma_floor_enforced() {
        let truth = ExcitedStateParams::hh();
        let mut data = synthetic_ensemble(&truth, 264.91, 1.336, &[2.0, 5.0], 10.0, 10.0, 1);
        data.defects[0].sigmas_mhz[0] = 0.2;
        assert!(fit_ple_ensemble(&data, &PleFitConfig::default()).is_err());
    }
}
