//! Affine-invariant ensemble sampler with stretch moves.
//!
//! Walkers update synchronously by half-ensembles. Every random draw comes
//! from one seeded ChaCha generator family, partitioned deterministically per
//! walker (one stream per walker), so runs are bit-reproducible for a given
//! seed regardless of evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Posterior, Prior};
use crate::{Error, Result};

/// Stretch-move scale parameter a = 2 from the standard ensemble sampler.
const PROPOSAL_SCALE: f64 = 2.0;

/// Sample the posterior `log_likelihood + Σ log prior` with an
/// affine-invariant ensemble of `n_walkers` stretch-move walkers.
///
/// Requires `n_walkers ≥ 2·dim` (and even) and a finite log-posterior at
/// `init`. The first half of the chain is discarded as burn-in; the returned
/// draws concatenate the remaining steps walker-major per step.
pub fn mcmc_sample<F>(
    log_likelihood: F,
    priors: &[Prior],
    init: &[f64],
    n_walkers: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Posterior>
where
    F: Fn(&[f64]) -> f64,
{
    mcmc_sample_spread(log_likelihood, priors, init, None, n_walkers, n_steps, seed)
}

/// [`mcmc_sample`] with an explicit per-parameter initial walker spread,
/// for posteriors much narrower than their priors.
pub fn mcmc_sample_spread<F>(
    log_likelihood: F,
    priors: &[Prior],
    init: &[f64],
    init_spread: Option<&[f64]>,
    n_walkers: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Posterior>
where
    F: Fn(&[f64]) -> f64,
{
    let dim = init.len();
    if priors.len() != dim {
        return Err(Error::Dimension("one prior per parameter required".into()));
    }
    if n_walkers < 2 * dim || n_walkers % 2 != 0 {
        return Err(Error::InvalidParam(format!(
            "n_walkers = {n_walkers} must be even and at least twice the parameter count {dim}"
        )));
    }
    if n_steps < 4 {
        return Err(Error::InvalidParam("n_steps too small".into()));
    }

    let log_post = |x: &[f64]| -> f64 {
        let mut lp = 0.0;
        for (xi, pr) in x.iter().zip(priors) {
            lp += pr.log_density(*xi);
            if !lp.is_finite() {
                return f64::NEG_INFINITY;
            }
        }
        lp + log_likelihood(x)
    };

    let lp_init = log_post(init);
    if !lp_init.is_finite() {
        return Err(Error::InvalidParam(
            "log-posterior not finite at the initial point".into(),
        ));
    }

    // One deterministic stream per walker.
    let mut rngs: Vec<ChaCha8Rng> = (0..n_walkers)
        .map(|w| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(w as u64 + 1);
            r
        })
        .collect();

    // Disperse walkers around init inside the prior support.
    let mut pos: Vec<Vec<f64>> = Vec::with_capacity(n_walkers);
    let mut lp: Vec<f64> = Vec::with_capacity(n_walkers);
    for w in 0..n_walkers {
        let mut x = vec![0.0; dim];
        let mut ok = false;
        for _attempt in 0..200 {
            for j in 0..dim {
                let sd = init_spread.map(|s| s[j]);
                x[j] = priors[j].disperse(init[j], sd, &mut rngs[w]);
            }
            let l = log_post(&x);
            if l.is_finite() {
                pos.push(x.clone());
                lp.push(l);
                ok = true;
                break;
            }
        }
        if !ok {
            // Fall back to the exact init point.
            pos.push(init.to_vec());
            lp.push(lp_init);
        }
    }

    let half = n_walkers / 2;
    let mut accepted_total = 0usize;
    let burn = n_steps / 2;
    let kept = n_steps - burn;
    let mut chains: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(kept); n_walkers];
    let mut chain_lp: Vec<Vec<f64>> = vec![Vec::with_capacity(kept); n_walkers];

    for step in 0..n_steps {
        for ensemble in 0..2 {
            let (lo, hi, other_lo) = if ensemble == 0 {
                (0, half, half)
            } else {
                (half, n_walkers, 0)
            };
            // Snapshot the complementary half for the synchronous update.
            let others: Vec<Vec<f64>> =
                (other_lo..other_lo + half).map(|w| pos[w].clone()).collect();
            for w in lo..hi {
                let rng = &mut rngs[w];
                let partner = rng.gen_range(0..half);
                let u: f64 = rng.gen();
                let z = ((PROPOSAL_SCALE - 1.0) * u + 1.0).powi(2) / PROPOSAL_SCALE;
                let proposal: Vec<f64> = (0..dim)
                    .map(|j| others[partner][j] + z * (pos[w][j] - others[partner][j]))
                    .collect();
                let lp_prop = log_post(&proposal);
                let ln_accept = (dim as f64 - 1.0) * z.ln() + lp_prop - lp[w];
                let u2: f64 = rng.gen();
                if ln_accept > u2.ln() {
                    pos[w] = proposal;
                    lp[w] = lp_prop;
                    accepted_total += 1;
                }
            }
        }
        if step >= burn {
            for w in 0..n_walkers {
                chains[w].push(pos[w].clone());
                chain_lp[w].push(lp[w]);
            }
        }
    }

    let acceptance = accepted_total as f64 / (n_walkers * n_steps) as f64;
    if acceptance < 0.01 {
        return Err(Error::NoConvergence {
            what: "ensemble sampler".into(),
            detail: format!("acceptance rate {acceptance:.4} below 1%; all walkers stuck"),
        });
    }

    let rhat = split_rhat(&chains, dim);
    let ess = effective_sample_size(&chains, dim);

    let mut flags = Vec::new();
    for j in 0..dim {
        if rhat[j] > 1.05 {
            flags.push(format!("parameter {j}: split R-hat {:.3} > 1.05", rhat[j]));
        }
        if ess[j] < 400.0 {
            flags.push(format!("parameter {j}: ESS {:.0} < 400", ess[j]));
        }
    }

    // Flatten step-major so draws interleave walkers.
    let mut samples = Vec::with_capacity(kept * n_walkers);
    let mut log_density = Vec::with_capacity(kept * n_walkers);
    for s in 0..kept {
        for w in 0..n_walkers {
            samples.push(chains[w][s].clone());
            log_density.push(chain_lp[w][s]);
        }
    }

    Ok(Posterior {
        names: (0..dim).map(|j| format!("p{j}")).collect(),
        samples,
        log_density,
        seed,
        n_walkers,
        n_steps,
        rhat,
        ess,
        acceptance,
        flags,
    })
}

/// Split R-hat per parameter over per-walker chains.
fn split_rhat(chains: &[Vec<Vec<f64>>], dim: usize) -> Vec<f64> {
    let len = chains[0].len();
    let half = len / 2;
    if half < 2 {
        return vec![f64::NAN; dim];
    }
    (0..dim)
        .map(|j| {
            let mut means = Vec::new();
            let mut vars = Vec::new();
            for chain in chains {
                for part in 0..2 {
                    let slice = &chain[part * half..(part + 1) * half];
                    let m: f64 = slice.iter().map(|x| x[j]).sum::<f64>() / half as f64;
                    let v: f64 = slice.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>()
                        / (half - 1) as f64;
                    means.push(m);
                    vars.push(v);
                }
            }
            let k = means.len() as f64;
            let w: f64 = vars.iter().sum::<f64>() / k;
            let grand: f64 = means.iter().sum::<f64>() / k;
            let b: f64 =
                half as f64 * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (k - 1.0);
            if w <= 0.0 {
                return 1.0;
            }
            let var_plus = (half as f64 - 1.0) / half as f64 * w + b / half as f64;
            (var_plus / w).sqrt()
        })
        .collect()
}

/// Effective sample size per parameter via per-chain autocorrelation with
/// Geyer's initial positive-sequence truncation.
fn effective_sample_size(chains: &[Vec<Vec<f64>>], dim: usize) -> Vec<f64> {
    let len = chains[0].len();
    let total = (len * chains.len()) as f64;
    if len < 8 {
        return vec![f64::NAN; dim];
    }
    (0..dim)
        .map(|j| {
            // Average autocorrelation over chains.
            let max_lag = (len / 2).min(512);
            let mut rho_sum = vec![0.0; max_lag];
            for chain in chains {
                let xs: Vec<f64> = chain.iter().map(|x| x[j]).collect();
                let m = xs.iter().sum::<f64>() / len as f64;
                let var: f64 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / len as f64;
                if var <= 0.0 {
                    continue;
                }
                for (lag, rs) in rho_sum.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for i in 0..len - lag {
                        acc += (xs[i] - m) * (xs[i + lag] - m);
                    }
                    *rs += acc / (len as f64 * var);
                }
            }
            let k = chains.len() as f64;
            let rho: Vec<f64> = rho_sum.iter().map(|r| r / k).collect();
            // Sum adjacent pairs while they stay positive.
            let mut tau = 1.0;
            let mut lag = 1;
            while lag + 1 < rho.len() {
                let pair = rho[lag] + rho[lag + 1];
                if pair < 0.0 {
                    break;
                }
                tau += 2.0 * pair;
                lag += 2;
            }
            total / tau
        })
        .collect()
}
