//! Damped Gauss-Newton (Levenberg-Marquardt) weighted least squares.
//!
//! The solver works on a residual closure and a numeric Jacobian; every fit in
//! the crate funnels through here so convergence and covariance conventions
//! stay uniform.

use crate::linalg::{real_symmetric_eigensystem, solve_real};
use crate::{Error, Result};

/// Per-residual weighting.
#[derive(Debug, Clone)]
pub enum Weights {
    /// Unit weights; covariance is scaled by the reduced chi-square.
    Uniform,
    /// Known standard deviation per residual; covariance is unscaled.
    Sigma(Vec<f64>),
}

impl Weights {
    fn inv_sigma(&self, i: usize) -> f64 {
        match self {
            Weights::Uniform => 1.0,
            Weights::Sigma(s) => 1.0 / s[i],
        }
    }
}

/// Optional per-parameter reparameterization used during optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    /// Optimize the parameter as-is.
    Linear,
    /// Optimize ln(x); keeps strictly positive parameters positive.
    Log,
}

impl Transform {
    fn to_internal(self, x: f64) -> f64 {
        match self {
            Transform::Linear => x,
            Transform::Log => x.ln(),
        }
    }
    fn to_natural(self, t: f64) -> f64 {
        match self {
            Transform::Linear => t,
            Transform::Log => t.exp(),
        }
    }
    /// dx/dt at the internal coordinate t.
    fn jacobian(self, t: f64) -> f64 {
        match self {
            Transform::Linear => 1.0,
            Transform::Log => t.exp(),
        }
    }
}

/// Solver options.
#[derive(Debug, Clone)]
pub struct LsqOptions {
    pub max_iters: usize,
    pub rel_step_tol: f64,
    /// Transform per parameter; defaults to all-linear.
    pub transforms: Option<Vec<Transform>>,
    /// Eigenvalue ratio of the column-normalized normal matrix below which
    /// the problem counts as rank-deficient; ≤ 0 disables the check.
    pub rank_tol: f64,
    /// Compute the covariance (and run the rank check) at the optimum.
    /// Disable for rough pre-fits on possibly degenerate problems.
    pub covariance: bool,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_step_tol: 1e-10,
            transforms: None,
            rank_tol: 1e-10,
            covariance: true,
        }
    }
}

/// Fit output: estimate, covariance, and bookkeeping.
#[derive(Debug, Clone)]
pub struct LsqFit {
    pub params: Vec<f64>,
    /// Covariance of the natural-space parameters at the optimum.
    pub covariance: Vec<Vec<f64>>,
    /// Weighted sum of squared residuals at the optimum.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Residual count.
    pub n_residuals: usize,
}

impl LsqFit {
    /// Standard error of parameter `k`.
    pub fn sigma(&self, k: usize) -> f64 {
        self.covariance[k][k].max(0.0).sqrt()
    }

    /// Symmetric 95% interval half-width for parameter `k`.
    pub fn half_width_95(&self, k: usize) -> f64 {
        1.959963984540054 * self.sigma(k)
    }
}

/// Weighted nonlinear least squares of `model(params) -> predictions`
/// against `data`, starting from `init`.
///
/// Converges when the relative step falls below `rel_step_tol` or after
/// `max_iters` iterations. A rank-deficient normal matrix at the optimum is
/// reported together with its null direction.
pub fn least_squares<F>(
    model: F,
    data: &[f64],
    weights: &Weights,
    init: &[f64],
    options: &LsqOptions,
) -> Result<LsqFit>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = data.len();
    let n = init.len();
    if m < n {
        return Err(Error::InvalidParam(format!(
            "residual count {m} below parameter count {n}"
        )));
    }
    if let Weights::Sigma(s) = weights {
        if s.len() != m {
            return Err(Error::Dimension("weights length mismatch".into()));
        }
        if s.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidParam("weight sigmas must be positive".into()));
        }
    }
    let transforms = options
        .transforms
        .clone()
        .unwrap_or_else(|| vec![Transform::Linear; n]);
    if transforms.len() != n {
        return Err(Error::Dimension("transforms length mismatch".into()));
    }

    let natural = |t: &[f64]| -> Vec<f64> {
        t.iter()
            .zip(&transforms)
            .map(|(&ti, tr)| tr.to_natural(ti))
            .collect()
    };

    let residuals = |t: &[f64]| -> Result<Vec<f64>> {
        let pred = model(&natural(t));
        if pred.len() != m {
            return Err(Error::Dimension(format!(
                "model returned {} predictions for {m} data points",
                pred.len()
            )));
        }
        Ok((0..m)
            .map(|i| (data[i] - pred[i]) * weights.inv_sigma(i))
            .collect())
    };

    let scales: Vec<f64> = init
        .iter()
        .zip(&transforms)
        .map(|(&x, tr)| tr.to_internal(x).abs().max(1.0))
        .collect();

    let mut t: Vec<f64> = init
        .iter()
        .zip(&transforms)
        .map(|(&x, tr)| tr.to_internal(x))
        .collect();
    if t.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParam(
            "initial guess maps to non-finite internal coordinates".into(),
        ));
    }

    let mut r = residuals(&t)?;
    let mut cost: f64 = r.iter().map(|x| x * x).sum();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    let mut last_a: Option<Vec<Vec<f64>>> = None;

    while iterations < options.max_iters {
        iterations += 1;

        // Numeric Jacobian of the residuals by central differences.
        let mut jac = vec![vec![0.0; n]; m];
        for j in 0..n {
            let h = 6.06e-6 * t[j].abs().max(1e-3 * scales[j]);
            let mut tp = t.clone();
            tp[j] += h;
            let mut tm = t.clone();
            tm[j] -= h;
            let rp = residuals(&tp)?;
            let rm = residuals(&tm)?;
            let inv = 1.0 / (2.0 * h);
            for i in 0..m {
                jac[i][j] = (rp[i] - rm[i]) * inv;
            }
        }

        // Normal equations JᵀJ δ = −Jᵀr, summed in fixed index order.
        let mut a = vec![vec![0.0; n]; n];
        let mut g = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                g[j] -= jac[i][j] * r[i];
                for k in j..n {
                    a[j][k] += jac[i][j] * jac[i][k];
                }
            }
        }
        for j in 0..n {
            for k in 0..j {
                a[j][k] = a[k][j];
            }
        }
        last_a = Some(a.clone());

        let mut accepted = false;
        for _ in 0..40 {
            let mut damped = a.clone();
            for j in 0..n {
                damped[j][j] += lambda * a[j][j].max(1e-30);
            }
            let delta = match solve_real(damped, g.clone()) {
                Ok(d) => d,
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let t_new: Vec<f64> = t.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let r_new = residuals(&t_new)?;
            let cost_new: f64 = r_new.iter().map(|x| x * x).sum();
            if cost_new.is_finite() && cost_new <= cost {
                let rel_step = t
                    .iter()
                    .zip(&delta)
                    .zip(&scales)
                    .map(|((ti, di), si)| di.abs() / ti.abs().max(*si * 1e-3))
                    .fold(0.0f64, f64::max);
                t = t_new;
                r = r_new;
                cost = cost_new;
                lambda = (lambda * 0.3).max(1e-14);
                accepted = true;
                if rel_step < options.rel_step_tol {
                    converged = true;
                }
                break;
            }
            lambda *= 8.0;
        }
        if !accepted {
            // No downhill step found; treat the current point as the optimum.
            converged = true;
        }
        if converged {
            break;
        }
    }

    if !options.covariance {
        return Ok(LsqFit {
            params: natural(&t),
            covariance: vec![vec![0.0; n]; n],
            cost,
            iterations,
            converged,
            n_residuals: m,
        });
    }

    // Rank check on the column-normalized (correlation-form) normal matrix,
    // so the verdict does not depend on parameter units.
    let a = last_a.expect("at least one iteration runs");
    let max_diag = (0..n).map(|j| a[j][j]).fold(0.0f64, f64::max).max(1e-300);
    if options.rank_tol > 0.0 {
        if let Some(dead) = (0..n).find(|&j| a[j][j] <= 1e-30 * max_diag) {
            let mut dir = vec![0.0; n];
            dir[dead] = 1.0;
            return Err(Error::RankDeficient {
                null_direction: dir,
            });
        }
        let scale: Vec<f64> = (0..n).map(|j| a[j][j].sqrt()).collect();
        let corr: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| a[i][j] / (scale[i] * scale[j]))
                    .collect()
            })
            .collect();
        let (evals, evecs) = real_symmetric_eigensystem(&corr)?;
        if evals[0] <= options.rank_tol * evals[n - 1].max(1e-300) {
            // Map the normalized null direction back to natural space.
            let dir: Vec<f64> = (0..n)
                .map(|j| evecs[0][j] / scale[j] * transforms[j].jacobian(t[j]))
                .collect();
            let norm: f64 = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            return Err(Error::RankDeficient {
                null_direction: dir.iter().map(|x| x / norm.max(1e-300)).collect(),
            });
        }
    }

    // Covariance from the (mildly damped) normal equations at the optimum.
    let mut cov_t = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let mut damped = a.clone();
        for d in 0..n {
            damped[d][d] += (lambda.min(1e-10) * a[d][d]).max(1e-14 * max_diag);
        }
        let col = solve_real(damped, e)?;
        for i in 0..n {
            cov_t[i][j] = col[i];
        }
    }
    let s2 = match weights {
        Weights::Uniform => {
            if m > n {
                cost / (m - n) as f64
            } else {
                1.0
            }
        }
        Weights::Sigma(_) => 1.0,
    };
    let mut covariance = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            covariance[i][j] =
                s2 * cov_t[i][j] * transforms[i].jacobian(t[i]) * transforms[j].jacobian(t[j]);
        }
    }

    Ok(LsqFit {
        params: natural(&t),
        covariance,
        cost,
        iterations,
        converged,
        n_residuals: m,
    })
}
