//! Regression-based gradient estimates from a single perturbed round.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::ExperimentRecord;
use crate::sphere::tangent_project;

const DENOM_FLOOR: f64 = 1e-8;
const DENOM_RELATIVE: f64 = 0.01;

/// Least squares via the normal equations. `design` is row-major `n x k`.
pub fn least_squares(design: &[f64], k: usize, response: &[f64]) -> Result<Vec<f64>> {
    let n = response.len();
    if design.len() != n * k {
        return Err(Error::DimensionMismatch {
            expected: n * k,
            got: design.len(),
        });
    }
    solve_normal(n, k, |i, j| design[i * k + j], response)
}

fn solve_normal(
    n: usize,
    k: usize,
    entry: impl Fn(usize, usize) -> f64,
    response: &[f64],
) -> Result<Vec<f64>> {
    if k == 0 || n < k {
        return Err(Error::Rank(format!("{n} observations for {k} coefficients")));
    }
    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    let mut row = vec![0.0; k];
    for (i, y) in response.iter().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = entry(i, j);
        }
        for a in 0..k {
            rhs[a] += row[a] * y;
            for b in 0..=a {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let scale = gram.diagonal().max();
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Rank("design Gram matrix is not positive definite".into()))?;
    // reject numerically singular designs that still factor
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if !(min_pivot * min_pivot > 1e-12 * scale) {
        return Err(Error::Rank("design Gram matrix is numerically singular".into()));
    }
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// `b^-1 (n^-1 sum zeta zeta')^-1 (n^-1 sum zeta y)` for a row-major `n x k`
/// sign design.
pub fn ols_rademacher(design: &[i8], k: usize, response: &[f64], b: f64) -> Result<Vec<f64>> {
    if !(b > 0.0) {
        return Err(Error::InvalidInput(format!("perturbation size must be positive, got {b}")));
    }
    let n = response.len();
    if design.len() != n * k {
        return Err(Error::DimensionMismatch {
            expected: n * k,
            got: design.len(),
        });
    }
    let coef = solve_normal(n, k, |i, j| design[i * k + j] as f64, response)?;
    Ok(coef.into_iter().map(|c| c / b).collect())
}

/// Box-kernel density estimate `(1/(n h)) sum 1[(at - s_i)/h in [-1/2, 1/2))`.
pub fn kde_box(scores: &[f64], at: f64, h: f64) -> f64 {
    let hits = scores
        .iter()
        .filter(|s| {
            let u = (at - **s) / h;
            (-0.5..0.5).contains(&u)
        })
        .count();
    hits as f64 / (scores.len() as f64 * h)
}

/// `1.06 sd(scores) n^(-1/3)`.
pub fn default_bandwidth(scores: &[f64]) -> f64 {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    1.06 * var.sqrt() * n.powf(-1.0 / 3.0)
}

fn indicator(v: &[u8]) -> Vec<f64> {
    v.iter().map(|x| *x as f64).collect()
}

fn require_perturbed(record: &ExperimentRecord, need_s: bool) -> Result<()> {
    if !(record.b_beta > 0.0) {
        return Err(Error::InvalidInput("record has no criterion perturbation".into()));
    }
    if need_s && !(record.b_s > 0.0) {
        return Err(Error::InvalidInput("record has no threshold perturbation".into()));
    }
    Ok(())
}

/// Regression of `Y` on the criterion signs.
pub fn model_gradient(record: &ExperimentRecord) -> Result<Vec<f64>> {
    require_perturbed(record, false)?;
    ols_rademacher(&record.zeta, record.d, &record.y, record.b_beta)
}

/// Pieces of the equilibrium-gradient estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumPieces {
    pub gamma_y_s: f64,
    pub gamma_pi_beta: Vec<f64>,
    pub gamma_pi_s: f64,
    pub density_hat: f64,
    pub bandwidth: f64,
    /// Estimated threshold gradient `gamma_pi_beta / (density - gamma_pi_s)`.
    pub threshold_grad: Vec<f64>,
    pub eq_grad: Vec<f64>,
    /// Denominator small relative to the density.
    pub degenerate: bool,
}

/// Equilibrium gradient: effect on value through the threshold, using
/// bandwidth `h` or the default rule.
pub fn equilibrium_gradient(record: &ExperimentRecord, h: Option<f64>) -> Result<EquilibriumPieces> {
    require_perturbed(record, true)?;
    if record.n == 0 {
        return Err(Error::InvalidInput("empty record".into()));
    }
    let xi: Vec<i8> = record.xi.clone();
    let gamma_y_s = ols_rademacher(&xi, 1, &record.y, record.b_s)?[0];
    let inds = indicator(&record.i_ind);
    let gamma_pi_beta = ols_rademacher(&record.zeta, record.d, &inds, record.b_beta)?;
    let gamma_pi_s = ols_rademacher(&xi, 1, &inds, record.b_s)?[0];
    let bandwidth = h.unwrap_or_else(|| default_bandwidth(&record.score));
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let density_hat = kde_box(&record.score, record.r_realized, bandwidth);
    let denom = density_hat - gamma_pi_s;
    if denom.abs() < DENOM_FLOOR {
        return Err(Error::IllConditioned {
            density: density_hat,
            dpi_ds: gamma_pi_s,
        });
    }
    let degenerate = denom.abs() < DENOM_FLOOR.max(DENOM_RELATIVE * density_hat);
    let threshold_grad: Vec<f64> = gamma_pi_beta.iter().map(|g| g / denom).collect();
    let eq_grad = threshold_grad.iter().map(|t| gamma_y_s * t).collect();
    Ok(EquilibriumPieces {
        gamma_y_s,
        gamma_pi_beta,
        gamma_pi_s,
        density_hat,
        bandwidth,
        threshold_grad,
        eq_grad,
        degenerate,
    })
}

/// Full set of estimates from one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub model_grad: Vec<f64>,
    pub eq_grad: Vec<f64>,
    pub policy_grad: Vec<f64>,
    pub model_grad_tangent: Vec<f64>,
    pub eq_grad_tangent: Vec<f64>,
    pub policy_grad_tangent: Vec<f64>,
    pub gamma_y_beta: Vec<f64>,
    pub gamma_y_s: f64,
    pub gamma_pi_beta: Vec<f64>,
    pub gamma_pi_s: f64,
    pub density_hat: f64,
    pub bandwidth: f64,
    pub threshold_grad: Vec<f64>,
    pub degenerate: bool,
}

impl GradientReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Model, equilibrium and policy gradient estimates, raw and projected onto
/// the tangent space at the round's criterion.
pub fn policy_gradient(record: &ExperimentRecord, h: Option<f64>) -> Result<GradientReport> {
    let model_grad = model_gradient(record)?;
    let eq = equilibrium_gradient(record, h)?;
    let policy_grad: Vec<f64> = model_grad.iter().zip(&eq.eq_grad).map(|(m, e)| m + e).collect();
    let beta = &record.beta;
    Ok(GradientReport {
        model_grad_tangent: tangent_project(beta, &model_grad),
        eq_grad_tangent: tangent_project(beta, &eq.eq_grad),
        policy_grad_tangent: tangent_project(beta, &policy_grad),
        gamma_y_beta: model_grad.clone(),
        model_grad,
        eq_grad: eq.eq_grad,
        policy_grad,
        gamma_y_s: eq.gamma_y_s,
        gamma_pi_beta: eq.gamma_pi_beta,
        gamma_pi_s: eq.gamma_pi_s,
        density_hat: eq.density_hat,
        bandwidth: eq.bandwidth,
        threshold_grad: eq.threshold_grad,
        degenerate: eq.degenerate,
    })
}
