//! Single-agent behaviour: expected utility, best response and expected score.
//!
//! Agents pay a quadratic cost `(x - z)' Diag(g) (x - z)` to move away from
//! their raw covariates `z` and gain `1 - Phi_sigma(s - beta'x)`, the chance
//! that their noisy report clears the previous threshold `s`. With quadratic
//! cost the first-order condition collapses to a scalar equation in the
//! expected score `m = beta'x`:
//!
//! ```text
//! m = beta'z + phi_sigma(s - m) / 2 * beta' Diag(g)^-1 beta
//! ```
//!
//! which is solved by safeguarded Newton, after which `x*` is rebuilt from `m`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gaussian::{sqrt_two_pi_e, NoiseModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CostKind {
    #[default]
    Quadratic,
}

/// Cost of deviating from the raw covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    #[serde(default)]
    pub kind: CostKind,
    /// Diagonal weights of the quadratic form.
    pub g: Vec<f64>,
}

impl CostSpec {
    pub fn quadratic(g: Vec<f64>) -> Result<Self> {
        let spec = Self {
            kind: CostKind::Quadratic,
            g,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.g.is_empty() {
            return Err(Error::InvalidInput("cost weights are empty".into()));
        }
        if let Some(bad) = self.g.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "cost weights must be strictly positive, got {bad}"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    /// Strong-convexity modulus, `2 min_j g_j`.
    pub fn alpha(&self) -> f64 {
        2.0 * self.g.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn eval(&self, delta: &[f64]) -> f64 {
        self.g.iter().zip(delta).map(|(g, d)| g * d * d).sum()
    }

    /// `v' Diag(g)^-1 v`.
    pub fn inverse_quadratic(&self, v: &[f64]) -> f64 {
        self.g.iter().zip(v).map(|(g, b)| b * b / g).sum()
    }
}

/// Axis-aligned covariate domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl CovariateBox {
    pub const DEFAULT_HALF_WIDTH: f64 = 100.0;
    const INTERIOR_MARGIN: f64 = 1e-9;

    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.lo.len(), self.hi.len())?;
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidInput("box requires lo < hi componentwise".into()));
        }
        Ok(())
    }

    /// `[-100, 100]^d`.
    pub fn default_for_dim(d: usize) -> Self {
        Self {
            lo: vec![-Self::DEFAULT_HALF_WIDTH; d],
            hi: vec![Self::DEFAULT_HALF_WIDTH; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_interior(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v > l + Self::INTERIOR_MARGIN && *v < h - Self::INTERIOR_MARGIN)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// Clamps in place, returning whether any coordinate moved.
    pub fn clamp(&self, x: &mut [f64]) -> bool {
        let mut moved = false;
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            let c = v.clamp(*l, *h);
            if c != *v {
                moved = true;
                *v = c;
            }
        }
        moved
    }
}

/// One agent profile: raw covariates, cost and potential outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentType {
    pub z: Vec<f64>,
    pub cost: CostSpec,
    pub y0: f64,
    pub y1: f64,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl AgentType {
    pub fn new(z: Vec<f64>, g: Vec<f64>, y0: f64, y1: f64) -> Result<Self> {
        let cost = CostSpec::quadratic(g)?;
        check_dim(cost.dim(), z.len())?;
        Ok(Self {
            z,
            cost,
            y0,
            y1,
            tags: Vec::new(),
        })
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tags.push(tag.into());
        self
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// Treatment effect `y1 - y0`.
    pub fn effect(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}

/// Unit-norm selection criterion with its current threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub beta: Vec<f64>,
    pub threshold: f64,
}

impl Policy {
    pub fn new(beta: Vec<f64>, threshold: f64) -> Result<Self> {
        check_unit(&beta)?;
        Ok(Self { beta, threshold })
    }
}

pub(crate) fn check_unit(beta: &[f64]) -> Result<()> {
    let norm = dot(beta, beta).sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "selection criterion must have unit norm, got {norm}"
        )));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// How the noise level compares with the agent's strong-convexity modulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoiseRegime {
    /// Best responses may jump; several maximisers can exist.
    Discontinuous,
    /// Unique, continuously differentiable best responses.
    Continuous,
    /// Expected score is additionally a contraction in the threshold.
    Contraction,
}

impl NoiseRegime {
    pub fn is_unique(self) -> bool {
        self != NoiseRegime::Discontinuous
    }
}

/// The two variance thresholds `1/(alpha sqrt(2 pi e))` and `2/(alpha sqrt(2 pi e))`.
pub fn regime_bounds(cost: &CostSpec) -> (f64, f64) {
    let base = 1.0 / (cost.alpha() * sqrt_two_pi_e());
    (base, 2.0 * base)
}

pub fn noise_regime(cost: &CostSpec, noise: &NoiseModel) -> NoiseRegime {
    let (unique, contraction) = regime_bounds(cost);
    let var = noise.variance();
    if var > contraction {
        NoiseRegime::Contraction
    } else if var > unique {
        NoiseRegime::Continuous
    } else {
        NoiseRegime::Discontinuous
    }
}

pub(crate) fn require_unique(cost: &CostSpec, noise: &NoiseModel) -> Result<()> {
    if noise_regime(cost, noise).is_unique() {
        Ok(())
    } else {
        Err(Error::Regime {
            sigma_sq: noise.variance(),
            bound: regime_bounds(cost).0,
        })
    }
}

/// Expected utility of reporting `x` against `policy`.
pub fn expected_utility(
    agent: &AgentType,
    x: &[f64],
    policy: &Policy,
    noise: &NoiseModel,
) -> Result<f64> {
    check_dim(agent.dim(), x.len())?;
    check_dim(agent.dim(), policy.beta.len())?;
    let delta: Vec<f64> = x.iter().zip(&agent.z).map(|(a, b)| a - b).collect();
    Ok(-agent.cost.eval(&delta) + 1.0 - noise.cdf(policy.threshold - dot(&policy.beta, x)))
}

/// Optimal report together with its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponse {
    pub x: Vec<f64>,
    /// `beta'x` at the optimum.
    pub score: f64,
    /// Set when the unconstrained optimum left the covariate box and was clamped.
    pub on_boundary: bool,
}

/// Scalar reduction of the first-order condition for one (agent, beta) pair.
///
/// Works for any nonzero `beta`, not only unit vectors, so that perturbed
/// criteria `beta + b zeta` go through the same solver.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ScoreEquation {
    /// `beta'z`.
    pub base: f64,
    /// `beta' Diag(g)^-1 beta`.
    pub spread: f64,
}

const ROOT_TOL: f64 = 1e-12;
const SCAN_INTERVALS: usize = 512;

impl ScoreEquation {
    pub fn new(agent: &AgentType, beta: &[f64]) -> Self {
        Self {
            base: dot(beta, &agent.z),
            spread: agent.cost.inverse_quadratic(beta),
        }
    }

    fn residual(&self, m: f64, s: f64, noise: &NoiseModel) -> f64 {
        m - self.base - 0.5 * self.spread * noise.pdf(s - m)
    }

    fn slope(&self, m: f64, s: f64, noise: &NoiseModel) -> f64 {
        1.0 + 0.5 * self.spread * noise.pdf_prime(s - m)
    }

    /// Whether the residual is strictly increasing, i.e. the root is unique.
    pub fn is_monotone(&self, noise: &NoiseModel) -> bool {
        0.5 * self.spread < noise.variance() * sqrt_two_pi_e()
    }

    fn bracket(&self, noise: &NoiseModel) -> (f64, f64) {
        (self.base, self.base + 0.5 * self.spread * noise.pdf_max())
    }

    /// Expected utility at the candidate whose score is `m`.
    fn utility(&self, m: f64, s: f64, noise: &NoiseModel) -> f64 {
        let p = noise.pdf(s - m);
        -0.25 * p * p * self.spread + 1.0 - noise.cdf(s - m)
    }

    /// Solves for the optimal score. Falls back to root enumeration when the
    /// residual is not monotone.
    pub fn solve(&self, s: f64, noise: &NoiseModel) -> f64 {
        let (lo, hi) = self.bracket(noise);
        if hi - lo <= 0.0 {
            return lo;
        }
        if self.is_monotone(noise) {
            self.newton(lo, hi, s, noise)
        } else {
            self.best_root(lo, hi, s, noise)
        }
    }

    fn newton(&self, mut lo: f64, mut hi: f64, s: f64, noise: &NoiseModel) -> f64 {
        let f_lo = self.residual(lo, s, noise);
        if f_lo >= 0.0 {
            return lo;
        }
        let f_hi = self.residual(hi, s, noise);
        if f_hi <= 0.0 {
            return hi;
        }
        // one fixed-point step from the raw score lands close to the root
        let mut m = (self.base + 0.5 * self.spread * noise.pdf(s - self.base)).clamp(lo, hi);
        for _ in 0..200 {
            let f = self.residual(m, s, noise);
            if f == 0.0 {
                return m;
            }
            if f < 0.0 {
                lo = m;
            } else {
                hi = m;
            }
            let df = self.slope(m, s, noise);
            let mut next = m - f / df;
            if !(df > 0.0 && next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - m).abs();
            m = next;
            if step <= ROOT_TOL * (1.0 + m.abs()) || hi - lo <= ROOT_TOL * (1.0 + m.abs()) {
                break;
            }
        }
        m
    }

    fn best_root(&self, lo: f64, hi: f64, s: f64, noise: &NoiseModel) -> f64 {
        let width = hi - lo;
        let grid: Vec<f64> = (0..=SCAN_INTERVALS)
            .map(|i| lo + width * i as f64 / SCAN_INTERVALS as f64)
            .collect();
        let values: Vec<f64> = grid.iter().map(|&m| self.residual(m, s, noise)).collect();

        let mut best: Option<(f64, f64)> = None;
        let mut consider = |m: f64| {
            let u = self.utility(m, s, noise);
            match best {
                Some((_, bu)) if u <= bu + 1e-14 => {}
                _ => best = Some((m, u)),
            }
        };
        for i in 0..SCAN_INTERVALS {
            let (a, b) = (grid[i], grid[i + 1]);
            let (fa, fb) = (values[i], values[i + 1]);
            if fa == 0.0 {
                consider(a);
            } else if fa.signum() != fb.signum() && fb != 0.0 {
                consider(self.bisect(a, b, fa, s, noise));
            }
        }
        if values[SCAN_INTERVALS] == 0.0 {
            consider(hi);
        }
        best.map(|(m, _)| m).unwrap_or(lo)
    }

    fn bisect(&self, mut a: f64, mut b: f64, fa: f64, s: f64, noise: &NoiseModel) -> f64 {
        let sign_a = fa.signum();
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            let fm = self.residual(mid, s, noise);
            if fm == 0.0 {
                return mid;
            }
            if fm.signum() == sign_a {
                a = mid;
            } else {
                b = mid;
            }
            if b - a <= ROOT_TOL * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (a + b)
    }

    /// `d m / d s` at the solution `m`.
    pub fn ds(&self, m: f64, s: f64, noise: &NoiseModel) -> f64 {
        let k = 0.5 * self.spread * noise.pdf_prime(s - m);
        k / (1.0 + k)
    }
}

/// Rebuilds `x* = z + phi(s - m)/2 Diag(g)^-1 beta` from the solved score.
pub(crate) fn response_from_score(
    agent: &AgentType,
    beta: &[f64],
    s: f64,
    m: f64,
    noise: &NoiseModel,
) -> Vec<f64> {
    let half = 0.5 * noise.pdf(s - m);
    agent
        .z
        .iter()
        .zip(beta.iter().zip(&agent.cost.g))
        .map(|(z, (b, g))| z + half * b / g)
        .collect()
}

fn finish_response(
    agent: &AgentType,
    beta: &[f64],
    s: f64,
    noise: &NoiseModel,
    bbox: &CovariateBox,
) -> BestResponse {
    let m = ScoreEquation::new(agent, beta).solve(s, noise);
    let mut x = response_from_score(agent, beta, s, m, noise);
    let on_boundary = if bbox.is_interior(&x) {
        false
    } else {
        bbox.clamp(&mut x);
        true
    };
    BestResponse {
        score: dot(beta, &x),
        x,
        on_boundary,
    }
}

fn check_inputs(agent: &AgentType, beta: &[f64], bbox: &CovariateBox) -> Result<()> {
    check_dim(agent.dim(), beta.len())?;
    check_dim(agent.dim(), bbox.dim())
}

/// Utility-maximising report against `(beta, s)`.
///
/// Requires noise above the uniqueness bound for this agent's cost.
pub fn best_response(
    agent: &AgentType,
    beta: &[f64],
    s: f64,
    noise: &NoiseModel,
    bbox: &CovariateBox,
) -> Result<BestResponse> {
    check_inputs(agent, beta, bbox)?;
    require_unique(&agent.cost, noise)?;
    Ok(finish_response(agent, beta, s, noise, bbox))
}

/// Like [`best_response`] but accepts any noise level. When several local
/// maximisers exist, the one with the highest expected utility is returned,
/// ties going to the smaller score.
pub fn best_response_any_regime(
    agent: &AgentType,
    beta: &[f64],
    s: f64,
    noise: &NoiseModel,
    bbox: &CovariateBox,
) -> Result<BestResponse> {
    check_inputs(agent, beta, bbox)?;
    Ok(finish_response(agent, beta, s, noise, bbox))
}

/// Expected score `omega(s; beta) = beta' x*(beta, s)`.
pub fn expected_score(
    agent: &AgentType,
    beta: &[f64],
    s: f64,
    noise: &NoiseModel,
    bbox: &CovariateBox,
) -> Result<f64> {
    best_response(agent, beta, s, noise, bbox).map(|r| r.score)
}

/// Closed-form `d omega / d s`.
pub fn score_derivative(
    agent: &AgentType,
    beta: &[f64],
    s: f64,
    noise: &NoiseModel,
    bbox: &CovariateBox,
) -> Result<f64> {
    check_inputs(agent, beta, bbox)?;
    require_unique(&agent.cost, noise)?;
    let eq = ScoreEquation::new(agent, beta);
    let m = eq.solve(s, noise);
    Ok(eq.ds(m, s, noise))
}

/// Closed-form `d omega / d beta` (ambient, not projected onto the sphere).
pub fn score_gradient_beta(
    agent: &AgentType,
    beta: &[f64],
    s: f64,
    noise: &NoiseModel,
    bbox: &CovariateBox,
) -> Result<Vec<f64>> {
    check_inputs(agent, beta, bbox)?;
    require_unique(&agent.cost, noise)?;
    let eq = ScoreEquation::new(agent, beta);
    let m = eq.solve(s, noise);
    Ok(beta_gradient(agent, beta, &eq, m, s, noise))
}

pub(crate) fn beta_gradient(
    agent: &AgentType,
    beta: &[f64],
    eq: &ScoreEquation,
    m: f64,
    s: f64,
    noise: &NoiseModel,
) -> Vec<f64> {
    let u = s - m;
    let denom = 1.0 + 0.5 * eq.spread * noise.pdf_prime(u);
    let p = noise.pdf(u);
    agent
        .z
        .iter()
        .zip(beta.iter().zip(&agent.cost.g))
        .map(|(z, (b, g))| (z + p * b / g) / denom)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1_agent() -> AgentType {
        AgentType::new(vec![3.0, 0.0], vec![0.1, 1.0], 0.0, 3.0).unwrap()
    }

    #[test]
    fn zero_cost_symmetric_utility() {
        let agent = fig1_agent();
        let noise = NoiseModel::new(3.3).unwrap();
        let beta = vec![0.6, 0.8];
        let s = dot(&beta, &agent.z);
        let p = Policy::new(beta, s).unwrap();
        let u = expected_utility(&agent, &agent.z, &p, &noise).unwrap();
        assert_eq!(u, 0.5);
        let far = Policy::new(vec![0.6, 0.8], 1e9).unwrap();
        assert!(expected_utility(&agent, &agent.z, &far, &noise).unwrap().abs() < 1e-300);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let agent = fig1_agent();
        let noise = NoiseModel::new(3.3).unwrap();
        let p = Policy::new(vec![1.0, 0.0], 0.0).unwrap();
        assert!(matches!(
            expected_utility(&agent, &[1.0], &p, &noise),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn policy_requires_unit_norm() {
        assert!(Policy::new(vec![1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn regime_classification() {
        let cost = CostSpec::quadratic(vec![0.1, 1.0]).unwrap();
        assert_eq!(
            noise_regime(&cost, &NoiseModel::new(3.30).unwrap()),
            NoiseRegime::Contraction
        );
        assert_eq!(
            noise_regime(&cost, &NoiseModel::new(1.0).unwrap()),
            NoiseRegime::Discontinuous
        );
        assert_eq!(
            noise_regime(&cost, &NoiseModel::new(1.3).unwrap()),
            NoiseRegime::Continuous
        );
        let stiff = CostSpec::quadratic(vec![1e12, 1e12]).unwrap();
        assert_eq!(
            noise_regime(&stiff, &NoiseModel::new(1e-3).unwrap()),
            NoiseRegime::Contraction
        );
    }

    #[test]
    fn regime_error_below_bound() {
        let agent = fig1_agent();
        let noise = NoiseModel::new(1.0).unwrap();
        let bbox = CovariateBox::default_for_dim(2);
        assert!(matches!(
            best_response(&agent, &[1.0, 0.0], 3.0, &noise, &bbox),
            Err(Error::Regime { .. })
        ));
        assert!(best_response_any_regime(&agent, &[1.0, 0.0], 3.0, &noise, &bbox).is_ok());
    }

    #[test]
    fn extreme_thresholds_return_raw_covariates() {
        let agent = fig1_agent();
        let noise = NoiseModel::new(3.3).unwrap();
        let bbox = CovariateBox::default_for_dim(2);
        for s in [1e9, -1e9] {
            let r = best_response(&agent, &[1.0, 0.0], s, &noise, &bbox).unwrap();
            assert_eq!(r.x, agent.z);
            assert!(!r.on_boundary);
        }
    }

    #[test]
    fn boundary_violation_is_flagged() {
        let agent = AgentType::new(vec![0.99, 0.0], vec![0.1, 1.0], 0.0, 1.0).unwrap();
        let noise = NoiseModel::new(3.3).unwrap();
        let bbox = CovariateBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let r = best_response(&agent, &[1.0, 0.0], 1.5, &noise, &bbox).unwrap();
        assert!(r.on_boundary);
        assert!(bbox.contains(&r.x));
    }

    #[test]
    fn fixed_point_of_score_has_zero_derivative() {
        // h(s) = s - omega(s) is increasing; bisect for its root
        let agent = fig1_agent();
        let noise = NoiseModel::new(3.3).unwrap();
        let bbox = CovariateBox::default_for_dim(2);
        let beta = [1.0, 0.0];
        let h = |s: f64| s - expected_score(&agent, &beta, s, &noise, &bbox).unwrap();
        let (mut lo, mut hi) = (-10.0, 20.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let d = score_derivative(&agent, &beta, 0.5 * (lo + hi), &noise, &bbox).unwrap();
        assert!(d.abs() < 1e-12, "derivative at fixed point {d}");
    }
}
