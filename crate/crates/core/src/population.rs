//! Mean-field layer over a finite mixture of agent types.
//!
//! For a criterion `beta` and previous threshold `s`, type `k` reports a score
//! distributed as `N(omega_k(s; beta), sigma^2)`, so the population score law
//! is the Gaussian mixture `P(beta, s)(r) = sum_k p_k Phi(r - omega_k)`. The
//! equilibrium threshold is the fixed point of `s -> q-quantile of P(beta, s)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{
    beta_gradient, check_unit, noise_regime, regime_bounds, response_from_score, AgentType,
    CostSpec, CovariateBox, NoiseRegime, ScoreEquation,
};
use crate::error::{check_dim, Error, Result};
use crate::gaussian::NoiseModel;
use crate::sphere::tangent_project;

/// Quantile level `q`; the top `1 - q` share of scores is treated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Capacity(f64);

impl Capacity {
    pub fn new(q: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidInput(format!("quantile level must be in (0,1), got {q}")));
        }
        Ok(Self(q))
    }

    pub fn q(self) -> f64 {
        self.0
    }

    pub fn treated_fraction(self) -> f64 {
        1.0 - self.0
    }
}

impl TryFrom<f64> for Capacity {
    type Error = Error;
    fn try_from(q: f64) -> Result<Self> {
        Capacity::new(q)
    }
}

impl From<Capacity> for f64 {
    fn from(c: Capacity) -> f64 {
        c.0
    }
}

/// Finite-support distribution over agent types sharing one noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeDistribution {
    types: Vec<AgentType>,
    probs: Vec<f64>,
    noise: NoiseModel,
    bbox: CovariateBox,
}

#[derive(Debug, Serialize, Deserialize)]
struct TypeRecord {
    z: Vec<f64>,
    g: Vec<f64>,
    y0: f64,
    y1: f64,
    #[serde(default)]
    tags: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DistributionDoc {
    types: Vec<TypeRecord>,
    probs: Vec<f64>,
    sigma: f64,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    bbox: Option<CovariateBox>,
}

impl TypeDistribution {
    pub fn new(
        types: Vec<AgentType>,
        probs: Vec<f64>,
        noise: NoiseModel,
        bbox: CovariateBox,
    ) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::InvalidInput("distribution needs at least one type".into()));
        }
        check_dim(types.len(), probs.len())?;
        let d = types[0].dim();
        check_dim(d, bbox.dim())?;
        bbox.validate()?;
        for t in &types {
            check_dim(d, t.dim())?;
            check_dim(d, t.cost.dim())?;
            t.cost.validate()?;
            if !bbox.contains(&t.z) {
                return Err(Error::InvalidInput(format!(
                    "raw covariates {:?} lie outside the covariate box",
                    t.z
                )));
            }
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidInput("probabilities must be nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self {
            types,
            probs,
            noise,
            bbox,
        })
    }

    /// Equal weights with the default covariate box.
    pub fn uniform(types: Vec<AgentType>, noise: NoiseModel) -> Result<Self> {
        let k = types.len();
        let d = types.first().map(|t| t.dim()).unwrap_or(0);
        Self::new(
            types,
            vec![1.0 / k as f64; k],
            noise,
            CovariateBox::default_for_dim(d),
        )
    }

    pub fn types(&self) -> &[AgentType] {
        &self.types
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn covariate_box(&self) -> &CovariateBox {
        &self.bbox
    }

    pub fn dim(&self) -> usize {
        self.types[0].dim()
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// `alpha_* = min_k alpha(cost_k)`.
    pub fn alpha_star(&self) -> f64 {
        self.types
            .iter()
            .map(|t| t.cost.alpha())
            .fold(f64::INFINITY, f64::min)
    }

    /// Regime of the least favourable type.
    pub fn regime(&self) -> NoiseRegime {
        self.types
            .iter()
            .map(|t| noise_regime(&t.cost, &self.noise))
            .min()
            .unwrap_or(NoiseRegime::Contraction)
    }

    pub fn with_noise(&self, noise: NoiseModel) -> Self {
        Self {
            noise,
            ..self.clone()
        }
    }

    /// Replaces the potential outcomes, keeping everything else.
    pub fn with_outcomes(&self, outcomes: &[(f64, f64)]) -> Result<Self> {
        check_dim(self.len(), outcomes.len())?;
        let mut out = self.clone();
        for (t, (y0, y1)) in out.types.iter_mut().zip(outcomes) {
            t.y0 = *y0;
            t.y1 = *y1;
        }
        Ok(out)
    }

    pub fn tag_mask(&self, tag: &str) -> Vec<bool> {
        self.types.iter().map(|t| t.has_tag(tag)).collect()
    }

    pub(crate) fn require_unique(&self) -> Result<()> {
        if self.regime().is_unique() {
            return Ok(());
        }
        let worst = self
            .types
            .iter()
            .map(|t| regime_bounds(&t.cost).0)
            .fold(0.0, f64::max);
        Err(Error::Regime {
            sigma_sq: self.noise.variance(),
            bound: worst,
        })
    }

    fn check_beta(&self, beta: &[f64]) -> Result<()> {
        check_dim(self.dim(), beta.len())?;
        check_unit(beta)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = DistributionDoc {
            types: self
                .types
                .iter()
                .map(|t| TypeRecord {
                    z: t.z.clone(),
                    g: t.cost.g.clone(),
                    y0: t.y0,
                    y1: t.y1,
                    tags: t.tags.clone(),
                })
                .collect(),
            probs: self.probs.clone(),
            sigma: self.noise.sigma(),
            bbox: Some(self.bbox.clone()),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DistributionDoc = serde_json::from_str(text)?;
        let types = doc
            .types
            .into_iter()
            .map(|r| {
                let cost = CostSpec::quadratic(r.g)?;
                check_dim(cost.dim(), r.z.len())?;
                Ok(AgentType {
                    z: r.z,
                    cost,
                    y0: r.y0,
                    y1: r.y1,
                    tags: r.tags,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let d = types.first().map(|t| t.dim()).unwrap_or(0);
        let bbox = doc.bbox.unwrap_or_else(|| CovariateBox::default_for_dim(d));
        Self::new(types, doc.probs, NoiseModel::new(doc.sigma)?, bbox)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Expected score of every type against `(beta, s)`.
    pub fn type_scores(&self, beta: &[f64], s: f64) -> Result<Vec<f64>> {
        self.check_beta(beta)?;
        self.require_unique()?;
        Ok(self.scores_unchecked(beta, s))
    }

    pub(crate) fn scores_unchecked(&self, beta: &[f64], s: f64) -> Vec<f64> {
        self.types
            .iter()
            .map(|t| {
                let m = ScoreEquation::new(t, beta).solve(s, &self.noise);
                // score of the reconstructed report, clamped to the box when needed
                let mut x = response_from_score(t, beta, s, m, &self.noise);
                if !self.bbox.is_interior(&x) {
                    self.bbox.clamp(&mut x);
                }
                crate::agent::dot(beta, &x)
            })
            .collect()
    }

    /// Best responses of every type, with boundary flags.
    pub fn type_responses(&self, beta: &[f64], s: f64) -> Result<Vec<crate::agent::BestResponse>> {
        self.check_beta(beta)?;
        self.types
            .iter()
            .map(|t| crate::agent::best_response(t, beta, s, &self.noise, &self.bbox))
            .collect()
    }

    fn mixture_cdf(&self, scores: &[f64], r: f64) -> f64 {
        self.probs
            .iter()
            .zip(scores)
            .map(|(p, w)| p * self.noise.cdf(r - w))
            .sum()
    }

    fn mixture_pdf(&self, scores: &[f64], r: f64) -> f64 {
        self.probs
            .iter()
            .zip(scores)
            .map(|(p, w)| p * self.noise.pdf(r - w))
            .sum()
    }

    /// `P(beta, s)(r)`.
    pub fn score_cdf(&self, beta: &[f64], s: f64, r: f64) -> Result<f64> {
        let scores = self.type_scores(beta, s)?;
        Ok(self.mixture_cdf(&scores, r))
    }

    /// Density of `P(beta, s)` at `r`.
    pub fn score_pdf(&self, beta: &[f64], s: f64, r: f64) -> Result<f64> {
        let scores = self.type_scores(beta, s)?;
        Ok(self.mixture_pdf(&scores, r))
    }

    /// `q(P(beta, s))` by bisection.
    pub fn quantile(&self, beta: &[f64], s: f64, q: Capacity) -> Result<f64> {
        let scores = self.type_scores(beta, s)?;
        self.mixture_quantile(&scores, q.q())
    }

    pub(crate) fn mixture_quantile(&self, scores: &[f64], q: f64) -> Result<f64> {
        let sigma = self.noise.sigma();
        let lo_w = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi_w = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut lo = lo_w - 10.0 * sigma;
        let mut hi = hi_w + 10.0 * sigma;
        let mut widen = 0;
        while self.mixture_cdf(scores, lo) > q {
            lo -= 10.0 * sigma * 2f64.powi(widen);
            widen += 1;
            if widen > 60 {
                return Err(Error::Bracket(format!("no lower bracket for q = {q}")));
            }
        }
        widen = 0;
        while self.mixture_cdf(scores, hi) < q {
            hi += 10.0 * sigma * 2f64.powi(widen);
            widen += 1;
            if widen > 60 {
                return Err(Error::Bracket(format!("no upper bracket for q = {q}")));
            }
        }
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.mixture_cdf(scores, mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Deterministic fixed-point iteration `s_t = q(P(beta, s_{t-1}))`.
    pub fn meanfield_fixed_point(
        &self,
        beta: &[f64],
        q: Capacity,
        s0: f64,
        opts: FixedPointOptions,
    ) -> Result<EquilibriumResult> {
        self.check_beta(beta)?;
        self.require_unique()?;
        let mut trace = vec![s0];
        let mut s = s0;
        let mut prev_step: Option<f64> = None;
        let mut kappa_hat: f64 = 0.0;
        for it in 1..=opts.max_iter {
            let next = self.mixture_quantile(&self.scores_unchecked(beta, s), q.q())?;
            let step = (next - s).abs();
            if let Some(p) = prev_step {
                if p > KAPPA_FLOOR && step > KAPPA_FLOOR {
                    kappa_hat = kappa_hat.max(step / p);
                }
            }
            prev_step = Some(step);
            s = next;
            trace.push(s);
            if step <= opts.tol {
                let residual =
                    (s - self.mixture_quantile(&self.scores_unchecked(beta, s), q.q())?).abs();
                if residual <= 10.0 * opts.tol {
                    return Ok(EquilibriumResult {
                        s_star: s,
                        iterations: it,
                        residual,
                        kappa_hat,
                        trace,
                    });
                }
            }
        }
        Err(Error::NonConvergence {
            iterations: opts.max_iter,
            last_step: prev_step.unwrap_or(f64::NAN),
            trace,
        })
    }

    /// Threshold reached when agents ignore the policy, a good starting point
    /// for the fixed-point iteration.
    pub fn raw_quantile(&self, beta: &[f64], q: Capacity) -> Result<f64> {
        self.check_beta(beta)?;
        let raw: Vec<f64> = self
            .types
            .iter()
            .map(|t| crate::agent::dot(beta, &t.z))
            .collect();
        self.mixture_quantile(&raw, q.q())
    }

    /// Equilibrium threshold started from the raw quantile.
    ///
    /// Plain iteration first; if it cycles instead of converging, the fixed
    /// point is bracketed and bisected on `q(P(beta, s)) - s`.
    pub fn equilibrium(&self, beta: &[f64], q: Capacity) -> Result<EquilibriumResult> {
        let s0 = self.raw_quantile(beta, q)?;
        let opts = FixedPointOptions {
            max_iter: 500,
            ..FixedPointOptions::default()
        };
        match self.meanfield_fixed_point(beta, q, s0, opts) {
            Err(Error::NonConvergence { trace, .. }) => self.bisect_fixed_point(beta, q, trace, opts.tol),
            other => other,
        }
    }

    fn bisect_fixed_point(
        &self,
        beta: &[f64],
        q: Capacity,
        mut trace: Vec<f64>,
        tol: f64,
    ) -> Result<EquilibriumResult> {
        let gap = |s: f64| -> Result<f64> { Ok(self.mixture_quantile(&self.scores_unchecked(beta, s), q.q())? - s) };
        let start = *trace.last().expect("nonempty trace");
        let step = 10.0 * self.noise.sigma();
        let (mut lo, mut hi) = (start, start);
        let mut widen = 0;
        while gap(lo)? < 0.0 {
            lo -= step * 2f64.powi(widen);
            widen += 1;
            if widen > 60 {
                return Err(Error::Bracket("no lower bracket for the fixed point".into()));
            }
        }
        widen = 0;
        while gap(hi)? > 0.0 {
            hi += step * 2f64.powi(widen);
            widen += 1;
            if widen > 60 {
                return Err(Error::Bracket("no upper bracket for the fixed point".into()));
            }
        }
        let iterations = trace.len() - 1;
        let kappa_hat = trace
            .windows(3)
            .filter_map(|w| {
                let (a, b) = ((w[1] - w[0]).abs(), (w[2] - w[1]).abs());
                (a > KAPPA_FLOOR && b > KAPPA_FLOOR).then(|| b / a)
            })
            .fold(0.0, f64::max);
        let mut extra = 0;
        let mut collapsed = false;
        while extra < 400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                collapsed = true;
                break;
            }
            if gap(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            extra += 1;
        }
        let s_star = 0.5 * (lo + hi);
        let residual = gap(s_star)?.abs();
        trace.push(s_star);
        // a bracket of adjacent floats is as close as the map allows
        if residual > 10.0 * tol && !collapsed {
            return Err(Error::NonConvergence {
                iterations: iterations + extra,
                last_step: hi - lo,
                trace,
            });
        }
        Ok(EquilibriumResult {
            s_star,
            iterations: iterations + extra,
            residual,
            kappa_hat,
            trace,
        })
    }

    /// `V(beta, s, r)`: agents respond to `s`, treatment uses cutoff `r`.
    pub fn policy_value(&self, beta: &[f64], s: f64, r: f64) -> Result<f64> {
        let scores = self.type_scores(beta, s)?;
        Ok(self.value_from_scores(&scores, r))
    }

    fn value_from_scores(&self, scores: &[f64], r: f64) -> f64 {
        self.types
            .iter()
            .zip(self.probs.iter().zip(scores))
            .map(|(t, (p, w))| p * (t.y0 + t.effect() * (1.0 - self.noise.cdf(r - w))))
            .sum()
    }

    /// `V_eq(beta) = V(beta, s(beta), s(beta))`.
    pub fn equilibrium_policy_value(&self, beta: &[f64], q: Capacity) -> Result<f64> {
        let eq = self.equilibrium(beta, q)?;
        self.policy_value(beta, eq.s_star, eq.s_star)
    }

    /// Analytic partial derivatives of `V(beta, s, r)`.
    pub fn value_partials(&self, beta: &[f64], s: f64, r: f64) -> Result<ValuePartials> {
        self.check_beta(beta)?;
        self.require_unique()?;
        let d = self.dim();
        let mut out = ValuePartials {
            d_beta: vec![0.0; d],
            d_s: 0.0,
            d_r: 0.0,
        };
        for (t, p) in self.types.iter().zip(&self.probs) {
            let eq = ScoreEquation::new(t, beta);
            let m = eq.solve(s, &self.noise);
            let w = p * t.effect() * self.noise.pdf(r - m);
            out.d_r -= w;
            out.d_s += w * eq.ds(m, s, &self.noise);
            for (acc, g) in out
                .d_beta
                .iter_mut()
                .zip(beta_gradient(t, beta, &eq, m, s, &self.noise))
            {
                *acc += w * g;
            }
        }
        Ok(out)
    }

    /// Analytic pieces of the complementary score CDF `Pi = 1 - P` at `(beta, s; r)`.
    pub fn complementary_cdf_partials(&self, beta: &[f64], s: f64, r: f64) -> Result<CcdfPartials> {
        self.check_beta(beta)?;
        self.require_unique()?;
        let d = self.dim();
        let mut out = CcdfPartials {
            density: 0.0,
            d_s: 0.0,
            d_beta: vec![0.0; d],
        };
        for (t, p) in self.types.iter().zip(&self.probs) {
            let eq = ScoreEquation::new(t, beta);
            let m = eq.solve(s, &self.noise);
            let w = p * self.noise.pdf(r - m);
            out.density += w;
            out.d_s += w * eq.ds(m, s, &self.noise);
            for (acc, g) in out
                .d_beta
                .iter_mut()
                .zip(beta_gradient(t, beta, &eq, m, s, &self.noise))
            {
                *acc += w * g;
            }
        }
        Ok(out)
    }

    /// `d q(P(beta, s)) / d s`, a mixture-weighted average of the per-type slopes.
    pub fn quantile_map_slope(&self, beta: &[f64], s: f64, q: Capacity) -> Result<f64> {
        let r = self.quantile(beta, s, q)?;
        let c = self.complementary_cdf_partials(beta, s, r)?;
        Ok(c.d_s / c.density)
    }

    /// `d s(beta) / d beta` from implicit differentiation of the fixed point.
    pub fn threshold_gradient(&self, beta: &[f64], q: Capacity) -> Result<ThresholdGradient> {
        let eq = self.equilibrium(beta, q)?;
        let c = self.complementary_cdf_partials(beta, eq.s_star, eq.s_star)?;
        let denom = c.density - c.d_s;
        let raw: Vec<f64> = c.d_beta.iter().map(|g| g / denom).collect();
        Ok(ThresholdGradient {
            tangent: tangent_project(beta, &raw),
            raw,
            s_star: eq.s_star,
            density: c.density,
            dpi_ds: c.d_s,
        })
    }

    /// Model, equilibrium and total derivative of `V_eq` at `beta`.
    pub fn analytic_policy_gradient(&self, beta: &[f64], q: Capacity) -> Result<AnalyticGradient> {
        let ds = self.threshold_gradient(beta, q)?;
        let v = self.value_partials(beta, ds.s_star, ds.s_star)?;
        let mediated = v.d_s + v.d_r;
        let model = v.d_beta.clone();
        let equilibrium: Vec<f64> = ds.raw.iter().map(|g| mediated * g).collect();
        let total: Vec<f64> = model.iter().zip(&equilibrium).map(|(a, b)| a + b).collect();
        Ok(AnalyticGradient {
            s_star: ds.s_star,
            model_tangent: tangent_project(beta, &model),
            equilibrium_tangent: tangent_project(beta, &equilibrium),
            total_tangent: tangent_project(beta, &total),
            model,
            equilibrium,
            total,
            dv_ds: v.d_s,
            dv_dr: v.d_r,
            threshold: ds,
        })
    }

    /// Share of the above-threshold mass at equilibrium that belongs to flagged types.
    pub fn natural_share_above(&self, beta: &[f64], q: Capacity, mask: &[bool]) -> Result<f64> {
        check_dim(self.len(), mask.len())?;
        let eq = self.equilibrium(beta, q)?;
        let scores = self.scores_unchecked(beta, eq.s_star);
        let mut flagged = 0.0;
        let mut total = 0.0;
        for ((p, w), m) in self.probs.iter().zip(&scores).zip(mask) {
            let above = p * (1.0 - self.noise.cdf(eq.s_star - w));
            total += above;
            if *m {
                flagged += above;
            }
        }
        Ok(flagged / total)
    }
}

const KAPPA_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub s_star: f64,
    pub iterations: usize,
    /// `|s* - q(P(beta, s*))|`.
    pub residual: f64,
    /// Largest observed ratio of successive step sizes.
    pub kappa_hat: f64,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuePartials {
    pub d_beta: Vec<f64>,
    pub d_s: f64,
    pub d_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcdfPartials {
    /// Score density at `r`.
    pub density: f64,
    pub d_s: f64,
    pub d_beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGradient {
    pub raw: Vec<f64>,
    /// `(I - beta beta') raw`.
    pub tangent: Vec<f64>,
    pub s_star: f64,
    pub density: f64,
    pub dpi_ds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticGradient {
    pub s_star: f64,
    pub model: Vec<f64>,
    pub equilibrium: Vec<f64>,
    pub total: Vec<f64>,
    pub model_tangent: Vec<f64>,
    pub equilibrium_tangent: Vec<f64>,
    pub total_tangent: Vec<f64>,
    pub dv_ds: f64,
    pub dv_dr: f64,
    pub threshold: ThresholdGradient,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(z: Vec<f64>, sigma: f64) -> TypeDistribution {
        let d = z.len();
        let t = AgentType::new(z, vec![1.0; d], 0.0, 1.0).unwrap();
        TypeDistribution::uniform(vec![t], NoiseModel::new(sigma).unwrap()).unwrap()
    }

    #[test]
    fn capacity_bounds() {
        assert!(Capacity::new(0.0).is_err());
        assert!(Capacity::new(1.0).is_err());
        assert!(Capacity::new(0.7).is_ok());
    }

    #[test]
    fn probabilities_must_sum_to_one() {
        let t = AgentType::new(vec![0.0], vec![1.0], 0.0, 1.0).unwrap();
        let r = TypeDistribution::new(
            vec![t.clone(), t],
            vec![0.5, 0.6],
            NoiseModel::new(1.0).unwrap(),
            CovariateBox::default_for_dim(1),
        );
        assert!(r.is_err());
    }

    #[test]
    fn single_type_median_is_expected_score() {
        let dist = single(vec![1.0, 2.0], 2.0);
        let beta = [0.6, 0.8];
        let w = dist.type_scores(&beta, 1.5).unwrap()[0];
        assert!((dist.score_cdf(&beta, 1.5, w).unwrap() - 0.5).abs() < 1e-15);
        let med = dist.quantile(&beta, 1.5, Capacity::new(0.5).unwrap()).unwrap();
        assert!((med - w).abs() < 1e-11);
        let peak = dist.score_pdf(&beta, 1.5, w).unwrap();
        assert!((peak - dist.noise().pdf_max()).abs() < 1e-15);
    }

    #[test]
    fn cdf_limits() {
        let dist = single(vec![1.0, 2.0], 2.0);
        assert_eq!(dist.score_cdf(&[1.0, 0.0], 0.0, 1e6).unwrap(), 1.0);
        assert_eq!(dist.score_cdf(&[1.0, 0.0], 0.0, -1e6).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_pair_has_median_at_centre() {
        let noise = NoiseModel::new(1.5).unwrap();
        let a = AgentType::new(vec![2.0], vec![1e15], 0.0, 1.0).unwrap();
        let b = AgentType::new(vec![-2.0], vec![1e15], 0.0, 1.0).unwrap();
        let dist = TypeDistribution::uniform(vec![a, b], noise).unwrap();
        let r = dist.quantile(&[1.0], 0.0, Capacity::new(0.5).unwrap()).unwrap();
        assert!(r.abs() < 1e-11);
    }

    #[test]
    fn no_effect_means_constant_value() {
        let noise = NoiseModel::new(2.0).unwrap();
        let a = AgentType::new(vec![1.0, 0.0], vec![1.0, 1.0], 2.5, 2.5).unwrap();
        let b = AgentType::new(vec![0.0, 1.0], vec![0.5, 2.0], -1.0, -1.0).unwrap();
        let dist = TypeDistribution::new(
            vec![a, b],
            vec![0.25, 0.75],
            noise,
            CovariateBox::default_for_dim(2),
        )
        .unwrap();
        let v = dist.policy_value(&[0.6, 0.8], 0.3, 1.7).unwrap();
        assert!((v - (0.25 * 2.5 - 0.75)).abs() < 1e-15);
        let everyone = dist.policy_value(&[0.6, 0.8], 0.3, -1e6).unwrap();
        assert!((everyone - (0.25 * 2.5 - 0.75)).abs() < 1e-15);
    }

    #[test]
    fn everyone_treated_at_low_cutoff() {
        let noise = NoiseModel::new(2.0).unwrap();
        let a = AgentType::new(vec![1.0, 0.0], vec![1.0, 1.0], 0.0, 4.0).unwrap();
        let b = AgentType::new(vec![0.0, 1.0], vec![0.5, 2.0], 1.0, 2.0).unwrap();
        let dist = TypeDistribution::uniform(vec![a, b], noise).unwrap();
        let v = dist.policy_value(&[1.0, 0.0], 0.0, -1e6).unwrap();
        assert!((v - 3.0).abs() < 1e-15);
    }

    #[test]
    fn full_mask_share_is_one() {
        let noise = NoiseModel::new(3.0).unwrap();
        let a = AgentType::new(vec![1.0, 0.0], vec![1.0, 1.0], 0.0, 4.0).unwrap();
        let b = AgentType::new(vec![0.0, 1.0], vec![0.5, 2.0], 1.0, 2.0).unwrap();
        let dist = TypeDistribution::uniform(vec![a, b], noise).unwrap();
        let share = dist
            .natural_share_above(&[1.0, 0.0], Capacity::new(0.7).unwrap(), &[true, true])
            .unwrap();
        assert!((share - 1.0).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let noise = NoiseModel::new(3.0).unwrap();
        let a = AgentType::new(vec![1.0, 0.0], vec![1.0, 1.0], 0.0, 4.0)
            .unwrap()
            .with_tag("natural");
        let b = AgentType::new(vec![0.0, 1.0], vec![0.5, 2.0], 1.0, 2.0).unwrap();
        let dist = TypeDistribution::uniform(vec![a, b], noise).unwrap();
        let back = TypeDistribution::from_json(&dist.to_json().unwrap()).unwrap();
        assert_eq!(dist, back);
        assert_eq!(back.tag_mask("natural"), vec![true, false]);
    }

    #[test]
    fn malformed_json_is_rejected() {
        assert!(matches!(TypeDistribution::from_json("{\"types\": 3}"), Err(Error::Json(_))));
        let bad = r#"{"types":[{"z":[0.0],"g":[-1.0],"y0":0,"y1":1}],"probs":[1.0],"sigma":1.0}"#;
        assert!(matches!(TypeDistribution::from_json(bad), Err(Error::InvalidInput(_))));
    }
}
