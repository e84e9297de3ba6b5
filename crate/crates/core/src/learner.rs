//! Projected gradient ascent over the selection criterion, plus the
//! RCT-based baseline that ignores strategic responses.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agent::check_unit;
use crate::error::{check_dim, Error, Result};
use crate::estimators::{least_squares, policy_gradient, GradientReport};
use crate::population::{Capacity, TypeDistribution};
use crate::sim::{fmt_f64, mix, run_perturbed_round, sample_agents, stochastic_fpi, SimConfig};
pub use crate::sphere::project_sphere;

/// Which gradient drives the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Model plus equilibrium gradient.
    CompetitionAware,
    /// Model gradient only.
    StrategyAware,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitBeta {
    Given(Vec<f64>),
    /// Uniform on the sphere, drawn from the run seed.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub epochs: usize,
    pub lr: f64,
    pub sim: SimConfig,
    #[serde(default = "default_equilibrate_steps")]
    pub equilibrate_steps: usize,
    pub method: Method,
    pub init_beta: InitBeta,
    /// KDE bandwidth override.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    /// Evaluate the mean-field value of every iterate.
    #[serde(default = "default_true")]
    pub track_oracle: bool,
}

fn default_equilibrate_steps() -> usize {
    50
}

fn default_true() -> bool {
    true
}

impl LearnConfig {
    pub fn new(sim: SimConfig, method: Method, lr: f64, epochs: usize, init_beta: InitBeta) -> Self {
        Self {
            epochs,
            lr,
            sim,
            equilibrate_steps: default_equilibrate_steps(),
            method,
            init_beta,
            bandwidth: None,
            track_oracle: true,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidInput(format!("learning rate must be nonnegative, got {}", self.lr)));
        }
        if let InitBeta::Given(b) = &self.init_beta {
            check_dim(d, b.len())?;
            check_unit(b)?;
        }
        self.sim.validate(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Criterion used during this epoch.
    pub beta: Vec<f64>,
    /// Threshold after equilibration.
    pub s: f64,
    pub r_realized: f64,
    /// Mean realized outcome of the round.
    pub v_hat: f64,
    pub v_oracle: Option<f64>,
    pub report: Option<GradientReport>,
    /// The update was skipped or used a fallback direction.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnTrace {
    pub method: Method,
    pub epochs: Vec<EpochRecord>,
    pub final_beta: Vec<f64>,
    pub final_v_oracle: Option<f64>,
}

impl LearnTrace {
    /// `epoch, beta_1..beta_d, s, r, v_hat, v_oracle, |mg|, |eg|, |pg|, skipped`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.final_beta.len();
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["epoch".to_string()];
        header.extend((1..=d).map(|j| format!("beta_{j}")));
        header.extend(
            ["s", "r", "v_hat", "v_oracle", "model_grad_norm", "eq_grad_norm", "policy_grad_norm", "skipped"]
                .map(String::from),
        );
        wtr.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for e in &self.epochs {
            let mut row = vec![e.epoch.to_string()];
            row.extend(e.beta.iter().map(|b| fmt_f64(*b)));
            row.push(fmt_f64(e.s));
            row.push(fmt_f64(e.r_realized));
            row.push(fmt_f64(e.v_hat));
            row.push(opt(e.v_oracle));
            let norms = e.report.as_ref().map(|r| {
                [
                    crate::sphere::norm(&r.model_grad),
                    crate::sphere::norm(&r.eq_grad),
                    crate::sphere::norm(&r.policy_grad),
                ]
            });
            for j in 0..3 {
                row.push(opt(norms.map(|n| n[j])));
            }
            row.push((e.skipped as u8).to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn oracle(dist: &TypeDistribution, beta: &[f64], q: Capacity, on: bool) -> Option<f64> {
    if on {
        dist.equilibrium_policy_value(beta, q).ok()
    } else {
        None
    }
}

/// Uniform draw on the unit sphere.
pub fn random_unit(d: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(u) = project_sphere(&v) {
            return Ok(u);
        }
    }
}

/// Runs projected gradient ascent for `cfg.epochs` epochs.
///
/// Each epoch equilibrates the threshold with the perturbed stochastic
/// dynamics, runs one perturbed round, estimates the gradient and steps.
/// Rounds whose estimates are ill-conditioned keep the current criterion.
pub fn learn(dist: &TypeDistribution, cfg: &LearnConfig) -> Result<LearnTrace> {
    let d = dist.dim();
    cfg.validate(d)?;
    dist.require_unique()?;
    let q = cfg.sim.q;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.sim.seed, 0x4C45_4152));
    let mut beta = match &cfg.init_beta {
        InitBeta::Given(b) => b.clone(),
        InitBeta::Random => random_unit(d, &mut rng)?,
    };
    let mut s = dist.raw_quantile(&beta, q)?.clamp(-cfg.sim.trunc_d, cfg.sim.trunc_d);
    let mut prev_eq: Option<Vec<f64>> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for j in 0..cfg.epochs {
        let mut sim = cfg.sim.clone();
        sim.seed = mix(cfg.sim.seed, j as u64 + 1);
        if cfg.equilibrate_steps > 0 {
            let trace = stochastic_fpi(dist, &beta, &sim, s, cfg.equilibrate_steps)?;
            s = *trace.last().expect("nonempty trace");
        }
        let record = run_perturbed_round(dist, &beta, &sim, s, &mut rng)?;
        let v_hat = record.mean_outcome();
        let v_oracle = oracle(dist, &beta, q, cfg.track_oracle);
        let (report, step) = match policy_gradient(&record, cfg.bandwidth) {
            Ok(rep) => {
                let step = match cfg.method {
                    Method::StrategyAware => Some(rep.model_grad.clone()),
                    Method::CompetitionAware if !rep.degenerate => {
                        prev_eq = Some(rep.eq_grad.clone());
                        Some(rep.policy_grad.clone())
                    }
                    Method::CompetitionAware => prev_eq.as_ref().map(|e| {
                        rep.model_grad.iter().zip(e).map(|(m, e)| m + e).collect()
                    }),
                };
                (Some(rep), step)
            }
            Err(Error::IllConditioned { .. }) | Err(Error::Rank(_)) => (None, None),
            Err(e) => return Err(e),
        };
        let fallback = report.as_ref().is_some_and(|r| r.degenerate) && cfg.method == Method::CompetitionAware;
        let mut skipped = step.is_none() || fallback;
        let current = beta.clone();
        if let Some(g) = step {
            let moved: Vec<f64> = beta.iter().zip(&g).map(|(b, g)| b + cfg.lr * g).collect();
            match project_sphere(&moved) {
                Ok(next) => beta = next,
                Err(Error::DegenerateStep(_)) => skipped = true,
                Err(e) => return Err(e),
            }
        }
        epochs.push(EpochRecord {
            epoch: j,
            beta: current,
            s,
            r_realized: record.r_realized,
            v_hat,
            v_oracle,
            report,
            skipped,
        });
    }
    let final_v_oracle = oracle(dist, &beta, q, cfg.track_oracle);
    Ok(LearnTrace {
        method: cfg.method,
        epochs,
        final_beta: beta,
        final_v_oracle,
    })
}

/// Covariates available to the trial's outcome regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RctCovariates {
    /// Unmodified covariates `Z`.
    #[default]
    Raw,
    /// `Z + eps`.
    Noisy,
}

/// Criterion learned from a randomized trial with non-strategic agents.
///
/// Treatment is Bernoulli(1/2); each arm's outcome is regressed on the
/// covariates with an intercept, and the normalised difference of slopes is
/// returned.
pub fn capacity_aware_baseline(
    dist: &TypeDistribution,
    n_rct: usize,
    covariates: RctCovariates,
    seed: u64,
) -> Result<Vec<f64>> {
    let d = dist.dim();
    if n_rct < 10 * d {
        return Err(Error::InvalidInput(format!(
            "randomized trial needs at least {} agents, got {n_rct}",
            10 * d
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5243_5400));
    let agents = sample_agents(dist, n_rct, &mut rng);
    let k = d + 1;
    let mut rows = [Vec::new(), Vec::new()];
    let mut ys = [Vec::new(), Vec::new()];
    for a in &agents {
        let t = &dist.types()[a.type_idx];
        let arm = rng.random_bool(0.5) as usize;
        rows[arm].push(1.0);
        match covariates {
            RctCovariates::Raw => rows[arm].extend(&t.z),
            RctCovariates::Noisy => rows[arm].extend(t.z.iter().zip(&a.eps).map(|(z, e)| z + e)),
        }
        ys[arm].push(if arm == 1 { t.y1 } else { t.y0 });
    }
    let control = least_squares(&rows[0], k, &ys[0])?;
    let treated = least_squares(&rows[1], k, &ys[1])?;
    let slope: Vec<f64> = (1..k).map(|j| treated[j] - control[j]).collect();
    project_sphere(&slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentType;
    use crate::gaussian::NoiseModel;

    fn dist() -> TypeDistribution {
        let a = AgentType::new(vec![2.0, 1.0], vec![2.0, 3.0], 0.0, 3.0).unwrap();
        let b = AgentType::new(vec![0.0, 0.5], vec![1.0, 2.0], 0.0, 1.0).unwrap();
        TypeDistribution::uniform(vec![a, b], NoiseModel::new(1.5).unwrap()).unwrap()
    }

    fn config(method: Method, lr: f64, epochs: usize) -> LearnConfig {
        let sim = SimConfig::new(2000, Capacity::new(0.6).unwrap(), 11).with_perturbation(0.05, 0.2);
        let mut cfg = LearnConfig::new(sim, method, lr, epochs, InitBeta::Given(vec![1.0, 0.0]));
        cfg.equilibrate_steps = 5;
        cfg
    }

    #[test]
    fn zero_rate_keeps_beta() {
        let t = learn(&dist(), &config(Method::CompetitionAware, 0.0, 4)).unwrap();
        assert!(t.epochs.iter().all(|e| e.beta == vec![1.0, 0.0]));
        assert_eq!(t.final_beta, vec![1.0, 0.0]);
    }

    #[test]
    fn zero_epochs_echo_init() {
        let t = learn(&dist(), &config(Method::StrategyAware, 0.5, 0)).unwrap();
        assert!(t.epochs.is_empty());
        assert_eq!(t.final_beta, vec![1.0, 0.0]);
    }

    #[test]
    fn iterates_stay_unit_and_reproduce() {
        let cfg = config(Method::CompetitionAware, 0.5, 5);
        let a = learn(&dist(), &cfg).unwrap();
        let b = learn(&dist(), &cfg).unwrap();
        assert_eq!(a, b);
        for e in &a.epochs {
            assert!((crate::sphere::norm(&e.beta) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn no_effect_baseline_is_degenerate() {
        let flat = dist().with_outcomes(&[(1.0, 1.0), (1.0, 1.0)]).unwrap();
        assert!(matches!(
            capacity_aware_baseline(&flat, 1000, RctCovariates::Noisy, 1),
            Err(Error::DegenerateStep(_))
        ));
    }

    #[test]
    fn baseline_needs_enough_agents() {
        assert!(capacity_aware_baseline(&dist(), 5, RctCovariates::Raw, 1).is_err());
    }
}
