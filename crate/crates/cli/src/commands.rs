use std::f64::consts::PI;
use std::path::PathBuf;

use compsel::estimators::policy_gradient;
use compsel::ingest::{self, IngestConfig, StudentSchema};
use compsel::learner::{self, capacity_aware_baseline, InitBeta, LearnConfig, Method};
use compsel::scenarios::diagonal_criterion;
use compsel::sim::{default_truncation, recorded_round, stochastic_fpi, SimConfig};
use compsel::sphere::{from_angle, norm, relative_error};
use compsel::{Capacity, FixedPointOptions, TypeDistribution};
use serde_json::json;

use crate::config::{EqSolveConfig, GradCheckConfig, IngestCliConfig, LearnCliConfig, MethodName, SimulateConfig};
use crate::error::CliError;
use crate::output::{num, Output, Table};

fn criterion(dist: &TypeDistribution, beta: Option<&Vec<f64>>) -> Vec<f64> {
    beta.cloned().unwrap_or_else(|| diagonal_criterion(dist.dim()))
}

fn truncation(dist: &TypeDistribution, q: Capacity, given: Option<f64>) -> Result<f64, CliError> {
    match given {
        Some(d) => Ok(d),
        None => Ok(default_truncation(dist, q)?),
    }
}

fn beta_columns(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("beta_{j}")).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.retain(|x| !x.is_nan());
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn eq_solve(cfg: &EqSolveConfig, sweep_beta: bool, out: &Output) -> Result<(), CliError> {
    let dist = cfg.distribution.load()?;
    let q = Capacity::new(cfg.q)?;
    let beta = criterion(&dist, cfg.beta.as_ref());
    let s0 = match cfg.s0 {
        Some(s) => s,
        None => dist.raw_quantile(&beta, q)?,
    };
    let opts = FixedPointOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
    };
    let write_trace = |trace: &[f64]| -> Result<PathBuf, CliError> {
        let mut t = Table::new(&["iteration", "s"]);
        for (i, s) in trace.iter().enumerate() {
            t.push(vec![i.to_string(), num(*s)]);
        }
        out.csv("trace.csv", &t)
    };
    let eq = match dist.meanfield_fixed_point(&beta, q, s0, opts) {
        Ok(eq) => eq,
        Err(compsel::Error::NonConvergence {
            iterations,
            last_step,
            trace,
        }) => {
            let path = write_trace(&trace)?;
            return Err(CliError::Numeric(format!(
                "fixed-point iteration did not converge after {iterations} iterations (last step {last_step:.3e}); iterates in {}",
                path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    write_trace(&eq.trace)?;
    let v_eq = dist.policy_value(&beta, eq.s_star, eq.s_star)?;
    out.json(
        "equilibrium.json",
        &json!({
            "beta": beta,
            "q": cfg.q,
            "s_star": eq.s_star,
            "iterations": eq.iterations,
            "residual": eq.residual,
            "kappa_hat": eq.kappa_hat,
            "v_eq": v_eq,
        }),
    )?;

    let half = cfg.grid_halfwidth * dist.noise().sigma();
    let pts = cfg.grid_points.max(2);
    let mut sweep = Table::new(&["x", "score_cdf", "quantile_map"]);
    for i in 0..pts {
        let x = eq.s_star - half + 2.0 * half * i as f64 / (pts - 1) as f64;
        let cdf = dist.score_cdf(&beta, eq.s_star, x)?;
        let map = dist.quantile(&beta, x, q)?;
        sweep.push(vec![num(x), num(cdf), num(map)]);
    }
    out.csv("sweep.csv", &sweep)?;

    if sweep_beta {
        if dist.dim() != 2 {
            return Err(CliError::Input(format!(
                "--sweep-beta needs two covariates, distribution has {}",
                dist.dim()
            )));
        }
        let mut t = Table::new(&["theta", "beta_1", "beta_2", "s_star", "v_eq"]);
        let n = cfg.sweep_points.max(1);
        for i in 0..n {
            let theta = 2.0 * PI * i as f64 / n as f64;
            let b = from_angle(theta);
            let e = dist.equilibrium(&b, q)?;
            let v = dist.policy_value(&b, e.s_star, e.s_star)?;
            t.push(vec![num(theta), num(b[0]), num(b[1]), num(e.s_star), num(v)]);
        }
        out.csv("sweep_beta.csv", &t)?;
    }
    Ok(())
}

pub fn simulate(cfg: &SimulateConfig, seed: u64, out: &Output) -> Result<(), CliError> {
    let dist = cfg.distribution.load()?;
    let q = Capacity::new(cfg.q)?;
    let beta = criterion(&dist, cfg.beta.as_ref());
    let trunc = truncation(&dist, q, cfg.trunc_d)?;
    let s0 = match cfg.s0 {
        Some(s) => s,
        None => dist.raw_quantile(&beta, q)?,
    };
    let s_star = dist.equilibrium(&beta, q)?.s_star;
    let mut table = Table::new(&["n", "t", "s"]);
    let mut runs = Vec::new();
    for &n in &cfg.ns {
        let mut sim = SimConfig::new(n, q, seed)
            .with_perturbation(cfg.b_beta, cfg.b_s)
            .with_truncation(trunc);
        sim.outcome_noise = cfg.outcome_noise;
        let trace = stochastic_fpi(&dist, &beta, &sim, s0, cfg.steps)?;
        for (t, s) in trace.iter().enumerate() {
            table.push(vec![n.to_string(), (t + 1).to_string(), num(*s)]);
        }
        let last = trace.last().copied().unwrap_or(s0);
        let mut entry = json!({ "n": n, "final_s": last });
        if cfg.record {
            let rec = recorded_round(&dist, &beta, &sim, last)?;
            let name = format!("record_n{n}.csv");
            out.csv_with(&name, |buf| rec.write_csv(buf))?;
            entry["record"] = json!(name);
            entry["summary"] = serde_json::to_value(rec.summary())?;
        }
        runs.push(entry);
    }
    out.csv("trace.csv", &table)?;
    out.json(
        "simulate.json",
        &json!({ "beta": beta, "q": cfg.q, "s0": s0, "s_star": s_star, "seed": seed, "runs": runs }),
    )?;
    Ok(())
}

pub fn learn(cfg: &LearnCliConfig, seed: u64, out: &Output) -> Result<(), CliError> {
    let dist = cfg.distribution.load()?;
    let q = Capacity::new(cfg.q)?;
    let d = dist.dim();
    let trunc = truncation(&dist, q, cfg.trunc_d)?;
    let mut header = vec!["method".to_string(), "v_eq".into(), "s_star".into()];
    header.extend(beta_columns(d));
    let mut summary = Table::new(&header);
    for &m in &cfg.methods {
        let beta = match m {
            MethodName::Capacity => capacity_aware_baseline(&dist, cfg.n_rct, cfg.rct_covariates, seed)?,
            MethodName::Competition | MethodName::Strategy => {
                let sim = SimConfig::new(cfg.n, q, seed)
                    .with_perturbation(cfg.b_beta, cfg.b_s)
                    .with_truncation(trunc);
                let (method, lr) = if m == MethodName::Strategy {
                    (Method::StrategyAware, cfg.lr_strategy.unwrap_or(cfg.lr))
                } else {
                    (Method::CompetitionAware, cfg.lr)
                };
                let init = match &cfg.init_beta {
                    Some(b) => InitBeta::Given(b.clone()),
                    None => InitBeta::Random,
                };
                let mut lc = LearnConfig::new(sim, method, lr, cfg.epochs, init);
                lc.equilibrate_steps = cfg.equilibrate_steps;
                lc.bandwidth = cfg.bandwidth;
                let trace = learner::learn(&dist, &lc)?;
                out.csv_with(&format!("learn_{}.csv", m.label()), |buf| trace.write_csv(buf))?;
                trace.final_beta
            }
        };
        let eq = dist.equilibrium(&beta, q)?;
        let v = dist.policy_value(&beta, eq.s_star, eq.s_star)?;
        out.json(
            &format!("final_{}.json", m.label()),
            &json!({ "method": m.label(), "beta": beta, "s_star": eq.s_star, "v_eq": v, "seed": seed }),
        )?;
        let mut row = vec![m.label().to_string(), num(v), num(eq.s_star)];
        row.extend(beta.iter().map(|b| num(*b)));
        summary.push(row);
    }
    out.csv("summary.csv", &summary)?;
    Ok(())
}

pub fn grad_check(cfg: &GradCheckConfig, seed: u64, out: &Output) -> Result<(), CliError> {
    let mut dist = cfg.distribution.load()?;
    if cfg.zero_effect {
        let flat: Vec<(f64, f64)> = dist.types().iter().map(|t| (t.y0, t.y0)).collect();
        dist = dist.with_outcomes(&flat)?;
    }
    let q = Capacity::new(cfg.q)?;
    let beta = criterion(&dist, cfg.beta.as_ref());
    let trunc = truncation(&dist, q, cfg.trunc_d)?;
    let an = dist.analytic_policy_gradient(&beta, q)?;
    let cols = [
        "n",
        "b_beta",
        "repeat",
        "model_err",
        "eq_err",
        "policy_err",
        "model_norm",
        "eq_norm",
        "policy_norm",
    ];
    let mut detail = Table::new(&cols);
    let mut summary = Table::new(&[
        "n",
        "b_beta",
        "median_model_err",
        "median_eq_err",
        "median_policy_err",
        "median_model_norm",
        "median_eq_norm",
        "median_policy_norm",
        "analytic_model_norm",
        "analytic_eq_norm",
        "analytic_policy_norm",
    ]);
    for &n in &cfg.ns {
        for &b in &cfg.b_betas {
            let mut stats: [Vec<f64>; 6] = Default::default();
            for rep in 0..cfg.repeats {
                let sim = SimConfig::new(n, q, seed.wrapping_add(rep as u64))
                    .with_perturbation(b, cfg.b_s)
                    .with_truncation(trunc);
                let s = if cfg.equilibrate_steps > 0 {
                    *stochastic_fpi(&dist, &beta, &sim, an.s_star, cfg.equilibrate_steps)?
                        .last()
                        .expect("nonempty trace")
                } else {
                    an.s_star
                };
                let rec = recorded_round(&dist, &beta, &sim, s)?;
                let vals = match policy_gradient(&rec, cfg.bandwidth) {
                    Ok(r) => [
                        relative_error(&r.model_grad_tangent, &an.model_tangent),
                        relative_error(&r.eq_grad_tangent, &an.equilibrium_tangent),
                        relative_error(&r.policy_grad_tangent, &an.total_tangent),
                        norm(&r.model_grad_tangent),
                        norm(&r.eq_grad_tangent),
                        norm(&r.policy_grad_tangent),
                    ],
                    Err(compsel::Error::IllConditioned { .. }) | Err(compsel::Error::Rank(_)) => [f64::NAN; 6],
                    Err(e) => return Err(e.into()),
                };
                let mut row = vec![n.to_string(), num(b), rep.to_string()];
                row.extend(vals.iter().map(|v| num(*v)));
                detail.push(row);
                for (acc, v) in stats.iter_mut().zip(vals) {
                    acc.push(v);
                }
            }
            let mut row = vec![n.to_string(), num(b)];
            row.extend(stats.into_iter().map(|v| num(median(v))));
            row.extend(
                [&an.model_tangent, &an.equilibrium_tangent, &an.total_tangent]
                    .iter()
                    .map(|v| num(norm(v))),
            );
            summary.push(row);
        }
    }
    out.csv("grad_check.csv", &detail)?;
    out.csv("grad_check_summary.csv", &summary)?;
    Ok(())
}

pub fn ingest(cfg: &IngestCliConfig, input: Option<PathBuf>, seed: u64, out: &Output) -> Result<(), CliError> {
    let path = input
        .or_else(|| cfg.input.clone())
        .ok_or_else(|| CliError::Input("no input CSV given".into()))?;
    let mut ic = IngestConfig::nels(seed);
    if let Some(v) = &cfg.beta_bar {
        ic.beta_bar = v.clone();
    }
    if let Some(v) = cfg.s_bar {
        ic.s_bar = v;
    }
    if let Some(v) = cfg.sigma {
        ic.sigma = v;
    }
    if let Some(v) = cfg.g_test {
        ic.g_test = v;
    }
    if let Some(v) = cfg.c_grades {
        ic.c_grades = v;
    }
    if let Some(v) = cfg.k_clusters {
        ic.k_clusters = v;
    }
    if let Some(v) = cfg.kmeans_iters {
        ic.kmeans_iters = v;
    }
    if let Some(v) = cfg.kmeans_restarts {
        ic.kmeans_restarts = v;
    }
    if let Some(v) = cfg.outcome {
        ic.outcome = v;
    }
    let rows = ingest::load_student_csv(&path, &StudentSchema::nels(), &ingest::nels_imputation())?;
    let result = ingest::ingest(&rows, &ic)?;
    if cfg.check_roundtrip && !(result.roundtrip_error <= cfg.roundtrip_tol) {
        return Err(CliError::Numeric(format!(
            "round-trip error {:.3e} exceeds {:.3e}",
            result.roundtrip_error, cfg.roundtrip_tol
        )));
    }
    result.distribution.save(out.path("distribution.json"))?;
    out.json(
        "ingest_report.json",
        &json!({
            "input": path,
            "rows": rows.len(),
            "types": result.distribution.len(),
            "probs": result.distribution.probs(),
            "roundtrip_error": result.roundtrip_error,
            "regime": format!("{:?}", result.distribution.regime()),
            "seed": seed,
        }),
    )?;
    Ok(())
}
