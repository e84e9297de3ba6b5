#![allow(dead_code)]

use compsel::agent::regime_bounds;
use compsel::{expected_utility, AgentType, CostSpec, CovariateBox, NoiseModel, Policy};
use rand::Rng;

pub struct Case {
    pub agent: AgentType,
    pub beta: Vec<f64>,
    pub s: f64,
    pub noise: NoiseModel,
    pub bbox: CovariateBox,
}

pub fn unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Random agent and policy with noise strictly inside the uniqueness regime.
pub fn random_case(rng: &mut impl Rng, d: usize) -> Case {
    let z: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
    let g: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..5.0)).collect();
    let (bound, _) = regime_bounds(&CostSpec::quadratic(g.clone()).unwrap());
    let sigma = (bound * rng.random_range(1.05..4.0)).sqrt();
    let beta = unit(rng, d);
    let base: f64 = beta.iter().zip(&z).map(|(b, z)| b * z).sum();
    let s = base + rng.random_range(-3.0..3.0) * sigma;
    Case {
        agent: AgentType::new(z, g, 0.0, 0.0).unwrap(),
        beta,
        s,
        noise: NoiseModel::new(sigma).unwrap(),
        bbox: CovariateBox::default_for_dim(d),
    }
}

/// Brute-force maximiser of the expected utility over a shrinking 2-D grid.
pub fn grid_argmax(case: &Case) -> Vec<f64> {
    assert_eq!(case.agent.dim(), 2);
    let policy = Policy::new(case.beta.clone(), case.s).unwrap();
    let reach: Vec<f64> = case
        .agent
        .cost
        .g
        .iter()
        .map(|g| case.noise.pdf_max() / (2.0 * g) + 1e-3)
        .collect();
    let mut center = case.agent.z.clone();
    let mut half = reach;
    let pts = 81;
    for _ in 0..6 {
        let mut best = (f64::NEG_INFINITY, center.clone());
        for i in 0..pts {
            for j in 0..pts {
                let x = vec![
                    center[0] - half[0] + 2.0 * half[0] * i as f64 / (pts - 1) as f64,
                    center[1] - half[1] + 2.0 * half[1] * j as f64 / (pts - 1) as f64,
                ];
                let u = expected_utility(&case.agent, &x, &policy, &case.noise).unwrap();
                if u > best.0 {
                    best = (u, x);
                }
            }
        }
        center = best.1;
        half = half.iter().map(|h| 4.0 * h / (pts - 1) as f64).collect();
    }
    center
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn l2_rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
