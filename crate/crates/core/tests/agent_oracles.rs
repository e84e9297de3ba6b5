mod common;

use common::{grid_argmax, max_abs_diff, random_case};
use compsel::{
    best_response, best_response_any_regime, expected_score, expected_utility, score_derivative,
    score_gradient_beta, AgentType, CovariateBox, Error, NoiseModel, Policy,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn foc_residual(case: &common::Case, x: &[f64]) -> f64 {
    let m: f64 = case.beta.iter().zip(x).map(|(b, v)| b * v).sum();
    let p = case.noise.pdf(case.s - m);
    case.beta
        .iter()
        .zip(x.iter().zip(&case.agent.z))
        .zip(&case.agent.cost.g)
        .map(|((b, (x, z)), g)| (p * b - 2.0 * g * (x - z)).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn first_order_condition_holds(seed in any::<u64>(), d in 1usize..7) {
        let case = random_case(&mut ChaCha8Rng::seed_from_u64(seed), d);
        let br = best_response(&case.agent, &case.beta, case.s, &case.noise, &case.bbox).unwrap();
        prop_assert!(!br.on_boundary);
        prop_assert!(foc_residual(&case, &br.x) <= 1e-10);
        let m: f64 = case.beta.iter().zip(&br.x).map(|(b, x)| b * x).sum();
        prop_assert!((m - br.score).abs() <= 1e-12 * (1.0 + m.abs()));
    }

    #[test]
    fn threshold_derivative_matches_difference_quotient(seed in any::<u64>(), d in 1usize..5) {
        let case = random_case(&mut ChaCha8Rng::seed_from_u64(seed), d);
        let h = 1e-5 * case.noise.sigma();
        let f = |s: f64| expected_score(&case.agent, &case.beta, s, &case.noise, &case.bbox).unwrap();
        let fd = (f(case.s + h) - f(case.s - h)) / (2.0 * h);
        let exact = score_derivative(&case.agent, &case.beta, case.s, &case.noise, &case.bbox).unwrap();
        prop_assert!((fd - exact).abs() <= 1e-5 * (1.0 + exact.abs()), "fd {} exact {}", fd, exact);
    }

    #[test]
    fn criterion_gradient_matches_difference_quotient(seed in any::<u64>(), d in 1usize..5) {
        let case = random_case(&mut ChaCha8Rng::seed_from_u64(seed), d);
        let exact = score_gradient_beta(&case.agent, &case.beta, case.s, &case.noise, &case.bbox).unwrap();
        let h = 1e-6;
        for j in 0..d {
            let mut up = case.beta.clone();
            let mut dn = case.beta.clone();
            up[j] += h;
            dn[j] -= h;
            let f = |b: &[f64]| best_response(&case.agent, b, case.s, &case.noise, &case.bbox).unwrap().score;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            prop_assert!((fd - exact[j]).abs() <= 1e-5 * (1.0 + exact[j].abs()), "coord {}: fd {} exact {}", j, fd, exact[j]);
        }
    }
}

#[test]
fn grid_search_agrees_with_newton() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..150 {
        let case = random_case(&mut rng, 2);
        let br = best_response(&case.agent, &case.beta, case.s, &case.noise, &case.bbox).unwrap();
        let grid = grid_argmax(&case);
        assert!(max_abs_diff(&br.x, &grid) <= 2e-3, "newton {:?} grid {:?}", br.x, grid);
    }
}

#[test]
fn response_beats_nearby_reports() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let case = random_case(&mut rng, 3);
        let policy = Policy::new(case.beta.clone(), case.s).unwrap();
        let br = best_response(&case.agent, &case.beta, case.s, &case.noise, &case.bbox).unwrap();
        let best = expected_utility(&case.agent, &br.x, &policy, &case.noise).unwrap();
        for j in 0..3 {
            for step in [-1e-3, 1e-3] {
                let mut x = br.x.clone();
                x[j] += step;
                assert!(expected_utility(&case.agent, &x, &policy, &case.noise).unwrap() <= best + 1e-15);
            }
        }
    }
}

#[test]
fn small_noise_is_rejected_and_any_regime_picks_global_maximum() {
    let agent = AgentType::new(vec![3.0, 0.0], vec![0.1, 1.0], 0.0, 0.0).unwrap();
    let noise = NoiseModel::new(1.0).unwrap();
    let bbox = CovariateBox::default_for_dim(2);
    let beta = [1.0, 0.0];
    assert!(matches!(
        best_response(&agent, &beta, 4.5, &noise, &bbox),
        Err(Error::Regime { .. })
    ));
    let policy = Policy::new(beta.to_vec(), 4.5).unwrap();
    let br = best_response_any_regime(&agent, &beta, 4.5, &noise, &bbox).unwrap();
    let u = expected_utility(&agent, &br.x, &policy, &noise).unwrap();
    for i in 0..=4000 {
        let x = [2.0 + 4.0 * i as f64 / 4000.0, 0.0];
        assert!(expected_utility(&agent, &x, &policy, &noise).unwrap() <= u + 1e-12);
    }
}

#[test]
fn tight_box_clamps_the_response() {
    let agent = AgentType::new(vec![0.0, 0.0], vec![0.2, 0.2], 0.0, 0.0).unwrap();
    let noise = NoiseModel::new(1.0).unwrap();
    let bbox = CovariateBox::new(vec![-0.1, -0.1], vec![0.1, 0.1]).unwrap();
    let beta = [0.6, 0.8];
    let br = best_response(&agent, &beta, 0.0, &noise, &bbox).unwrap();
    assert!(br.on_boundary);
    assert!(bbox.contains(&br.x));
}

#[test]
fn huge_noise_leaves_covariates_almost_unchanged() {
    let agent = AgentType::new(vec![1.0, -2.0], vec![1.0, 1.0], 0.0, 0.0).unwrap();
    let noise = NoiseModel::new(100.0).unwrap();
    let br = best_response(&agent, &[0.6, 0.8], 0.0, &noise, &CovariateBox::default_for_dim(2)).unwrap();
    assert!(max_abs_diff(&br.x, &agent.z) < 2e-3);
}
