mod common;

use compsel::best_response;
use compsel::scenarios::{benchmark_capacity, high_dim, toy};
use compsel::sim::{default_truncation, empirical_quantile, recorded_round, stochastic_fpi, SimConfig};
use compsel::sphere::from_angle;
use compsel::Capacity;
use proptest::prelude::*;

fn trailing_stats(trace: &[f64], k: usize) -> (f64, f64) {
    let tail = &trace[trace.len() - k..];
    let mean = tail.iter().sum::<f64>() / k as f64;
    let var = tail.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (k as f64 - 1.0);
    (mean, var.sqrt())
}

proptest! {
    #[test]
    fn empirical_quantile_is_an_order_statistic(
        scores in prop::collection::vec(-1e3f64..1e3, 1..200),
        q in 0.01f64..0.99,
    ) {
        let r = empirical_quantile(&scores, Capacity::new(q).unwrap()).unwrap();
        prop_assert!(scores.contains(&r));
        let n = scores.len() as f64;
        let at_most = scores.iter().filter(|s| **s <= r).count() as f64;
        let below = scores.iter().filter(|s| **s < r).count() as f64;
        prop_assert!(at_most >= q * n - 1e-9);
        prop_assert!(below < q * n);
    }
}

#[test]
fn trailing_iterates_concentrate_around_equilibrium() {
    let dist = toy(0).unwrap();
    let q = benchmark_capacity();
    let beta = from_angle(0.5);
    let s_star = dist.equilibrium(&beta, q).unwrap().s_star;
    let trunc = default_truncation(&dist, q).unwrap();
    let mut spreads = Vec::new();
    for n in [100, 10_000] {
        let cfg = SimConfig::new(n, q, 4).with_truncation(trunc);
        let trace = stochastic_fpi(&dist, &beta, &cfg, s_star - 3.0, 80).unwrap();
        let (mean, sd) = trailing_stats(&trace, 20);
        assert!((mean - s_star).abs() <= 3.0 * sd + 3.0 * sd / 20f64.sqrt(), "n {n}: {mean} vs {s_star} sd {sd}");
        spreads.push(sd);
    }
    assert!(spreads[1] < spreads[0]);
}

#[test]
fn reports_are_best_responses_plus_noise() {
    let dist = high_dim(4, 5).unwrap();
    let q = benchmark_capacity();
    let beta = vec![0.5; 4];
    let b = 0.05;
    let b_s = 0.3;
    let cfg = SimConfig::new(20_000, q, 12).with_perturbation(b, b_s);
    let s_prev = dist.equilibrium(&beta, q).unwrap().s_star;
    let rec = recorded_round(&dist, &beta, &cfg, s_prev).unwrap();
    let sigma = dist.noise().sigma();
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut count = 0.0;
    for i in 0..rec.n {
        let t = &dist.types()[rec.type_idx[i]];
        let beta_i: Vec<f64> = beta.iter().zip(rec.zeta_row(i)).map(|(b0, z)| b0 + b * *z as f64).collect();
        let s_i = s_prev + b_s * rec.xi[i] as f64;
        let br = best_response(t, &beta_i, s_i, dist.noise(), dist.covariate_box()).unwrap();
        for (x, xs) in rec.x_row(i).iter().zip(&br.x) {
            let e = (x - xs) / sigma;
            sum += e;
            sq += e * e;
            count += 1.0;
        }
    }
    let mean = sum / count;
    let var = sq / count - mean * mean;
    assert!(mean.abs() < 4.0 / count.sqrt(), "mean {mean}");
    assert!((var - 1.0).abs() < 4.0 * (2.0 / count).sqrt(), "var {var}");
}

#[test]
fn unperturbed_round_treats_exact_capacity() {
    let dist = toy(2).unwrap();
    for (n, q) in [(1000, 0.7), (997, 0.3), (10, 0.5)] {
        let cap = Capacity::new(q).unwrap();
        let cfg = SimConfig::new(n, cap, 1);
        let rec = recorded_round(&dist, &from_angle(0.2), &cfg, 7.0).unwrap();
        let treated = rec.w.iter().filter(|w| **w == 1).count();
        let k = (q * n as f64 - 1e-9).ceil() as usize;
        assert_eq!(treated, n - k);
        assert_eq!(rec.w, rec.i_ind);
    }
}

#[test]
fn runs_reproduce_by_seed() {
    let dist = toy(0).unwrap();
    let q = benchmark_capacity();
    let beta = from_angle(1.0);
    let cfg = SimConfig::new(5000, q, 77).with_perturbation(0.025, 0.2);
    let a = stochastic_fpi(&dist, &beta, &cfg, 8.0, 10).unwrap();
    let b = stochastic_fpi(&dist, &beta, &cfg, 8.0, 10).unwrap();
    assert_eq!(a, b);
    let other = SimConfig { seed: 78, ..cfg.clone() };
    assert_ne!(a, stochastic_fpi(&dist, &beta, &other, 8.0, 10).unwrap());
    let ra = recorded_round(&dist, &beta, &cfg, 8.0).unwrap();
    let rb = recorded_round(&dist, &beta, &cfg, 8.0).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn csv_floats_round_trip_exactly() {
    let dist = toy(0).unwrap();
    let cfg = SimConfig::new(50, benchmark_capacity(), 3).with_perturbation(0.025, 0.2);
    let rec = recorded_round(&dist, &from_angle(0.3), &cfg, 8.0).unwrap();
    let mut buf = Vec::new();
    rec.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let scores: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2 * 2 + 2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(scores, rec.score);
}
