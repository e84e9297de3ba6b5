use compsel::ingest::{
    ingest, invert_raw_covariates, kmeans, load_student_csv, nels_imputation, read_student_csv, ses_percentiles,
    IngestConfig, StudentRow, StudentSchema,
};
use compsel::{best_response, AgentType, CovariateBox, NoiseModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/students_synthetic.csv");

fn fixture_rows() -> Vec<StudentRow> {
    load_student_csv(FIXTURE, &StudentSchema::nels(), &nels_imputation()).unwrap()
}

#[test]
fn fixture_round_trips_through_best_response() {
    let out = ingest(&fixture_rows(), &IngestConfig::nels(0)).unwrap();
    assert!(out.roundtrip_error <= 1e-8, "{}", out.roundtrip_error);
    assert_eq!(out.distribution.len(), 8);
    assert!((out.distribution.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn inversion_matches_hand_evaluation() {
    let cfg = IngestConfig::nels(0);
    let x: Vec<f64> = (0..9).map(|j| 2.0 + 0.5 * j as f64).collect();
    let g: Vec<f64> = (0..9).map(|j| if j < 4 { 0.1 } else { 2.0 }).collect();
    let z = invert_raw_covariates(&x, &g, &cfg).unwrap();
    let m: f64 = x.iter().map(|v| v / 3.0).sum();
    let u = (19.5 - m) / 1.2;
    let phi = (-0.5 * u * u).exp() / (1.2 * (2.0 * std::f64::consts::PI).sqrt());
    for j in 0..9 {
        let expect = x[j] - phi * (1.0 / 3.0) / (2.0 * g[j]);
        assert!((z[j] - expect).abs() <= 1e-14, "coord {j}: {} vs {expect}", z[j]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inversion_is_a_right_inverse(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = IngestConfig::nels(0);
        let pct: f64 = rng.random_range(0.01..1.0);
        let g = cfg.costs(pct);
        let x: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..8.0)).collect();
        let z = invert_raw_covariates(&x, &g, &cfg).unwrap();
        let agent = AgentType::new(z, g, 0.0, 0.0).unwrap();
        let bbox = CovariateBox::new(vec![-1e3; 9], vec![1e3; 9]).unwrap();
        let br = best_response(&agent, &cfg.beta_bar, cfg.s_bar, &NoiseModel::new(cfg.sigma).unwrap(), &bbox).unwrap();
        for (a, b) in br.x.iter().zip(&x) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }
}

#[test]
fn clustering_is_deterministic_by_seed() {
    let rows = fixture_rows();
    let a = ingest(&rows, &IngestConfig::nels(3)).unwrap().distribution;
    let b = ingest(&rows, &IngestConfig::nels(3)).unwrap().distribution;
    assert_eq!(a, b);
}

#[test]
fn kmeans_recovers_separated_blobs() {
    let centres = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut points = Vec::new();
    let mut truth = Vec::new();
    for (k, c) in centres.iter().enumerate() {
        for _ in 0..100 {
            let e: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            points.push(vec![c[0] + 0.5 * e[0], c[1] + 0.5 * e[1]]);
            truth.push(k);
        }
    }
    let fit = kmeans(&points, 4, 100, 10, 1).unwrap();
    for k in 0..4 {
        let labels: Vec<usize> = fit.labels.iter().zip(&truth).filter(|(_, t)| **t == k).map(|(l, _)| *l).collect();
        assert!(labels.iter().all(|l| *l == labels[0]));
    }
    let mut distinct: Vec<usize> = (0..4).map(|k| fit.labels[100 * k]).collect();
    distinct.sort();
    distinct.dedup();
    assert_eq!(distinct.len(), 4);
    for w in fit.history.windows(2) {
        assert!(w[1] <= w[0] + 1e-9);
    }
}

#[test]
fn percentiles_use_mid_ranks() {
    assert_eq!(ses_percentiles(&[3.0, 1.0, 2.0, 2.0]), vec![1.0, 0.25, 0.625, 0.625]);
}

#[test]
fn missing_columns_are_rejected() {
    let text = "x1,x2\n1,2\n";
    assert!(read_student_csv(text.as_bytes(), &StudentSchema::nels(), &nels_imputation()).is_err());
}
