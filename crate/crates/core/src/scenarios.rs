//! Benchmark distributions with two groups: "naturals" with high raw
//! covariates and expensive manipulation, and "gamers" with lower raw
//! covariates who can cheaply inflate some coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{noise_regime, AgentType, CostSpec};
use crate::error::Result;
use crate::gaussian::NoiseModel;
use crate::population::{Capacity, TypeDistribution};

pub const NATURAL: &str = "natural";
pub const GAMER: &str = "gamer";

/// Noise level of the two-dimensional benchmark.
pub const TOY_SIGMA: f64 = 3.30;
/// Noise level of the high-dimensional benchmark.
pub const HIGH_DIM_SIGMA: f64 = 1.10;

/// Both benchmarks treat the top 30%.
pub fn benchmark_capacity() -> Capacity {
    Capacity::new(0.7).expect("0.7 is a valid quantile level")
}

fn uniform_vec(rng: &mut impl Rng, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Draws gamer costs until the type sits in the unique-response regime.
fn draw_cost(
    rng: &mut impl Rng,
    noise: &NoiseModel,
    draw: impl Fn(&mut dyn rand::RngCore) -> Vec<f64>,
) -> CostSpec {
    loop {
        let g = draw(rng);
        let cost = CostSpec::quadratic(g).expect("uniform draws on positive ranges");
        if noise_regime(&cost, noise).is_unique() {
            return cost;
        }
    }
}

fn make_type(z: Vec<f64>, cost: CostSpec, y1: f64, tag: &str) -> AgentType {
    AgentType {
        z,
        cost,
        y0: 0.0,
        y1,
        tags: vec![tag.to_string()],
    }
}

/// Two-dimensional benchmark: five naturals and five gamers, `Y(1) = Z_1`,
/// `Y(0) = 0`, `sigma = 3.30`.
pub fn toy(seed: u64) -> Result<TypeDistribution> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = NoiseModel::new(TOY_SIGMA)?;
    let mut types = Vec::with_capacity(10);
    for _ in 0..5 {
        let z = uniform_vec(&mut rng, 5.0, 7.0, 2);
        let cost = draw_cost(&mut rng, &noise, |r| {
            vec![r.random_range(10.0..20.0), r.random_range(10.0..20.0)]
        });
        let y1 = z[0];
        types.push(make_type(z, cost, y1, NATURAL));
    }
    for _ in 0..5 {
        let z = uniform_vec(&mut rng, 3.0, 5.0, 2);
        let cost = draw_cost(&mut rng, &noise, |r| {
            vec![r.random_range(0.01..0.02), r.random_range(10.0..20.0)]
        });
        let y1 = z[0];
        types.push(make_type(z, cost, y1, GAMER));
    }
    TypeDistribution::uniform(types, noise)
}

/// `d`-dimensional benchmark: five naturals and five gamers, gamers cheap on
/// the first `d/2` coordinates, `Y(1) = sum_{j <= d/2} Z_j`, `sigma = 1.10`.
pub fn high_dim(d: usize, seed: u64) -> Result<TypeDistribution> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = NoiseModel::new(HIGH_DIM_SIGMA)?;
    let half = d / 2;
    let mut types = Vec::with_capacity(10);
    for group in [NATURAL, GAMER] {
        for _ in 0..5 {
            let z = if group == NATURAL {
                uniform_vec(&mut rng, 5.0, 7.0, d)
            } else {
                uniform_vec(&mut rng, 3.0, 5.0, d)
            };
            let cost = draw_cost(&mut rng, &noise, |r| {
                (0..d)
                    .map(|j| {
                        if group == GAMER && j < half {
                            r.random_range(0.1..0.2)
                        } else {
                            r.random_range(1.0..2.0)
                        }
                    })
                    .collect()
            });
            let y1 = z[..half].iter().sum();
            types.push(make_type(z, cost, y1, group));
        }
    }
    TypeDistribution::uniform(types, noise)
}

/// `[1, ..., 1] / sqrt(d)`.
pub fn diagonal_criterion(d: usize) -> Vec<f64> {
    vec![1.0 / (d as f64).sqrt(); d]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::NoiseRegime;

    #[test]
    fn toy_is_reproducible_and_unique() {
        let a = toy(3).unwrap();
        let b = toy(3).unwrap();
        assert_eq!(a, b);
        assert!(a.regime() >= NoiseRegime::Continuous);
        assert_eq!(a.tag_mask(NATURAL).iter().filter(|m| **m).count(), 5);
    }

    #[test]
    fn high_dim_outcome_sums_first_half() {
        let dist = high_dim(10, 1).unwrap();
        for t in dist.types() {
            let s: f64 = t.z[..5].iter().sum();
            assert_eq!(t.y1, s);
            assert_eq!(t.y0, 0.0);
        }
        assert!(dist.regime() >= NoiseRegime::Continuous);
    }
}
