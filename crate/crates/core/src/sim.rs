//! Finite-population threshold dynamics and the perturbed experiment round.
//!
//! Every step draws fresh agents. Randomness is split into fixed-size chunks
//! of agents, each with its own ChaCha stream derived from `(seed, step,
//! chunk)`, so results do not depend on how the chunks are scheduled.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agent::{dot, response_from_score, ScoreEquation};
use crate::error::{check_dim, Error, Result};
use crate::population::{Capacity, TypeDistribution};

const CHUNK: usize = 4096;
const DENSE_CACHE_LIMIT: usize = 1 << 20;

/// Parameters of one finite-population experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Agents per step.
    pub n: usize,
    pub q: Capacity,
    /// Perturbation size applied to the criterion.
    pub b_beta: f64,
    /// Perturbation size applied to the threshold.
    pub b_s: f64,
    /// Thresholds are truncated to `[-trunc_d, trunc_d]`.
    pub trunc_d: f64,
    pub seed: u64,
    /// Scale of optional zero-mean Gaussian noise added to outcomes.
    #[serde(default)]
    pub outcome_noise: f64,
}

impl SimConfig {
    pub fn new(n: usize, q: Capacity, seed: u64) -> Self {
        Self {
            n,
            q,
            b_beta: 0.0,
            b_s: 0.0,
            trunc_d: 1e6,
            seed,
            outcome_noise: 0.0,
        }
    }

    pub fn with_perturbation(mut self, b_beta: f64, b_s: f64) -> Self {
        self.b_beta = b_beta;
        self.b_s = b_s;
        self
    }

    pub fn with_truncation(mut self, trunc_d: f64) -> Self {
        self.trunc_d = trunc_d;
        self
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidInput("need at least one agent per step".into()));
        }
        if !(self.b_beta >= 0.0 && self.b_s >= 0.0) {
            return Err(Error::InvalidInput("perturbation sizes must be nonnegative".into()));
        }
        if !(self.trunc_d > 0.0) {
            return Err(Error::InvalidInput("truncation bound must be positive".into()));
        }
        if !(self.outcome_noise >= 0.0) {
            return Err(Error::InvalidInput("outcome noise must be nonnegative".into()));
        }
        if d > 64 {
            return Err(Error::InvalidInput(format!(
                "perturbation experiments support at most 64 covariates, got {d}"
            )));
        }
        Ok(())
    }
}

/// `10 +` the largest absolute non-strategic threshold over a coarse grid of
/// criteria (coordinate axes and the two diagonals).
pub fn default_truncation(dist: &TypeDistribution, q: Capacity) -> Result<f64> {
    let d = dist.dim();
    let mut grid: Vec<Vec<f64>> = Vec::with_capacity(2 * d + 2);
    for j in 0..d {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[j] = sign;
            grid.push(e);
        }
    }
    let diag = 1.0 / (d as f64).sqrt();
    grid.push(vec![diag; d]);
    grid.push(vec![-diag; d]);
    let mut worst: f64 = 0.0;
    for beta in &grid {
        worst = worst.max(dist.raw_quantile(beta, q)?.abs());
    }
    Ok(10.0 + worst)
}

/// SplitMix64 finaliser, used to derive independent stream seeds.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn chunk_rng(step_seed: u64, chunk: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(step_seed, chunk as u64))
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

fn draw_type(cum: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random::<f64>() * cum[cum.len() - 1];
    cum.partition_point(|c| *c <= u).min(cum.len() - 1)
}

/// One sampled agent: its type and its reporting noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledAgent {
    pub type_idx: usize,
    pub eps: Vec<f64>,
}

/// Draws `n` agents i.i.d. from `dist` together with their noise vectors.
pub fn sample_agents(dist: &TypeDistribution, n: usize, rng: &mut impl Rng) -> Vec<SampledAgent> {
    let cum = cumulative(dist.probs());
    let sigma = dist.noise().sigma();
    let d = dist.dim();
    (0..n)
        .map(|_| {
            let type_idx = draw_type(&cum, rng);
            let eps = (0..d)
                .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            SampledAgent { type_idx, eps }
        })
        .collect()
}

/// Order statistic of rank `ceil(q n)` (1-indexed) among `scores`.
pub fn empirical_quantile(scores: &[f64], q: Capacity) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("empirical quantile of an empty sample".into()));
    }
    let n = scores.len();
    let rank = ((q.q() * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut buf = scores.to_vec();
    let (_, v, _) = buf.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*v)
}

/// Lazily filled table of perturbed expected scores keyed by
/// (type, zeta sign pattern, xi sign).
enum ScoreCache {
    Dense(Vec<f64>),
    Sparse(HashMap<usize, f64>),
}

struct StepEngine<'a> {
    dist: &'a TypeDistribution,
    beta: &'a [f64],
    b_beta: f64,
    b_s: f64,
    s_prev: f64,
    patterns: usize,
    cache: ScoreCache,
    /// Types whose response can never reach the box boundary.
    interior: Vec<bool>,
}

impl<'a> StepEngine<'a> {
    fn new(dist: &'a TypeDistribution, beta: &'a [f64], cfg: &SimConfig, s_prev: f64) -> Self {
        let patterns = if cfg.b_beta > 0.0 { 1usize << dist.dim() } else { 1 };
        let size = dist.len() * patterns * 2;
        let cache = if size <= DENSE_CACHE_LIMIT {
            ScoreCache::Dense(vec![f64::NAN; size])
        } else {
            ScoreCache::Sparse(HashMap::new())
        };
        let reach = 0.5 * dist.noise().pdf_max();
        let bbox = dist.covariate_box();
        let interior = dist
            .types()
            .iter()
            .map(|t| {
                let shifted: Vec<Vec<f64>> = [-1.0, 1.0]
                    .iter()
                    .map(|sgn| {
                        t.z.iter()
                            .zip(beta.iter().zip(&t.cost.g))
                            .map(|(z, (b, g))| z + sgn * reach * (b.abs() + cfg.b_beta) / g)
                            .collect()
                    })
                    .collect();
                shifted.iter().all(|x| bbox.is_interior(x))
            })
            .collect();
        Self {
            dist,
            beta,
            b_beta: cfg.b_beta,
            b_s: cfg.b_s,
            s_prev,
            patterns,
            cache,
            interior,
        }
    }

    fn perturbed_beta(&self, bits: u64) -> Vec<f64> {
        self.beta
            .iter()
            .enumerate()
            .map(|(j, b)| b + self.b_beta * sign(bits, j) as f64)
            .collect()
    }

    fn perturbed_threshold(&self, xi: i8) -> f64 {
        self.s_prev + self.b_s * xi as f64
    }

    fn key(&self, k: usize, bits: u64, xi: i8) -> usize {
        let p = if self.patterns > 1 { bits as usize } else { 0 };
        let x = if self.b_s > 0.0 && xi > 0 { 1 } else { 0 };
        (k * self.patterns + p) * 2 + x
    }

    /// Optimal report of type `k` against its perturbed policy.
    fn report(&self, k: usize, beta_i: &[f64], s_i: f64) -> Vec<f64> {
        let agent = &self.dist.types()[k];
        let noise = self.dist.noise();
        let m = ScoreEquation::new(agent, beta_i).solve(s_i, noise);
        let mut x = response_from_score(agent, beta_i, s_i, m, noise);
        let bbox = self.dist.covariate_box();
        if !bbox.is_interior(&x) {
            bbox.clamp(&mut x);
        }
        x
    }

    /// `beta_i' x*_i` for the perturbed policy.
    fn expected_score(&mut self, k: usize, bits: u64, xi: i8) -> f64 {
        let key = self.key(k, bits, xi);
        let cached = match &self.cache {
            ScoreCache::Dense(v) => v[key],
            ScoreCache::Sparse(m) => m.get(&key).copied().unwrap_or(f64::NAN),
        };
        if !cached.is_nan() {
            return cached;
        }
        let beta_i = self.perturbed_beta(bits);
        let s_i = self.perturbed_threshold(xi);
        let score = if self.interior[k] {
            ScoreEquation::new(&self.dist.types()[k], &beta_i).solve(s_i, self.dist.noise())
        } else {
            dot(&beta_i, &self.report(k, &beta_i, s_i))
        };
        match &mut self.cache {
            ScoreCache::Dense(v) => v[key] = score,
            ScoreCache::Sparse(m) => {
                m.insert(key, score);
            }
        }
        score
    }
}

fn sign(bits: u64, j: usize) -> i8 {
    if (bits >> j) & 1 == 1 {
        1
    } else {
        -1
    }
}

fn draw_bits(rng: &mut impl RngCore, d: usize) -> u64 {
    let raw = rng.next_u64();
    if d >= 64 {
        raw
    } else {
        raw & ((1u64 << d) - 1)
    }
}

fn draw_xi(rng: &mut impl RngCore) -> i8 {
    if rng.next_u32() & 1 == 1 {
        1
    } else {
        -1
    }
}

/// Stochastic fixed-point iteration of the threshold.
///
/// Each step samples `cfg.n` fresh agents, perturbs their policy when
/// `b_beta`/`b_s` are positive, scores their noisy best responses and sets
/// the next threshold to the clamped empirical `q`-quantile. Returns the
/// thresholds after each of the `t_steps` steps.
pub fn stochastic_fpi(
    dist: &TypeDistribution,
    beta: &[f64],
    cfg: &SimConfig,
    s0: f64,
    t_steps: usize,
) -> Result<Vec<f64>> {
    check_dim(dist.dim(), beta.len())?;
    crate::agent::check_unit(beta)?;
    cfg.validate(dist.dim())?;
    dist.require_unique()?;
    check_truncation(dist, beta, cfg)?;

    let d = dist.dim();
    let cum = cumulative(dist.probs());
    let sigma = dist.noise().sigma();
    let base_seed = mix(cfg.seed, 0x5354_4550);
    let mut scores = vec![0.0; cfg.n];
    let mut s = s0.clamp(-cfg.trunc_d, cfg.trunc_d);
    let mut trace = Vec::with_capacity(t_steps);

    // norms of the perturbed criteria, indexed by sign pattern
    let norms: Vec<f64> = if cfg.b_beta > 0.0 {
        (0..1u64 << d)
            .map(|bits| {
                beta.iter()
                    .enumerate()
                    .map(|(j, b)| {
                        let v = b + cfg.b_beta * sign(bits, j) as f64;
                        v * v
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    } else {
        vec![1.0]
    };

    for t in 0..t_steps {
        let step_seed = mix(base_seed, t as u64);
        let mut engine = StepEngine::new(dist, beta, cfg, s);
        for (c, chunk) in scores.chunks_mut(CHUNK).enumerate() {
            let mut rng = chunk_rng(step_seed, c);
            for slot in chunk.iter_mut() {
                let k = draw_type(&cum, &mut rng);
                let bits = draw_bits(&mut rng, d);
                let xi = draw_xi(&mut rng);
                let z: f64 = rng.sample(StandardNormal);
                let norm = if cfg.b_beta > 0.0 { norms[bits as usize] } else { 1.0 };
                // beta_i' eps ~ N(0, sigma^2 ||beta_i||^2)
                *slot = engine.expected_score(k, bits, xi) + sigma * norm * z
                    - cfg.b_s * xi as f64;
            }
        }
        s = empirical_quantile(&scores, cfg.q)?.clamp(-cfg.trunc_d, cfg.trunc_d);
        trace.push(s);
    }
    Ok(trace)
}

fn check_truncation(dist: &TypeDistribution, beta: &[f64], cfg: &SimConfig) -> Result<()> {
    match dist.equilibrium(beta, cfg.q) {
        Ok(eq) if eq.s_star.abs() > cfg.trunc_d => Err(Error::InvalidInput(format!(
            "truncation bound {} excludes the equilibrium threshold {}",
            cfg.trunc_d, eq.s_star
        ))),
        Ok(_) | Err(Error::NonConvergence { .. }) => Ok(()),
        Err(e) => Err(e),
    }
}

/// One perturbed experiment round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub n: usize,
    pub d: usize,
    /// Unperturbed criterion of the round.
    pub beta: Vec<f64>,
    /// Row-major `n x d` Rademacher signs applied to the criterion.
    pub zeta: Vec<i8>,
    /// Rademacher signs applied to the threshold.
    pub xi: Vec<i8>,
    /// Row-major `n x d` reported covariates.
    pub x: Vec<f64>,
    /// `beta_i' X_i - b_s xi_i`.
    pub score: Vec<f64>,
    pub w: Vec<u8>,
    pub y: Vec<f64>,
    /// `1[beta_i' X_i > r]`.
    pub i_ind: Vec<u8>,
    pub type_idx: Vec<usize>,
    pub s_prev: f64,
    pub r_realized: f64,
    pub b_beta: f64,
    pub b_s: f64,
}

/// Round-level scalars written next to the per-agent CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub n: usize,
    pub d: usize,
    pub s_prev: f64,
    pub r_realized: f64,
    pub b_beta: f64,
    pub b_s: f64,
    pub treated_fraction: f64,
    pub mean_outcome: f64,
}

impl ExperimentRecord {
    pub fn zeta_row(&self, i: usize) -> &[i8] {
        &self.zeta[i * self.d..(i + 1) * self.d]
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn treated_fraction(&self) -> f64 {
        self.w.iter().map(|w| *w as f64).sum::<f64>() / self.n as f64
    }

    pub fn mean_outcome(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.n as f64
    }

    pub fn summary(&self) -> RoundSummary {
        RoundSummary {
            n: self.n,
            d: self.d,
            s_prev: self.s_prev,
            r_realized: self.r_realized,
            b_beta: self.b_beta,
            b_s: self.b_s,
            treated_fraction: self.treated_fraction(),
            mean_outcome: self.mean_outcome(),
        }
    }

    /// Per-agent CSV: `agent_idx, zeta_1..zeta_d, xi, x_1..x_d, score, w, y, i_ind`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["agent_idx".to_string()];
        header.extend((1..=self.d).map(|j| format!("zeta_{j}")));
        header.push("xi".into());
        header.extend((1..=self.d).map(|j| format!("x_{j}")));
        header.extend(["score", "w", "y", "i_ind"].map(String::from));
        wtr.write_record(&header)?;
        for i in 0..self.n {
            let mut row = Vec::with_capacity(header.len());
            row.push(i.to_string());
            row.extend(self.zeta_row(i).iter().map(|v| v.to_string()));
            row.push(self.xi[i].to_string());
            row.extend(self.x_row(i).iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(self.score[i]));
            row.push(self.w[i].to_string());
            row.push(fmt_f64(self.y[i]));
            row.push(self.i_ind[i].to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(csv_path)?)?;
        std::fs::write(json_path, serde_json::to_string_pretty(&self.summary())?)?;
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// [`run_perturbed_round`] with its random stream derived from `cfg.seed`.
pub fn recorded_round(
    dist: &TypeDistribution,
    beta: &[f64],
    cfg: &SimConfig,
    s_prev: f64,
) -> Result<ExperimentRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x524F_554E));
    run_perturbed_round(dist, beta, cfg, s_prev, &mut rng)
}

/// Runs one round of the randomized experiment at previous threshold `s_prev`.
///
/// Agent `i` best responds to `(beta + b_beta zeta_i, s_prev + b_s xi_i)`;
/// the round threshold `r` is the empirical quantile of the shocked scores,
/// agent `i` is treated iff `beta_i' X_i > r + b_s xi_i`, and `I_i` records
/// whether it clears the common cutoff `r`.
pub fn run_perturbed_round(
    dist: &TypeDistribution,
    beta: &[f64],
    cfg: &SimConfig,
    s_prev: f64,
    rng: &mut impl RngCore,
) -> Result<ExperimentRecord> {
    check_dim(dist.dim(), beta.len())?;
    crate::agent::check_unit(beta)?;
    cfg.validate(dist.dim())?;
    dist.require_unique()?;

    let d = dist.dim();
    let n = cfg.n;
    let cum = cumulative(dist.probs());
    let sigma = dist.noise().sigma();
    let round_seed = rng.next_u64();
    let mut engine = StepEngine::new(dist, beta, cfg, s_prev);

    let mut rec = ExperimentRecord {
        n,
        d,
        beta: beta.to_vec(),
        zeta: vec![0; n * d],
        xi: vec![0; n],
        x: vec![0.0; n * d],
        score: vec![0.0; n],
        w: vec![0; n],
        y: vec![0.0; n],
        i_ind: vec![0; n],
        type_idx: vec![0; n],
        s_prev,
        r_realized: 0.0,
        b_beta: cfg.b_beta,
        b_s: cfg.b_s,
    };
    let mut raw_scores = vec![0.0; n];
    let mut outcome_shock = vec![0.0; n];

    for c in 0..n.div_ceil(CHUNK) {
        let mut crng = chunk_rng(round_seed, c);
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            let k = draw_type(&cum, &mut crng);
            let bits = draw_bits(&mut crng, d);
            let xi = draw_xi(&mut crng);
            let beta_i = engine.perturbed_beta(bits);
            let s_i = engine.perturbed_threshold(xi);
            // reuse the cached scalar solve when possible; the report itself is rebuilt
            let _ = engine.expected_score(k, bits, xi);
            let x_star = engine.report(k, &beta_i, s_i);
            let row = &mut rec.x[i * d..(i + 1) * d];
            for (j, slot) in row.iter_mut().enumerate() {
                let e: f64 = crng.sample(StandardNormal);
                *slot = x_star[j] + sigma * e;
            }
            for j in 0..d {
                rec.zeta[i * d + j] = sign(bits, j);
            }
            rec.xi[i] = xi;
            rec.type_idx[i] = k;
            raw_scores[i] = dot(&beta_i, &rec.x[i * d..(i + 1) * d]);
            rec.score[i] = raw_scores[i] - cfg.b_s * xi as f64;
            let shock: f64 = crng.sample(StandardNormal);
            outcome_shock[i] = cfg.outcome_noise * shock;
        }
    }

    let r = empirical_quantile(&rec.score, cfg.q)?;
    rec.r_realized = r;
    for i in 0..n {
        let r_i = r + cfg.b_s * rec.xi[i] as f64;
        let treated = raw_scores[i] > r_i;
        rec.w[i] = treated as u8;
        rec.i_ind[i] = (raw_scores[i] > r) as u8;
        let t = &dist.types()[rec.type_idx[i]];
        rec.y[i] = if treated { t.y1 } else { t.y0 } + outcome_shock[i];
    }
    Ok(rec)
}
