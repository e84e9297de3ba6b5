//! Builds a type distribution from observed student records.
//!
//! Observed covariates are treated as best responses to a known policy
//! `(beta_bar, s_bar)`. Inverting the first-order condition recovers raw
//! covariates, and k-means over (raw covariates, costs, outcomes) compresses
//! the students into a few representative types.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{best_response, check_unit, dot, AgentType, CostSpec, CovariateBox};
use crate::error::{Error, Result};
use crate::gaussian::NoiseModel;
use crate::population::TypeDistribution;
use crate::sim::mix;

pub const TEST_COLUMNS: [&str; 4] = ["F22XRSTD", "F22XMSTD", "F22XSSTD", "F22XHSTD"];
pub const GRADE_COLUMNS: [&str; 5] = ["F2RHENG2", "F2RHMAG2", "F2RHSCG2", "F2RHSOG2", "F2RHFOG2"];
pub const SES_COLUMN: &str = "F2SES1";
pub const ATTEND_COLUMN: &str = "F3ATTEND";

/// Column layout of a student file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentSchema {
    /// Covariate columns in model order.
    pub covariates: Vec<String>,
    /// Columns whose values are negated on load.
    pub negate: Vec<String>,
    pub ses: String,
    pub outcomes: Vec<String>,
}

impl StudentSchema {
    /// Reading, math, science and history scores, five grade averages, the
    /// SES composite and months of postsecondary attendance.
    pub fn nels() -> Self {
        let mut covariates: Vec<String> = TEST_COLUMNS.iter().map(|c| c.to_string()).collect();
        covariates.extend(GRADE_COLUMNS.iter().map(|c| c.to_string()));
        Self {
            covariates,
            negate: GRADE_COLUMNS.iter().map(|c| c.to_string()).collect(),
            ses: SES_COLUMN.into(),
            outcomes: vec![ATTEND_COLUMN.into()],
        }
    }

    fn columns(&self) -> Vec<&str> {
        let mut cols: Vec<&str> = vec![self.ses.as_str()];
        cols.extend(self.covariates.iter().map(String::as_str));
        cols.extend(self.outcomes.iter().map(String::as_str));
        cols
    }
}

/// Imputed values for missing entries in the NELS layout.
pub fn nels_imputation() -> HashMap<String, f64> {
    [
        ("F2SES1", -0.088),
        ("F22XRSTD", 63.81),
        ("F22XMSTD", 63.96),
        ("F22XSSTD", 64.01),
        ("F22XHSTD", 64.30),
        ("F2RHENG2", 7.07),
        ("F2RHMAG2", 7.61),
        ("F2RHSCG2", 7.43),
        ("F2RHSOG2", 7.01),
        ("F2RHFOG2", 6.58),
        ("F3ATTEND", 19.21),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentRow {
    pub x_star: Vec<f64>,
    pub ses: f64,
    pub outcomes: BTreeMap<String, f64>,
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan")
}

/// Reads a student CSV. Missing entries take the imputed value for their
/// column; negated columns are stored with flipped sign.
pub fn load_student_csv(
    path: impl AsRef<Path>,
    schema: &StudentSchema,
    imputation: &HashMap<String, f64>,
) -> Result<Vec<StudentRow>> {
    let file = std::fs::File::open(path)?;
    read_student_csv(file, schema, imputation)
}

pub fn read_student_csv<R: std::io::Read>(
    input: R,
    schema: &StudentSchema,
    imputation: &HashMap<String, f64>,
) -> Result<Vec<StudentRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    let wanted = schema.columns();
    for h in header.iter() {
        if !wanted.contains(&h) {
            return Err(Error::Schema(format!("unknown column {h:?}")));
        }
    }
    let mut index = HashMap::new();
    for c in &wanted {
        let pos = header
            .iter()
            .position(|h| h == *c)
            .ok_or_else(|| Error::Schema(format!("missing column {c:?}")))?;
        index.insert(*c, pos);
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Schema(format!("line {line}: {e}")))?;
        let value = |col: &str| -> Result<f64> {
            let raw = rec.get(index[col]).unwrap_or("");
            let v = if is_missing(raw) {
                *imputation
                    .get(col)
                    .ok_or_else(|| Error::Schema(format!("line {line}: missing {col} and no imputed value")))?
            } else {
                raw.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Schema(format!("line {line}: {col} is not a number: {raw:?}")))?
            };
            if !v.is_finite() {
                return Err(Error::Schema(format!("line {line}: {col} is not finite")));
            }
            Ok(if schema.negate.iter().any(|c| c == col) { -v } else { v })
        };
        let x_star = schema.covariates.iter().map(|c| value(c)).collect::<Result<Vec<_>>>()?;
        let ses = value(&schema.ses)?;
        let mut outcomes = BTreeMap::new();
        for c in &schema.outcomes {
            outcomes.insert(c.clone(), value(c)?);
        }
        rows.push(StudentRow { x_star, ses, outcomes });
    }
    Ok(rows)
}

/// Outcome attached to a type when treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeChoice {
    /// Months of postsecondary attendance.
    #[default]
    Attend,
    /// Mean raw test score.
    TestMean,
    /// Reciprocal of the SES percentile.
    InverseSes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub beta_bar: Vec<f64>,
    pub s_bar: f64,
    pub sigma: f64,
    /// Cost on every test-score coordinate.
    pub g_test: f64,
    /// Grade cost is `c_grades / ses_percentile`.
    pub c_grades: f64,
    /// Indices of test-score covariates; the rest are grades.
    pub test_idx: Vec<usize>,
    pub k_clusters: usize,
    pub kmeans_iters: usize,
    pub kmeans_restarts: usize,
    pub seed: u64,
    #[serde(default)]
    pub outcome: OutcomeChoice,
}

impl IngestConfig {
    pub fn nels(seed: u64) -> Self {
        Self {
            beta_bar: vec![1.0 / 3.0; 9],
            s_bar: 19.5,
            sigma: 1.20,
            g_test: 0.1,
            c_grades: 1.0,
            test_idx: (0..4).collect(),
            k_clusters: 8,
            kmeans_iters: 300,
            kmeans_restarts: 10,
            seed,
            outcome: OutcomeChoice::Attend,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_unit(&self.beta_bar)?;
        NoiseModel::new(self.sigma)?;
        if !(self.g_test > 0.0 && self.c_grades > 0.0) {
            return Err(Error::InvalidInput("cost parameters must be positive".into()));
        }
        if self.k_clusters == 0 {
            return Err(Error::InvalidInput("need at least one cluster".into()));
        }
        if self.test_idx.iter().any(|i| *i >= self.beta_bar.len()) {
            return Err(Error::InvalidInput("test-score index out of range".into()));
        }
        Ok(())
    }

    /// Cost vector for a student at the given SES percentile.
    pub fn costs(&self, percentile: f64) -> Vec<f64> {
        (0..self.beta_bar.len())
            .map(|j| {
                if self.test_idx.contains(&j) {
                    self.g_test
                } else {
                    self.c_grades / percentile
                }
            })
            .collect()
    }
}

/// Mid-rank percentiles in `(0, 1]`.
pub fn ses_percentiles(ses: &[f64]) -> Vec<f64> {
    let n = ses.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| ses[*a].total_cmp(&ses[*b]));
    let mut pct = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && ses[order[j + 1]] == ses[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            pct[order[k]] = rank / n as f64;
        }
        i = j + 1;
    }
    pct
}

/// `Z_j = x*_j - phi(s_bar - beta_bar' x*) beta_bar_j / (2 G_j)`.
pub fn invert_raw_covariates(x_star: &[f64], g: &[f64], cfg: &IngestConfig) -> Result<Vec<f64>> {
    crate::error::check_dim(cfg.beta_bar.len(), x_star.len())?;
    crate::error::check_dim(x_star.len(), g.len())?;
    if g.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput("cost coefficients must be positive".into()));
    }
    let noise = NoiseModel::new(cfg.sigma)?;
    let density = noise.pdf(cfg.s_bar - dot(&cfg.beta_bar, x_star));
    Ok(x_star
        .iter()
        .zip(g)
        .zip(&cfg.beta_bar)
        .map(|((x, g), b)| x - density * b / (2.0 * g))
        .collect())
}

/// Outcome of a k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[pick].clone());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, iters: usize) -> KMeans {
    let n = points.len();
    let k = centroids.len();
    let dim = points[0].len();
    let mut labels = vec![0; n];
    let mut history = Vec::new();
    for _ in 0..iters.max(1) {
        let mut inertia = 0.0;
        for (l, p) in labels.iter_mut().zip(points) {
            let (c, d) = nearest(p, &centroids);
            *l = c;
            inertia += d;
        }
        history.push(inertia);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (l, p) in labels.iter().zip(points) {
            counts[*l] += 1;
            for (s, v) in sums[*l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, c), old)| {
                if *c == 0 {
                    old.clone()
                } else {
                    s.into_iter().map(|v| v / *c as f64).collect()
                }
            })
            .collect();
        for e in (0..k).filter(|e| counts[*e] == 0) {
            // re-seed from the point farthest from its current centroid
            let far = (0..n)
                .max_by(|a, b| {
                    sq_dist(&points[*a], &next[labels[*a]]).total_cmp(&sq_dist(&points[*b], &next[labels[*b]]))
                })
                .expect("nonempty");
            next[e] = points[far].clone();
            labels[far] = e;
        }
        let moved = next.iter().zip(&centroids).any(|(a, b)| a != b);
        centroids = next;
        if !moved {
            break;
        }
    }
    let mut inertia = 0.0;
    for (l, p) in labels.iter_mut().zip(points) {
        let (c, d) = nearest(p, &centroids);
        *l = c;
        inertia += d;
    }
    history.push(inertia);
    KMeans {
        centroids,
        labels,
        inertia,
        history,
    }
}

/// Lloyd's algorithm with k-means++ seeding; keeps the restart with the
/// lowest inertia.
pub fn kmeans(points: &[Vec<f64>], k: usize, iters: usize, restarts: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidInput(format!(
            "cannot form {k} clusters from {} points",
            points.len()
        )));
    }
    let mut best: Option<KMeans> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, r as u64));
        let run = lloyd(points, plus_plus_init(points, k, &mut rng), iters);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Zero mean and unit variance per column; constant columns are only centred.
pub fn standardize(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len() as f64;
    let dim = points.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; dim];
    for p in points {
        for ((s, v), m) in sd.iter_mut().zip(p).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let sd: Vec<f64> = sd.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
    points
        .iter()
        .map(|p| p.iter().zip(&mean).zip(&sd).map(|((v, m), s)| (v - m) / s).collect())
        .collect()
}

/// One student after inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unobservables {
    pub z: Vec<f64>,
    pub g: Vec<f64>,
    pub attend: f64,
    pub test_mean: f64,
    pub inverse_ses: f64,
}

impl Unobservables {
    fn outcome(&self, choice: OutcomeChoice) -> f64 {
        match choice {
            OutcomeChoice::Attend => self.attend,
            OutcomeChoice::TestMean => self.test_mean,
            OutcomeChoice::InverseSes => self.inverse_ses,
        }
    }
}

/// Inverts every row.
pub fn recover_unobservables(rows: &[StudentRow], cfg: &IngestConfig) -> Result<Vec<Unobservables>> {
    cfg.validate()?;
    let pct = ses_percentiles(&rows.iter().map(|r| r.ses).collect::<Vec<_>>());
    rows.iter()
        .zip(&pct)
        .map(|(row, p)| {
            let g = cfg.costs(*p);
            let z = invert_raw_covariates(&row.x_star, &g, cfg)?;
            let test_mean = cfg.test_idx.iter().map(|j| z[*j]).sum::<f64>() / cfg.test_idx.len().max(1) as f64;
            let attend = row.outcomes.get(ATTEND_COLUMN).copied().unwrap_or(0.0);
            Ok(Unobservables {
                z,
                g,
                attend,
                test_mean,
                inverse_ses: 1.0 / p,
            })
        })
        .collect()
}

/// Largest coordinate gap between each row's observed covariates and the
/// best response of its inverted raw covariates to `(beta_bar, s_bar)`.
pub fn roundtrip_error(rows: &[StudentRow], units: &[Unobservables], cfg: &IngestConfig) -> Result<f64> {
    let noise = NoiseModel::new(cfg.sigma)?;
    check_unit(&cfg.beta_bar)?;
    let mut worst: f64 = 0.0;
    for (row, u) in rows.iter().zip(units) {
        let agent = AgentType::new(u.z.clone(), u.g.clone(), 0.0, 0.0)?;
        let bbox = CovariateBox::new(
            row.x_star.iter().map(|v| v - 1e3).collect(),
            row.x_star.iter().map(|v| v + 1e3).collect(),
        )?;
        let br = best_response(&agent, &cfg.beta_bar, cfg.s_bar, &noise, &bbox)?;
        for (a, b) in br.x.iter().zip(&row.x_star) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Clusters students on standardized (Z, G, attendance, mean test score)
/// and turns each cluster into a type at its member mean.
pub fn kmeans_types(units: &[Unobservables], cfg: &IngestConfig) -> Result<TypeDistribution> {
    cfg.validate()?;
    if cfg.k_clusters > units.len() {
        return Err(Error::InvalidInput(format!(
            "cannot form {} clusters from {} students",
            cfg.k_clusters,
            units.len()
        )));
    }
    let features: Vec<Vec<f64>> = units
        .iter()
        .map(|u| {
            let mut f = u.z.clone();
            f.extend(&u.g);
            f.push(u.attend);
            f.push(u.test_mean);
            f
        })
        .collect();
    let fit = kmeans(&standardize(&features), cfg.k_clusters, cfg.kmeans_iters, cfg.kmeans_restarts, cfg.seed)?;
    let d = cfg.beta_bar.len();
    let n = units.len() as f64;
    let mut types = Vec::new();
    let mut probs = Vec::new();
    for k in 0..cfg.k_clusters {
        let members: Vec<&Unobservables> =
            units.iter().zip(&fit.labels).filter(|(_, l)| **l == k).map(|(u, _)| u).collect();
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        let avg = |f: &dyn Fn(&Unobservables) -> f64| members.iter().map(|u| f(u)).sum::<f64>() / m;
        let z: Vec<f64> = (0..d).map(|j| avg(&|u| u.z[j])).collect();
        let g: Vec<f64> = (0..d).map(|j| avg(&|u| u.g[j])).collect();
        let y1 = avg(&|u| u.outcome(cfg.outcome));
        types.push(AgentType {
            z,
            cost: CostSpec::quadratic(g)?,
            y0: 0.0,
            y1,
            tags: vec![format!("cluster_{k}")],
        });
        probs.push(m / n);
    }
    let lo = types.iter().fold(-100.0f64, |a, t| t.z.iter().fold(a, |a, v| a.min(v - 100.0)));
    let hi = types.iter().fold(100.0f64, |a, t| t.z.iter().fold(a, |a, v| a.max(v + 100.0)));
    let bbox = CovariateBox::new(vec![lo; d], vec![hi; d])?;
    TypeDistribution::new(types, probs, NoiseModel::new(cfg.sigma)?, bbox)
}

/// Inversion, clustering and a round-trip check in one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    pub distribution: TypeDistribution,
    pub units: Vec<Unobservables>,
    pub roundtrip_error: f64,
}

pub fn ingest(rows: &[StudentRow], cfg: &IngestConfig) -> Result<IngestOutput> {
    let units = recover_unobservables(rows, cfg)?;
    let roundtrip_error = roundtrip_error(rows, &units, cfg)?;
    let distribution = kmeans_types(&units, cfg)?;
    Ok(IngestOutput {
        distribution,
        units,
        roundtrip_error,
    })
}
