use std::path::{Path, PathBuf};

use compsel::ingest::OutcomeChoice;
use compsel::learner::RctCovariates;
use compsel::scenarios;
use compsel::TypeDistribution;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistSource {
    Toy {
        #[serde(default)]
        seed: u64,
    },
    HighDim {
        d: usize,
        #[serde(default)]
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

impl Default for DistSource {
    fn default() -> Self {
        DistSource::Toy { seed: 0 }
    }
}

impl DistSource {
    pub fn load(&self) -> Result<TypeDistribution, CliError> {
        Ok(match self {
            DistSource::Toy { seed } => scenarios::toy(*seed)?,
            DistSource::HighDim { d, seed } => scenarios::high_dim(*d, *seed)?,
            DistSource::File { path } => TypeDistribution::load(path)?,
        })
    }
}

fn default_q() -> f64 {
    0.7
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EqSolveConfig {
    pub distribution: DistSource,
    pub q: f64,
    /// Defaults to the equal-weight diagonal.
    pub beta: Option<Vec<f64>>,
    /// Defaults to the non-strategic quantile.
    pub s0: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Points in the CDF and quantile-map sweeps.
    pub grid_points: usize,
    /// Half-width of the sweeps in noise standard deviations.
    pub grid_halfwidth: f64,
    /// Angles in the criterion sweep.
    pub sweep_points: usize,
}

impl Default for EqSolveConfig {
    fn default() -> Self {
        Self {
            distribution: DistSource::default(),
            q: default_q(),
            beta: None,
            s0: None,
            tol: 1e-10,
            max_iter: 10_000,
            grid_points: 201,
            grid_halfwidth: 5.0,
            sweep_points: 360,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub distribution: DistSource,
    pub q: f64,
    pub beta: Option<Vec<f64>>,
    /// One trace per population size.
    pub ns: Vec<usize>,
    pub steps: usize,
    pub s0: Option<f64>,
    pub b_beta: f64,
    pub b_s: f64,
    pub trunc_d: Option<f64>,
    pub outcome_noise: f64,
    /// Also run one recorded round after each trace.
    pub record: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            distribution: DistSource::default(),
            q: default_q(),
            beta: None,
            ns: vec![1000],
            steps: 100,
            s0: None,
            b_beta: 0.0,
            b_s: 0.0,
            trunc_d: None,
            outcome_noise: 0.0,
            record: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Competition,
    Strategy,
    Capacity,
}

impl MethodName {
    pub fn label(self) -> &'static str {
        match self {
            MethodName::Competition => "competition",
            MethodName::Strategy => "strategy",
            MethodName::Capacity => "capacity",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnCliConfig {
    pub distribution: DistSource,
    pub q: f64,
    pub methods: Vec<MethodName>,
    pub n: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Step size for the strategy-aware method when it differs.
    pub lr_strategy: Option<f64>,
    pub b_beta: f64,
    pub b_s: f64,
    /// Starting criterion; random when absent.
    pub init_beta: Option<Vec<f64>>,
    pub equilibrate_steps: usize,
    pub bandwidth: Option<f64>,
    pub trunc_d: Option<f64>,
    pub n_rct: usize,
    pub rct_covariates: RctCovariates,
}

impl Default for LearnCliConfig {
    fn default() -> Self {
        Self {
            distribution: DistSource::default(),
            q: default_q(),
            methods: vec![MethodName::Competition],
            n: 100_000,
            epochs: 100,
            lr: 0.5,
            lr_strategy: None,
            b_beta: 0.025,
            b_s: 0.2,
            init_beta: None,
            equilibrate_steps: 50,
            bandwidth: None,
            trunc_d: None,
            n_rct: 1_000_000,
            rct_covariates: RctCovariates::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub distribution: DistSource,
    pub q: f64,
    pub beta: Option<Vec<f64>>,
    pub ns: Vec<usize>,
    pub b_betas: Vec<f64>,
    pub b_s: f64,
    pub repeats: usize,
    pub equilibrate_steps: usize,
    pub bandwidth: Option<f64>,
    pub trunc_d: Option<f64>,
    /// Replace every treated outcome by the untreated one.
    pub zero_effect: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            distribution: DistSource::default(),
            q: default_q(),
            beta: None,
            ns: vec![10_000, 100_000],
            b_betas: vec![0.025],
            b_s: 0.2,
            repeats: 5,
            equilibrate_steps: 50,
            bandwidth: None,
            trunc_d: None,
            zero_effect: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestCliConfig {
    pub input: Option<PathBuf>,
    pub beta_bar: Option<Vec<f64>>,
    pub s_bar: Option<f64>,
    pub sigma: Option<f64>,
    pub g_test: Option<f64>,
    pub c_grades: Option<f64>,
    pub k_clusters: Option<usize>,
    pub kmeans_iters: Option<usize>,
    pub kmeans_restarts: Option<usize>,
    pub outcome: Option<OutcomeChoice>,
    pub check_roundtrip: bool,
    pub roundtrip_tol: f64,
}

impl Default for IngestCliConfig {
    fn default() -> Self {
        Self {
            input: None,
            beta_bar: None,
            s_bar: None,
            sigma: None,
            g_test: None,
            c_grades: None,
            k_clusters: None,
            kmeans_iters: None,
            kmeans_restarts: None,
            outcome: None,
            check_roundtrip: false,
            roundtrip_tol: 1e-8,
        }
    }
}

/// Reads an optional JSON config, applies `key.path=value` overrides and
/// deserializes the result.
pub fn load<T: DeserializeOwned>(path: Option<&Path>, overrides: &[String]) -> Result<T, CliError> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str::<Value>(&text)
                .map_err(|e| CliError::Input(format!("malformed config {}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    for item in overrides {
        apply_override(&mut doc, item)?;
    }
    serde_json::from_value(doc).map_err(|e| CliError::Input(format!("config schema: {e}")))
}

fn apply_override(doc: &mut Value, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Input(format!("override `{item}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(map) => map,
            _ => return Err(CliError::Input(format!("override `{key}`: `{part}` is not inside an object"))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(CliError::Input(format!("empty override key in `{item}`")))
}
