//! Run configuration for the end-to-end pipeline.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attrspace::GroupBiasTable;
use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::model::{FineTuneConfig, ModelConfig, PretrainConfig};
use crate::predictor::PredictorConfig;
use crate::search::TreeConfig;

/// Where the group bias table comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// A randomly generated landscape with planted high-bias cohorts.
    Planted {
        dimension: usize,
        cohorts: usize,
        landscape_seed: u64,
        n_groups: usize,
        samples_per_group: u64,
    },
    /// A landscape JSON file, sampled into a noisy group table.
    Landscape {
        path: PathBuf,
        n_groups: usize,
        samples_per_group: u64,
    },
    /// `a0..,bias[,count]` rows.
    Groups { path: PathBuf },
    /// `a0..,loss` rows, one per audited sample.
    Samples { path: PathBuf },
}

impl DataSource {
    fn path_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            DataSource::Planted { .. } => None,
            DataSource::Landscape { path, .. }
            | DataSource::Groups { path }
            | DataSource::Samples { path } => Some(path),
        }
    }

    fn path(&self) -> Option<&Path> {
        match self {
            DataSource::Planted { .. } => None,
            DataSource::Landscape { path, .. }
            | DataSource::Groups { path }
            | DataSource::Samples { path } => Some(path),
        }
    }
}

/// A bias threshold, either absolute or a quantile of observation bias. In
/// JSON it is a number, `{"quantile": q}`, or the string form `"q0.9"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, try_from = "ThresholdRepr")]
pub enum Threshold {
    Value(f64),
    Quantile { quantile: f64 },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ThresholdRepr {
    Value(f64),
    Quantile { quantile: f64 },
    Text(String),
}

impl TryFrom<ThresholdRepr> for Threshold {
    type Error = Error;

    fn try_from(r: ThresholdRepr) -> Result<Self> {
        match r {
            ThresholdRepr::Value(v) => Ok(Threshold::Value(v)),
            ThresholdRepr::Quantile { quantile } => Ok(Threshold::Quantile { quantile }),
            ThresholdRepr::Text(s) => s.parse(),
        }
    }
}

impl Threshold {
    pub fn resolve(&self, observation: &GroupBiasTable) -> Result<f64> {
        match *self {
            Threshold::Value(v) => Ok(v),
            Threshold::Quantile { quantile } => observation
                .bias_quantile(quantile)
                .ok_or(Error::Empty("observation table")),
        }
    }
}

impl FromStr for Threshold {
    type Err = Error;

    /// `0.3` is an absolute value, `q0.9` the 90th percentile of observation bias.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parse = |t: &str| {
            t.parse::<f64>()
                .map_err(|_| Error::Config(format!("cannot parse threshold {s:?}")))
        };
        match s.strip_prefix('q') {
            Some(q) => Ok(Threshold::Quantile {
                quantile: parse(q)?,
            }),
            None => Ok(Threshold::Value(parse(s)?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Bggn,
    Vanilla,
    SearchTree,
    Relaxed(usize),
    Enumerate,
}

impl Method {
    pub fn is_generative(self) -> bool {
        matches!(self, Method::Bggn | Method::Vanilla)
    }

    /// Name usable in file names.
    pub fn slug(self) -> String {
        self.to_string().replace(':', "_")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Bggn => f.write_str("bggn"),
            Method::Vanilla => f.write_str("vanilla"),
            Method::SearchTree => f.write_str("search_tree"),
            Method::Relaxed(n) => write!(f, "relaxed:{n}"),
            Method::Enumerate => f.write_str("enumerate"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bggn" => Ok(Method::Bggn),
            "vanilla" => Ok(Method::Vanilla),
            "search_tree" => Ok(Method::SearchTree),
            "enumerate" => Ok(Method::Enumerate),
            other => match other.strip_prefix("relaxed:") {
                Some(n) => n
                    .parse()
                    .map(Method::Relaxed)
                    .map_err(|_| Error::Config(format!("bad relaxation number in {other:?}"))),
                None => Err(Error::Config(format!(
                    "unknown method {other:?} (expected bggn, vanilla, search_tree, relaxed:N or enumerate)"
                ))),
            },
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// Parses a comma-separated list with `parse`.
pub fn parse_list<T: FromStr<Err = Error>>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxedEstimator {
    Tree,
    Predictor,
}

fn default_holdout() -> f64 {
    0.3
}
fn default_tau() -> Vec<Threshold> {
    vec![Threshold::Quantile { quantile: 0.9 }]
}
fn default_methods() -> Vec<Method> {
    vec![Method::Bggn, Method::Vanilla, Method::SearchTree]
}
fn default_relaxed() -> RelaxedEstimator {
    RelaxedEstimator::Predictor
}
fn default_n_samples() -> usize {
    1000
}
fn default_repeats() -> usize {
    3
}
fn default_output() -> PathBuf {
    PathBuf::from("bggn-run")
}

/// Everything one pipeline run needs. The `seed` fields inside the stage
/// configs are ignored; each stage draws a seed derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    #[serde(default)]
    pub attribute_names: Option<Vec<String>>,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub finetune: FineTuneConfig,
    #[serde(default)]
    pub tree: TreeConfig,
    #[serde(default)]
    pub metrics: MetricConfig,
    #[serde(default = "default_tau")]
    pub tau: Vec<Threshold>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_relaxed")]
    pub relaxed_estimator: RelaxedEstimator,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    /// Independent sampling passes per generative method.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// List negated attributes when rendering unseen discoveries.
    #[serde(default)]
    pub render_negated: bool,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// Minimal configuration around a data source, everything else default.
    pub fn new(data: DataSource) -> Self {
        serde_json::from_value(serde_json::json!({ "data": data })).expect("default run config")
    }

    /// Reads a JSON config. Relative data paths resolve against the config
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let (Some(data_path), Some(base)) = (config.data.path_mut(), path.parent()) {
            if data_path.is_relative() {
                *data_path = base.join(&*data_path);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if let Some(p) = self.data.path() {
            if !p.exists() {
                return bad(format!("data file {} does not exist", p.display()));
            }
        }
        if let DataSource::Planted {
            dimension,
            n_groups,
            samples_per_group,
            ..
        } = self.data
        {
            if dimension == 0 || n_groups < 2 || samples_per_group == 0 {
                return bad(
                    "planted data needs dimension ≥ 1, n_groups ≥ 2, samples_per_group ≥ 1".into(),
                );
            }
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad(format!(
                "holdout_fraction must lie in (0, 1), got {}",
                self.holdout_fraction
            ));
        }
        if self.tau.is_empty() {
            return bad("at least one threshold is required".into());
        }
        for t in &self.tau {
            match *t {
                Threshold::Value(v) if !(v >= 0.0 && v.is_finite()) => {
                    return bad(format!("threshold {v} must be ≥ 0"))
                }
                Threshold::Quantile { quantile } if !(0.0..=1.0).contains(&quantile) => {
                    return bad(format!("threshold quantile {quantile} must lie in [0, 1]"))
                }
                _ => {}
            }
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.n_samples == 0 || self.repeats == 0 {
            return bad("n_samples and repeats must be ≥ 1".into());
        }
        if self.metrics.histogram_bins == 0 {
            return bad("metrics.histogram_bins must be ≥ 1".into());
        }
        self.finetune.validate()
    }

    /// Hex SHA-256 of the canonical JSON form, leaving out `output_dir` so
    /// the same run in two locations hashes the same.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value.as_object_mut().expect("object").remove("output_dir");
        let json = serde_json::to_vec(&value).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn needs_predictor(&self) -> bool {
        self.methods.iter().any(|m| match m {
            Method::Bggn | Method::Vanilla => true,
            Method::Relaxed(_) => self.relaxed_estimator == RelaxedEstimator::Predictor,
            _ => false,
        })
    }

    pub fn needs_pretrain(&self) -> bool {
        self.methods.iter().any(|m| m.is_generative())
    }

    pub fn needs_tree(&self) -> bool {
        self.methods
            .iter()
            .any(|m| matches!(m, Method::SearchTree | Method::Relaxed(_)))
    }

    pub fn generative_methods(&self) -> Vec<Method> {
        let mut out: Vec<Method> = self
            .methods
            .iter()
            .copied()
            .filter(|m| m.is_generative())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn search_methods(&self) -> Vec<Method> {
        let mut out: Vec<Method> = self
            .methods
            .iter()
            .copied()
            .filter(|m| !m.is_generative())
            .collect();
        out.sort();
        out.dedup();
        out
    }
}
