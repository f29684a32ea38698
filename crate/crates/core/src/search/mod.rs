//! Discovery baselines: exhaustive enumeration, Search Tree and Relaxed
//! Search Tree.
//!
//! The Search Tree reads high-bias attribute vectors off the complete
//! root-to-leaf paths of a regression tree. The relaxed variant also accepts
//! paths with up to `N_re` untested attributes and enumerates their
//! completions.

mod tree;

pub use tree::{fit_tree, Node, RegressionTree, TreeConfig, TreePath};

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attrspace::{
    enumerate_space, AttributeVector, GroupBiasTable, SyntheticLandscape, DEFAULT_ENUMERATION_CAP,
};
use crate::error::{Error, Result};
use crate::model::{GeneratedItem, GeneratedSet, GenerationMetadata};
use crate::predictor::BiasEstimator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Tree,
    Predictor,
    Table,
    Landscape,
}

/// How relaxed search scores completed attribute vectors.
#[derive(Clone, Copy)]
pub enum SearchEstimator<'a> {
    /// The leaf value of the path being completed.
    Tree,
    Predictor(&'a dyn BiasEstimator),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relaxation: Option<usize>,
    pub tau: f64,
    pub estimator: EstimatorKind,
    pub count: usize,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub dimension: usize,
    pub method: String,
    pub relaxation: Option<usize>,
    pub tau: f64,
    pub estimator: EstimatorKind,
    /// Discovered attribute vectors with their estimated bias.
    pub discovered: BTreeMap<AttributeVector, f64>,
    pub wall_time_secs: f64,
}

impl SearchResult {
    pub fn len(&self) -> usize {
        self.discovered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.discovered.is_empty()
    }

    pub fn contains(&self, a: &AttributeVector) -> bool {
        self.discovered.contains_key(a)
    }

    pub fn summary(&self) -> SearchSummary {
        SearchSummary {
            method: self.method.clone(),
            relaxation: self.relaxation,
            tau: self.tau,
            estimator: self.estimator,
            count: self.len(),
            wall_time_secs: self.wall_time_secs,
        }
    }

    /// Discoveries as a generated set (one item per attribute, in binary
    /// order), annotated with reference bias where known.
    pub fn to_generated_set(&self, reference: Option<&GroupBiasTable>) -> GeneratedSet {
        let items: Vec<GeneratedItem> = self
            .discovered
            .iter()
            .map(|(a, &b)| GeneratedItem {
                attribute: a.clone(),
                predicted_bias: b,
                true_bias: reference.and_then(|r| r.bias(a)),
            })
            .collect();
        GeneratedSet {
            metadata: GenerationMetadata {
                model_hash: self.method.clone(),
                seed: 0,
                requested: items.len(),
                tau: Some(self.tau),
                count: items.len(),
            },
            items,
        }
    }

    /// Writes `a0..a{d-1},estimated_bias` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = (0..self.dimension).map(|i| format!("a{i}")).collect();
        header.push("estimated_bias".into());
        wtr.write_record(&header)?;
        for (a, b) in &self.discovered {
            let mut row: Vec<String> = a.bits().iter().map(|b| b.to_string()).collect();
            row.push(b.to_string());
            wtr.write_record(&row)?;
        }
        let bytes = wtr
            .into_inner()
            .map_err(|e| Error::io(path, e.into_error()))?;
        crate::pipeline::write_atomic(path, &bytes)
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        crate::pipeline::write_atomic(
            path,
            serde_json::to_string_pretty(&self.summary())?.as_bytes(),
        )
    }
}

/// Complete paths whose leaf value is at least `tau`.
pub fn search_tree(tree: &RegressionTree, tau: f64) -> SearchResult {
    let start = Instant::now();
    let discovered = tree
        .paths()
        .into_iter()
        .filter(|p| p.complete && p.prediction >= tau)
        .filter_map(|p| p.to_attribute(tree.dimension).map(|a| (a, p.prediction)))
        .collect();
    SearchResult {
        dimension: tree.dimension,
        method: "search_tree".into(),
        relaxation: None,
        tau,
        estimator: EstimatorKind::Tree,
        discovered,
        wall_time_secs: start.elapsed().as_secs_f64(),
    }
}

/// Paths with at most `relaxation` untested attributes, with every completion
/// of those attributes scored by `estimator` and kept when at least `tau`.
pub fn relaxed_search(
    tree: &RegressionTree,
    tau: f64,
    relaxation: usize,
    estimator: SearchEstimator<'_>,
) -> Result<SearchResult> {
    let d = tree.dimension;
    if relaxation > d {
        return Err(Error::invalid(format!(
            "relaxation number {relaxation} exceeds dimension {d}"
        )));
    }
    if relaxation > DEFAULT_ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            dimension: relaxation,
            cap: DEFAULT_ENUMERATION_CAP,
        });
    }
    if let SearchEstimator::Predictor(p) = estimator {
        if p.dimension() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: p.dimension(),
            });
        }
    }
    let start = Instant::now();
    let mut discovered = BTreeMap::new();
    for path in tree.paths() {
        let free = path.unassigned(d);
        if free.len() > relaxation {
            continue;
        }
        let mut base = vec![0u8; d];
        for &(i, b) in &path.assignments {
            base[i] = b;
        }
        let completions: Vec<AttributeVector> = (0..1u64 << free.len())
            .map(|mask| {
                let mut bits = base.clone();
                for (j, &i) in free.iter().enumerate() {
                    bits[i] = ((mask >> (free.len() - 1 - j)) & 1) as u8;
                }
                AttributeVector::new(bits).expect("binary")
            })
            .collect();
        let scores = match estimator {
            SearchEstimator::Tree => vec![path.prediction; completions.len()],
            SearchEstimator::Predictor(p) => p.estimate_batch(&completions)?,
        };
        for (a, s) in completions.into_iter().zip(scores) {
            if s >= tau {
                discovered.insert(a, s);
            }
        }
    }
    Ok(SearchResult {
        dimension: d,
        method: "relaxed_search".into(),
        relaxation: Some(relaxation),
        tau,
        estimator: match estimator {
            SearchEstimator::Tree => EstimatorKind::Tree,
            SearchEstimator::Predictor(_) => EstimatorKind::Predictor,
        },
        discovered,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Ground truth for discovery: where the bias values come from.
#[derive(Clone, Copy)]
pub enum BiasSource<'a> {
    Table(&'a GroupBiasTable),
    Landscape(&'a SyntheticLandscape),
}

/// Exactly the attribute vectors whose bias is at least `tau`.
pub fn enumerate_discover(source: BiasSource<'_>, tau: f64) -> Result<SearchResult> {
    let start = Instant::now();
    let (dimension, estimator, discovered) = match source {
        BiasSource::Table(t) => (
            t.dimension(),
            EstimatorKind::Table,
            t.high_bias(tau)
                .map(|(a, s)| (a.clone(), s.bias))
                .collect::<BTreeMap<_, _>>(),
        ),
        BiasSource::Landscape(l) => {
            let mut found = BTreeMap::new();
            for a in enumerate_space(&l.space())? {
                let b = l.bias(&a)?;
                if b >= tau {
                    found.insert(a, b);
                }
            }
            (l.dimension, EstimatorKind::Landscape, found)
        }
    };
    Ok(SearchResult {
        dimension,
        method: "enumerate".into(),
        relaxation: None,
        tau,
        estimator,
        discovered,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
