//! Sampling from a trained generator and Monte Carlo marginals.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GenerativeModel;
use crate::attrspace::{enumerate_space_with_cap, AttributeSpace, AttributeVector, GroupBiasTable};
use crate::error::{Error, Result};
use crate::model::ORACLE_MAX_DIMENSION;
use crate::predictor::BiasEstimator;
use crate::rng::{self, Rng};

const SAMPLE_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedItem {
    pub attribute: AttributeVector,
    pub predicted_bias: f64,
    /// Bias in the reference table, when the attribute occurs there.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_bias: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetadata {
    pub model_hash: String,
    pub seed: u64,
    /// Number of draws before filtering.
    pub requested: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub count: usize,
}

/// Generated attribute vectors in draw order (duplicates kept).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSet {
    pub metadata: GenerationMetadata,
    pub items: Vec<GeneratedItem>,
}

impl GeneratedSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn attributes(&self) -> impl Iterator<Item = &AttributeVector> {
        self.items.iter().map(|i| &i.attribute)
    }

    /// Items whose predicted bias is at least `tau`.
    pub fn filtered(&self, tau: f64) -> GeneratedSet {
        let items: Vec<GeneratedItem> = self
            .items
            .iter()
            .filter(|i| i.predicted_bias >= tau)
            .cloned()
            .collect();
        GeneratedSet {
            metadata: GenerationMetadata {
                tau: Some(tau),
                count: items.len(),
                ..self.metadata.clone()
            },
            items,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::pipeline::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// CSV with columns `a0..a{d-1},predicted_bias,true_bias` (empty when unknown).
    pub fn write_csv(&self, path: &Path, dimension: usize) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = (0..dimension).map(|i| format!("a{i}")).collect();
        header.extend(["predicted_bias".to_string(), "true_bias".to_string()]);
        wtr.write_record(&header)?;
        for item in &self.items {
            let mut row: Vec<String> = item
                .attribute
                .bits()
                .iter()
                .map(|b| b.to_string())
                .collect();
            row.push(item.predicted_bias.to_string());
            row.push(item.true_bias.map(|b| b.to_string()).unwrap_or_default());
            wtr.write_record(&row)?;
        }
        let bytes = wtr
            .into_inner()
            .map_err(|e| Error::io(path, e.into_error()))?;
        crate::pipeline::write_atomic(path, &bytes)
    }
}

/// Draws `n` attribute vectors from the model, annotating each with its
/// predicted bias and (when present in `reference`) its reference bias. With
/// `tau`, only draws whose predicted bias is at least `tau` are kept.
pub fn generate(
    model: &GenerativeModel,
    n: usize,
    estimator: &dyn BiasEstimator,
    tau: Option<f64>,
    reference: Option<&GroupBiasTable>,
    seed: u64,
) -> Result<GeneratedSet> {
    if n == 0 {
        return Err(Error::invalid("number of samples must be at least 1"));
    }
    model.check_estimator(estimator)?;
    let mut rng = rng::seeded(seed);
    let mut items = Vec::with_capacity(n);
    let mut remaining = n;
    while remaining > 0 {
        let m = remaining.min(SAMPLE_CHUNK);
        let z = model.sample_prior(m, &mut rng);
        let attrs = model.sample_given(&z, &mut rng)?;
        let predicted = estimator.estimate_batch(&attrs)?;
        for (attribute, predicted_bias) in attrs.into_iter().zip(predicted) {
            if tau.is_some_and(|t| predicted_bias < t) {
                continue;
            }
            let true_bias = reference.and_then(|r| r.bias(&attribute));
            items.push(GeneratedItem {
                attribute,
                predicted_bias,
                true_bias,
            });
        }
        remaining -= m;
    }
    Ok(GeneratedSet {
        metadata: GenerationMetadata {
            model_hash: model.content_hash()?,
            seed,
            requested: n,
            tau,
            count: items.len(),
        },
        items,
    })
}

fn likelihood(probs: &[f64], a: &AttributeVector) -> f64 {
    probs
        .iter()
        .zip(a.bits())
        .map(|(&p, &b)| if b == 1 { p } else { 1.0 - p })
        .product()
}

/// Monte Carlo estimate of `p_θ(a) = E_z[p_θ(a|z)]` with `n_z` prior draws.
pub fn model_marginal_oracle(
    model: &GenerativeModel,
    a: &AttributeVector,
    n_z: usize,
    rng: &mut Rng,
) -> Result<f64> {
    a.check_dimension(model.dimension())?;
    if n_z == 0 {
        return Err(Error::invalid("n_z must be at least 1"));
    }
    let probs = model.decode(&model.sample_prior(n_z, rng))?;
    Ok((0..n_z).map(|r| likelihood(probs.row(r), a)).sum::<f64>() / n_z as f64)
}

/// Marginal estimate for every attribute vector (indexed by binary encoding),
/// sharing the same `n_z` prior draws across the whole space.
pub fn marginal_over_space(model: &GenerativeModel, n_z: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if n_z == 0 {
        return Err(Error::invalid("n_z must be at least 1"));
    }
    let space = AttributeSpace::new(model.dimension())?;
    let outcomes: Vec<AttributeVector> =
        enumerate_space_with_cap(&space, ORACLE_MAX_DIMENSION)?.collect();
    let probs = model.decode(&model.sample_prior(n_z, rng))?;
    Ok(outcomes
        .iter()
        .map(|a| (0..n_z).map(|r| likelihood(probs.row(r), a)).sum::<f64>() / n_z as f64)
        .collect())
}
