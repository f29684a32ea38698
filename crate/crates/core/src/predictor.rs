//! Regressor approximating the per-group bias value from attribute bits.
//!
//! The network is a shared trunk with a softplus regression head and an
//! optional auxiliary classifier over equal-frequency bias bins. Bias values
//! are typically skewed toward zero, so training can reweight samples by the
//! inverse frequency of their (equal-width) bias bin.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attrspace::{split_by_group, AttributeVector, GroupBiasTable};
use crate::error::{Error, Result};
use crate::nn::{Activation, Matrix, Mlp, OptimState};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Inverse-bin-frequency sample weights.
    pub reweight: bool,
    pub n_bins: usize,
    /// Weight of the auxiliary bin-classification loss; 0 disables the head.
    pub aux_weight: f64,
    pub validation_fraction: f64,
    /// Early stopping only runs when the table has at least this many groups.
    pub min_groups_for_validation: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            epochs: 1000,
            batch_size: 16,
            learning_rate: 3e-3,
            reweight: true,
            n_bins: 10,
            aux_weight: 0.1,
            validation_fraction: 0.1,
            min_groups_for_validation: 200,
            patience: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    /// Training objective over the training groups, before the first update
    /// (index 0) and after each epoch.
    pub epoch_losses: Vec<f64>,
    pub best_epoch: usize,
    pub validation_groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasPredictor {
    pub dimension: usize,
    trunk: Mlp,
    head: Mlp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aux_head: Option<Mlp>,
    /// Equal-frequency bias bin edges (`n_bins + 1` values).
    pub bin_edges: Vec<f64>,
    pub config: PredictorConfig,
    pub summary: TrainingSummary,
}

fn to_matrix(keys: &[&AttributeVector], d: usize) -> Matrix {
    let mut data = Vec::with_capacity(keys.len() * d);
    for a in keys {
        data.extend(a.as_f64());
    }
    Matrix::from_vec(keys.len(), d, data).expect("sized")
}

/// `n_bins + 1` edges at the empirical quantiles `k / n_bins`.
pub fn equal_frequency_edges(values: &[f64], n_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    (0..=n_bins)
        .map(|k| {
            let pos = k as f64 / n_bins as f64 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        })
        .collect()
}

pub fn equal_width_edges(values: &[f64], n_bins: usize) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..=n_bins)
        .map(|k| lo + (hi - lo) * k as f64 / n_bins as f64)
        .collect()
}

/// Bin index of `value`: the number of interior edges at or below it.
pub fn bin_of(value: f64, edges: &[f64]) -> usize {
    let n_bins = edges.len() - 1;
    edges[1..n_bins].iter().filter(|&&e| value >= e).count()
}

/// Per-sample weights proportional to `1 / count(bin)`, normalized to mean 1.
pub fn inverse_frequency_weights(values: &[f64], edges: &[f64]) -> Vec<f64> {
    let n_bins = edges.len() - 1;
    let bins: Vec<usize> = values.iter().map(|&v| bin_of(v, edges)).collect();
    let mut counts = vec![0usize; n_bins];
    for &b in &bins {
        counts[b] += 1;
    }
    let occupied = counts.iter().filter(|&&c| c > 0).count() as f64;
    let n = values.len() as f64;
    bins.iter()
        .map(|&b| n / (occupied * counts[b] as f64))
        .collect()
}

struct Batch<'a> {
    inputs: Matrix,
    targets: Vec<f64>,
    weights: &'a [f64],
    classes: Vec<usize>,
}

impl BiasPredictor {
    /// Fits the regressor on the table's groups.
    pub fn train(table: &GroupBiasTable, config: &PredictorConfig) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::Empty("bias table"));
        }
        if table.len() < 2 {
            return Err(Error::invalid(
                "predictor training needs at least two groups",
            ));
        }
        if config.n_bins < 2 || config.batch_size == 0 || config.hidden.is_empty() {
            return Err(Error::Config(
                "predictor needs n_bins ≥ 2, batch_size ≥ 1 and a hidden layer".into(),
            ));
        }
        let d = table.dimension();
        let mut rng = rng::seeded(config.seed);

        let (train_table, validation) = if table.len() >= config.min_groups_for_validation
            && config.validation_fraction > 0.0
        {
            let split = split_by_group(
                table,
                config.validation_fraction,
                rng::derive_seed(config.seed, "validation"),
            )?;
            (split.observation, Some(split.holdout))
        } else {
            (table.clone(), None)
        };

        let keys: Vec<&AttributeVector> = train_table.keys().collect();
        let targets: Vec<f64> = train_table.iter().map(|(_, s)| s.bias).collect();
        let bin_edges = equal_frequency_edges(&targets, config.n_bins);
        let classes: Vec<usize> = targets.iter().map(|&t| bin_of(t, &bin_edges)).collect();
        let weights = if config.reweight {
            inverse_frequency_weights(&targets, &equal_width_edges(&targets, config.n_bins))
        } else {
            vec![1.0; targets.len()]
        };

        let mut sizes = vec![d];
        sizes.extend(&config.hidden);
        let trunk_acts = vec![config.activation; config.hidden.len()];
        let width = *config.hidden.last().expect("non-empty");
        let trunk = Mlp::new(&sizes, &trunk_acts, &mut rng)?;
        let head = Mlp::new(&[width, 1], &[Activation::Softplus], &mut rng)?;
        let aux_head = if config.aux_weight > 0.0 {
            Some(Mlp::new(
                &[width, config.n_bins],
                &[Activation::Identity],
                &mut rng,
            )?)
        } else {
            None
        };
        let mut predictor = Self {
            dimension: d,
            trunk,
            head,
            aux_head,
            bin_edges,
            config: config.clone(),
            summary: TrainingSummary {
                epoch_losses: Vec::new(),
                best_epoch: 0,
                validation_groups: 0,
            },
        };

        let full = Batch {
            inputs: to_matrix(&keys, d),
            targets: targets.clone(),
            weights: &weights,
            classes: classes.clone(),
        };
        let mut opt = OptimState::new(predictor.num_params(), config.learning_rate);
        let mut epoch_losses = vec![predictor.objective(&full, false)?.0];

        let val = validation.as_ref().map(|v| {
            let keys: Vec<&AttributeVector> = v.keys().collect();
            (
                to_matrix(&keys, d),
                v.iter().map(|(_, s)| s.bias).collect::<Vec<f64>>(),
            )
        });
        let mut best = (f64::INFINITY, predictor.params(), 0usize);
        let mut since_best = 0;
        let mut order: Vec<usize> = (0..keys.len()).collect();
        for epoch in 1..=config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                let batch_weights: Vec<f64> = chunk.iter().map(|&i| weights[i]).collect();
                let batch = Batch {
                    inputs: full.inputs.select_rows(chunk),
                    targets: chunk.iter().map(|&i| targets[i]).collect(),
                    weights: &batch_weights,
                    classes: chunk.iter().map(|&i| classes[i]).collect(),
                };
                let (_, grads) = predictor.objective(&batch, true)?;
                let mut params = predictor.params();
                opt.step(&mut params, &grads)
                    .map_err(|e| e.at_iteration(epoch))?;
                predictor.set_params(&params)?;
            }
            epoch_losses.push(predictor.objective(&full, false)?.0);
            if let Some((inputs, truth)) = &val {
                let pred = predictor.predict_matrix(inputs)?;
                let mse = pred
                    .iter()
                    .zip(truth)
                    .map(|(p, t)| (p - t).powi(2))
                    .sum::<f64>()
                    / truth.len() as f64;
                if mse < best.0 {
                    best = (mse, predictor.params(), epoch);
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= config.patience {
                        break;
                    }
                }
            }
        }
        if val.is_some() {
            predictor.set_params(&best.1)?;
            predictor.summary.best_epoch = best.2;
        } else {
            predictor.summary.best_epoch = epoch_losses.len() - 1;
        }
        predictor.summary.epoch_losses = epoch_losses;
        predictor.summary.validation_groups = validation.map_or(0, |v| v.len());
        Ok(predictor)
    }

    fn num_params(&self) -> usize {
        self.trunk.num_params()
            + self.head.num_params()
            + self.aux_head.as_ref().map_or(0, Mlp::num_params)
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.trunk.params();
        p.extend(self.head.params());
        if let Some(aux) = &self.aux_head {
            p.extend(aux.params());
        }
        p
    }

    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        let (nt, nh) = (self.trunk.num_params(), self.head.num_params());
        self.trunk.set_params(&flat[..nt])?;
        self.head.set_params(&flat[nt..nt + nh])?;
        if let Some(aux) = &mut self.aux_head {
            aux.set_params(&flat[nt + nh..])?;
        }
        Ok(())
    }

    /// Weighted MSE plus the auxiliary cross-entropy, and optionally its gradient.
    fn objective(&self, batch: &Batch<'_>, with_grad: bool) -> Result<(f64, Vec<f64>)> {
        let n = batch.targets.len();
        let (hidden, trunk_cache) = self.trunk.forward(&batch.inputs)?;
        let (pred, head_cache) = self.head.forward(&hidden)?;
        let weight_sum: f64 = batch.weights.iter().sum();
        let mut loss = 0.0;
        let mut pred_grad = Matrix::zeros(n, 1);
        for i in 0..n {
            let err = pred[(i, 0)] - batch.targets[i];
            loss += batch.weights[i] * err * err / weight_sum;
            pred_grad[(i, 0)] = 2.0 * batch.weights[i] * err / weight_sum;
        }
        let mut aux_parts = None;
        if let Some(aux) = &self.aux_head {
            let lambda = self.config.aux_weight;
            let (logits, aux_cache) = aux.forward(&hidden)?;
            let mut logit_grad = Matrix::zeros(n, logits.cols());
            for i in 0..n {
                let row = logits.row(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let log_z = max + z.ln();
                loss += lambda * (log_z - row[batch.classes[i]]) / n as f64;
                for (c, g) in logit_grad.row_mut(i).iter_mut().enumerate() {
                    let p = (row[c] - log_z).exp();
                    let target = if c == batch.classes[i] { 1.0 } else { 0.0 };
                    *g = lambda * (p - target) / n as f64;
                }
            }
            aux_parts = Some((aux_cache, logit_grad));
        }
        if !loss.is_finite() {
            return Err(Error::non_finite("predictor training loss"));
        }
        if !with_grad {
            return Ok((loss, Vec::new()));
        }
        let (head_grads, mut hidden_grad) = self.head.backward(&head_cache, &pred_grad)?;
        let mut aux_flat = Vec::new();
        if let (Some(aux), Some((cache, logit_grad))) = (&self.aux_head, aux_parts) {
            let (aux_grads, from_aux) = aux.backward(&cache, &logit_grad)?;
            hidden_grad.add_assign(&from_aux)?;
            aux_flat = aux_grads.flatten();
        }
        let (trunk_grads, _) = self.trunk.backward(&trunk_cache, &hidden_grad)?;
        let mut grads = trunk_grads.flatten();
        grads.extend(head_grads.flatten());
        grads.extend(aux_flat);
        Ok((loss, grads))
    }

    /// Predictions for each row of a 0/1 matrix.
    pub fn predict_matrix(&self, inputs: &Matrix) -> Result<Vec<f64>> {
        let hidden = self.trunk.predict(inputs)?;
        Ok(self.head.predict(&hidden)?.into_vec())
    }

    pub fn predict(&self, a: &AttributeVector) -> Result<f64> {
        a.check_dimension(self.dimension)?;
        Ok(self.predict_matrix(&to_matrix(&[a], self.dimension))?[0])
    }

    pub fn predict_batch(&self, attrs: &[AttributeVector]) -> Result<Vec<f64>> {
        if attrs.is_empty() {
            return Ok(Vec::new());
        }
        for a in attrs {
            a.check_dimension(self.dimension)?;
        }
        let refs: Vec<&AttributeVector> = attrs.iter().collect();
        self.predict_matrix(&to_matrix(&refs, self.dimension))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::pipeline::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Anything that assigns a bias estimate to an attribute vector.
pub trait BiasEstimator {
    fn dimension(&self) -> usize;
    fn estimate(&self, a: &AttributeVector) -> Result<f64>;
    fn estimate_batch(&self, attrs: &[AttributeVector]) -> Result<Vec<f64>> {
        attrs.iter().map(|a| self.estimate(a)).collect()
    }
}

impl BiasEstimator for BiasPredictor {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn estimate(&self, a: &AttributeVector) -> Result<f64> {
        self.predict(a)
    }

    fn estimate_batch(&self, attrs: &[AttributeVector]) -> Result<Vec<f64>> {
        self.predict_batch(attrs)
    }
}

/// Constant estimator; handy for degenerate-reward checks.
#[derive(Debug, Clone, Copy)]
pub struct ConstantEstimator {
    pub dimension: usize,
    pub value: f64,
}

impl BiasEstimator for ConstantEstimator {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn estimate(&self, a: &AttributeVector) -> Result<f64> {
        a.check_dimension(self.dimension)?;
        Ok(self.value)
    }
}

impl BiasEstimator for crate::attrspace::SyntheticLandscape {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn estimate(&self, a: &AttributeVector) -> Result<f64> {
        self.bias(a)
    }
}
