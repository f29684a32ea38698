//! ELBO pretraining and bias-guided fine-tuning.

use std::io::{BufRead, Write as _};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{GenerativeModel, SeedRecord};
use crate::attrspace::{AttributeVector, GroupBiasTable};
use crate::error::{Error, Result};
use crate::nn::{Matrix, OptimState};
use crate::predictor::BiasEstimator;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    /// Count-weighted ELBO over all groups under fixed evaluation noise,
    /// before training (index 0) and after each epoch.
    pub epoch_elbos: Vec<f64>,
}

fn ascend(opt: &mut OptimState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
    opt.step(params, &neg)
}

fn elbo_step(
    model: &mut GenerativeModel,
    attrs: &[AttributeVector],
    weights: Option<&[f64]>,
    opts: &mut FineTuneOptimizers,
    rng: &mut Rng,
) -> Result<f64> {
    let out = model.elbo(attrs, weights, rng)?;
    let mut enc = model.encoder_params();
    ascend(&mut opts.encoder, &mut enc, &out.encoder_grad)?;
    let mut dec = model.decoder_params();
    ascend(&mut opts.decoder, &mut dec, &out.decoder_grad)?;
    model.set_encoder_params(&enc)?;
    model.set_decoder_params(&dec)?;
    Ok(out.value)
}

/// Maximizes the count-weighted ELBO over the table's groups.
pub fn pretrain(
    model: &mut GenerativeModel,
    observation: &GroupBiasTable,
    config: &PretrainConfig,
) -> Result<PretrainSummary> {
    if observation.is_empty() {
        return Err(Error::Empty("pretraining table"));
    }
    if observation.dimension() != model.dimension() {
        return Err(Error::DimensionMismatch {
            expected: model.dimension(),
            found: observation.dimension(),
        });
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::Config(
            "pretraining needs batch_size ≥ 1 and learning_rate > 0".into(),
        ));
    }
    let keys: Vec<AttributeVector> = observation.keys().cloned().collect();
    let counts: Vec<f64> = observation.iter().map(|(_, s)| s.count as f64).collect();
    let eval_noise = model.sample_prior(
        keys.len(),
        &mut rng::seeded(rng::derive_seed(config.seed, "pretrain-eval")),
    );
    let evaluate = |m: &GenerativeModel| {
        m.elbo_with_noise(&keys, &eval_noise, Some(&counts))
            .map(|o| o.value)
    };

    let mut rng = rng::seeded(config.seed);
    let mut opts = FineTuneOptimizers::new(model, config.learning_rate, config.learning_rate);
    let mut epoch_elbos = vec![evaluate(model)?];
    let mut order: Vec<usize> = (0..keys.len()).collect();
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let attrs: Vec<AttributeVector> = chunk.iter().map(|&i| keys[i].clone()).collect();
            let weights: Vec<f64> = chunk.iter().map(|&i| counts[i]).collect();
            elbo_step(model, &attrs, Some(&weights), &mut opts, &mut rng)
                .map_err(|e| e.at_iteration(step))?;
        }
        epoch_elbos.push(evaluate(model).map_err(|e| e.at_iteration(step))?);
    }
    model.seed_lineage.push(SeedRecord {
        stage: "pretrain".into(),
        seed: config.seed,
    });
    Ok(PretrainSummary { epoch_elbos })
}

/// Samples `a ~ p_θ(a|z)` for each latent row and takes one ascent step on
/// the mean `log q_φ(z|a)`. Returns the objective before the step.
pub fn inference_step(
    model: &mut GenerativeModel,
    z: &Matrix,
    opt: &mut OptimState,
    rng: &mut Rng,
) -> Result<f64> {
    let attrs = model.sample_given(z, rng)?;
    inference_step_on(model, z, &attrs, opt)
}

fn inference_step_on(
    model: &mut GenerativeModel,
    z: &Matrix,
    attrs: &[AttributeVector],
    opt: &mut OptimState,
) -> Result<f64> {
    let (value, grad) = model.log_q_grad(z, attrs)?;
    let mut params = model.encoder_params();
    ascend(opt, &mut params, &grad)?;
    model.set_encoder_params(&params)?;
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Reward of a fresh `(z', a')` pair drawn independently of the batch.
    IndependentCopy,
    /// Mean reward of the other samples in the batch.
    BatchMean,
    /// No baseline (`C = 0`).
    None,
}

/// One baseline value per sample of the current batch.
pub fn estimate_baseline(
    model: &GenerativeModel,
    batch_rewards: &[f64],
    estimator: &dyn BiasEstimator,
    mode: BaselineMode,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let n = batch_rewards.len();
    match mode {
        BaselineMode::None => Ok(vec![0.0; n]),
        BaselineMode::BatchMean => {
            if n < 2 {
                return Ok(vec![0.0; n]);
            }
            let total: f64 = batch_rewards.iter().sum();
            Ok(batch_rewards
                .iter()
                .map(|r| (total - r) / (n - 1) as f64)
                .collect())
        }
        BaselineMode::IndependentCopy => {
            let z = model.sample_prior(n, rng);
            let attrs = model.sample_given(&z, rng)?;
            model.rewards(&z, &attrs, estimator)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub encoder_learning_rate: f64,
    pub decoder_learning_rate: f64,
    /// η, weight of the decoder entropy bonus.
    pub entropy_weight: f64,
    /// R, candidates drawn per latent point.
    pub resample_number: usize,
    /// ρ, fraction of candidates kept (highest predicted bias first).
    pub filter_proportion: f64,
    /// Iterations between replay ELBO steps; 0 disables replay.
    pub replay_interval: usize,
    /// Fraction of observation groups, by descending bias, in the replay pool.
    pub replay_fraction: f64,
    pub baseline: BaselineMode,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            batch_size: 64,
            encoder_learning_rate: 1e-3,
            decoder_learning_rate: 5e-4,
            entropy_weight: 0.01,
            resample_number: 5,
            filter_proportion: 0.2,
            replay_interval: 10,
            replay_fraction: 0.2,
            baseline: BaselineMode::IndependentCopy,
            seed: 0,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("fine-tune config: {m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1");
        }
        if !(self.encoder_learning_rate > 0.0 && self.decoder_learning_rate > 0.0) {
            return bad("learning rates must be > 0");
        }
        if !(self.entropy_weight >= 0.0) {
            return bad("entropy_weight must be ≥ 0");
        }
        if self.resample_number == 0 {
            return bad("resample_number must be ≥ 1");
        }
        if !(self.filter_proportion > 0.0 && self.filter_proportion <= 1.0) {
            return bad("filter_proportion must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.replay_fraction) {
            return bad("replay_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    /// ⌈ρR⌉ candidates kept per latent point.
    pub fn kept_per_latent(&self) -> usize {
        ((self.filter_proportion * self.resample_number as f64).ceil() as usize)
            .clamp(1, self.resample_number)
    }
}

#[derive(Debug, Clone)]
pub struct FineTuneOptimizers {
    pub encoder: OptimState,
    pub decoder: OptimState,
}

impl FineTuneOptimizers {
    pub fn new(model: &GenerativeModel, encoder_lr: f64, decoder_lr: f64) -> Self {
        Self {
            encoder: OptimState::new(model.encoder_params().len(), encoder_lr),
            decoder: OptimState::new(model.decoder_params().len(), decoder_lr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneLogEntry {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_baseline: f64,
    pub mean_entropy: f64,
    pub mean_predicted_bias: f64,
    pub inference_objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_elbo: Option<f64>,
}

/// Keeps the `keep` highest-scoring candidates of each consecutive block of `block` entries.
pub(super) fn top_per_block(scores: &[f64], block: usize, keep: usize) -> Vec<usize> {
    let mut kept = Vec::with_capacity(scores.len() / block * keep);
    for start in (0..scores.len()).step_by(block) {
        let mut idx: Vec<usize> = (start..start + block).collect();
        idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        kept.extend(&idx[..keep]);
    }
    kept
}

fn replay_pool(observation: &GroupBiasTable, fraction: f64) -> Vec<AttributeVector> {
    if fraction <= 0.0 {
        return Vec::new();
    }
    let mut groups: Vec<(&AttributeVector, f64)> =
        observation.iter().map(|(a, s)| (a, s.bias)).collect();
    groups.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(y.0)));
    let n = ((fraction * groups.len() as f64).ceil() as usize).clamp(1, groups.len());
    groups[..n].iter().map(|(a, _)| (*a).clone()).collect()
}

/// Bias-guided fine-tuning. Each iteration:
///
/// 1. draws a batch of latent points from the prior;
/// 2. draws R candidates per point and keeps the ⌈ρR⌉ with the highest
///    predicted bias;
/// 3. updates the encoder on `log q_φ(z|a)` for one plain candidate per point;
/// 4. scores the kept candidates with `log q_φ(z|a) + L̂(a)`, computes the
///    baseline, and takes a REINFORCE step on the decoder;
/// 5. every `replay_interval` iterations, takes an ELBO step on a batch drawn
///    from the highest-bias observation groups.
pub fn finetune(
    model: &mut GenerativeModel,
    estimator: &dyn BiasEstimator,
    observation: &GroupBiasTable,
    config: &FineTuneConfig,
) -> Result<Vec<FineTuneLogEntry>> {
    config.validate()?;
    model.check_estimator(estimator)?;
    if observation.dimension() != model.dimension() {
        return Err(Error::DimensionMismatch {
            expected: model.dimension(),
            found: observation.dimension(),
        });
    }
    let mut rng = rng::seeded(config.seed);
    let mut opts = FineTuneOptimizers::new(
        model,
        config.encoder_learning_rate,
        config.decoder_learning_rate,
    );
    let pool = if config.replay_interval > 0 {
        replay_pool(observation, config.replay_fraction)
    } else {
        Vec::new()
    };
    let mut log = Vec::with_capacity(config.iterations);
    for iteration in 1..=config.iterations {
        let entry = finetune_iteration(
            model, estimator, config, &pool, iteration, &mut opts, &mut rng,
        )
        .map_err(|e| e.at_iteration(iteration))?;
        log.push(entry);
    }
    model.seed_lineage.push(SeedRecord {
        stage: "finetune".into(),
        seed: config.seed,
    });
    Ok(log)
}

fn finetune_iteration(
    model: &mut GenerativeModel,
    estimator: &dyn BiasEstimator,
    config: &FineTuneConfig,
    pool: &[AttributeVector],
    iteration: usize,
    opts: &mut FineTuneOptimizers,
    rng: &mut Rng,
) -> Result<FineTuneLogEntry> {
    let r = config.resample_number;
    let z = model.sample_prior(config.batch_size, rng);
    let rows: Vec<usize> = (0..config.batch_size)
        .flat_map(|b| std::iter::repeat_n(b, r))
        .collect();
    let z_rep = z.select_rows(&rows);
    let candidates = model.sample_given(&z_rep, rng)?;
    let scores = estimator.estimate_batch(&candidates)?;

    let plain: Vec<AttributeVector> = (0..config.batch_size)
        .map(|b| candidates[b * r].clone())
        .collect();
    let inference_objective = inference_step_on(model, &z, &plain, &mut opts.encoder)?;

    let kept = top_per_block(&scores, r, config.kept_per_latent());
    let z_kept = z_rep.select_rows(&kept);
    let a_kept: Vec<AttributeVector> = kept.iter().map(|&i| candidates[i].clone()).collect();
    let rewards = model.rewards(&z_kept, &a_kept, estimator)?;
    let baselines = estimate_baseline(model, &rewards, estimator, config.baseline, rng)?;
    let grad = model.reinforce_grad(
        &z_kept,
        &a_kept,
        &rewards,
        &baselines,
        config.entropy_weight,
    )?;
    let mut dec = model.decoder_params();
    opts.decoder.step(&mut dec, &grad)?;
    model.set_decoder_params(&dec)?;

    let replay_elbo = if !pool.is_empty() && iteration.is_multiple_of(config.replay_interval) {
        let batch: Vec<AttributeVector> = (0..config.batch_size)
            .map(|_| pool[rng.gen_range(0..pool.len())].clone())
            .collect();
        Some(elbo_step(model, &batch, None, opts, rng)?)
    } else {
        None
    };

    let n = rewards.len() as f64;
    let entry = FineTuneLogEntry {
        iteration,
        mean_reward: rewards.iter().sum::<f64>() / n,
        mean_baseline: baselines.iter().sum::<f64>() / n,
        mean_entropy: model.mean_entropy(&z)?,
        mean_predicted_bias: kept.iter().map(|&i| scores[i]).sum::<f64>() / n,
        inference_objective,
        replay_elbo,
    };
    if !(entry.mean_reward.is_finite() && entry.mean_baseline.is_finite()) {
        return Err(Error::non_finite("fine-tuning reward"));
    }
    Ok(entry)
}

/// Writes the fine-tuning log as one JSON object per line.
pub fn write_finetune_log(path: &Path, log: &[FineTuneLogEntry]) -> Result<()> {
    let mut out = Vec::new();
    for entry in log {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    crate::pipeline::write_atomic(path, &out)
}

pub fn read_finetune_log(path: &Path) -> Result<Vec<FineTuneLogEntry>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            entries.push(serde_json::from_str(&line)?);
        }
    }
    Ok(entries)
}
