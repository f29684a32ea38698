//! Latent-variable generator over attribute vectors.
//!
//! The encoder `q_φ(z|a)` is a diagonal Gaussian whose mean and log-variance
//! come from two linear heads on a shared trunk. The decoder `p_θ(a|z)` is a
//! factorized Bernoulli with sigmoid outputs. Training is ELBO pretraining
//! followed by reward-guided fine-tuning (see [`finetune`]).

mod generate;
mod train;

pub use generate::{
    generate, marginal_over_space, model_marginal_oracle, GeneratedItem, GeneratedSet,
    GenerationMetadata,
};
pub use train::{
    estimate_baseline, finetune, inference_step, pretrain, read_finetune_log, write_finetune_log,
    BaselineMode, FineTuneConfig, FineTuneLogEntry, FineTuneOptimizers, PretrainConfig,
    PretrainSummary,
};

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attrspace::{enumerate_space_with_cap, AttributeSpace, AttributeVector};
use crate::error::{Error, Result};
use crate::nn::{
    bernoulli_entropy, bernoulli_entropy_grad, bernoulli_logpmf, bernoulli_logpmf_grad, clamp_prob,
    gaussian_logpdf, gaussian_logpdf_backward, gaussian_reparam, gaussian_reparam_backward,
    kl_backward, kl_to_standard_normal, Activation, Matrix, Mlp,
};
use crate::predictor::BiasEstimator;
use crate::rng::{self, Rng};

/// Outcome spaces larger than `2^ORACLE_MAX_DIMENSION` are not enumerated.
pub const ORACLE_MAX_DIMENSION: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            encoder_hidden: vec![64],
            decoder_hidden: vec![64, 64],
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub stage: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerativeModel {
    dimension: usize,
    latent_dim: usize,
    encoder_trunk: Mlp,
    mean_head: Mlp,
    log_variance_head: Mlp,
    decoder: Mlp,
    /// Seeds of every stage that produced these parameters, oldest first.
    pub seed_lineage: Vec<SeedRecord>,
}

/// ELBO value and its gradients (ascent direction) for both parameter groups.
#[derive(Debug, Clone)]
pub struct ElboOutput {
    pub value: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub encoder_grad: Vec<f64>,
    pub decoder_grad: Vec<f64>,
}

pub(crate) fn attribute_matrix(attrs: &[AttributeVector], d: usize) -> Result<Matrix> {
    let mut data = Vec::with_capacity(attrs.len() * d);
    for a in attrs {
        a.check_dimension(d)?;
        data.extend(a.as_f64());
    }
    Matrix::from_vec(attrs.len(), d, data)
}

fn normalized_weights(weights: Option<&[f64]>, n: usize) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0 / n as f64; n]),
        Some(w) => {
            if w.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: w.len(),
                });
            }
            let total: f64 = w.iter().sum();
            if !(total > 0.0) || w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::invalid(
                    "row weights must be non-negative with a positive sum",
                ));
            }
            Ok(w.iter().map(|x| x / total).collect())
        }
    }
}

impl GenerativeModel {
    pub fn new(dimension: usize, config: &ModelConfig, seed: u64) -> Result<Self> {
        if dimension == 0 || config.latent_dim == 0 {
            return Err(Error::Config(
                "model dimension and latent_dim must be positive".into(),
            ));
        }
        if config.encoder_hidden.is_empty() || config.decoder_hidden.is_empty() {
            return Err(Error::Config(
                "encoder and decoder need at least one hidden layer".into(),
            ));
        }
        let mut rng = rng::seeded(seed);
        let mut enc_sizes = vec![dimension];
        enc_sizes.extend(&config.encoder_hidden);
        let encoder_trunk = Mlp::new(
            &enc_sizes,
            &vec![config.activation; config.encoder_hidden.len()],
            &mut rng,
        )?;
        let width = *enc_sizes.last().expect("non-empty");
        let mean_head = Mlp::new(
            &[width, config.latent_dim],
            &[Activation::Identity],
            &mut rng,
        )?;
        let log_variance_head = Mlp::new(
            &[width, config.latent_dim],
            &[Activation::Identity],
            &mut rng,
        )?;
        let mut dec_sizes = vec![config.latent_dim];
        dec_sizes.extend(&config.decoder_hidden);
        dec_sizes.push(dimension);
        let mut dec_acts = vec![config.activation; config.decoder_hidden.len()];
        dec_acts.push(Activation::Sigmoid);
        let decoder = Mlp::new(&dec_sizes, &dec_acts, &mut rng)?;
        Ok(Self {
            dimension,
            latent_dim: config.latent_dim,
            encoder_trunk,
            mean_head,
            log_variance_head,
            decoder,
            seed_lineage: vec![SeedRecord {
                stage: "init".into(),
                seed,
            }],
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut Mlp {
        &mut self.decoder
    }

    pub fn encoder_params(&self) -> Vec<f64> {
        let mut p = self.encoder_trunk.params();
        p.extend(self.mean_head.params());
        p.extend(self.log_variance_head.params());
        p
    }

    pub fn set_encoder_params(&mut self, flat: &[f64]) -> Result<()> {
        let nt = self.encoder_trunk.num_params();
        let nm = self.mean_head.num_params();
        let nl = self.log_variance_head.num_params();
        if flat.len() != nt + nm + nl {
            return Err(Error::DimensionMismatch {
                expected: nt + nm + nl,
                found: flat.len(),
            });
        }
        self.encoder_trunk.set_params(&flat[..nt])?;
        self.mean_head.set_params(&flat[nt..nt + nm])?;
        self.log_variance_head.set_params(&flat[nt + nm..])
    }

    pub fn decoder_params(&self) -> Vec<f64> {
        self.decoder.params()
    }

    pub fn set_decoder_params(&mut self, flat: &[f64]) -> Result<()> {
        self.decoder.set_params(flat)
    }

    /// Encoder mean and log-variance for each row of a 0/1 matrix.
    pub fn encode(&self, inputs: &Matrix) -> Result<(Matrix, Matrix)> {
        let h = self.encoder_trunk.predict(inputs)?;
        Ok((
            self.mean_head.predict(&h)?,
            self.log_variance_head.predict(&h)?,
        ))
    }

    /// Decoder probabilities, clamped to `[PROB_EPS, 1 − PROB_EPS]`.
    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        Ok(self.decoder.predict(z)?.map(clamp_prob))
    }

    pub fn sample_prior(&self, n: usize, rng: &mut Rng) -> Matrix {
        let data = (0..n * self.latent_dim)
            .map(|_| rng::standard_normal(rng))
            .collect();
        Matrix::from_vec(n, self.latent_dim, data).expect("sized")
    }

    /// Draws one attribute vector per row of decoder probabilities.
    pub fn sample_bits(probs: &Matrix, rng: &mut Rng) -> Vec<AttributeVector> {
        (0..probs.rows())
            .map(|r| {
                AttributeVector::from_bools(
                    &probs
                        .row(r)
                        .iter()
                        .map(|&p| rng.gen::<f64>() < p)
                        .collect::<Vec<_>>(),
                )
            })
            .collect()
    }

    /// `a ~ p_θ(a|z)` for each row of `z`.
    pub fn sample_given(&self, z: &Matrix, rng: &mut Rng) -> Result<Vec<AttributeVector>> {
        let probs = self.decode(z)?;
        Ok(Self::sample_bits(&probs, rng))
    }

    /// ELBO with explicitly supplied reparameterization noise.
    ///
    /// `weights` are per-row importance weights (normalized internally); the
    /// value is the weighted mean of `log p_θ(a|z) − KL(q_φ(z|a) ‖ N(0, I))`.
    pub fn elbo_with_noise(
        &self,
        attrs: &[AttributeVector],
        noise: &Matrix,
        weights: Option<&[f64]>,
    ) -> Result<ElboOutput> {
        if attrs.is_empty() {
            return Err(Error::Empty("ELBO batch"));
        }
        let n = attrs.len();
        if noise.shape() != (n, self.latent_dim) {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim,
                found: noise.cols(),
            });
        }
        let w = normalized_weights(weights, n)?;
        let inputs = attribute_matrix(attrs, self.dimension)?;
        let (h, trunk_cache) = self.encoder_trunk.forward(&inputs)?;
        let (mean, mean_cache) = self.mean_head.forward(&h)?;
        let (log_var, lv_cache) = self.log_variance_head.forward(&h)?;
        let z = gaussian_reparam(&mean, &log_var, noise)?;
        let (probs, dec_cache) = self.decoder.forward(&z)?;
        let kl = kl_to_standard_normal(&mean, &log_var)?;

        let mut reconstruction = 0.0;
        let mut prob_grad = Matrix::zeros(n, self.dimension);
        for r in 0..n {
            let bits = inputs.row(r);
            reconstruction += w[r] * bernoulli_logpmf(bits, probs.row(r))?;
            for (g, v) in prob_grad
                .row_mut(r)
                .iter_mut()
                .zip(bernoulli_logpmf_grad(bits, probs.row(r)))
            {
                *g = w[r] * v;
            }
        }
        let kl_mean: f64 = kl.iter().zip(&w).map(|(k, w)| k * w).sum();
        let value = reconstruction - kl_mean;
        if !value.is_finite() {
            return Err(Error::non_finite("ELBO"));
        }

        let (dec_grads, z_grad) = self.decoder.backward(&dec_cache, &prob_grad)?;
        let (mut mean_grad, mut lv_grad) = gaussian_reparam_backward(&log_var, noise, &z_grad)?;
        let neg_w: Vec<f64> = w.iter().map(|x| -x).collect();
        let (kl_mean_grad, kl_lv_grad) = kl_backward(&mean, &log_var, &neg_w)?;
        mean_grad.add_assign(&kl_mean_grad)?;
        lv_grad.add_assign(&kl_lv_grad)?;
        let encoder_grad =
            self.encoder_backward(&trunk_cache, &mean_cache, &lv_cache, &mean_grad, &lv_grad)?;
        Ok(ElboOutput {
            value,
            reconstruction,
            kl: kl_mean,
            encoder_grad,
            decoder_grad: dec_grads.flatten(),
        })
    }

    /// ELBO with noise drawn from `rng`.
    pub fn elbo(
        &self,
        attrs: &[AttributeVector],
        weights: Option<&[f64]>,
        rng: &mut Rng,
    ) -> Result<ElboOutput> {
        let noise = self.sample_prior(attrs.len(), rng);
        self.elbo_with_noise(attrs, &noise, weights)
    }

    fn encoder_backward(
        &self,
        trunk_cache: &crate::nn::ForwardCache,
        mean_cache: &crate::nn::ForwardCache,
        lv_cache: &crate::nn::ForwardCache,
        mean_grad: &Matrix,
        lv_grad: &Matrix,
    ) -> Result<Vec<f64>> {
        let (mg, mut h_grad) = self.mean_head.backward(mean_cache, mean_grad)?;
        let (lg, h_from_lv) = self.log_variance_head.backward(lv_cache, lv_grad)?;
        h_grad.add_assign(&h_from_lv)?;
        let (tg, _) = self.encoder_trunk.backward(trunk_cache, &h_grad)?;
        let mut flat = tg.flatten();
        flat.extend(mg.flatten());
        flat.extend(lg.flatten());
        Ok(flat)
    }

    /// `log q_φ(z_r | a_r)` per row.
    pub fn log_q(&self, z: &Matrix, attrs: &[AttributeVector]) -> Result<Vec<f64>> {
        let (mean, log_var) = self.encode(&attribute_matrix(attrs, self.dimension)?)?;
        gaussian_logpdf(z, &mean, &log_var)
    }

    /// Mean of `log q_φ(z_r | a_r)` over rows, and its gradient in φ.
    pub fn log_q_grad(&self, z: &Matrix, attrs: &[AttributeVector]) -> Result<(f64, Vec<f64>)> {
        if attrs.is_empty() {
            return Err(Error::Empty("inference batch"));
        }
        let n = attrs.len();
        let inputs = attribute_matrix(attrs, self.dimension)?;
        let (h, trunk_cache) = self.encoder_trunk.forward(&inputs)?;
        let (mean, mean_cache) = self.mean_head.forward(&h)?;
        let (log_var, lv_cache) = self.log_variance_head.forward(&h)?;
        let values = gaussian_logpdf(z, &mean, &log_var)?;
        let value = values.iter().sum::<f64>() / n as f64;
        if !value.is_finite() {
            return Err(Error::non_finite("log q(z|a)"));
        }
        let grads = gaussian_logpdf_backward(z, &mean, &log_var, &vec![1.0 / n as f64; n])?;
        let flat = self.encoder_backward(
            &trunk_cache,
            &mean_cache,
            &lv_cache,
            &grads.mean,
            &grads.log_variance,
        )?;
        Ok((value, flat))
    }

    /// `log q_φ(z|a) + L̂(a)` for each row.
    pub fn rewards(
        &self,
        z: &Matrix,
        attrs: &[AttributeVector],
        estimator: &dyn BiasEstimator,
    ) -> Result<Vec<f64>> {
        self.check_estimator(estimator)?;
        let log_q = self.log_q(z, attrs)?;
        let bias = estimator.estimate_batch(attrs)?;
        Ok(log_q.iter().zip(&bias).map(|(q, b)| q + b).collect())
    }

    /// Reward of a single `(z, a)` pair.
    pub fn reward(
        &self,
        z: &[f64],
        a: &AttributeVector,
        estimator: &dyn BiasEstimator,
    ) -> Result<f64> {
        let zm = Matrix::from_vec(1, z.len(), z.to_vec())?;
        if z.len() != self.latent_dim {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim,
                found: z.len(),
            });
        }
        Ok(self.rewards(&zm, std::slice::from_ref(a), estimator)?[0])
    }

    pub(crate) fn check_estimator(&self, estimator: &dyn BiasEstimator) -> Result<()> {
        if estimator.dimension() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: estimator.dimension(),
            });
        }
        Ok(())
    }

    /// `log p_θ(a|z)` for one latent point and its gradient in θ.
    pub fn log_likelihood_grad(&self, z: &[f64], a: &AttributeVector) -> Result<(f64, Vec<f64>)> {
        a.check_dimension(self.dimension)?;
        let zm = Matrix::from_vec(1, self.latent_dim, z.to_vec()).map_err(|_| {
            Error::DimensionMismatch {
                expected: self.latent_dim,
                found: z.len(),
            }
        })?;
        let (probs, cache) = self.decoder.forward(&zm)?;
        let bits: Vec<f64> = a.as_f64().collect();
        let value = bernoulli_logpmf(&bits, probs.row(0))?;
        let upstream = Matrix::from_vec(
            1,
            self.dimension,
            bernoulli_logpmf_grad(&bits, probs.row(0)),
        )?;
        let (grads, _) = self.decoder.backward(&cache, &upstream)?;
        Ok((value, grads.flatten()))
    }

    /// Mean over rows of the REINFORCE loss gradient in θ:
    /// `−(reward_r − baseline_r)·∇ log p_θ(a_r|z_r) − η·∇ Ent(p_θ(·|z_r))`.
    ///
    /// Descending this gradient raises the expected reward and the decoder entropy.
    pub fn reinforce_grad(
        &self,
        z: &Matrix,
        attrs: &[AttributeVector],
        rewards: &[f64],
        baselines: &[f64],
        entropy_weight: f64,
    ) -> Result<Vec<f64>> {
        let n = attrs.len();
        if n == 0 {
            return Err(Error::Empty("REINFORCE batch"));
        }
        for len in [z.rows(), rewards.len(), baselines.len()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        let inputs = attribute_matrix(attrs, self.dimension)?;
        let (probs, cache) = self.decoder.forward(z)?;
        let mut upstream = Matrix::zeros(n, self.dimension);
        for r in 0..n {
            let advantage = rewards[r] - baselines[r];
            let lp = bernoulli_logpmf_grad(inputs.row(r), probs.row(r));
            let ent = bernoulli_entropy_grad(probs.row(r));
            for ((g, l), e) in upstream.row_mut(r).iter_mut().zip(lp).zip(ent) {
                *g = (-advantage * l - entropy_weight * e) / n as f64;
            }
        }
        if !upstream.is_finite() {
            return Err(Error::non_finite("REINFORCE gradient"));
        }
        let (grads, _) = self.decoder.backward(&cache, &upstream)?;
        Ok(grads.flatten())
    }

    /// Mean decoder entropy over rows of `z`.
    pub fn mean_entropy(&self, z: &Matrix) -> Result<f64> {
        let probs = self.decode(z)?;
        Ok((0..probs.rows())
            .map(|r| bernoulli_entropy(probs.row(r)))
            .sum::<f64>()
            / probs.rows().max(1) as f64)
    }

    /// Exact variance-minimizing baseline for one latent point, by enumerating
    /// every outcome: `E[r‖∇log p‖²] / E[‖∇log p‖²]`.
    pub fn optimal_baseline_oracle(&self, z: &[f64], estimator: &dyn BiasEstimator) -> Result<f64> {
        if self.dimension > ORACLE_MAX_DIMENSION {
            return Err(Error::EnumerationCap {
                dimension: self.dimension,
                cap: ORACLE_MAX_DIMENSION,
            });
        }
        let space = AttributeSpace::new(self.dimension)?;
        let (mut num, mut den) = (0.0, 0.0);
        for a in enumerate_space_with_cap(&space, ORACLE_MAX_DIMENSION)? {
            let (log_p, grad) = self.log_likelihood_grad(z, &a)?;
            let sq: f64 = grad.iter().map(|g| g * g).sum();
            let p = log_p.exp();
            num += p * self.reward(z, &a, estimator)? * sq;
            den += p * sq;
        }
        if den == 0.0 {
            return Err(Error::invalid("score function vanishes for every outcome"));
        }
        Ok(num / den)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn content_hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&json)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::pipeline::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text)?;
        if model.encoder_trunk.input_size() != model.dimension
            || model.decoder.output_size() != model.dimension
            || model.decoder.input_size() != model.latent_dim
            || model.mean_head.output_size() != model.latent_dim
            || model.log_variance_head.output_size() != model.latent_dim
        {
            return Err(Error::invalid(
                "model checkpoint layer sizes are inconsistent",
            ));
        }
        Ok(model)
    }
}
