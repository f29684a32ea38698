//! A small differentiable substrate: dense layers with manual backprop, the
//! Gaussian and Bernoulli densities the generative model needs, Adam, and
//! finite-difference checking.

mod dist;
pub mod gradcheck;
mod matrix;
mod mlp;
mod optim;

pub use dist::{
    bernoulli_entropy, bernoulli_entropy_grad, bernoulli_logpmf, bernoulli_logpmf_grad, clamp_prob,
    gaussian_logpdf, gaussian_logpdf_backward, gaussian_reparam, gaussian_reparam_backward,
    half_ln_two_pi, kl_backward, kl_to_standard_normal, GaussianLogpdfGrads, PROB_EPS,
};
pub use matrix::Matrix;
pub use mlp::{softplus, Activation, Dense, ForwardCache, Mlp, MlpCheckpoint, MlpGrads};
pub use optim::OptimState;
