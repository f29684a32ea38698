//! Diagonal Gaussian and factorized Bernoulli densities with their gradients.

use std::f64::consts::PI;

use super::Matrix;
use crate::error::{Error, Result};

/// Decoder probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// `z = mean + exp(½·log_variance) ⊙ noise`.
pub fn gaussian_reparam(mean: &Matrix, log_variance: &Matrix, noise: &Matrix) -> Result<Matrix> {
    mean.check_same_shape(log_variance)?;
    mean.check_same_shape(noise)?;
    let mut z = mean.clone();
    for ((zv, &lv), &e) in z
        .data_mut()
        .iter_mut()
        .zip(log_variance.data())
        .zip(noise.data())
    {
        *zv += (0.5 * lv).exp() * e;
    }
    Ok(z)
}

/// Pulls `d/dz` back through [`gaussian_reparam`] to `(d/dmean, d/dlog_variance)`.
pub fn gaussian_reparam_backward(
    log_variance: &Matrix,
    noise: &Matrix,
    grad_z: &Matrix,
) -> Result<(Matrix, Matrix)> {
    log_variance.check_same_shape(grad_z)?;
    noise.check_same_shape(grad_z)?;
    let mut grad_lv = grad_z.clone();
    for ((g, &lv), &e) in grad_lv
        .data_mut()
        .iter_mut()
        .zip(log_variance.data())
        .zip(noise.data())
    {
        *g *= 0.5 * (0.5 * lv).exp() * e;
    }
    Ok((grad_z.clone(), grad_lv))
}

/// Row-wise log density of a diagonal Gaussian.
pub fn gaussian_logpdf(z: &Matrix, mean: &Matrix, log_variance: &Matrix) -> Result<Vec<f64>> {
    z.check_same_shape(mean)?;
    z.check_same_shape(log_variance)?;
    Ok((0..z.rows())
        .map(|r| {
            z.row(r)
                .iter()
                .zip(mean.row(r))
                .zip(log_variance.row(r))
                .map(|((&zv, &m), &lv)| {
                    -HALF_LN_2PI - 0.5 * lv - (zv - m).powi(2) / (2.0 * lv.exp())
                })
                .sum()
        })
        .collect())
}

/// Gradients of `Σ_r weight_r · logpdf_r` with respect to `(z, mean, log_variance)`.
pub struct GaussianLogpdfGrads {
    pub z: Matrix,
    pub mean: Matrix,
    pub log_variance: Matrix,
}

pub fn gaussian_logpdf_backward(
    z: &Matrix,
    mean: &Matrix,
    log_variance: &Matrix,
    row_weights: &[f64],
) -> Result<GaussianLogpdfGrads> {
    z.check_same_shape(mean)?;
    z.check_same_shape(log_variance)?;
    if row_weights.len() != z.rows() {
        return Err(Error::DimensionMismatch {
            expected: z.rows(),
            found: row_weights.len(),
        });
    }
    let mut gz = Matrix::zeros(z.rows(), z.cols());
    let mut gm = Matrix::zeros(z.rows(), z.cols());
    let mut glv = Matrix::zeros(z.rows(), z.cols());
    for r in 0..z.rows() {
        let w = row_weights[r];
        for c in 0..z.cols() {
            let diff = z[(r, c)] - mean[(r, c)];
            let inv_var = (-log_variance[(r, c)]).exp();
            gz[(r, c)] = -w * diff * inv_var;
            gm[(r, c)] = w * diff * inv_var;
            glv[(r, c)] = w * (-0.5 + 0.5 * diff * diff * inv_var);
        }
    }
    Ok(GaussianLogpdfGrads {
        z: gz,
        mean: gm,
        log_variance: glv,
    })
}

/// `KL(N(mean, exp(log_variance)) ‖ N(0, I))` per row.
pub fn kl_to_standard_normal(mean: &Matrix, log_variance: &Matrix) -> Result<Vec<f64>> {
    mean.check_same_shape(log_variance)?;
    Ok((0..mean.rows())
        .map(|r| {
            mean.row(r)
                .iter()
                .zip(log_variance.row(r))
                .map(|(&m, &lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
                .sum()
        })
        .collect())
}

/// Gradients of `Σ_r weight_r · KL_r` with respect to `(mean, log_variance)`.
pub fn kl_backward(
    mean: &Matrix,
    log_variance: &Matrix,
    row_weights: &[f64],
) -> Result<(Matrix, Matrix)> {
    mean.check_same_shape(log_variance)?;
    let mut gm = mean.clone();
    let mut glv = log_variance.map(|lv| 0.5 * (lv.exp() - 1.0));
    for r in 0..mean.rows() {
        let w = row_weights[r];
        gm.row_mut(r).iter_mut().for_each(|v| *v *= w);
        glv.row_mut(r).iter_mut().for_each(|v| *v *= w);
    }
    Ok((gm, glv))
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `Σ_i [a_i ln p_i + (1 − a_i) ln(1 − p_i)]` with clamped probabilities.
pub fn bernoulli_logpmf(bits: &[f64], probs: &[f64]) -> Result<f64> {
    if bits.len() != probs.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.len(),
            found: bits.len(),
        });
    }
    Ok(bits
        .iter()
        .zip(probs)
        .map(|(&a, &p)| {
            let p = clamp_prob(p);
            a * p.ln() + (1.0 - a) * (1.0 - p).ln()
        })
        .sum())
}

/// d logpmf / d p_i. Zero where the clamp is active.
pub fn bernoulli_logpmf_grad(bits: &[f64], probs: &[f64]) -> Vec<f64> {
    bits.iter()
        .zip(probs)
        .map(|(&a, &p)| {
            if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
                0.0
            } else {
                a / p - (1.0 - a) / (1.0 - p)
            }
        })
        .collect()
}

/// `Σ_i [−p_i ln p_i − (1 − p_i) ln(1 − p_i)]` with clamped probabilities.
pub fn bernoulli_entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .map(|&p| {
            let p = clamp_prob(p);
            -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
        })
        .sum()
}

/// d entropy / d p_i = ln((1 − p_i) / p_i). Zero where the clamp is active.
pub fn bernoulli_entropy_grad(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .map(|&p| {
            if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
                0.0
            } else {
                ((1.0 - p) / p).ln()
            }
        })
        .collect()
}

/// Exact `ln(2π)/2`; exposed for closed-form checks.
pub fn half_ln_two_pi() -> f64 {
    0.5 * (2.0 * PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_difference, relative_error};
    use crate::rng;
    use rand::Rng as _;

    fn rand_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut rng::Rng) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn reparam_closed_forms() {
        let mut rng = rng::seeded(1);
        let mean = rand_matrix(2, 3, -1.0, 1.0, &mut rng);
        let lv = rand_matrix(2, 3, -1.0, 1.0, &mut rng);
        assert_eq!(
            gaussian_reparam(&mean, &lv, &Matrix::zeros(2, 3)).unwrap(),
            mean
        );
        let noise = rand_matrix(2, 3, -2.0, 2.0, &mut rng);
        let z = gaussian_reparam(&mean, &Matrix::zeros(2, 3), &noise).unwrap();
        for i in 0..6 {
            assert!((z.data()[i] - mean.data()[i] - noise.data()[i]).abs() < 1e-15);
        }
        assert!(gaussian_reparam(&mean, &Matrix::zeros(3, 2), &noise).is_err());
    }

    #[test]
    fn reparam_log_variance_gradient_matches_finite_difference() {
        let mut rng = rng::seeded(2);
        let mean = rand_matrix(2, 2, -1.0, 1.0, &mut rng);
        let lv = rand_matrix(2, 2, -1.0, 1.0, &mut rng);
        let noise = rand_matrix(2, 2, -2.0, 2.0, &mut rng);
        let up = rand_matrix(2, 2, -1.0, 1.0, &mut rng);
        let (_, glv) = gaussian_reparam_backward(&lv, &noise, &up).unwrap();
        let numeric = central_difference(
            |v| {
                let lv = Matrix::from_vec(2, 2, v.to_vec()).unwrap();
                let z = gaussian_reparam(&mean, &lv, &noise).unwrap();
                z.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
            },
            lv.data(),
            1e-5,
        );
        for (a, n) in glv.data().iter().zip(&numeric) {
            assert!(relative_error(*a, *n) < 1e-4);
        }
    }

    #[test]
    fn logpdf_at_mode() {
        let k = 4;
        let mean = Matrix::from_vec(1, k, vec![0.3, -0.2, 1.0, 0.0]).unwrap();
        let lp = gaussian_logpdf(&mean, &mean, &Matrix::zeros(1, k)).unwrap();
        assert!((lp[0] + (k as f64 / 2.0) * (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn logpdf_one_sigma() {
        let z = Matrix::from_vec(1, 1, vec![1.5]).unwrap();
        let mean = Matrix::from_vec(1, 1, vec![0.5]).unwrap();
        let lp = gaussian_logpdf(&z, &mean, &Matrix::zeros(1, 1)).unwrap()[0];
        assert!((lp - (-0.5 * (2.0 * PI).ln() - 0.5)).abs() < 1e-12);
        assert!((lp + 1.4189).abs() < 1e-4);
    }

    #[test]
    fn logpdf_matches_independent_density() {
        let mut rng = rng::seeded(3);
        let z = rand_matrix(3, 2, -2.0, 2.0, &mut rng);
        let mean = rand_matrix(3, 2, -1.0, 1.0, &mut rng);
        let lv = rand_matrix(3, 2, -1.0, 1.0, &mut rng);
        let lp = gaussian_logpdf(&z, &mean, &lv).unwrap();
        for r in 0..3 {
            // product of univariate densities written with the standard deviation
            let density: f64 = (0..2)
                .map(|c| {
                    let sd = (lv[(r, c)] / 2.0).exp();
                    let u = (z[(r, c)] - mean[(r, c)]) / sd;
                    (-0.5 * u * u).exp() / (sd * (2.0 * PI).sqrt())
                })
                .product();
            assert!((lp[r] - density.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn logpdf_is_maximized_at_mean() {
        let mut rng = rng::seeded(4);
        let mean = rand_matrix(1, 3, -1.0, 1.0, &mut rng);
        let lv = rand_matrix(1, 3, -1.0, 1.0, &mut rng);
        let at_mean = gaussian_logpdf(&mean, &mean, &lv).unwrap()[0];
        for _ in 0..50 {
            let z = rand_matrix(1, 3, -3.0, 3.0, &mut rng);
            assert!(gaussian_logpdf(&z, &mean, &lv).unwrap()[0] <= at_mean);
        }
    }

    #[test]
    fn logpdf_gradients_match_finite_difference() {
        let mut rng = rng::seeded(5);
        let z = rand_matrix(2, 3, -2.0, 2.0, &mut rng);
        let mean = rand_matrix(2, 3, -1.0, 1.0, &mut rng);
        let lv = rand_matrix(2, 3, -1.0, 1.0, &mut rng);
        let w = [0.7, -1.2];
        let f = |z: &Matrix, m: &Matrix, l: &Matrix| -> f64 {
            gaussian_logpdf(z, m, l)
                .unwrap()
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum()
        };
        let g = gaussian_logpdf_backward(&z, &mean, &lv, &w).unwrap();
        let nz = central_difference(
            |v| f(&Matrix::from_vec(2, 3, v.to_vec()).unwrap(), &mean, &lv),
            z.data(),
            1e-5,
        );
        let nm = central_difference(
            |v| f(&z, &Matrix::from_vec(2, 3, v.to_vec()).unwrap(), &lv),
            mean.data(),
            1e-5,
        );
        let nl = central_difference(
            |v| f(&z, &mean, &Matrix::from_vec(2, 3, v.to_vec()).unwrap()),
            lv.data(),
            1e-5,
        );
        for (analytic, numeric) in [
            (g.z.data(), nz),
            (g.mean.data(), nm),
            (g.log_variance.data(), nl),
        ] {
            for (a, n) in analytic.iter().zip(&numeric) {
                assert!(relative_error(*a, *n) < 1e-4, "{a} vs {n}");
            }
        }
    }

    #[test]
    fn kl_vanishes_at_prior() {
        let kl = kl_to_standard_normal(&Matrix::zeros(3, 4), &Matrix::zeros(3, 4)).unwrap();
        assert!(kl.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bernoulli_uniform() {
        let lp = bernoulli_logpmf(&[1.0, 0.0, 1.0], &[0.5; 3]).unwrap();
        assert!((lp - 3.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((lp + 2.0794).abs() < 1e-4);
    }

    #[test]
    fn bernoulli_near_certain_bit() {
        let lp = bernoulli_logpmf(&[1.0], &[1.0]).unwrap();
        assert!((lp - (1.0 - PROB_EPS).ln()).abs() < 1e-15);
        assert!(lp.abs() < 1e-5);
        assert!(bernoulli_logpmf(&[1.0, 0.0], &[0.5]).is_err());
    }

    #[test]
    fn bernoulli_matches_independent_recomputation() {
        let mut rng = rng::seeded(6);
        for _ in 0..20 {
            let probs: Vec<f64> = (0..5).map(|_| rng.gen_range(0.01..0.99)).collect();
            let bits: Vec<f64> = (0..5).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
            let likelihood: f64 = bits
                .iter()
                .zip(&probs)
                .map(|(&a, &p)| if a == 1.0 { p } else { 1.0 - p })
                .product();
            assert!((bernoulli_logpmf(&bits, &probs).unwrap() - likelihood.ln()).abs() < 1e-12);
            assert!(bernoulli_logpmf(&bits, &probs).unwrap() <= 0.0);
        }
    }

    #[test]
    fn bernoulli_gradients_match_finite_difference() {
        let probs = [0.2, 0.7, 0.45];
        let bits = [1.0, 0.0, 1.0];
        let analytic = bernoulli_logpmf_grad(&bits, &probs);
        let numeric = central_difference(|p| bernoulli_logpmf(&bits, p).unwrap(), &probs, 1e-6);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(relative_error(*a, *n) < 1e-4);
        }
        let analytic = bernoulli_entropy_grad(&probs);
        let numeric = central_difference(bernoulli_entropy, &probs, 1e-6);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(relative_error(*a, *n) < 1e-4);
        }
    }

    #[test]
    fn entropy_bounds() {
        let d = 4.0;
        assert!((bernoulli_entropy(&[0.5; 4]) - d * 2f64.ln()).abs() < 1e-12);
        assert!(bernoulli_entropy(&[0.0, 1.0, 0.0, 1.0]) < 1e-4);
        assert!(bernoulli_entropy_grad(&[0.5; 4]).iter().all(|&g| g == 0.0));
    }
}
