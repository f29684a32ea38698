//! Acceptance criteria, one line of output per criterion.
//!
//! Runs as a plain binary (`harness = false`): every criterion executes on its
//! own thread, failures are caught, and the process exits non-zero if any
//! criterion fails. Reference values are computed here, independently of the
//! library routines under test.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng as _;

use bggn::attrspace::{
    enumerate_space, split_by_group, AttributeSpace, AttributeVector, GroupBiasTable, PairwiseTerm,
    SyntheticLandscape,
};
use bggn::metrics::{evaluate, MetricConfig};
use bggn::model::{
    estimate_baseline, finetune, generate, marginal_over_space, pretrain, BaselineMode,
    FineTuneConfig, GeneratedItem, GeneratedSet, GenerationMetadata, GenerativeModel, ModelConfig,
    PretrainConfig,
};
use bggn::nn::{
    bernoulli_logpmf, bernoulli_logpmf_grad, gaussian_logpdf, gaussian_logpdf_backward,
    gaussian_reparam, gaussian_reparam_backward, Activation, Matrix, Mlp,
};
use bggn::predictor::{BiasEstimator, BiasPredictor, PredictorConfig};
use bggn::rng::{self, Rng};
use bggn::search::{
    fit_tree, relaxed_search, search_tree, Node, RegressionTree, SearchEstimator, TreeConfig,
};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------------------
// shared oracles

fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-5;
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn worst_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

fn random_bits(d: usize, rng: &mut Rng) -> AttributeVector {
    AttributeVector::new((0..d).map(|_| rng.gen_range(0..2u8)).collect()).unwrap()
}

// ---------------------------------------------------------------------------
// 1. gradient correctness

fn dense_instance(rng: &mut Rng) -> f64 {
    let depth = rng.gen_range(1..=3);
    let sizes: Vec<usize> = (0..=depth).map(|_| rng.gen_range(1..=6)).collect();
    let palette = [
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Softplus,
        Activation::Identity,
    ];
    let acts: Vec<Activation> = (0..depth)
        .map(|_| palette[rng.gen_range(0..palette.len())])
        .collect();
    let net = Mlp::new(&sizes, &acts, rng).unwrap();
    let rows = rng.gen_range(1..=4);
    let input = random_matrix(rows, sizes[0], -1.5, 1.5, rng);
    let weights = random_matrix(rows, *sizes.last().unwrap(), -1.0, 1.0, rng);
    let loss = |out: &Matrix| {
        out.data()
            .iter()
            .zip(weights.data())
            .map(|(o, w)| o * w)
            .sum::<f64>()
    };
    let (_, cache) = net.forward(&input).unwrap();
    let (grads, input_grad) = net.backward(&cache, &weights).unwrap();
    let param_fd = numeric_gradient(
        |p| {
            let mut probe = net.clone();
            probe.set_params(p).unwrap();
            loss(&probe.predict(&input).unwrap())
        },
        &net.params(),
    );
    let input_fd = numeric_gradient(
        |x| {
            loss(
                &net.predict(&Matrix::from_vec(rows, sizes[0], x.to_vec()).unwrap())
                    .unwrap(),
            )
        },
        input.data(),
    );
    worst_relative_error(&grads.flatten(), &param_fd)
        .max(worst_relative_error(input_grad.data(), &input_fd))
}

fn reparam_instance(rng: &mut Rng) -> f64 {
    let (r, c) = (rng.gen_range(1..=4), rng.gen_range(1..=5));
    let mean = random_matrix(r, c, -2.0, 2.0, rng);
    let lv = random_matrix(r, c, -2.0, 1.0, rng);
    let noise = random_matrix(r, c, -2.0, 2.0, rng);
    let w = random_matrix(r, c, -1.0, 1.0, rng);
    let f = |m: &[f64], l: &[f64]| {
        let z = gaussian_reparam(
            &Matrix::from_vec(r, c, m.to_vec()).unwrap(),
            &Matrix::from_vec(r, c, l.to_vec()).unwrap(),
            &noise,
        )
        .unwrap();
        z.data()
            .iter()
            .zip(w.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let (gm, glv) = gaussian_reparam_backward(&lv, &noise, &w).unwrap();
    let fd_m = numeric_gradient(|m| f(m, lv.data()), mean.data());
    let fd_l = numeric_gradient(|l| f(mean.data(), l), lv.data());
    worst_relative_error(gm.data(), &fd_m).max(worst_relative_error(glv.data(), &fd_l))
}

fn gaussian_instance(rng: &mut Rng) -> f64 {
    let (r, c) = (rng.gen_range(1..=4), rng.gen_range(1..=5));
    let z = random_matrix(r, c, -2.0, 2.0, rng);
    let mean = random_matrix(r, c, -2.0, 2.0, rng);
    let lv = random_matrix(r, c, -1.5, 1.5, rng);
    let w: Vec<f64> = (0..r).map(|_| rng.gen_range(0.1..2.0)).collect();
    let f = |z: &[f64], m: &[f64], l: &[f64]| {
        let mk = |v: &[f64]| Matrix::from_vec(r, c, v.to_vec()).unwrap();
        gaussian_logpdf(&mk(z), &mk(m), &mk(l))
            .unwrap()
            .iter()
            .zip(&w)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let g = gaussian_logpdf_backward(&z, &mean, &lv, &w).unwrap();
    let fz = numeric_gradient(|v| f(v, mean.data(), lv.data()), z.data());
    let fm = numeric_gradient(|v| f(z.data(), v, lv.data()), mean.data());
    let fl = numeric_gradient(|v| f(z.data(), mean.data(), v), lv.data());
    worst_relative_error(g.z.data(), &fz)
        .max(worst_relative_error(g.mean.data(), &fm))
        .max(worst_relative_error(g.log_variance.data(), &fl))
}

fn bernoulli_instance(rng: &mut Rng) -> f64 {
    let d = rng.gen_range(1..=8);
    let bits: Vec<f64> = (0..d).map(|_| rng.gen_range(0..2) as f64).collect();
    let probs: Vec<f64> = (0..d).map(|_| rng.gen_range(0.05..0.95)).collect();
    let analytic = bernoulli_logpmf_grad(&bits, &probs);
    let fd = numeric_gradient(|p| bernoulli_logpmf(&bits, p).unwrap(), &probs);
    worst_relative_error(&analytic, &fd)
}

fn elbo_instance(rng: &mut Rng) -> f64 {
    let d = rng.gen_range(2..=6);
    let cfg = ModelConfig {
        latent_dim: rng.gen_range(1..=4),
        encoder_hidden: vec![rng.gen_range(2..=6)],
        decoder_hidden: vec![rng.gen_range(2..=6)],
        activation: Activation::Tanh,
    };
    let model = GenerativeModel::new(d, &cfg, rng.gen()).unwrap();
    let n = rng.gen_range(1..=4);
    let attrs: Vec<AttributeVector> = (0..n).map(|_| random_bits(d, rng)).collect();
    let noise = random_matrix(n, cfg.latent_dim, -1.5, 1.5, rng);
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let out = model
        .elbo_with_noise(&attrs, &noise, Some(&weights))
        .unwrap();
    let enc_fd = numeric_gradient(
        |p| {
            let mut probe = model.clone();
            probe.set_encoder_params(p).unwrap();
            probe
                .elbo_with_noise(&attrs, &noise, Some(&weights))
                .unwrap()
                .value
        },
        &model.encoder_params(),
    );
    let dec_fd = numeric_gradient(
        |p| {
            let mut probe = model.clone();
            probe.set_decoder_params(p).unwrap();
            probe
                .elbo_with_noise(&attrs, &noise, Some(&weights))
                .unwrap()
                .value
        },
        &model.decoder_params(),
    );
    worst_relative_error(&out.encoder_grad, &enc_fd)
        .max(worst_relative_error(&out.decoder_grad, &dec_fd))
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = rng::seeded(2001);
    let mut worst = [0.0f64; 5];
    for i in 0..100 {
        let kind = i % 5;
        let err = match kind {
            0 => dense_instance(&mut rng),
            1 => reparam_instance(&mut rng),
            2 => gaussian_instance(&mut rng),
            3 => bernoulli_instance(&mut rng),
            _ => elbo_instance(&mut rng),
        };
        worst[kind] = worst[kind].max(err);
        check!(
            err < 1e-4,
            "instance {i} (kind {kind}) relative error {err:.3e}"
        );
    }
    let secs = start.elapsed().as_secs_f64();
    check!(secs < 30.0, "took {secs:.1}s");
    Ok(format!(
        "100 instances, worst relative error dense {:.1e} reparam {:.1e} gaussian {:.1e} bernoulli {:.1e} elbo {:.1e}",
        worst[0], worst[1], worst[2], worst[3], worst[4]
    ))
}

// ---------------------------------------------------------------------------
// 2. REINFORCE unbiasedness and baseline identity

fn two_bit_landscape() -> SyntheticLandscape {
    let mut l = SyntheticLandscape::flat(2);
    l.offset = 0.2;
    l.linear = vec![0.9, -0.6];
    l.pairwise = vec![PairwiseTerm {
        i: 0,
        j: 1,
        weight: 1.3,
    }];
    l
}

fn two_bit_model(seed: u64) -> GenerativeModel {
    let cfg = ModelConfig {
        latent_dim: 2,
        encoder_hidden: vec![4],
        decoder_hidden: vec![2],
        activation: Activation::Tanh,
    };
    GenerativeModel::new(2, &cfg, seed).unwrap()
}

/// `Σ_a p(a|z)·(r(z, a) − C)·∇θ log p(a|z)` over the four outcomes.
fn enumerated_gradient(
    model: &GenerativeModel,
    z: &[f64],
    est: &dyn BiasEstimator,
    c: f64,
) -> Vec<f64> {
    let mut total = vec![0.0; model.decoder_params().len()];
    for idx in 0..4 {
        let a = AttributeVector::from_index(idx, 2);
        let (logp, grad) = model.log_likelihood_grad(z, &a).unwrap();
        let r = model.reward(z, &a, est).unwrap();
        for (t, g) in total.iter_mut().zip(grad) {
            *t += logp.exp() * (r - c) * g;
        }
    }
    total
}

fn per_sample_gradients(
    model: &GenerativeModel,
    z: &Matrix,
    attrs: &[AttributeVector],
    rewards: &[f64],
    baselines: &[f64],
) -> Vec<Vec<f64>> {
    (0..attrs.len())
        .map(|i| {
            let (_, g) = model.log_likelihood_grad(z.row(i), &attrs[i]).unwrap();
            g.into_iter()
                .map(|v| (rewards[i] - baselines[i]) * v)
                .collect()
        })
        .collect()
}

fn total_variance(samples: &[Vec<f64>]) -> f64 {
    let n = samples.len() as f64;
    let dim = samples[0].len();
    (0..dim)
        .map(|j| {
            let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n;
            samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)
        })
        .sum()
}

fn criterion_reinforce() -> Outcome {
    let start = Instant::now();
    let est = two_bit_landscape();
    let model = two_bit_model(3);
    let z = [0.4, -0.7];

    // (a) baselines leave the enumerated expectation unchanged
    let reference = enumerated_gradient(&model, &z, &est, 0.0);
    let mut worst_shift = 0.0f64;
    for c in [1.0, -3.0] {
        let g = enumerated_gradient(&model, &z, &est, c);
        for (a, b) in g.iter().zip(&reference) {
            worst_shift = worst_shift.max((a - b).abs());
        }
    }
    check!(
        worst_shift <= 1e-10,
        "(a) baseline shifts the expected gradient by {worst_shift:.3e}"
    );

    // (b) Monte Carlo mean within 3 standard errors
    let n = 100_000;
    let mut rng = rng::seeded(77);
    let zs = Matrix::from_vec(n, 2, z.iter().copied().cycle().take(2 * n).collect()).unwrap();
    let attrs = model.sample_given(&zs, &mut rng).unwrap();
    let rewards = model.rewards(&zs, &attrs, &est).unwrap();
    let samples = per_sample_gradients(&model, &zs, &attrs, &rewards, &vec![0.0; n]);
    let mut worst_z = 0.0f64;
    for (j, &target) in reference.iter().enumerate() {
        let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        let zscore = if se > 0.0 {
            (mean - target).abs() / se
        } else {
            (mean - target).abs() / 1e-12
        };
        worst_z = worst_z.max(zscore);
    }
    check!(
        worst_z <= 3.0,
        "(b) Monte Carlo mean is {worst_z:.2} standard errors from the enumerated gradient"
    );

    // (c) independent-copy baseline variance vs none
    let mut wins = 0;
    let mut ratios = Vec::new();
    for seed in 0..5u64 {
        let m = two_bit_model(100 + seed);
        let mut rng = rng::seeded(500 + seed);
        let n = 20_000;
        let zs = m.sample_prior(n, &mut rng);
        let attrs = m.sample_given(&zs, &mut rng).unwrap();
        let rewards = m.rewards(&zs, &attrs, &est).unwrap();
        let copy =
            estimate_baseline(&m, &rewards, &est, BaselineMode::IndependentCopy, &mut rng).unwrap();
        let with = total_variance(&per_sample_gradients(&m, &zs, &attrs, &rewards, &copy));
        let without = total_variance(&per_sample_gradients(
            &m,
            &zs,
            &attrs,
            &rewards,
            &vec![0.0; n],
        ));
        if with <= without {
            wins += 1;
        }
        ratios.push(with / without);
    }
    check!(
        wins >= 4,
        "(c) independent copy reduced variance in {wins}/5 seeds (ratios {ratios:.3?})"
    );
    let secs = start.elapsed().as_secs_f64();
    check!(secs < 120.0, "took {secs:.1}s");
    Ok(format!(
        "baseline shift {worst_shift:.1e}, MC deviation {worst_z:.2} SE, variance reduced in {wins}/5 seeds (ratios {ratios:.3?})"
    ))
}

// ---------------------------------------------------------------------------
// 3. metric oracle equivalence

struct OracleMetrics {
    number: usize,
    ratio: f64,
    precision: f64,
    recall: f64,
    dcg: f64,
    rr: f64,
}

/// Direct transcription of the metric definitions over `(index, score)` lists.
fn oracle_metrics(gen: &[(u64, f64)], reference: &[(u64, f64)], tau: f64) -> OracleMetrics {
    let bias_of = |i: u64| reference.iter().find(|r| r.0 == i).map(|r| r.1);
    let is_high = |i: u64| bias_of(i).is_some_and(|b| b >= tau);
    let n_gt_high = reference.iter().filter(|r| r.1 >= tau).count();
    // stable insertion sort: descending score, ascending encoding
    let sort = |mut v: Vec<(u64, f64)>| {
        for i in 1..v.len() {
            let mut j = i;
            while j > 0 && (v[j].1 > v[j - 1].1 || (v[j].1 == v[j - 1].1 && v[j].0 < v[j - 1].0)) {
                v.swap(j, j - 1);
                j -= 1;
            }
        }
        v
    };
    let scored: Vec<(u64, f64)> = gen
        .iter()
        .map(|&(i, p)| (i, bias_of(i).unwrap_or(p)))
        .collect();
    let ranked = sort(scored.clone());
    let number = gen.iter().filter(|g| is_high(g.0)).count();
    let k_prec =
        ((gen.len() as f64 * n_gt_high as f64 / reference.len() as f64).round() as usize).max(1);
    let precision =
        ranked.iter().take(k_prec).filter(|g| is_high(g.0)).count() as f64 / k_prec as f64;
    let hits: BTreeSet<u64> = ranked
        .iter()
        .take(n_gt_high)
        .filter(|g| is_high(g.0))
        .map(|g| g.0)
        .collect();
    let recall = hits.len() as f64 / n_gt_high as f64;
    let mut seen = BTreeSet::new();
    let distinct = sort(scored.into_iter().filter(|s| seen.insert(s.0)).collect());
    let k_dcg = distinct.len().min(20);
    let mut dcg = 0.0;
    for (i, s) in distinct.iter().take(k_dcg).enumerate() {
        dcg += s.1 / ((i + 1) as f64 + 2.0).ln();
    }
    let truth = sort(reference.iter().filter(|r| r.1 >= tau).copied().collect());
    let k_rr = ((0.05 * n_gt_high as f64).round() as usize).max(1);
    let mut rr = 0.0;
    for (i, t) in truth.iter().take(k_rr).enumerate() {
        if let Some(j) = distinct.iter().position(|s| s.0 == t.0) {
            rr += (-(i as f64 - j as f64).abs()).exp();
        }
    }
    OracleMetrics {
        number,
        ratio: number as f64 / gen.len() as f64,
        precision,
        recall,
        dcg: dcg / k_dcg as f64,
        rr: rr / k_rr as f64,
    }
}

fn to_set(gen: &[(u64, f64)], d: usize) -> GeneratedSet {
    GeneratedSet {
        metadata: GenerationMetadata {
            model_hash: String::new(),
            seed: 0,
            requested: gen.len(),
            tau: None,
            count: gen.len(),
        },
        items: gen
            .iter()
            .map(|&(i, p)| GeneratedItem {
                attribute: AttributeVector::from_index(i, d),
                predicted_bias: p,
                true_bias: None,
            })
            .collect(),
    }
}

fn to_table(entries: &[(u64, f64)], d: usize) -> GroupBiasTable {
    let mut t = GroupBiasTable::new(d).unwrap();
    for &(i, b) in entries {
        t.insert(AttributeVector::from_index(i, d), b, 1).unwrap();
    }
    t
}

fn criterion_metrics() -> Outcome {
    let start = Instant::now();
    let mut rng = rng::seeded(3003);
    for f in 0..100 {
        let d = rng.gen_range(2..=8);
        let space = 1u64 << d;
        let n_ref = rng.gen_range(1..=(space as usize).min(200));
        let mut keys: Vec<u64> = (0..space).collect();
        rand::seq::SliceRandom::shuffle(keys.as_mut_slice(), &mut rng);
        let reference: Vec<(u64, f64)> = keys[..n_ref]
            .iter()
            .map(|&i| (i, rng.gen_range(0..25) as f64 / 10.0))
            .collect();
        let gen: Vec<(u64, f64)> = (0..rng.gen_range(1..=120))
            .map(|_| (rng.gen_range(0..space), rng.gen_range(0..25) as f64 / 10.0))
            .collect();
        let top = reference.iter().map(|r| r.1).fold(0.0, f64::max);
        let tau = (rng.gen_range(0.0..=1.0) * top * 10.0).floor() / 10.0;
        let want = oracle_metrics(&gen, &reference, tau);
        let got = evaluate(
            &to_set(&gen, d),
            &to_table(&reference, d),
            tau,
            &MetricConfig::default(),
        )
        .map_err(|e| format!("fixture {f}: {e}"))?;
        let close = |a: Option<f64>, b: f64| a.is_some_and(|a| (a - b).abs() <= 1e-9);
        check!(
            got.bias_number == Some(want.number),
            "fixture {f}: bias number {:?} vs {}",
            got.bias_number,
            want.number
        );
        check!(close(got.bias_ratio, want.ratio), "fixture {f}: bias ratio");
        check!(
            close(got.precision_at_k, want.precision),
            "fixture {f}: precision {:?} vs {}",
            got.precision_at_k,
            want.precision
        );
        check!(
            close(got.recall_at_k, want.recall),
            "fixture {f}: recall {:?} vs {}",
            got.recall_at_k,
            want.recall
        );
        check!(
            close(got.avg_dcg_at_k, want.dcg),
            "fixture {f}: dcg {:?} vs {}",
            got.avg_dcg_at_k,
            want.dcg
        );
        check!(
            close(got.rr_at_k_score, want.rr),
            "fixture {f}: rr {:?} vs {}",
            got.rr_at_k_score,
            want.rr
        );
    }
    // Toxic observation row: 3442 groups, 564 at or above 0.3
    let d = 12;
    let reference: Vec<(u64, f64)> = (0..3442u64)
        .map(|i| (i, if i < 564 { 0.45 } else { 0.12 }))
        .collect();
    let gen: Vec<(u64, f64)> = reference.iter().map(|&(i, _)| (i, 0.0)).collect();
    let r = evaluate(
        &to_set(&gen, d),
        &to_table(&reference, d),
        0.3,
        &MetricConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let ratio = format!("{:.4}", r.bias_ratio.unwrap());
    check!(
        r.bias_number == Some(564) && ratio == "0.1639",
        "Toxic row gave {:?} / {ratio}",
        r.bias_number
    );
    let secs = start.elapsed().as_secs_f64();
    check!(secs < 60.0, "took {secs:.1}s");
    Ok(format!(
        "100 random fixtures agree with the oracle; Toxic row 564/3442 = {ratio}"
    ))
}

// ---------------------------------------------------------------------------
// 4 and 5. bias-guided efficiency and holdout diversity on the d = 10 landscape

struct PlantedRun {
    bggn_ratio: f64,
    vanilla_ratio: f64,
    bggn_mean_bias: f64,
    dataset_mean_bias: f64,
    bggn_holdout_distinct: usize,
    tree_holdout_distinct: usize,
    secs: f64,
}

fn planted_run(seed: u64) -> PlantedRun {
    let start = Instant::now();
    let landscape = SyntheticLandscape::planted(10, 3, 2024);
    let full = landscape.sample_dataset(1024, 4).unwrap();
    let split = split_by_group(&full, 0.3, seed).unwrap();
    let observation = &split.observation;
    let tau = observation.bias_quantile(0.9).unwrap();
    let predictor = BiasPredictor::train(
        observation,
        &PredictorConfig {
            seed,
            ..Default::default()
        },
    )
    .unwrap();
    let mut model = GenerativeModel::new(10, &ModelConfig::default(), seed).unwrap();
    pretrain(
        &mut model,
        observation,
        &PretrainConfig {
            seed,
            ..Default::default()
        },
    )
    .unwrap();
    let draw_seed = rng::derive_seed(seed, "acceptance-draws");
    let vanilla = generate(&model, 1000, &predictor, None, None, draw_seed).unwrap();
    finetune(
        &mut model,
        &predictor,
        observation,
        &FineTuneConfig {
            seed,
            ..Default::default()
        },
    )
    .unwrap();
    let bggn = generate(&model, 1000, &predictor, None, None, draw_seed).unwrap();

    let high_ratio = |s: &GeneratedSet| {
        s.items
            .iter()
            .filter(|i| full.bias(&i.attribute).is_some_and(|b| b >= tau))
            .count() as f64
            / s.len() as f64
    };
    let bggn_mean_bias = bggn
        .items
        .iter()
        .map(|i| landscape.bias(&i.attribute).unwrap())
        .sum::<f64>()
        / bggn.len() as f64;
    let total: u64 = full.iter().map(|(_, s)| s.count).sum();
    let dataset_mean_bias = full
        .iter()
        .map(|(_, s)| s.bias * s.count as f64)
        .sum::<f64>()
        / total as f64;
    let holdout_high = |a: &AttributeVector| split.holdout.bias(a).is_some_and(|b| b >= tau);
    let bggn_holdout_distinct = bggn
        .attributes()
        .filter(|a| holdout_high(a))
        .collect::<BTreeSet<_>>()
        .len();
    let tree = fit_tree(observation, &TreeConfig::default()).unwrap();
    let found = search_tree(&tree, tau);
    let tree_holdout_distinct = found.discovered.keys().filter(|a| holdout_high(a)).count();
    PlantedRun {
        bggn_ratio: high_ratio(&bggn),
        vanilla_ratio: high_ratio(&vanilla),
        bggn_mean_bias,
        dataset_mean_bias,
        bggn_holdout_distinct,
        tree_holdout_distinct,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn criterion_efficiency(runs: &[PlantedRun]) -> Outcome {
    let mut good = 0;
    let mut parts = Vec::new();
    for (s, r) in runs.iter().enumerate() {
        let ok = r.bggn_ratio >= 2.0 * r.vanilla_ratio && r.bggn_mean_bias > r.dataset_mean_bias;
        good += usize::from(ok);
        parts.push(format!(
            "seed {s}: ratio {:.3} vs {:.3}, mean bias {:.2} vs {:.2}",
            r.bggn_ratio, r.vanilla_ratio, r.bggn_mean_bias, r.dataset_mean_bias
        ));
        check!(r.secs < 300.0, "seed {s} took {:.1}s", r.secs);
    }
    check!(good >= 2, "held in {good}/3 seeds; {}", parts.join("; "));
    Ok(format!("held in {good}/3 seeds; {}", parts.join("; ")))
}

fn criterion_holdout(runs: &[PlantedRun]) -> Outcome {
    let good = runs
        .iter()
        .filter(|r| r.bggn_holdout_distinct > r.tree_holdout_distinct)
        .count();
    let parts: Vec<String> = runs
        .iter()
        .enumerate()
        .map(|(s, r)| {
            format!(
                "seed {s}: {} vs {}",
                r.bggn_holdout_distinct, r.tree_holdout_distinct
            )
        })
        .collect();
    check!(good >= 2, "held in {good}/3 seeds; {}", parts.join("; "));
    Ok(format!(
        "BGGN vs Search Tree distinct holdout high-bias attributes, {}",
        parts.join("; ")
    ))
}

// ---------------------------------------------------------------------------
// 6. relaxation monotonicity

fn criterion_relaxation() -> Outcome {
    let start = Instant::now();
    let d = 8;
    let landscape = SyntheticLandscape::planted(d, 2, 606);
    let table = landscape.sample_dataset(240, 4).unwrap();
    let predictor = BiasPredictor::train(
        &table,
        &PredictorConfig {
            epochs: 150,
            seed: 6,
            ..Default::default()
        },
    )
    .unwrap();
    let tree = fit_tree(
        &table,
        &TreeConfig {
            min_samples_leaf: 1,
            max_depth: None,
        },
    )
    .unwrap();
    let mut sizes = Vec::new();
    for q in [0.5, 0.8, 0.95] {
        let tau = table.bias_quantile(q).unwrap();
        let mut previous: Option<BTreeSet<AttributeVector>> = None;
        let mut row = Vec::new();
        for n_re in 0..=3 {
            let found: BTreeSet<AttributeVector> =
                relaxed_search(&tree, tau, n_re, SearchEstimator::Predictor(&predictor))
                    .map_err(|e| e.to_string())?
                    .discovered
                    .into_keys()
                    .collect();
            if let Some(prev) = &previous {
                check!(
                    prev.is_subset(&found),
                    "q {q}: N_re {n_re} drops attributes found at N_re {}",
                    n_re - 1
                );
            }
            row.push(found.len());
            previous = Some(found);
        }
        sizes.push(row);
    }

    // a single-leaf tree at N_re = d is predictor-filtered enumeration
    let trivial = RegressionTree {
        dimension: d,
        nodes: vec![Node::Leaf {
            prediction: 0.0,
            groups: table.len(),
            weight: 0,
        }],
        config: TreeConfig::default(),
    };
    let tau = table.bias_quantile(0.8).unwrap();
    let relaxed: BTreeSet<AttributeVector> =
        relaxed_search(&trivial, tau, d, SearchEstimator::Predictor(&predictor))
            .map_err(|e| e.to_string())?
            .discovered
            .into_keys()
            .collect();
    let mut expected = BTreeSet::new();
    for a in enumerate_space(&AttributeSpace::new(d).unwrap()).unwrap() {
        if predictor.predict(&a).unwrap() >= tau {
            expected.insert(a);
        }
    }
    check!(
        relaxed == expected,
        "trivial tree found {} vectors, enumeration {}",
        relaxed.len(),
        expected.len()
    );
    let secs = start.elapsed().as_secs_f64();
    check!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("discovered counts for N_re 0..3 at three thresholds {sizes:?}; trivial tree = enumeration ({})", expected.len()))
}

// ---------------------------------------------------------------------------
// 7. distribution alignment on d = 6

fn criterion_alignment() -> Outcome {
    let start = Instant::now();
    let d = 6;
    let mut good = 0;
    let mut parts = Vec::new();
    for seed in 0..3u64 {
        let landscape = SyntheticLandscape::planted(d, 2, 700 + seed);
        let table = landscape.exhaustive_table().unwrap();
        let target: Vec<f64> = (0..1u64 << d)
            .map(|i| {
                landscape
                    .bias(&AttributeVector::from_index(i, d))
                    .unwrap()
                    .exp()
            })
            .collect();
        let predictor = BiasPredictor::train(
            &table,
            &PredictorConfig {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let mut model = GenerativeModel::new(d, &ModelConfig::default(), seed).unwrap();
        pretrain(
            &mut model,
            &table,
            &PretrainConfig {
                epochs: 60,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let mut rng = rng::seeded(rng::derive_seed(seed, "marginal"));
        let vanilla = spearman(
            &marginal_over_space(&model, 10_000, &mut rng).unwrap(),
            &target,
        );
        finetune(
            &mut model,
            &predictor,
            &table,
            &FineTuneConfig {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let bggn = spearman(
            &marginal_over_space(&model, 10_000, &mut rng).unwrap(),
            &target,
        );
        if bggn > 0.0 && bggn > vanilla {
            good += 1;
        }
        parts.push(format!("seed {seed}: {bggn:.3} vs {vanilla:.3}"));
    }
    check!(good >= 2, "held in {good}/3 seeds; {}", parts.join("; "));
    let secs = start.elapsed().as_secs_f64();
    check!(secs < 180.0, "took {secs:.1}s");
    Ok(format!("Spearman BGGN vs vanilla, {}", parts.join("; ")))
}

// ---------------------------------------------------------------------------
// 8. end-to-end reproducibility

fn run_cli(config: &Path, out: &Path) -> Result<Duration, String> {
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_bggn"))
        .args(["run", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!(
            "run failed: {}",
            String::from_utf8_lossy(&status.stderr)
        ));
    }
    Ok(start.elapsed())
}

fn criterion_reproducibility() -> Outcome {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.json");
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_cli(&config, a.path())?;
    let second = run_cli(&config, b.path())?;
    let read = |p: &Path| std::fs::read(p.join("reports/metrics.json")).map_err(|e| e.to_string());
    let (x, y) = (read(a.path())?, read(b.path())?);
    check!(
        x == y,
        "metric reports differ ({} vs {} bytes)",
        x.len(),
        y.len()
    );
    let slowest = first.max(second).as_secs_f64();
    check!(slowest < 600.0, "demo pipeline took {slowest:.1}s");
    Ok(format!(
        "demo run twice, {} identical bytes; slowest run {slowest:.1}s",
        x.len()
    ))
}

// ---------------------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() {
    let start = Instant::now();
    let outcomes: Vec<(&str, Outcome)> = std::thread::scope(|s| {
        let planted = s.spawn(|| {
            let runs: Vec<_> = (0..3u64)
                .map(|seed| s.spawn(move || planted_run(seed)))
                .collect();
            runs.into_iter()
                .map(|h| h.join())
                .collect::<Result<Vec<_>, _>>()
        });
        let g = s.spawn(|| guarded(criterion_gradients));
        let r = s.spawn(|| guarded(criterion_reinforce));
        let m = s.spawn(|| guarded(criterion_metrics));
        let x = s.spawn(|| guarded(criterion_relaxation));
        let al = s.spawn(|| guarded(criterion_alignment));
        let e2e = s.spawn(|| guarded(criterion_reproducibility));
        let planted = planted.join().expect("planted runs");
        let (eff, hold) = match planted {
            Ok(runs) => (
                guarded(|| criterion_efficiency(&runs)),
                guarded(|| criterion_holdout(&runs)),
            ),
            Err(_) => (
                Err("planted run panicked".into()),
                Err("planted run panicked".into()),
            ),
        };
        let join = |h: std::thread::ScopedJoinHandle<'_, Outcome>| {
            h.join().unwrap_or_else(|_| Err("thread panicked".into()))
        };
        vec![
            ("1 gradient correctness", join(g)),
            ("2 REINFORCE unbiasedness and baseline identity", join(r)),
            ("3 metric oracle equivalence", join(m)),
            ("4 bias-guided efficiency", eff),
            ("5 holdout diversity", hold),
            ("6 relaxation monotonicity", join(x)),
            ("7 distribution alignment", join(al)),
            ("8 end-to-end reproducibility", join(e2e)),
        ]
    });
    let mut failed = 0;
    for (name, outcome) in &outcomes {
        match outcome {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        outcomes.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
