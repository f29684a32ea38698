use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
    Sigmoid,
    Softplus,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }

    /// d out / d pre, given both the pre-activation and its output.
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => out * (1.0 - out),
            Activation::Softplus => sigmoid(pre),
        }
    }
}

/// Fully connected layer: `act(x · W + b)` with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn input_size(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_size(&self) -> usize {
        self.weights.cols()
    }
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Multi-layer perceptron over row-batched inputs.
///
/// Serialized as layer sizes, per-layer activations and one flat parameter
/// array (each layer's weights row-major, then its bias).
#[derive(Debug, Serialize, Deserialize)]
#[serde(into = "MlpCheckpoint", try_from = "MlpCheckpoint")]
pub struct Mlp {
    layers: Vec<Dense>,
    version: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpCheckpoint {
    pub sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub params: Vec<f64>,
}

impl From<Mlp> for MlpCheckpoint {
    fn from(mlp: Mlp) -> Self {
        Self {
            sizes: mlp.sizes(),
            activations: mlp.activations(),
            params: mlp.params(),
        }
    }
}

impl TryFrom<MlpCheckpoint> for Mlp {
    type Error = Error;

    fn try_from(ckpt: MlpCheckpoint) -> Result<Self> {
        if ckpt.sizes.len() < 2 || ckpt.activations.len() != ckpt.sizes.len() - 1 {
            return Err(Error::invalid("checkpoint sizes and activations disagree"));
        }
        let layers = ckpt
            .sizes
            .windows(2)
            .zip(&ckpt.activations)
            .map(|(w, &activation)| Dense {
                weights: Matrix::zeros(w[0], w[1]),
                bias: vec![0.0; w[1]],
                activation,
            })
            .collect();
        let mut mlp = Mlp::from_layers(layers)?;
        mlp.set_params(&ckpt.params)?;
        Ok(mlp)
    }
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            version: self.version,
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations recorded by [`Mlp::forward`], consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    outputs: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.outputs.last().expect("non-empty network")
    }
}

/// Gradients for every layer, in the same flat order as [`Mlp::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<(Matrix, Vec<f64>)>,
}

impl MlpGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for (w, b) in &self.layers {
            flat.extend_from_slice(w.data());
            flat.extend_from_slice(b);
        }
        flat
    }
}

impl Mlp {
    /// Builds a network with Glorot-uniform weights and zero biases.
    ///
    /// `sizes` lists every layer width including input and output; there is
    /// one activation per weight layer.
    pub fn new(sizes: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::invalid(
                "an MLP needs at least an input and an output size",
            ));
        }
        if activations.len() != sizes.len() - 1 {
            return Err(Error::DimensionMismatch {
                expected: sizes.len() - 1,
                found: activations.len(),
            });
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect();
                Dense {
                    weights: Matrix::from_vec(fan_in, fan_out, data).expect("sized"),
                    bias: vec![0.0; fan_out],
                    activation,
                }
            })
            .collect();
        Ok(Self {
            layers,
            version: fresh_version(),
        })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("layer list"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_size() != pair[1].input_size() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].output_size(),
                    found: pair[1].input_size(),
                });
            }
        }
        for layer in &layers {
            if layer.bias.len() != layer.output_size() {
                return Err(Error::DimensionMismatch {
                    expected: layer.output_size(),
                    found: layer.bias.len(),
                });
            }
        }
        Ok(Self {
            layers,
            version: fresh_version(),
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].output_size()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_size()];
        sizes.extend(self.layers.iter().map(Dense::output_size));
        sizes
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            flat.extend_from_slice(l.weights.data());
            flat.extend_from_slice(&l.bias);
        }
        flat
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                found: flat.len(),
            });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("MLP parameters"));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.data().len();
            l.weights
                .data_mut()
                .copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        self.version = fresh_version();
        Ok(())
    }

    /// Mutable access to the layers; invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.version = fresh_version();
        &mut self.layers
    }

    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if input.cols() != self.input_size() {
            return Err(Error::DimensionMismatch {
                expected: self.input_size(),
                found: input.cols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let mut z = x.matmul(&layer.weights)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let a = z.map(|v| layer.activation.apply(v));
            inputs.push(x);
            pre.push(z);
            x = a.clone();
            outputs.push(a);
        }
        if !x.is_finite() {
            return Err(Error::non_finite("MLP forward output"));
        }
        Ok((
            x,
            ForwardCache {
                version: self.version,
                inputs,
                pre,
                outputs,
            },
        ))
    }

    /// Output only, without keeping a cache.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        self.forward(input).map(|(out, _)| out)
    }

    /// Reverse-mode pass: returns parameter gradients and the gradient with
    /// respect to the network input, given d loss / d output.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: &Matrix,
    ) -> Result<(MlpGrads, Matrix)> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        cache.output().check_same_shape(output_grad)?;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_grad.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[idx];
            let out = &cache.outputs[idx];
            let mut delta = upstream;
            for ((d, &p), &o) in delta.data_mut().iter_mut().zip(pre.data()).zip(out.data()) {
                *d *= layer.activation.derivative(p, o);
            }
            let w_grad = cache.inputs[idx].t_matmul(&delta)?;
            let b_grad = delta.column_sums();
            upstream = delta.matmul_t(&layer.weights)?;
            grads.push((w_grad, b_grad));
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, upstream))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_difference, relative_error};
    use crate::rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Dense {
            weights: Matrix::identity(3),
            bias: vec![0.0; 3],
            activation: Activation::Identity,
        };
        let mlp = Mlp::from_layers(vec![layer]).unwrap();
        let x = Matrix::from_rows(&[vec![0.5, -2.0, 3.0], vec![1.0, 0.0, -1.0]]).unwrap();
        assert_eq!(mlp.predict(&x).unwrap(), x);
    }

    #[test]
    fn zero_weights_sigmoid_head_gives_half() {
        let mut rng = rng::seeded(1);
        let mut mlp = Mlp::new(
            &[4, 5, 3],
            &[Activation::Tanh, Activation::Sigmoid],
            &mut rng,
        )
        .unwrap();
        let zeros = vec![0.0; mlp.num_params()];
        mlp.set_params(&zeros).unwrap();
        let out = mlp.predict(&random_matrix(6, 4, &mut rng)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_matches_independent_evaluator() {
        let mut rng = rng::seeded(2);
        let mlp = Mlp::new(
            &[3, 4, 2],
            &[Activation::Tanh, Activation::Softplus],
            &mut rng,
        )
        .unwrap();
        let x = random_matrix(5, 3, &mut rng);
        let out = mlp.predict(&x).unwrap();
        let [l0, l1] = [&mlp.layers()[0], &mlp.layers()[1]];
        for r in 0..5 {
            let hidden: Vec<f64> = (0..4)
                .map(|j| {
                    ((0..3).map(|i| x[(r, i)] * l0.weights[(i, j)]).sum::<f64>() + l0.bias[j])
                        .tanh()
                })
                .collect();
            for k in 0..2 {
                let s = (0..4).map(|j| hidden[j] * l1.weights[(j, k)]).sum::<f64>() + l1.bias[k];
                let expected = (1.0 + s.exp()).ln();
                assert!((out[(r, k)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut rng = rng::seeded(3);
        let mlp = Mlp::new(&[3, 2], &[Activation::Identity], &mut rng).unwrap();
        assert!(matches!(
            mlp.forward(&Matrix::zeros(1, 4)),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 4
            })
        ));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = rng::seeded(4);
        let mut mlp = Mlp::new(&[2, 2], &[Activation::Tanh], &mut rng).unwrap();
        let (out, cache) = mlp.forward(&Matrix::zeros(1, 2)).unwrap();
        let params = mlp.params();
        mlp.set_params(&params).unwrap();
        assert!(matches!(mlp.backward(&cache, &out), Err(Error::StaleCache)));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = rng::seeded(5);
        let mlp = Mlp::new(
            &[3, 4, 2],
            &[Activation::Relu, Activation::Sigmoid],
            &mut rng,
        )
        .unwrap();
        let (out, cache) = mlp.forward(&random_matrix(4, 3, &mut rng)).unwrap();
        let (grads, input_grad) = mlp
            .backward(&cache, &Matrix::zeros(out.rows(), out.cols()))
            .unwrap();
        assert!(grads.flatten().iter().all(|&g| g == 0.0));
        assert!(input_grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let mut rng = rng::seeded(6);
        let mlp = Mlp::new(&[3, 2], &[Activation::Identity], &mut rng).unwrap();
        let x = random_matrix(1, 3, &mut rng);
        let g = Matrix::from_rows(&[vec![0.7, -1.3]]).unwrap();
        let (_, cache) = mlp.forward(&x).unwrap();
        let (grads, _) = mlp.backward(&cache, &g).unwrap();
        let (w_grad, b_grad) = &grads.layers[0];
        for i in 0..3 {
            for j in 0..2 {
                assert!((w_grad[(i, j)] - x[(0, i)] * g[(0, j)]).abs() < 1e-15);
            }
        }
        assert_eq!(b_grad, &vec![0.7, -1.3]);
    }

    #[test]
    fn backward_matches_finite_differences_for_every_activation() {
        let acts = [
            Activation::Tanh,
            Activation::Relu,
            Activation::Identity,
            Activation::Sigmoid,
            Activation::Softplus,
        ];
        let mut rng = rng::seeded(7);
        for &hidden in &acts {
            for &head in &acts {
                let mlp = Mlp::new(&[3, 4, 2], &[hidden, head], &mut rng).unwrap();
                let x = random_matrix(3, 3, &mut rng);
                let weights = random_matrix(3, 2, &mut rng);
                let loss = |m: &Mlp, input: &Matrix| -> f64 {
                    let out = m.predict(input).unwrap();
                    out.data()
                        .iter()
                        .zip(weights.data())
                        .map(|(a, b)| a * b)
                        .sum()
                };
                let (_, cache) = mlp.forward(&x).unwrap();
                let (grads, input_grad) = mlp.backward(&cache, &weights).unwrap();
                let analytic = grads.flatten();
                let params = mlp.params();
                let numeric = central_difference(
                    |p| {
                        let mut m = mlp.clone();
                        m.set_params(p).unwrap();
                        loss(&m, &x)
                    },
                    &params,
                    1e-5,
                );
                for (a, n) in analytic.iter().zip(&numeric) {
                    assert!(
                        relative_error(*a, *n) < 1e-4,
                        "{hidden:?}/{head:?}: {a} vs {n}"
                    );
                }
                let numeric_x = central_difference(
                    |v| loss(&mlp, &Matrix::from_vec(3, 3, v.to_vec()).unwrap()),
                    x.data(),
                    1e-5,
                );
                for (a, n) in input_grad.data().iter().zip(&numeric_x) {
                    assert!(relative_error(*a, *n) < 1e-4, "input grad {a} vs {n}");
                }
            }
        }
    }

    #[test]
    fn checkpoint_json_round_trip() {
        let mut rng = rng::seeded(8);
        let mlp = Mlp::new(
            &[2, 3, 1],
            &[Activation::Tanh, Activation::Softplus],
            &mut rng,
        )
        .unwrap();
        let json = serde_json::to_string(&mlp).unwrap();
        let back: Mlp = serde_json::from_str(&json).unwrap();
        assert_eq!(back, mlp);
        assert_eq!(back.sizes(), vec![2, 3, 1]);
    }
}
