use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mat::{gemm, Mat, Op};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the pre-activation.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out x in`
    pub weight: Mat,
    /// `out x 1`
    pub bias: Mat,
    pub activation: Activation,
}

impl Dense {
    pub fn input_size(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_size(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

/// Values saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Mat>,
    pre_activations: Vec<Mat>,
}

impl MlpParams {
    /// Layer widths `sizes[0] -> sizes[1] -> ... -> sizes[last]`, with `hidden`
    /// activation on every layer except the last, which is linear.
    ///
    /// Weights and biases are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(sizes: &[usize], hidden: Activation, rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Precondition(format!(
                "an MLP needs at least two positive layer sizes, got {sizes:?}"
            )));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(idx, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = Mat::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..=bound));
                let bias = Mat::from_fn(fan_out, 1, |_, _| rng.random_range(-bound..=bound));
                let activation = if idx + 2 == sizes.len() {
                    Activation::Linear
                } else {
                    hidden
                };
                Dense {
                    weight,
                    bias,
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].output_size()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Precondition("MLP without layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.shape() != (l.output_size(), 1) {
                return Err(Error::shape("MlpParams", format!("layer {i} bias shape")));
            }
            if i > 0 && self.layers[i - 1].output_size() != l.input_size() {
                return Err(Error::shape(
                    "MlpParams",
                    format!("layer {} output does not feed layer {i}", i - 1),
                ));
            }
        }
        if self.layers[self.layers.len() - 1].activation != Activation::Linear {
            return Err(Error::Precondition("MLP output layer must be linear".into()));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Mat::zeros(l.weight.rows(), l.weight.cols()),
                    bias: Mat::zeros(l.bias.rows(), 1),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    /// Batched forward pass; each column of `x` is one sample.
    pub fn forward_batch(&self, x: &Mat) -> Result<(Mat, MlpCache)> {
        if x.rows() != self.input_size() {
            return Err(Error::shape(
                "mlp_forward",
                format!("input has {} rows, network expects {}", x.rows(), self.input_size()),
            ));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let mut z = Mat::zeros(layer.output_size(), a.cols());
            gemm(1.0, &layer.weight, Op::N, &a, Op::N, 0.0, &mut z)?;
            z.add_col_broadcast(&layer.bias)?;
            let next = match layer.activation {
                Activation::Linear => z.clone(),
                act => z.map(|v| act.apply(v)),
            };
            inputs.push(a);
            pre_activations.push(z);
            a = next;
        }
        Ok((
            a,
            MlpCache {
                inputs,
                pre_activations,
            },
        ))
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let (out, cache) = self.forward_batch(&Mat::col_vector(x))?;
        Ok((out.into_vec(), cache))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input.
    pub fn backward_batch(&self, cache: &MlpCache, d_out: &Mat, grads: &mut MlpParams) -> Result<Mat> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::shape("mlp_backward", "cache does not match network depth"));
        }
        let batch = cache.inputs[0].cols();
        if d_out.shape() != (self.output_size(), batch) {
            return Err(Error::shape(
                "mlp_backward",
                format!("upstream gradient {:?}, expected {:?}", d_out.shape(), (self.output_size(), batch)),
            ));
        }
        let mut delta = d_out.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation != Activation::Linear {
                let z = &cache.pre_activations[idx];
                for (d, &zv) in delta.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *d *= layer.activation.derivative(zv);
                }
            }
            let g = &mut grads.layers[idx];
            gemm(1.0, &delta, Op::N, &cache.inputs[idx], Op::T, 1.0, &mut g.weight)?;
            delta.add_row_sums_into(&mut g.bias)?;
            let mut below = Mat::zeros(layer.input_size(), batch);
            gemm(1.0, &layer.weight, Op::T, &delta, Op::N, 0.0, &mut below)?;
            delta = below;
        }
        Ok(delta)
    }

    pub fn tensors(&self) -> Vec<&Mat> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn tensor_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("{prefix}.layer{i}.weight"), format!("{prefix}.layer{i}.bias")])
            .collect()
    }
}
