//! LSTM-enhanced deep Koopman model.
//!
//! The encoder lifts the current state concatenated with the final LSTM
//! hidden state computed over the history window,
//! `z_k = g(x_k, h_k)`. Latent dynamics are linear,
//! `z_{k+1} = A_K z_k + B_K u_k`, and a decoder maps latents back to states.

mod objective;
mod train;

pub use objective::{batch_loss, gradient_check, relative_error, BatchForward, GradCheck, LossTerms, LossWeights};
pub use train::{train, train_model, EpochStats, TrainConfig, TrainingLog};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::HistoryWindow;
use crate::error::{Error, Result};
use crate::nn::{gemm, Activation, LstmParams, Mat, MlpParams, Op};

/// Layer sizes of the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_states: usize,
    pub n_inputs: usize,
    pub lstm_hidden: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub latent: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            n_states: 2,
            n_inputs: 1,
            lstm_hidden: 8,
            encoder_hidden: vec![60, 60],
            decoder_hidden: vec![60, 60],
            latent: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepKoopmanModel {
    pub lstm: LstmParams,
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    /// `latent x latent`
    pub a_k: Mat,
    /// `latent x m`
    pub b_k: Mat,
    /// Bumped whenever parameters are handed out mutably; forward caches
    /// record it so stale caches can be detected.
    #[serde(skip)]
    version: u64,
}

impl DeepKoopmanModel {
    /// Random initialization: uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for all dense weights (including `A_K`, `B_K`), LSTM forget-gate bias 1.
    pub fn new(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lstm = LstmParams::new(arch.n_states + arch.n_inputs, arch.lstm_hidden, &mut rng)?;
        let mut enc_sizes = vec![arch.n_states + arch.lstm_hidden];
        enc_sizes.extend(&arch.encoder_hidden);
        enc_sizes.push(arch.latent);
        let encoder = MlpParams::new(&enc_sizes, Activation::Elu, &mut rng)?;
        let mut dec_sizes = vec![arch.latent];
        dec_sizes.extend(&arch.decoder_hidden);
        dec_sizes.push(arch.n_states);
        let decoder = MlpParams::new(&dec_sizes, Activation::Elu, &mut rng)?;
        let ba = 1.0 / (arch.latent as f64).sqrt();
        let a_k = Mat::from_fn(arch.latent, arch.latent, |_, _| rng.random_range(-ba..=ba));
        let bb = 1.0 / (arch.n_inputs as f64).sqrt();
        let b_k = Mat::from_fn(arch.latent, arch.n_inputs, |_, _| rng.random_range(-bb..=bb));
        let model = Self {
            lstm,
            encoder,
            decoder,
            a_k,
            b_k,
            version: 0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n_states(&self) -> usize {
        self.decoder.output_size()
    }

    pub fn n_inputs(&self) -> usize {
        self.b_k.cols()
    }

    pub fn latent_dim(&self) -> usize {
        self.a_k.rows()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn validate(&self) -> Result<()> {
        self.lstm.validate()?;
        self.encoder.validate()?;
        self.decoder.validate()?;
        let n = self.n_states();
        let lat = self.latent_dim();
        if self.encoder.input_size() != n + self.lstm.hidden_size {
            return Err(Error::shape(
                "DeepKoopmanModel",
                format!(
                    "encoder input {} != states {n} + LSTM hidden {}",
                    self.encoder.input_size(),
                    self.lstm.hidden_size
                ),
            ));
        }
        if self.lstm.input_size != n + self.n_inputs() {
            return Err(Error::shape("DeepKoopmanModel", "LSTM input must be states + inputs"));
        }
        if self.encoder.output_size() != lat || self.decoder.input_size() != lat || self.a_k.cols() != lat || self.b_k.rows() != lat {
            return Err(Error::shape("DeepKoopmanModel", "latent dimensions disagree"));
        }
        if self.tensors().iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            lstm: self.lstm.zeros_like(),
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
            a_k: Mat::zeros(self.a_k.rows(), self.a_k.cols()),
            b_k: Mat::zeros(self.b_k.rows(), self.b_k.cols()),
            version: 0,
        }
    }

    /// Parameter tensors in a fixed order: LSTM, encoder, decoder, `A_K`, `B_K`.
    pub fn tensors(&self) -> Vec<&Mat> {
        let mut v = self.lstm.tensors();
        v.extend(self.encoder.tensors());
        v.extend(self.decoder.tensors());
        v.push(&self.a_k);
        v.push(&self.b_k);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        self.version += 1;
        let mut v = self.lstm.tensors_mut();
        v.extend(self.encoder.tensors_mut());
        v.extend(self.decoder.tensors_mut());
        v.push(&mut self.a_k);
        v.push(&mut self.b_k);
        v
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut v = self.lstm.tensor_names("lstm");
        v.extend(self.encoder.tensor_names("encoder"));
        v.extend(self.decoder.tensor_names("decoder"));
        v.push("a_k".into());
        v.push("b_k".into());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.as_slice().len()).sum()
    }

    /// Batched lifting: `x` is `n x S`, `history[t]` is `(n+m) x S`.
    pub fn encode_batch(&self, x: &Mat, history: &[Mat]) -> Result<Mat> {
        if x.rows() != self.n_states() {
            return Err(Error::shape("encode", format!("state has {} rows", x.rows())));
        }
        let (h, _, _) = self.lstm.forward_batch(history)?;
        if h.cols() != x.cols() {
            return Err(Error::shape("encode", "history and state batch sizes differ"));
        }
        let (z, _) = self.encoder.forward_batch(&Mat::vstack(x, &h)?)?;
        Ok(z)
    }

    /// `z_k = g(x_k, h_k)` with `h_k` the final LSTM hidden state over `H`.
    pub fn encode(&self, x: &[f64], history: &HistoryWindow) -> Result<Vec<f64>> {
        let (h, _, _) = self.lstm.forward(&history.matrix)?;
        if x.len() != self.n_states() {
            return Err(Error::shape("encode", format!("state of length {}", x.len())));
        }
        let mut input = x.to_vec();
        input.extend(h);
        Ok(self.encoder.forward(&input)?.0)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::shape("decode", format!("latent of length {}", z.len())));
        }
        Ok(self.decoder.forward(z)?.0)
    }

    pub fn decode_batch(&self, z: &Mat) -> Result<Mat> {
        Ok(self.decoder.forward_batch(z)?.0)
    }

    /// `A_K z + B_K u`.
    pub fn latent_step(&self, z: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let mut next = self.a_k.matvec(z)?;
        for (a, b) in next.iter_mut().zip(self.b_k.matvec(u)?) {
            *a += b;
        }
        Ok(next)
    }

    /// Linear propagation from `z0` over the columns of `inputs`; returns
    /// `latent x N` with column `i` holding `z_{i+1}`.
    pub fn propagate(&self, z0: &[f64], inputs: &Mat) -> Result<Mat> {
        let lat = self.latent_dim();
        if z0.len() != lat || inputs.rows() != self.n_inputs() {
            return Err(Error::shape("propagate", "latent or input dimension mismatch"));
        }
        let n = inputs.cols();
        let mut out = Mat::zeros(lat, n);
        let mut z = Mat::col_vector(z0);
        let mut next = Mat::zeros(lat, 1);
        for k in 0..n {
            gemm(1.0, &self.a_k, Op::N, &z, Op::N, 0.0, &mut next)?;
            for r in 0..lat {
                for j in 0..self.n_inputs() {
                    next[(r, 0)] += self.b_k[(r, j)] * inputs[(j, k)];
                }
            }
            out.set_col(k, next.as_slice());
            std::mem::swap(&mut z, &mut next);
        }
        Ok(out)
    }

    /// Encodes once, then propagates linearly: returns
    /// `(z_{k+1} ..= z_{k+N}, x_{k+1} ..= x_{k+N})`.
    pub fn rollout(&self, x_k: &[f64], history: &HistoryWindow, u_seq: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let z0 = self.encode(x_k, history)?;
        let mut inputs = Mat::zeros(self.n_inputs(), u_seq.len());
        for (k, u) in u_seq.iter().enumerate() {
            if u.len() != self.n_inputs() {
                return Err(Error::shape("rollout", format!("input {k} has length {}", u.len())));
            }
            inputs.set_col(k, u);
        }
        let z = self.propagate(&z0, &inputs)?;
        let x = self.decode_batch(&z)?;
        Ok((
            (0..z.cols()).map(|k| z.col(k)).collect(),
            (0..x.cols()).map(|k| x.col(k)).collect(),
        ))
    }
}
