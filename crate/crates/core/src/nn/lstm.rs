//! Single-layer LSTM with batched forward and backpropagation through time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mat::{gemm, Mat, Op};
use crate::error::{Error, Result};

/// Gate blocks are stacked row-wise in the order input, forget, candidate,
/// output: rows `0..h` belong to the input gate, `h..2h` to the forget gate
/// and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `4h x input_size`, stacked `W_i, W_f, W_g, W_o`.
    pub w_input: Mat,
    /// `4h x h`, stacked `U_i, U_f, U_g, U_o`.
    pub w_recurrent: Mat,
    /// `4h x 1`, stacked `b_i, b_f, b_g, b_o`.
    pub bias: Mat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Candidate = 2,
    Output = 3,
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Mat,
    h_prev: Mat,
    c_prev: Mat,
    /// activated gates, `4h x batch`
    gates: Mat,
    tanh_c: Mat,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    steps: Vec<StepCache>,
    batch: usize,
}

impl LstmCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmParams {
    /// Uniform `U(-1/sqrt(h), 1/sqrt(h))` initialization with the forget-gate
    /// bias set to 1.
    pub fn new(input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Result<Self> {
        if input_size == 0 || hidden_size == 0 {
            return Err(Error::Precondition("LSTM sizes must be positive".into()));
        }
        let bound = 1.0 / (hidden_size as f64).sqrt();
        let g = 4 * hidden_size;
        let w_input = Mat::from_fn(g, input_size, |_, _| rng.random_range(-bound..=bound));
        let w_recurrent = Mat::from_fn(g, hidden_size, |_, _| rng.random_range(-bound..=bound));
        let mut bias = Mat::from_fn(g, 1, |_, _| rng.random_range(-bound..=bound));
        for r in hidden_size..2 * hidden_size {
            bias[(r, 0)] = 1.0;
        }
        Ok(Self {
            input_size,
            hidden_size,
            w_input,
            w_recurrent,
            bias,
        })
    }

    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let g = 4 * hidden_size;
        Self {
            input_size,
            hidden_size,
            w_input: Mat::zeros(g, input_size),
            w_recurrent: Mat::zeros(g, hidden_size),
            bias: Mat::zeros(g, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_size, self.hidden_size)
    }

    pub fn validate(&self) -> Result<()> {
        let g = 4 * self.hidden_size;
        if self.w_input.shape() != (g, self.input_size)
            || self.w_recurrent.shape() != (g, self.hidden_size)
            || self.bias.shape() != (g, 1)
        {
            return Err(Error::shape("LstmParams", "inconsistent gate matrix shapes"));
        }
        Ok(())
    }

    /// Rows of the stacked matrices that belong to `gate`.
    pub fn gate_rows(&self, gate: Gate) -> std::ops::Range<usize> {
        let h = self.hidden_size;
        let k = gate as usize;
        k * h..(k + 1) * h
    }

    /// Runs all sequences of a batch from `h0 = c0 = 0`. `steps[t]` holds the
    /// inputs at time `t`, one sequence per column. Returns the final hidden
    /// and cell states (`h x batch`).
    pub fn forward_batch(&self, steps: &[Mat]) -> Result<(Mat, Mat, LstmCache)> {
        let Some(first) = steps.first() else {
            return Err(Error::Precondition("LSTM input sequence is empty".into()));
        };
        let batch = first.cols();
        let h = self.hidden_size;
        let mut h_prev = Mat::zeros(h, batch);
        let mut c_prev = Mat::zeros(h, batch);
        let mut cache = Vec::with_capacity(steps.len());
        for (t, x) in steps.iter().enumerate() {
            if x.shape() != (self.input_size, batch) {
                return Err(Error::shape(
                    "lstm_forward",
                    format!("step {t} input {:?}, expected {:?}", x.shape(), (self.input_size, batch)),
                ));
            }
            let mut gates = Mat::zeros(4 * h, batch);
            gemm(1.0, &self.w_input, Op::N, x, Op::N, 0.0, &mut gates)?;
            if t > 0 {
                gemm(1.0, &self.w_recurrent, Op::N, &h_prev, Op::N, 1.0, &mut gates)?;
            }
            gates.add_col_broadcast(&self.bias)?;
            {
                let g = gates.as_mut_slice();
                let (sig_if, rest) = g.split_at_mut(2 * h * batch);
                let (tanh_g, sig_o) = rest.split_at_mut(h * batch);
                sig_if.iter_mut().for_each(|v| *v = sigmoid(*v));
                tanh_g.iter_mut().for_each(|v| *v = v.tanh());
                sig_o.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            let mut c = Mat::zeros(h, batch);
            let mut tanh_c = Mat::zeros(h, batch);
            let mut h_new = Mat::zeros(h, batch);
            {
                let g = gates.as_slice();
                let n = h * batch;
                let (gi, gf, gg, go) = (&g[..n], &g[n..2 * n], &g[2 * n..3 * n], &g[3 * n..]);
                let cp = c_prev.as_slice();
                let cs = c.as_mut_slice();
                for k in 0..n {
                    cs[k] = gf[k] * cp[k] + gi[k] * gg[k];
                }
                let ts = tanh_c.as_mut_slice();
                for k in 0..n {
                    ts[k] = cs[k].tanh();
                }
                let hs = h_new.as_mut_slice();
                for k in 0..n {
                    hs[k] = go[k] * ts[k];
                }
            }
            cache.push(StepCache {
                x: x.clone(),
                h_prev,
                c_prev,
                gates,
                tanh_c,
            });
            h_prev = h_new;
            c_prev = c;
        }
        Ok((h_prev, c_prev, LstmCache { steps: cache, batch }))
    }

    /// Single sequence, one column per time step (oldest first).
    pub fn forward(&self, sequence: &Mat) -> Result<(Vec<f64>, Vec<f64>, LstmCache)> {
        if sequence.rows() != self.input_size {
            return Err(Error::shape(
                "lstm_forward",
                format!("sequence has {} rows, LSTM expects {}", sequence.rows(), self.input_size),
            ));
        }
        let steps: Vec<Mat> = (0..sequence.cols())
            .map(|t| Mat::col_vector(&sequence.col(t)))
            .collect();
        let (h, c, cache) = self.forward_batch(&steps)?;
        Ok((h.into_vec(), c.into_vec(), cache))
    }

    /// Backpropagation through time from a gradient on the final hidden
    /// state; parameter gradients are accumulated into `grads`.
    pub fn backward_batch(&self, cache: &LstmCache, d_h_final: &Mat, grads: &mut LstmParams) -> Result<()> {
        let h = self.hidden_size;
        let batch = cache.batch;
        if d_h_final.shape() != (h, batch) {
            return Err(Error::shape(
                "lstm_backward",
                format!("gradient {:?}, expected {:?}", d_h_final.shape(), (h, batch)),
            ));
        }
        let n = h * batch;
        let mut dh = d_h_final.clone();
        let mut dc = vec![0.0; n];
        let mut da = Mat::zeros(4 * h, batch);
        for (t, step) in cache.steps.iter().enumerate().rev() {
            {
                let g = step.gates.as_slice();
                let (gi, gf, gg, go) = (&g[..n], &g[n..2 * n], &g[2 * n..3 * n], &g[3 * n..]);
                let tc = step.tanh_c.as_slice();
                let cp = step.c_prev.as_slice();
                let dhs = dh.as_slice();
                let d = da.as_mut_slice();
                for k in 0..n {
                    let dct = dc[k] + dhs[k] * go[k] * (1.0 - tc[k] * tc[k]);
                    let d_o = dhs[k] * tc[k];
                    let d_i = dct * gg[k];
                    let d_g = dct * gi[k];
                    let d_f = dct * cp[k];
                    dc[k] = dct * gf[k];
                    d[k] = d_i * gi[k] * (1.0 - gi[k]);
                    d[n + k] = d_f * gf[k] * (1.0 - gf[k]);
                    d[2 * n + k] = d_g * (1.0 - gg[k] * gg[k]);
                    d[3 * n + k] = d_o * go[k] * (1.0 - go[k]);
                }
            }
            gemm(1.0, &da, Op::N, &step.x, Op::T, 1.0, &mut grads.w_input)?;
            da.add_row_sums_into(&mut grads.bias)?;
            if t > 0 {
                gemm(1.0, &da, Op::N, &step.h_prev, Op::T, 1.0, &mut grads.w_recurrent)?;
                gemm(1.0, &self.w_recurrent, Op::T, &da, Op::N, 0.0, &mut dh)?;
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<&Mat> {
        vec![&self.w_input, &self.w_recurrent, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        vec![&mut self.w_input, &mut self.w_recurrent, &mut self.bias]
    }

    pub fn tensor_names(&self, prefix: &str) -> Vec<String> {
        ["w_input", "w_recurrent", "bias"]
            .iter()
            .map(|n| format!("{prefix}.{n}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_sequence(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_parameters_keep_state_at_zero() {
        let lstm = LstmParams::zeros(3, 4);
        let (h, c, _) = lstm.forward(&random_sequence(3, 7, 1)).unwrap();
        assert!(h.iter().chain(&c).all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_hand_evaluated_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lstm = LstmParams::new(2, 3, &mut rng).unwrap();
        let x = [0.4, -0.9];
        let (h, c, _) = lstm.forward(&Mat::from_vec(2, 1, x.to_vec()).unwrap()).unwrap();
        let pre = |gate: Gate, r: usize| {
            let row = lstm.gate_rows(gate).start + r;
            lstm.bias[(row, 0)] + lstm.w_input[(row, 0)] * x[0] + lstm.w_input[(row, 1)] * x[1]
        };
        for r in 0..3 {
            let i = 1.0 / (1.0 + (-pre(Gate::Input, r)).exp());
            let o = 1.0 / (1.0 + (-pre(Gate::Output, r)).exp());
            let g = pre(Gate::Candidate, r).tanh();
            // c_prev = 0, so the forget gate drops out
            let c_ref = i * g;
            let h_ref = o * c_ref.tanh();
            assert!((c[r] - c_ref).abs() < 1e-15);
            assert!((h[r] - h_ref).abs() < 1e-15);
        }
    }

    #[test]
    fn output_depends_on_input_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lstm = LstmParams::new(3, 5, &mut rng).unwrap();
        let seq = random_sequence(3, 6, 4);
        let mut reversed = Mat::zeros(3, 6);
        for t in 0..6 {
            reversed.set_col(t, &seq.col(5 - t));
        }
        let (h1, _, _) = lstm.forward(&seq).unwrap();
        let (h2, _, _) = lstm.forward(&reversed).unwrap();
        let diff: f64 = h1.iter().zip(&h2).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-3);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let lstm = LstmParams::zeros(2, 2);
        assert!(matches!(lstm.forward_batch(&[]), Err(Error::Precondition(_))));
    }

    #[test]
    fn forget_bias_initialized_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lstm = LstmParams::new(3, 8, &mut rng).unwrap();
        for r in lstm.gate_rows(Gate::Forget) {
            assert_eq!(lstm.bias[(r, 0)], 1.0);
        }
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let lstm = LstmParams::new(3, 4, &mut rng).unwrap();
        let steps: Vec<Mat> = (0..5).map(|t| random_sequence(3, 2, 100 + t)).collect();
        let weights = random_sequence(4, 2, 77);
        // loss = <weights, h_T>
        let loss = |p: &LstmParams| {
            let (h, _, _) = p.forward_batch(&steps).unwrap();
            h.as_slice().iter().zip(weights.as_slice()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, _, cache) = lstm.forward_batch(&steps).unwrap();
        let mut grads = lstm.zeros_like();
        lstm.backward_batch(&cache, &weights, &mut grads).unwrap();
        let eps = 1e-6;
        for (t, g) in grads.tensors().iter().enumerate() {
            for idx in 0..g.as_slice().len() {
                let mut plus = lstm.clone();
                plus.tensors_mut()[t].as_mut_slice()[idx] += eps;
                let mut minus = lstm.clone();
                minus.tensors_mut()[t].as_mut_slice()[idx] -= eps;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let an = g.as_slice()[idx];
                assert!((fd - an).abs() < 1e-8 * (1.0 + an.abs()), "tensor {t}[{idx}]: {an} vs {fd}");
            }
        }
    }
}
