//! Multi-step training objective with a hand-written reverse pass.
//!
//! For a batch of `B` windows each anchored at `k`, the forward pass encodes
//! every `x_{k+j}` (`j = 0..=N_L`) with its own history `H_{k+j}`, rolls the
//! first encoding forward through `A_K, B_K`, and decodes all rolled latents.
//! Encodings are laid out as columns `j * B + b`.
//!
//! Per-window loss:
//!
//! ```text
//! L = w_rec  |x_k - dec(z_k)|^2
//!   + w_step |x_{k+1} - dec(A z_k + B u_k)|^2
//!   + w_pred  sum_{i=1..N} |x_{k+i} - dec(zhat_{k+i})|^2
//!   + w_lpred sum_{i=1..N} |z_{k+i} - zhat_{k+i}|^2
//! ```
//!
//! and the batch loss is the mean over windows.

use serde::{Deserialize, Serialize};

use crate::dataset::SupervisionWindow;
use crate::error::{Error, Result};
use crate::nn::{gemm, LstmCache, Mat, MlpCache, Op};

use super::DeepKoopmanModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rec: f64,
    pub step: f64,
    pub pred: f64,
    pub lpred: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 0.0,
            step: 1.0,
            pred: 10.0,
            lpred: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.rec, self.step, self.pred, self.lpred];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Precondition(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Unweighted batch means of each term and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub rec: f64,
    pub step: f64,
    pub pred: f64,
    pub lpred: f64,
    pub total: f64,
}

/// Everything the reverse pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub terms: LossTerms,
    weights: LossWeights,
    version: u64,
    batch: usize,
    horizon: usize,
    lstm_cache: LstmCache,
    enc_cache: MlpCache,
    dec_cache: MlpCache,
    /// `latent x (N+1)B`, the encoder outputs
    z_enc: Mat,
    /// `zhat_0 ..= zhat_N`, each `latent x B`
    z_hat: Vec<Mat>,
    /// `u_k .. u_{k+N-1}`, each `m x B`
    u: Vec<Mat>,
    /// decoded minus true states, `n x (N+1)B`
    x_err: Mat,
}

fn check_batch(model: &DeepKoopmanModel, windows: &[SupervisionWindow]) -> Result<(usize, usize)> {
    let Some(first) = windows.first() else {
        return Err(Error::Precondition("empty batch".into()));
    };
    let (eta_h, horizon) = (first.eta_h, first.horizon);
    if horizon == 0 {
        return Err(Error::Precondition("prediction horizon must be at least 1".into()));
    }
    for w in windows {
        if w.eta_h != eta_h || w.horizon != horizon {
            return Err(Error::Precondition("all windows in a batch must share history length and horizon".into()));
        }
        let traj = w.trajectory();
        if traj.n_states() != model.n_states() || traj.n_inputs() != model.n_inputs() {
            return Err(Error::shape(
                "batch_loss",
                format!(
                    "trajectory has {} states / {} inputs, model expects {} / {}",
                    traj.n_states(),
                    traj.n_inputs(),
                    model.n_states(),
                    model.n_inputs()
                ),
            ));
        }
        if w.k < eta_h || w.k + horizon > traj.len() {
            return Err(Error::OutOfRange(format!("window at k = {} does not fit its trajectory", w.k)));
        }
    }
    Ok((eta_h, horizon))
}

impl BatchForward {
    pub fn compute(model: &DeepKoopmanModel, windows: &[SupervisionWindow], weights: LossWeights) -> Result<Self> {
        weights.validate()?;
        let (eta_h, horizon) = check_batch(model, windows)?;
        let n = model.n_states();
        let m = model.n_inputs();
        let lat = model.latent_dim();
        let b = windows.len();
        let e = (horizon + 1) * b;

        // LSTM inputs: step t of H_{k+j} is sample k + j - eta_H + t
        let mut steps = Vec::with_capacity(eta_h);
        for t in 0..eta_h {
            let mut s = Mat::zeros(n + m, e);
            for j in 0..=horizon {
                for (bi, w) in windows.iter().enumerate() {
                    let idx = w.sample(j + t);
                    let traj = w.trajectory();
                    let col = j * b + bi;
                    for r in 0..n {
                        s[(r, col)] = traj.states()[(r, idx)];
                    }
                    for r in 0..m {
                        s[(n + r, col)] = traj.inputs()[(r, idx)];
                    }
                }
            }
            steps.push(s);
        }
        let (h, _, lstm_cache) = model.lstm.forward_batch(&steps)?;

        let mut x_true = Mat::zeros(n, e);
        for j in 0..=horizon {
            for (bi, w) in windows.iter().enumerate() {
                let traj = w.trajectory();
                for r in 0..n {
                    x_true[(r, j * b + bi)] = traj.states()[(r, w.k + j)];
                }
            }
        }
        let (z_enc, enc_cache) = model.encoder.forward_batch(&Mat::vstack(&x_true, &h)?)?;

        let mut u = Vec::with_capacity(horizon);
        for i in 0..horizon {
            u.push(Mat::from_fn(m, b, |r, bi| {
                let w = &windows[bi];
                w.trajectory().inputs()[(r, w.k + i)]
            }));
        }
        let mut z_hat = Vec::with_capacity(horizon + 1);
        z_hat.push(z_enc.cols_range(0, b));
        for i in 1..=horizon {
            let mut next = Mat::zeros(lat, b);
            gemm(1.0, &model.a_k, Op::N, &z_hat[i - 1], Op::N, 0.0, &mut next)?;
            gemm(1.0, &model.b_k, Op::N, &u[i - 1], Op::N, 1.0, &mut next)?;
            z_hat.push(next);
        }

        let mut dec_in = Mat::zeros(lat, e);
        for (i, z) in z_hat.iter().enumerate() {
            dec_in.set_cols(i * b, z);
        }
        let (x_hat, dec_cache) = model.decoder.forward_batch(&dec_in)?;
        let mut x_err = x_hat;
        x_err.axpy(-1.0, &x_true)?;

        let bf = b as f64;
        let block_sq = |mat: &Mat, i: usize| mat.cols_range(i * b, (i + 1) * b).frobenius_sq();
        let rec = block_sq(&x_err, 0) / bf;
        let step = block_sq(&x_err, 1) / bf;
        let pred = (1..=horizon).map(|i| block_sq(&x_err, i)).sum::<f64>() / bf;
        let mut lpred = 0.0;
        for i in 1..=horizon {
            let mut d = z_hat[i].clone();
            d.axpy(-1.0, &z_enc.cols_range(i * b, (i + 1) * b))?;
            lpred += d.frobenius_sq();
        }
        lpred /= bf;
        let total = weights.rec * rec + weights.step * step + weights.pred * pred + weights.lpred * lpred;
        let terms = LossTerms {
            rec,
            step,
            pred,
            lpred,
            total,
        };
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("training loss {terms:?}")));
        }
        Ok(Self {
            terms,
            weights,
            version: model.version(),
            batch: b,
            horizon,
            lstm_cache,
            enc_cache,
            dec_cache,
            z_enc,
            z_hat,
            u,
            x_err,
        })
    }

    /// Gradient of `terms.total` with respect to every model parameter.
    pub fn backward(&self, model: &DeepKoopmanModel) -> Result<DeepKoopmanModel> {
        if model.version() != self.version {
            return Err(Error::StaleCache {
                cached: self.version,
                current: model.version(),
            });
        }
        let b = self.batch;
        let nh = self.horizon;
        let lat = model.latent_dim();
        let n = model.n_states();
        let w = self.weights;
        let bf = b as f64;
        let mut grads = model.zeros_like();

        // decoder output gradient, block by block
        let mut d_x = self.x_err.clone();
        for i in 0..=nh {
            let coef = match i {
                0 => w.rec,
                1 => w.step + w.pred,
                _ => w.pred,
            } * 2.0
                / bf;
            for r in 0..n {
                for v in &mut d_x.row_mut(r)[i * b..(i + 1) * b] {
                    *v *= coef;
                }
            }
        }
        let d_dec_in = model.decoder.backward_batch(&self.dec_cache, &d_x, &mut grads.decoder)?;

        // latent prediction term couples rollout and target encodings
        let mut d_z_enc = Mat::zeros(lat, (nh + 1) * b);
        let mut d_zhat: Vec<Mat> = (0..=nh).map(|i| d_dec_in.cols_range(i * b, (i + 1) * b)).collect();
        let c = 2.0 * w.lpred / bf;
        if c != 0.0 {
            for i in 1..=nh {
                let mut diff = self.z_hat[i].clone();
                diff.axpy(-1.0, &self.z_enc.cols_range(i * b, (i + 1) * b))?;
                d_zhat[i].axpy(c, &diff)?;
                diff.scale(-c);
                d_z_enc.set_cols(i * b, &diff);
            }
        }

        // reverse through zhat_i = A zhat_{i-1} + B u_{i-1}
        let mut g = d_zhat[nh].clone();
        for i in (1..=nh).rev() {
            gemm(1.0, &g, Op::N, &self.z_hat[i - 1], Op::T, 1.0, &mut grads.a_k)?;
            gemm(1.0, &g, Op::N, &self.u[i - 1], Op::T, 1.0, &mut grads.b_k)?;
            let mut prev = d_zhat[i - 1].clone();
            gemm(1.0, &model.a_k, Op::T, &g, Op::N, 1.0, &mut prev)?;
            g = prev;
        }
        d_z_enc.set_cols(0, &g);

        let d_enc_in = model.encoder.backward_batch(&self.enc_cache, &d_z_enc, &mut grads.encoder)?;
        let d_h = d_enc_in.rows_range(n, d_enc_in.rows());
        model.lstm.backward_batch(&self.lstm_cache, &d_h, &mut grads.lstm)?;
        Ok(grads)
    }
}

/// Loss and parameter gradients for one batch.
pub fn batch_loss(
    model: &DeepKoopmanModel,
    windows: &[SupervisionWindow],
    weights: LossWeights,
) -> Result<(LossTerms, DeepKoopmanModel)> {
    let fwd = BatchForward::compute(model, windows, weights)?;
    let grads = fwd.backward(model)?;
    Ok((fwd.terms, grads))
}

/// Largest discrepancy between analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `tensor[index]` of the worst entry
    pub worst: String,
    /// analytic and numeric value at the worst entry
    pub worst_values: (f64, f64),
    pub checked: usize,
}

/// Relative error `|a - n| / max(|a|, |n|)`; absolute error when both
/// magnitudes are below `1e-10`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares every parameter's analytic gradient with the fourth-order
/// central difference
/// `(-L(p+2h) + 8 L(p+h) - 8 L(p-h) + L(p-2h)) / 12h`.
/// The model is restored exactly afterwards.
pub fn gradient_check(
    model: &mut DeepKoopmanModel,
    windows: &[SupervisionWindow],
    weights: LossWeights,
    eps: f64,
) -> Result<GradCheck> {
    let (_, grads) = batch_loss(model, windows, weights)?;
    let names = model.tensor_names();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: String::new(),
        worst_values: (0.0, 0.0),
        checked: 0,
    };
    for (ti, g) in grads.tensors().into_iter().enumerate() {
        for idx in 0..g.as_slice().len() {
            let orig = model.tensors()[ti].as_slice()[idx];
            let mut at = |offset: f64| -> Result<f64> {
                model.tensors_mut()[ti].as_mut_slice()[idx] = orig + offset;
                Ok(BatchForward::compute(model, windows, weights)?.terms.total)
            };
            let (l2p, l1p, l1m, l2m) = (at(2.0 * eps)?, at(eps)?, at(-eps)?, at(-2.0 * eps)?);
            model.tensors_mut()[ti].as_mut_slice()[idx] = orig;
            let numeric = (-l2p + 8.0 * l1p - 8.0 * l1m + l2m) / (12.0 * eps);
            let err = relative_error(g.as_slice()[idx], numeric);
            out.checked += 1;
            if err > out.max_rel_error || out.worst.is_empty() {
                out.max_rel_error = err;
                out.worst_values = (g.as_slice()[idx], numeric);
                out.worst = format!("{}[{idx}]", names[ti]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dataset::{make_windows, Trajectory};
    use crate::dko::Architecture;

    fn small_arch() -> Architecture {
        Architecture {
            n_states: 2,
            n_inputs: 1,
            lstm_hidden: 3,
            encoder_hidden: vec![6],
            decoder_hidden: vec![6],
            latent: 4,
        }
    }

    fn random_traj(seed: u64, t: usize) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states = Mat::from_fn(2, t + 1, |_, _| rng.random_range(-1.0..1.0));
        let inputs = Mat::from_fn(1, t, |_, _| rng.random_range(0.0..1.0));
        Trajectory::new(states, inputs, 1.0).unwrap()
    }

    /// Per-window loss written directly from the definition with the
    /// single-sample model API.
    fn reference_loss(model: &DeepKoopmanModel, windows: &[SupervisionWindow], w: LossWeights) -> LossTerms {
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let mut t = LossTerms::default();
        for win in windows {
            let z0 = model.encode(&win.x_k(), &win.history(0).unwrap()).unwrap();
            t.rec += sq(&win.x_k(), &model.decode(&z0).unwrap());
            let (zs, xs) = model.rollout(&win.x_k(), &win.history(0).unwrap(), &win.u_future()).unwrap();
            t.step += sq(&win.state(1), &xs[0]);
            for i in 1..=win.horizon {
                t.pred += sq(&win.state(i), &xs[i - 1]);
                let zi = model.encode(&win.state(i), &win.history(i).unwrap()).unwrap();
                t.lpred += sq(&zi, &zs[i - 1]);
            }
        }
        let bf = windows.len() as f64;
        t.rec /= bf;
        t.step /= bf;
        t.pred /= bf;
        t.lpred /= bf;
        t.total = w.rec * t.rec + w.step * t.step + w.pred * t.pred + w.lpred * t.lpred;
        t
    }

    #[test]
    fn batched_loss_matches_per_window_definition() {
        let traj = random_traj(1, 30);
        let windows = make_windows(&traj, 4, 3, 2).unwrap();
        let model = DeepKoopmanModel::new(&small_arch(), 2).unwrap();
        let w = LossWeights {
            rec: 0.5,
            step: 1.0,
            pred: 10.0,
            lpred: 1.0,
        };
        let got = BatchForward::compute(&model, &windows, w).unwrap().terms;
        let want = reference_loss(&model, &windows, w);
        for (a, b) in [
            (got.rec, want.rec),
            (got.step, want.step),
            (got.pred, want.pred),
            (got.lpred, want.lpred),
            (got.total, want.total),
        ] {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn perfect_oracle_has_zero_loss() {
        use crate::nn::{Activation, Dense, MlpParams};
        let a = Mat::from_vec(2, 2, vec![0.9, 0.05, -0.1, 0.8]).unwrap();
        let bm = Mat::from_vec(2, 1, vec![0.1, 0.3]).unwrap();
        let t = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let inputs = Mat::from_fn(1, t, |_, _| rng.random_range(0.0..1.0));
        let mut states = Mat::zeros(2, t + 1);
        states.set_col(0, &[0.5, -0.2]);
        for k in 0..t {
            let mut next = a.matvec(&states.col(k)).unwrap();
            next[0] += bm[(0, 0)] * inputs[(0, k)];
            next[1] += bm[(1, 0)] * inputs[(0, k)];
            states.set_col(k + 1, &next);
        }
        let traj = Trajectory::new(states, inputs, 1.0).unwrap();
        let mut model = DeepKoopmanModel::new(
            &Architecture {
                n_states: 2,
                n_inputs: 1,
                lstm_hidden: 3,
                encoder_hidden: vec![],
                decoder_hidden: vec![],
                latent: 2,
            },
            0,
        )
        .unwrap();
        let identity = |cols: usize| Dense {
            weight: Mat::from_fn(2, cols, |i, j| if i == j { 1.0 } else { 0.0 }),
            bias: Mat::zeros(2, 1),
            activation: Activation::Linear,
        };
        model.encoder = MlpParams { layers: vec![identity(5)] };
        model.decoder = MlpParams { layers: vec![identity(2)] };
        model.a_k = a;
        model.b_k = bm;
        model.validate().unwrap();
        let windows = make_windows(&traj, 3, 4, 1).unwrap();
        let w = LossWeights {
            rec: 1.0,
            step: 1.0,
            pred: 1.0,
            lpred: 1.0,
        };
        let t = BatchForward::compute(&model, &windows, w).unwrap().terms;
        assert_eq!(t.rec, 0.0);
        assert!(t.total < 1e-28, "{t:?}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn loss_terms_are_nonnegative(seed in proptest::prelude::any::<u64>()) {
            let traj = random_traj(seed, 20);
            let windows = make_windows(&traj, 3, 2, 2).unwrap();
            let model = DeepKoopmanModel::new(&small_arch(), seed ^ 0x5a5a).unwrap();
            let t = BatchForward::compute(&model, &windows, LossWeights::default()).unwrap().terms;
            for v in [t.rec, t.step, t.pred, t.lpred, t.total] {
                proptest::prop_assert!(v >= 0.0);
            }
        }
    }

    #[test]
    fn weights_toggle_terms() {
        let traj = random_traj(3, 20);
        let windows = make_windows(&traj, 3, 2, 1).unwrap();
        let model = DeepKoopmanModel::new(&small_arch(), 4).unwrap();
        let only = |k: usize| {
            let mut v = [0.0; 4];
            v[k] = 1.0;
            LossWeights {
                rec: v[0],
                step: v[1],
                pred: v[2],
                lpred: v[3],
            }
        };
        let all = BatchForward::compute(&model, &windows, LossWeights::default()).unwrap().terms;
        let parts = [all.rec, all.step, all.pred, all.lpred];
        for (k, part) in parts.iter().enumerate() {
            let t = BatchForward::compute(&model, &windows, only(k)).unwrap().terms;
            assert_eq!(t.total, *part);
        }
        let zero = LossWeights {
            rec: 0.0,
            step: 0.0,
            pred: 0.0,
            lpred: 0.0,
        };
        let (t, g) = batch_loss(&model, &windows, zero).unwrap();
        assert_eq!(t.total, 0.0);
        assert!(g.tensors().iter().all(|m| m.max_abs() == 0.0));
        let expected = LossWeights::default();
        let direct = expected.rec * all.rec + expected.step * all.step + expected.pred * all.pred + expected.lpred * all.lpred;
        assert!((all.total - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let traj = random_traj(5, 15);
        let windows = make_windows(&traj, 3, 2, 1).unwrap();
        let mut model = DeepKoopmanModel::new(&small_arch(), 6).unwrap();
        let fwd = BatchForward::compute(&model, &windows, LossWeights::default()).unwrap();
        model.tensors_mut()[0].as_mut_slice()[0] += 1e-3;
        assert!(matches!(fwd.backward(&model), Err(Error::StaleCache { .. })));
    }

    #[test]
    fn mismatched_windows_are_rejected() {
        let traj = random_traj(7, 20);
        let mut windows = make_windows(&traj, 3, 2, 1).unwrap();
        windows.extend(make_windows(&traj, 4, 2, 1).unwrap());
        let model = DeepKoopmanModel::new(&small_arch(), 6).unwrap();
        assert!(matches!(
            BatchForward::compute(&model, &windows, LossWeights::default()),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            BatchForward::compute(&model, &[], LossWeights::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let traj = random_traj(11, 25);
        let windows = make_windows(&traj, 4, 3, 3).unwrap();
        let w = LossWeights {
            rec: 0.3,
            step: 1.0,
            pred: 2.0,
            lpred: 0.7,
        };
        let mut model = DeepKoopmanModel::new(&small_arch(), 12).unwrap();
        let (_, grads) = batch_loss(&model, &windows, w).unwrap();
        let grad_tensors: Vec<Mat> = grads.tensors().into_iter().cloned().collect();
        let names = model.tensor_names();
        let eps = 1e-5;
        for (ti, g) in grad_tensors.iter().enumerate() {
            for idx in 0..g.as_slice().len() {
                let orig = model.tensors()[ti].as_slice()[idx];
                model.tensors_mut()[ti].as_mut_slice()[idx] = orig + eps;
                let lp = BatchForward::compute(&model, &windows, w).unwrap().terms.total;
                model.tensors_mut()[ti].as_mut_slice()[idx] = orig - eps;
                let lm = BatchForward::compute(&model, &windows, w).unwrap().terms.total;
                model.tensors_mut()[ti].as_mut_slice()[idx] = orig;
                let num = (lp - lm) / (2.0 * eps);
                let ana = g.as_slice()[idx];
                let scale = ana.abs().max(num.abs());
                let err = if scale < 1e-10 { (ana - num).abs() } else { (ana - num).abs() / scale };
                assert!(err < 1e-5, "{}[{idx}]: analytic {ana}, numeric {num}", names[ti]);
            }
        }
    }
}
