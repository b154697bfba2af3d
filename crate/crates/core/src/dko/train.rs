use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SupervisionWindow;
use crate::error::{Error, Result};
use crate::nn::AdamState;

use super::{Architecture, BatchForward, DeepKoopmanModel, LossTerms, LossWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// When set, the step size decays geometrically per epoch from
    /// `learning_rate` to this value at the last epoch.
    #[serde(default)]
    pub final_learning_rate: Option<f64>,
    /// `N_L`
    pub horizon: usize,
    /// `eta_H`
    pub eta_h: usize,
    /// Parameter initialization seed.
    pub seed: u64,
    /// Seed of the per-epoch window permutation.
    pub shuffle_seed: u64,
    pub weights: LossWeights,
    /// Optional global gradient-norm clipping.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 100,
            learning_rate: 1e-3,
            final_learning_rate: None,
            horizon: 30,
            eta_h: 25,
            seed: 0,
            shuffle_seed: 1,
            weights: LossWeights::default(),
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    /// Step size used during `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.final_learning_rate {
            Some(end) if self.epochs > 1 => {
                let frac = epoch as f64 / (self.epochs - 1) as f64;
                self.learning_rate * (end / self.learning_rate).powf(frac)
            }
            _ => self.learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.horizon == 0 || self.eta_h == 0 {
            return Err(Error::Precondition("batch size, horizon and history length must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Precondition(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if let Some(lr) = self.final_learning_rate {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::Precondition(format!("final learning rate {lr} must be positive")));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Precondition(format!("clip norm {c} must be positive")));
            }
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Window-weighted mean of the batch losses in this epoch.
    pub loss: LossTerms,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
    pub steps: usize,
}

impl TrainingLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss.total)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,total,rec,step,pred,lpred,grad_norm\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.epoch, e.loss.total, e.loss.rec, e.loss.step, e.loss.pred, e.loss.lpred, e.grad_norm
            ));
        }
        s
    }
}

/// Initializes a model from `config.seed` and trains it.
pub fn train(
    windows: &[SupervisionWindow],
    arch: &Architecture,
    config: &TrainConfig,
    progress: impl FnMut(&EpochStats),
) -> Result<(DeepKoopmanModel, TrainingLog)> {
    let model = DeepKoopmanModel::new(arch, config.seed)?;
    train_model(model, windows, config, progress)
}

/// Mini-batch Adam on the multi-step objective. Windows are reshuffled every
/// epoch with a generator seeded once from `config.shuffle_seed`.
pub fn train_model(
    mut model: DeepKoopmanModel,
    windows: &[SupervisionWindow],
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<(DeepKoopmanModel, TrainingLog)> {
    config.validate()?;
    model.validate()?;
    if windows.is_empty() {
        return Err(Error::Precondition("no training windows".into()));
    }
    if let Some(w) = windows.iter().find(|w| w.eta_h != config.eta_h || w.horizon != config.horizon) {
        return Err(Error::Precondition(format!(
            "window (eta_H {}, N_L {}) disagrees with training config (eta_H {}, N_L {})",
            w.eta_h, w.horizon, config.eta_h, config.horizon
        )));
    }
    let names = model.tensor_names();
    let mut adam = AdamState::new(model.tensors(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut log = TrainingLog::default();
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        adam.lr = config.learning_rate_at(epoch);
        let mut acc = LossTerms::default();
        let mut norm_acc = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| windows[i]));
            let fwd = BatchForward::compute(&model, &batch, config.weights).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}, step {}", log.steps)),
                other => other,
            })?;
            let mut grads = fwd.backward(&model)?;
            let norm = grads.tensors().iter().map(|g| g.frobenius_sq()).sum::<f64>().sqrt();
            if let Some(clip) = config.clip_norm {
                if norm > clip {
                    for g in grads.tensors_mut() {
                        g.scale(clip / norm);
                    }
                }
            }
            let grad_refs = grads.tensors();
            adam.step(&mut model.tensors_mut(), &grad_refs, &names)?;
            log.steps += 1;

            let wgt = chunk.len() as f64;
            acc.rec += wgt * fwd.terms.rec;
            acc.step += wgt * fwd.terms.step;
            acc.pred += wgt * fwd.terms.pred;
            acc.lpred += wgt * fwd.terms.lpred;
            acc.total += wgt * fwd.terms.total;
            norm_acc += norm;
            n_batches += 1;
        }
        let nw = windows.len() as f64;
        let stats = EpochStats {
            epoch,
            loss: LossTerms {
                rec: acc.rec / nw,
                step: acc.step / nw,
                pred: acc.pred / nw,
                lpred: acc.lpred / nw,
                total: acc.total / nw,
            },
            grad_norm: norm_acc / n_batches as f64,
        };
        progress(&stats);
        log.epochs.push(stats);
    }
    Ok((model, log))
}
