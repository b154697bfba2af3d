use serde::{Deserialize, Serialize};

use super::mat::Mat;
use crate::error::{Error, Result};

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Mat>,
    second: Vec<Mat>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Mat>, lr: f64) -> Self {
        let first: Vec<Mat> = params
            .into_iter()
            .map(|p| Mat::zeros(p.rows(), p.cols()))
            .collect();
        let second = first.clone();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first,
            second,
        }
    }

    /// Applies one update. Gradients are checked for finiteness before any
    /// parameter is touched; `names` labels parameters in error messages.
    pub fn step(&mut self, params: &mut [&mut Mat], grads: &[&Mat], names: &[String]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} parameters, {} gradients, optimizer tracks {}",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{}: parameter {:?}, gradient {:?}", label(names, i), p.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", label(names, i))));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].as_mut_slice();
            let v = self.second[i].as_mut_slice();
            for (((w, &gk), mk), vk) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *mk = b1 * *mk + (1.0 - b1) * gk;
                *vk = b2 * *vk + (1.0 - b2) * gk * gk;
                let m_hat = *mk / bc1;
                let v_hat = *vk / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

fn label(names: &[String], i: usize) -> String {
    names.get(i).cloned().unwrap_or_else(|| format!("parameter #{i}"))
}
