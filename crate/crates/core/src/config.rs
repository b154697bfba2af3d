//! Declarative experiment description, read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dko::{Architecture, LossWeights, TrainConfig};
use crate::edmd::DictionarySpec;
use crate::error::{Error, Result};
use crate::sim::TankParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub samples: usize,
    pub q_min: f64,
    pub q_max: f64,
    pub hold_min: usize,
    pub hold_max: usize,
    /// Initial levels `[h1, h2]`.
    pub x0: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub signal: u64,
    pub noise: u64,
    pub init: u64,
    pub shuffle: u64,
}

impl Seeds {
    pub fn from_base(seed: u64) -> Self {
        Self {
            signal: seed,
            noise: seed.wrapping_add(1),
            init: seed.wrapping_add(2),
            shuffle: seed.wrapping_add(3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// First `ceil(T/2)` samples train, the rest test.
    Half,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdmdConfig {
    pub degree: usize,
    pub n_delays: usize,
    pub ridge: f64,
}

impl EdmdConfig {
    pub fn spec(&self, include_sqrt: bool) -> DictionarySpec {
        DictionarySpec {
            degree: self.degree,
            include_sqrt,
            n_delays: self.n_delays,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DkoConfig {
    pub lstm_hidden: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub latent: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_learning_rate: Option<f64>,
    pub horizon: usize,
    pub eta_h: usize,
    /// Spacing between anchors of consecutive training windows.
    pub window_stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    /// Finite-difference check of the gradient before training.
    pub gradient_precheck: bool,
    pub weights: LossWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Equal tank level of the linearization point [m].
    pub linearization_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: TankParams,
    pub signal: SignalConfig,
    pub noise: NoiseConfig,
    pub seeds: Seeds,
    pub split: SplitRule,
    pub edmd: EdmdConfig,
    pub dko: DkoConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML form with the output directory blanked,
    /// so the same experiment hashes identically wherever it is written.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output.dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.plant.validate().map_err(|e| Error::Config(e.to_string()))?;
        let s = &self.signal;
        if s.samples < 2 {
            return bad(format!("signal.samples = {} is too small", s.samples));
        }
        if !(s.q_min >= 0.0 && s.q_min <= s.q_max && s.q_max.is_finite()) {
            return bad(format!("invalid flow range [{}, {}]", s.q_min, s.q_max));
        }
        if s.hold_min == 0 || s.hold_min > s.hold_max {
            return bad(format!("invalid hold range [{}, {}]", s.hold_min, s.hold_max));
        }
        if s.x0.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return bad(format!("initial levels {:?} must be non-negative", s.x0));
        }
        if !(self.noise.std.is_finite() && self.noise.std >= 0.0) {
            return bad(format!("noise.std = {}", self.noise.std));
        }
        self.edmd.spec(true).validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.edmd.ridge >= 0.0) {
            return bad(format!("edmd.ridge = {}", self.edmd.ridge));
        }
        let d = &self.dko;
        if d.window_stride == 0 || d.latent == 0 || d.lstm_hidden == 0 {
            return bad("dko sizes and window_stride must be positive".into());
        }
        self.train_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.eval.linearization_level > 0.0) {
            return bad(format!("eval.linearization_level = {}", self.eval.linearization_level));
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            n_states: 2,
            n_inputs: 1,
            lstm_hidden: self.dko.lstm_hidden,
            encoder_hidden: self.dko.encoder_hidden.clone(),
            decoder_hidden: self.dko.decoder_hidden.clone(),
            latent: self.dko.latent,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.dko.epochs,
            batch_size: self.dko.batch_size,
            learning_rate: self.dko.learning_rate,
            final_learning_rate: self.dko.final_learning_rate,
            horizon: self.dko.horizon,
            eta_h: self.dko.eta_h,
            seed: self.seeds.init,
            shuffle_seed: self.seeds.shuffle,
            weights: self.dko.weights,
            clip_norm: self.dko.clip_norm,
        }
    }
}
