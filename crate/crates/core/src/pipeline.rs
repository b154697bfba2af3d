//! End-to-end experiment steps behind the command-line driver.
//!
//! Layout of an output directory:
//!
//! ```text
//! data/    clean.csv noisy.csv manifest.json
//! models/  edmd-known.json edmd-unknown.json dko.json dko.log.csv
//! report/  report.json mae.csv traces.csv eigenvalues.csv predictions.svg eigenvalues.svg
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::dataset::{make_windows, split_train_test, Normalizer, Trajectory};
use crate::dko::{self, Architecture, DeepKoopmanModel, TrainingLog};
use crate::edmd::{self, EdmdModel, Snapshots, SqrtMode};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::sim::{self, TankState};

pub const FORMAT_VERSION: u32 = 1;

/// Maximum relative error tolerated by the pre-training gradient check.
pub const PRECHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    EdmdKnown,
    EdmdUnknown,
    Dko,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::EdmdKnown, Family::EdmdUnknown, Family::Dko];

    pub fn name(self) -> &'static str {
        match self {
            Family::EdmdKnown => "edmd-known",
            Family::EdmdUnknown => "edmd-unknown",
            Family::Dko => "dko",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model family {s:?} (expected edmd-known, edmd-unknown or dko)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub format_version: u32,
    pub config_hash: String,
    pub samples: usize,
    pub ts: f64,
    pub tau_steps: usize,
    pub noise_std: f64,
    pub signal_seed: u64,
    pub noise_seed: u64,
    pub plant: sim::TankParams,
    pub clean_sha256: String,
    pub noisy_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdmdCheckpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub family: Family,
    pub lifted_dim: usize,
    pub model: EdmdModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DkoCheckpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub architecture: Architecture,
    pub eta_h: usize,
    pub horizon: usize,
    pub normalizer: Normalizer,
    pub final_loss: Option<f64>,
    pub model: DeepKoopmanModel,
}

pub fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

pub fn models_dir(out: &Path) -> PathBuf {
    out.join("models")
}

pub fn report_dir(out: &Path) -> PathBuf {
    out.join("report")
}

pub fn checkpoint_path(out: &Path, family: Family) -> PathBuf {
    models_dir(out).join(format!("{}.json", family.name()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

/// Reads a versioned JSON document, checking `format_version` before the
/// full parse so incompatible files get a clear error.
fn read_versioned<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Version {
        path: path.to_path_buf(),
        detail: format!("not valid JSON: {e}"),
    })?;
    match raw.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        other => {
            return Err(Error::Version {
                path: path.to_path_buf(),
                detail: format!("format_version {other:?}, expected {FORMAT_VERSION}"),
            })
        }
    }
    serde_json::from_value(raw).map_err(|e| Error::Version {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Generates the clean and noisy trajectories and their manifest.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<DataManifest> {
    let hash = cfg.hash()?;
    let s = &cfg.signal;
    let signal = sim::generate_random_input(cfg.seeds.signal, s.samples, s.q_min, s.q_max, s.hold_min, s.hold_max)?;
    let clean = sim::simulate(&cfg.plant, &signal, TankState::new(s.x0[0], s.x0[1]), s.samples)?;
    let noisy = sim::add_noise(&clean, cfg.noise.std, cfg.seeds.noise)?;
    let comment = format!("config {hash}");
    let mut bodies = Vec::new();
    for (name, traj) in [("clean.csv", &clean), ("noisy.csv", &noisy)] {
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, Some(&comment)).map_err(|e| Error::io(name, e))?;
        write_file(&data_dir(out).join(name), &buf)?;
        bodies.push(buf);
    }
    let manifest = DataManifest {
        format_version: FORMAT_VERSION,
        config_hash: hash,
        samples: s.samples,
        ts: cfg.plant.ts,
        tau_steps: cfg.plant.tau_steps,
        noise_std: cfg.noise.std,
        signal_seed: cfg.seeds.signal,
        noise_seed: cfg.seeds.noise,
        plant: cfg.plant,
        clean_sha256: sha256_hex(&bodies[0]),
        noisy_sha256: sha256_hex(&bodies[1]),
    };
    write_json(&data_dir(out).join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub struct Dataset {
    pub manifest: DataManifest,
    pub clean: Trajectory,
    pub noisy: Trajectory,
}

impl Dataset {
    pub fn load(out: &Path) -> Result<Self> {
        let dir = data_dir(out);
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.exists() {
            return Err(Error::Data(format!(
                "no dataset in {} (run `simulate` first)",
                dir.display()
            )));
        }
        let manifest: DataManifest = read_versioned(&manifest_path)?;
        let clean = Trajectory::load_csv(&dir.join("clean.csv"))?;
        let noisy = Trajectory::load_csv(&dir.join("noisy.csv"))?;
        if clean.len() != manifest.samples || noisy.len() != manifest.samples {
            return Err(Error::Data(format!(
                "manifest promises {} samples, files hold {} / {}",
                manifest.samples,
                clean.len(),
                noisy.len()
            )));
        }
        Ok(Self { manifest, clean, noisy })
    }

    /// `(noisy train, noisy test, clean test)`
    pub fn split(&self) -> Result<(Trajectory, Trajectory, Trajectory)> {
        let (train, test) = split_train_test(&self.noisy)?;
        let (_, clean_test) = split_train_test(&self.clean)?;
        Ok((train, test, clean_test))
    }
}

/// Outcome of a training command, for progress reporting.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainSummary {
    Edmd { lifted_dim: usize, residual: f64 },
    Dko { a_shape: (usize, usize), b_shape: (usize, usize), final_loss: Option<f64>, precheck: Option<f64> },
}

pub fn fit_edmd(cfg: &RunConfig, family: Family, train: &Trajectory) -> Result<EdmdModel> {
    let spec = cfg.edmd.spec(family == Family::EdmdKnown);
    let snaps = Snapshots::from_trajectory(&spec, train, SqrtMode::ClampAtZero)?;
    edmd::fit(spec, train.n_states(), &snaps, cfg.edmd.ridge)
}

/// Gradient check on a small model over a few normalized training windows.
pub fn gradient_precheck(train_norm: &Trajectory, seed: u64, weights: dko::LossWeights) -> Result<f64> {
    let arch = Architecture {
        n_states: train_norm.n_states(),
        n_inputs: train_norm.n_inputs(),
        lstm_hidden: 3,
        encoder_hidden: vec![6],
        decoder_hidden: vec![6],
        latent: 4,
    };
    let windows = make_windows(train_norm, 4, 3, 97)?;
    if windows.is_empty() {
        return Err(Error::Data("training set too short for the gradient check".into()));
    }
    let windows = &windows[..windows.len().min(4)];
    let mut model = DeepKoopmanModel::new(&arch, seed)?;
    let check = dko::gradient_check(&mut model, windows, weights, 3e-4)?;
    if !(check.max_rel_error < PRECHECK_TOLERANCE) {
        return Err(Error::GradientCheck {
            max_rel_error: check.max_rel_error,
            worst: check.worst,
        });
    }
    Ok(check.max_rel_error)
}

pub fn train_dko(
    cfg: &RunConfig,
    train: &Trajectory,
    mut progress: impl FnMut(&dko::EpochStats),
) -> Result<(DkoCheckpoint, TrainingLog, Option<f64>)> {
    let normalizer = Normalizer::fit(train);
    let train_norm = normalizer.apply(train)?;
    let tc = cfg.train_config();
    let precheck = if cfg.dko.gradient_precheck {
        Some(gradient_precheck(&train_norm, tc.seed, tc.weights)?)
    } else {
        None
    };
    let windows = make_windows(&train_norm, tc.eta_h, tc.horizon, cfg.dko.window_stride)?;
    let arch = cfg.architecture();
    let (model, log) = dko::train(&windows, &arch, &tc, &mut progress)?;
    let ckpt = DkoCheckpoint {
        format_version: FORMAT_VERSION,
        config_hash: cfg.hash()?,
        architecture: arch,
        eta_h: tc.eta_h,
        horizon: tc.horizon,
        normalizer,
        final_loss: log.final_loss(),
        model,
    };
    Ok((ckpt, log, precheck))
}

/// Fits one model family on the training half and writes its checkpoint.
pub fn cmd_train(
    cfg: &RunConfig,
    family: Family,
    out: &Path,
    progress: impl FnMut(&dko::EpochStats),
) -> Result<TrainSummary> {
    let data = Dataset::load(out)?;
    let (train, _, _) = data.split()?;
    let hash = cfg.hash()?;
    match family {
        Family::EdmdKnown | Family::EdmdUnknown => {
            let model = fit_edmd(cfg, family, &train)?;
            let summary = TrainSummary::Edmd {
                lifted_dim: model.lifted_dim(),
                residual: model.residual,
            };
            write_json(
                &checkpoint_path(out, family),
                &EdmdCheckpoint {
                    format_version: FORMAT_VERSION,
                    config_hash: hash,
                    family,
                    lifted_dim: model.lifted_dim(),
                    model,
                },
            )?;
            Ok(summary)
        }
        Family::Dko => {
            let (ckpt, log, precheck) = train_dko(cfg, &train, progress)?;
            let summary = TrainSummary::Dko {
                a_shape: ckpt.model.a_k.shape(),
                b_shape: ckpt.model.b_k.shape(),
                final_loss: ckpt.final_loss,
                precheck,
            };
            write_json(&checkpoint_path(out, family), &ckpt)?;
            write_file(
                &models_dir(out).join("dko.log.csv"),
                format!("# config {hash}\n{}", log.to_csv()),
            )?;
            Ok(summary)
        }
    }
}

pub fn load_edmd(path: &Path) -> Result<EdmdCheckpoint> {
    let ckpt: EdmdCheckpoint = read_versioned(path)?;
    ckpt.model.validate()?;
    Ok(ckpt)
}

pub fn load_dko(path: &Path) -> Result<DkoCheckpoint> {
    let ckpt: DkoCheckpoint = read_versioned(path)?;
    ckpt.model.validate()?;
    Ok(ckpt)
}

/// Evaluates every checkpoint present in `models/` on the test half and
/// writes the report files. All models start at the same warm-up index.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    let data = Dataset::load(out)?;
    let (_, test, clean_test) = data.split()?;
    let k0 = eval::warmup_index(cfg.dko.eta_h, cfg.edmd.n_delays);
    let mut models = Vec::new();
    for family in Family::ALL {
        let path = checkpoint_path(out, family);
        if !path.exists() {
            continue;
        }
        match family {
            Family::Dko => {
                let ckpt = load_dko(&path)?;
                let pred = eval::dko_test_rollout(&ckpt.model, &ckpt.normalizer, &test, ckpt.eta_h, k0)?;
                models.push((family.name().to_string(), pred, ckpt.model.a_k));
            }
            _ => {
                let ckpt = load_edmd(&path)?;
                let pred = eval::edmd_test_rollout(&ckpt.model, &test, k0)?;
                models.push((family.name().to_string(), pred, ckpt.model.a));
            }
        }
    }
    if models.is_empty() {
        return Err(Error::Data(format!("no checkpoints found in {}", models_dir(out).display())));
    }
    let report = EvalReport::new(&cfg.hash()?, k0, &clean_test, &cfg.plant, cfg.eval.linearization_level, models)?;
    report.write_all(&report_dir(out))?;
    Ok(report)
}

/// simulate, train all three families, evaluate.
pub fn run_all(cfg: &RunConfig, out: &Path, mut progress: impl FnMut(&str)) -> Result<EvalReport> {
    let manifest = cmd_simulate(cfg, out)?;
    progress(&format!("simulated {} samples", manifest.samples));
    for family in Family::ALL {
        let summary = cmd_train(cfg, family, out, |e| {
            if e.epoch % 10 == 0 {
                progress(&format!("dko epoch {:>4}: loss {:.6e}", e.epoch, e.loss.total));
            }
        })?;
        progress(&format!("trained {family}: {summary:?}"));
    }
    cmd_evaluate(cfg, out)
}
