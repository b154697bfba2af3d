//! Test-set comparison of the fitted models: open-loop rollout MAE against
//! the clean simulation and Koopman spectra against the linearized plant.

mod svg;

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_history, Normalizer, Trajectory};
use crate::dko::DeepKoopmanModel;
use crate::edmd::{EdmdModel, RolloutMode, SqrtMode};
use crate::error::{Error, Result};
use crate::linalg;
use crate::nn::Mat;
use crate::sim::TankParams;

pub use svg::{eigenvalue_svg, prediction_svg};

/// Mean over all samples and states of `|pred - truth|`.
pub fn mae(pred: &Mat, truth: &Mat) -> Result<f64> {
    let per = mae_per_state(pred, truth)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

pub fn mae_per_state(pred: &Mat, truth: &Mat) -> Result<Vec<f64>> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape("mae", format!("prediction {:?} vs truth {:?}", pred.shape(), truth.shape())));
    }
    if pred.cols() == 0 || pred.rows() == 0 {
        return Err(Error::Precondition("mae of an empty trajectory".into()));
    }
    Ok((0..pred.rows())
        .map(|r| pred.row(r).iter().zip(truth.row(r)).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.cols() as f64)
        .collect())
}

/// First sample from which every model has its required history.
pub fn warmup_index(eta_h: usize, n_delays: usize) -> usize {
    eta_h.max(n_delays)
}

fn check_warmup(test: &Trajectory, k0: usize, needed: usize) -> Result<()> {
    if k0 < needed {
        return Err(Error::Precondition(format!("warm-up index {k0} is shorter than the {needed} samples of history required")));
    }
    if k0 >= test.len() {
        return Err(Error::Precondition(format!(
            "test set of {} samples leaves nothing to predict after warm-up {k0}",
            test.len()
        )));
    }
    Ok(())
}

/// Clean states `x_{k0+1} ..= x_T`, the reference for a rollout starting at `k0`.
pub fn truth_after(test: &Trajectory, k0: usize) -> Result<Mat> {
    check_warmup(test, k0, 0)?;
    Ok(test.states().cols_range(k0 + 1, test.len() + 1))
}

/// Single open-loop eDMD rollout from the measured state at `k0` with the
/// preceding inputs as delay coordinates. Returns `x_{k0+1} ..= x_T`.
pub fn edmd_test_rollout(model: &EdmdModel, test: &Trajectory, k0: usize) -> Result<Mat> {
    let nd = model.spec.n_delays;
    check_warmup(test, k0, nd)?;
    let past: Vec<Vec<f64>> = (1..=nd).map(|d| test.input(k0 - d)).collect();
    let inputs = test.inputs().cols_range(k0, test.len());
    model.predict_rollout(
        &test.state(k0),
        &past,
        &inputs,
        inputs.cols(),
        RolloutMode::Linear,
        SqrtMode::ClampAtZero,
    )
}

/// Single open-loop DKO rollout: encode the measured state at `k0` with its
/// history, propagate linearly over all remaining inputs, decode and map
/// back to physical units. Returns `x_{k0+1} ..= x_T`.
pub fn dko_test_rollout(
    model: &DeepKoopmanModel,
    normalizer: &Normalizer,
    test: &Trajectory,
    eta_h: usize,
    k0: usize,
) -> Result<Mat> {
    check_warmup(test, k0, eta_h)?;
    let norm = normalizer.apply(test)?;
    let history = build_history(&norm, k0, eta_h)?;
    let z0 = model.encode(&norm.state(k0), &history)?;
    let inputs = norm.inputs().cols_range(k0, norm.len());
    let z = model.propagate(&z0, &inputs)?;
    normalizer.denormalize_states(&model.decode_batch(&z)?)
}

/// Continuous-time Jacobian eigenvalues of the tank model at equal levels
/// `h*`, and their discrete-time images `exp(lambda * Ts)`.
pub fn linearized_truth_eigs(params: &TankParams, h_star: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    if !(h_star > 0.0) || !h_star.is_finite() {
        return Err(Error::Domain(format!("linearization level {h_star} must be positive (sqrt derivative is singular at 0)")));
    }
    let s = 2.0 * h_star.sqrt();
    // lower triangular: eigenvalues are the diagonal entries
    let cont = vec![-params.k1 / (params.f1 * s), -params.k2 / (params.f2 * s)];
    let disc = cont.iter().map(|l| (l * params.ts).exp()).collect();
    Ok((cont, disc))
}

pub fn model_eigs(a: &Mat) -> Result<Vec<Complex64>> {
    linalg::eigenvalues(a)
}

/// Largest-modulus eigenvalue whose imaginary part is below `imag_tol`.
pub fn dominant_real_eigenvalue(eigs: &[Complex64], imag_tol: f64) -> Option<f64> {
    eigs.iter()
        .filter(|z| z.im.abs() <= imag_tol)
        .max_by(|a, b| a.re.abs().total_cmp(&b.re.abs()))
        .map(|z| z.re)
}

/// Tolerance for treating a computed eigenvalue as real.
pub const REAL_EIG_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub mae: f64,
    pub mae_per_state: Vec<f64>,
    pub mae_percent: f64,
    pub eigenvalues: Vec<[f64; 2]>,
    pub dominant_real_eigenvalue: Option<f64>,
}

/// Per-model predictions plus the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelResult {
    pub summary: ModelSummary,
    /// `n x (T - k0)`
    pub prediction: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub config_hash: String,
    pub warmup: usize,
    pub ts: f64,
    pub truth: Mat,
    pub truth_eigenvalues: Vec<f64>,
    pub linearization_level: f64,
    pub models: Vec<ModelResult>,
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    format_version: u32,
    config_hash: &'a str,
    warmup_index: usize,
    prediction_length: usize,
    linearization_level: f64,
    truth_eigenvalues: &'a [f64],
    models: Vec<&'a ModelSummary>,
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

impl EvalReport {
    /// Builds the report from aligned predictions; the best model is pinned
    /// to 100 %.
    pub fn new(
        config_hash: &str,
        warmup: usize,
        test: &Trajectory,
        params: &TankParams,
        linearization_level: f64,
        models: Vec<(String, Mat, Mat)>,
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Precondition("no models to evaluate".into()));
        }
        let truth = truth_after(test, warmup)?;
        let (_, truth_eigenvalues) = linearized_truth_eigs(params, linearization_level)?;
        let mut results = Vec::with_capacity(models.len());
        for (name, prediction, a) in models {
            let per = mae_per_state(&prediction, &truth)?;
            let m = per.iter().sum::<f64>() / per.len() as f64;
            if !m.is_finite() {
                return Err(Error::NonFinite(format!("{name} rollout")));
            }
            let eigs = model_eigs(&a)?;
            results.push(ModelResult {
                summary: ModelSummary {
                    mae: m,
                    mae_per_state: per,
                    mae_percent: 0.0,
                    dominant_real_eigenvalue: dominant_real_eigenvalue(&eigs, REAL_EIG_TOL),
                    eigenvalues: eigs.iter().map(|z| [z.re, z.im]).collect(),
                    name,
                },
                prediction,
            });
        }
        let best = results.iter().map(|r| r.summary.mae).fold(f64::INFINITY, f64::min);
        for r in &mut results {
            r.summary.mae_percent = if best > 0.0 { 100.0 * r.summary.mae / best } else { 100.0 };
        }
        Ok(Self {
            config_hash: config_hash.to_string(),
            warmup,
            ts: test.ts(),
            truth,
            truth_eigenvalues,
            linearization_level,
            models: results,
        })
    }

    pub fn model(&self, name: &str) -> Option<&ModelSummary> {
        self.models.iter().map(|m| &m.summary).find(|m| m.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ReportDocument {
            format_version: REPORT_FORMAT_VERSION,
            config_hash: &self.config_hash,
            warmup_index: self.warmup,
            prediction_length: self.truth.cols(),
            linearization_level: self.linearization_level,
            truth_eigenvalues: &self.truth_eigenvalues,
            models: self.models.iter().map(|m| &m.summary).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    /// `model,MAE [m],MAE [%]`
    pub fn mae_csv(&self) -> String {
        let mut s = format!("# config {}\nmodel,MAE [m],MAE [%]\n", self.config_hash);
        for m in &self.models {
            let _ = writeln!(s, "{},{},{}", m.summary.name, m.summary.mae, m.summary.mae_percent);
        }
        s
    }

    /// Time-aligned true and predicted levels with per-state errors.
    pub fn traces_csv(&self) -> String {
        let mut s = format!("# config {}\nt,h1_true,h2_true", self.config_hash);
        for m in &self.models {
            let n = &m.summary.name;
            let _ = write!(s, ",{n}_h1,{n}_h2,{n}_err_h1,{n}_err_h2");
        }
        s.push('\n');
        for k in 0..self.truth.cols() {
            let t = (self.warmup + 1 + k) as f64 * self.ts;
            let _ = write!(s, "{t},{},{}", self.truth[(0, k)], self.truth[(1, k)]);
            for m in &self.models {
                let p = &m.prediction;
                let _ = write!(
                    s,
                    ",{},{},{},{}",
                    p[(0, k)],
                    p[(1, k)],
                    p[(0, k)] - self.truth[(0, k)],
                    p[(1, k)] - self.truth[(1, k)]
                );
            }
            s.push('\n');
        }
        s
    }

    /// One row per eigenvalue, truth included, as `re,im` pairs.
    pub fn eigenvalues_csv(&self) -> String {
        let mut s = format!("# config {}\nmodel,index,re,im,modulus\n", self.config_hash);
        for (i, l) in self.truth_eigenvalues.iter().enumerate() {
            let _ = writeln!(s, "truth,{i},{l},0,{}", l.abs());
        }
        for m in &self.models {
            for (i, [re, im]) in m.summary.eigenvalues.iter().enumerate() {
                let _ = writeln!(s, "{},{i},{re},{im},{}", m.summary.name, re.hypot(*im));
            }
        }
        s
    }

    /// Writes `report.json`, `mae.csv`, `traces.csv`, `eigenvalues.csv`,
    /// `predictions.svg` and `eigenvalues.svg` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("report.json", self.to_json()?),
            ("mae.csv", self.mae_csv()),
            ("traces.csv", self.traces_csv()),
            ("eigenvalues.csv", self.eigenvalues_csv()),
            ("predictions.svg", prediction_svg(self)),
            ("eigenvalues.svg", eigenvalue_svg(self)),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::edmd::{fit, DictionarySpec, Snapshots};

    #[test]
    fn mae_examples() {
        let a = Mat::from_fn(2, 5, |i, j| (i * 5 + j) as f64 * 0.1);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 0.5);
        assert!((mae(&b, &a).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(mae(&a, &Mat::zeros(2, 4)), Err(Error::Shape { .. })));
    }

    #[test]
    fn truth_eigs_at_one_metre() {
        let (c, d) = linearized_truth_eigs(&TankParams::default(), 1.0).unwrap();
        assert_eq!(c, vec![-0.0075, -0.0075]);
        // exp(-0.075) by its series, independent of the library exp
        let mut term = 1.0;
        let mut series = 1.0;
        for k in 1..30 {
            term *= -0.075 / k as f64;
            series += term;
        }
        for l in d {
            assert!((l - series).abs() < 1e-15);
            assert!((l - 0.92774).abs() < 5e-6);
        }
    }

    #[test]
    fn truth_eigs_reject_zero_level_and_scale_with_area() {
        assert!(matches!(linearized_truth_eigs(&TankParams::default(), 0.0), Err(Error::Domain(_))));
        let mut p = TankParams::default();
        p.f1 = 2.0;
        let (c, _) = linearized_truth_eigs(&p, 1.0).unwrap();
        assert_eq!(c[0], -0.0075 / 2.0);
    }

    /// Characteristic polynomial coefficients `c_0 = 1, c_1, .., c_n` of
    /// `det(lambda I - A)` via the Faddeev-LeVerrier recursion.
    fn char_poly(a: &Mat) -> Vec<f64> {
        let n = a.rows();
        let mut c = vec![1.0];
        let mut m = Mat::zeros(n, n);
        for k in 1..=n {
            // M_k = A M_{k-1} + c_{k-1} I
            let mut next = a.matmul(&m).unwrap();
            for i in 0..n {
                next[(i, i)] += c[k - 1];
            }
            m = next;
            let am = a.matmul(&m).unwrap();
            let trace: f64 = (0..n).map(|i| am[(i, i)]).sum();
            c.push(-trace / k as f64);
        }
        c
    }

    /// Durand-Kerner simultaneous iteration on a monic polynomial.
    fn poly_roots(c: &[f64]) -> Vec<Complex64> {
        let n = c.len() - 1;
        let eval = |z: Complex64| c.iter().fold(Complex64::new(0.0, 0.0), |acc, &ci| acc * z + ci);
        let seed = Complex64::new(0.4, 0.9);
        let mut roots: Vec<Complex64> = (0..n).map(|i| seed.powu(i as u32)).collect();
        for _ in 0..2000 {
            let prev = roots.clone();
            for i in 0..n {
                let mut denom = Complex64::new(1.0, 0.0);
                for j in 0..n {
                    if i != j {
                        denom *= roots[i] - roots[j];
                    }
                }
                let delta = eval(roots[i]) / denom;
                roots[i] -= delta;
            }
            if roots.iter().zip(&prev).all(|(a, b)| (a - b).norm() < 1e-15) {
                break;
            }
        }
        roots
    }

    fn assert_same_spectrum(a: &[Complex64], b: &[Complex64], tol: f64) {
        assert_eq!(a.len(), b.len());
        let mut used = vec![false; b.len()];
        for x in a {
            let (j, d) = b
                .iter()
                .enumerate()
                .filter(|(j, _)| !used[*j])
                .map(|(j, y)| (j, (x - y).norm()))
                .min_by(|p, q| p.1.total_cmp(&q.1))
                .unwrap();
            assert!(d < tol, "{x} unmatched (closest at {d:e})");
            used[j] = true;
        }
    }

    #[test]
    fn eigen_solver_matches_characteristic_polynomial_roots() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..5 {
            let a = Mat::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
            let got = model_eigs(&a).unwrap();
            let want = poly_roots(&char_poly(&a));
            assert_same_spectrum(&got, &want, 1e-8);
            for w in got.windows(2) {
                assert!(w[0].norm() >= w[1].norm());
            }
        }
    }

    #[test]
    fn dominant_real_skips_complex_pairs() {
        let eigs = [
            Complex64::new(0.1, 0.95),
            Complex64::new(0.1, -0.95),
            Complex64::new(-0.5, 0.0),
            Complex64::new(0.9, 0.0),
        ];
        assert_eq!(dominant_real_eigenvalue(&eigs, 1e-12), Some(0.9));
        assert_eq!(dominant_real_eigenvalue(&eigs[..2], 1e-12), None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn spectrum_is_similarity_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Mat::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let t = Mat::from_fn(5, 5, |i, j| if i == j { 1.0 } else { 0.0 } + rng.random_range(-0.2..0.2));
            let td = nalgebra::DMatrix::from_row_slice(5, 5, t.as_slice());
            let tinv = td.try_inverse().unwrap();
            let tinv = Mat::from_vec(5, 5, tinv.transpose().as_slice().to_vec()).unwrap();
            let b = tinv.matmul(&a).unwrap().matmul(&t).unwrap();
            assert_same_spectrum(&model_eigs(&a).unwrap(), &model_eigs(&b).unwrap(), 1e-8);
        }

        #[test]
        fn mae_is_symmetric_and_translation_covariant(seed in any::<u64>(), shift in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Mat::from_fn(2, 8, |_, _| rng.random_range(-1.0..1.0));
            let b = Mat::from_fn(2, 8, |_, _| rng.random_range(-1.0..1.0));
            prop_assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
            let (sa, sb) = (a.map(|v| v + shift), b.map(|v| v + shift));
            prop_assert!((mae(&sa, &sb).unwrap() - mae(&a, &b).unwrap()).abs() < 1e-12);
            prop_assert!(mae(&a, &b).unwrap() >= 0.0);
        }
    }

    fn linear_traj(t: usize) -> Trajectory {
        let inputs = Mat::from_fn(1, t, |_, k| ((k * 7) % 11) as f64 / 11.0);
        let mut x = vec![0.0];
        for k in 0..t {
            x.push(0.9 * x[k] + 0.1 * inputs[(0, k)]);
        }
        let states = Mat::from_fn(2, t + 1, |_, k| x[k]);
        Trajectory::new(states, inputs, 1.0).unwrap()
    }

    #[test]
    fn exact_linear_model_has_zero_test_error() {
        let train = linear_traj(200);
        let spec = DictionarySpec {
            degree: 1,
            include_sqrt: false,
            n_delays: 2,
        };
        let snaps = Snapshots::from_trajectory(&spec, &train, SqrtMode::Strict).unwrap();
        let model = fit(spec, 2, &snaps, 1e-12).unwrap();
        let test = linear_traj(120);
        let k0 = warmup_index(5, 2);
        let pred = edmd_test_rollout(&model, &test, k0).unwrap();
        assert_eq!(pred.cols(), test.len() - k0);
        assert!(mae(&pred, &truth_after(&test, k0).unwrap()).unwrap() < 1e-8);
    }

    #[test]
    fn insufficient_warmup_is_an_error() {
        let test = linear_traj(30);
        let spec = DictionarySpec {
            degree: 1,
            include_sqrt: false,
            n_delays: 4,
        };
        let snaps = Snapshots::from_trajectory(&spec, &test, SqrtMode::Strict).unwrap();
        let model = fit(spec, 2, &snaps, 1e-10).unwrap();
        assert!(matches!(edmd_test_rollout(&model, &test, 3), Err(Error::Precondition(_))));
        assert!(matches!(edmd_test_rollout(&model, &test, 30), Err(Error::Precondition(_))));
    }

    #[test]
    fn report_pins_best_model_and_aligns_traces() {
        let test = linear_traj(60);
        let k0 = 5;
        let truth = truth_after(&test, k0).unwrap();
        let off = |d: f64| truth.map(|v| v + d);
        let report = EvalReport::new(
            "abc",
            k0,
            &test,
            &TankParams::default(),
            1.0,
            vec![
                ("good".into(), off(0.1), Mat::identity(2)),
                ("bad".into(), off(-0.3), Mat::zeros(3, 3)),
            ],
        )
        .unwrap();
        assert!((report.model("good").unwrap().mae_percent - 100.0).abs() < 1e-12);
        assert!((report.model("bad").unwrap().mae_percent - 300.0).abs() < 1e-9);
        let csv = report.traces_csv();
        let first = csv.lines().nth(2).unwrap();
        assert!(first.starts_with(&format!("{},", (k0 + 1) as f64)));
        assert_eq!(csv.lines().count(), 2 + truth.cols());
        let table = report.mae_csv();
        assert!(table.contains("model,MAE [m],MAE [%]"));
        let single = EvalReport::new("x", k0, &test, &TankParams::default(), 1.0, vec![("only".into(), off(0.2), Mat::identity(1))]).unwrap();
        assert_eq!(single.models[0].summary.mae_percent, 100.0);
        let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(json["config_hash"], "abc");
        assert!(prediction_svg(&report).contains("abc"));
        assert!(eigenvalue_svg(&report).starts_with("<svg"));
    }
}
