//! Extended DMD with control: dictionary lifting, input-delay embedding,
//! ridge-regularized least squares for `(A, B)` and linear rollout.

use serde::{Deserialize, Serialize};

use crate::dataset::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::nn::{gemm, Mat, Op};

/// Lifted coordinates, in this order:
///
/// 1. all monomials of the states up to total degree `degree`, graded
///    (`1, x1, x2, x1^2, x1 x2, x2^2, ...`);
/// 2. `sqrt(x_i)` for every state when `include_sqrt`;
/// 3. past inputs `u_{k-1}, ..., u_{k-n_delays}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionarySpec {
    pub degree: usize,
    pub include_sqrt: bool,
    pub n_delays: usize,
}

/// How `lift` treats negative states when square-root terms are requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqrtMode {
    /// Negative states are a domain error.
    Strict,
    /// `sqrt(max(x, 0))`; used on noisy measurements near empty tanks.
    ClampAtZero,
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Exponent tuples of all monomials up to `degree`, graded then lexicographic.
fn monomial_terms(n: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i, n, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for d in 0..=degree {
        rec(0, n, d, &mut Vec::new(), &mut out);
    }
    out
}

impl DictionarySpec {
    pub fn validate(&self) -> Result<()> {
        if self.degree == 0 {
            return Err(Error::Precondition("dictionary degree must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_monomials(&self, n_states: usize) -> usize {
        binomial(n_states + self.degree, self.degree)
    }

    /// `C(n+d, d) + n [sqrt] + m * n_delays`.
    pub fn lifted_dim(&self, n_states: usize, n_inputs: usize) -> usize {
        self.n_monomials(n_states) + if self.include_sqrt { n_states } else { 0 } + n_inputs * self.n_delays
    }

    /// Positions of the raw states inside the lifted vector.
    pub fn state_indices(&self, n_states: usize) -> Vec<usize> {
        (1..=n_states).collect()
    }

    /// `past_inputs` holds `n_delays` input vectors, most recent (`u_{k-1}`) first.
    pub fn lift(&self, x: &[f64], past_inputs: &[Vec<f64>], mode: SqrtMode) -> Result<Vec<f64>> {
        self.validate()?;
        if past_inputs.len() != self.n_delays {
            return Err(Error::shape(
                "lift",
                format!("{} past inputs for {} delays", past_inputs.len(), self.n_delays),
            ));
        }
        let mut z = Vec::with_capacity(self.lifted_dim(x.len(), past_inputs.first().map_or(1, Vec::len)));
        for term in monomial_terms(x.len(), self.degree) {
            z.push(term.iter().map(|&i| x[i]).product());
        }
        if self.include_sqrt {
            for &v in x {
                let v = match mode {
                    SqrtMode::Strict if v < 0.0 => {
                        return Err(Error::Domain(format!("square root of negative state {v}")));
                    }
                    SqrtMode::Strict => v,
                    SqrtMode::ClampAtZero => v.max(0.0),
                };
                z.push(v.sqrt());
            }
        }
        for u in past_inputs {
            z.extend_from_slice(u);
        }
        Ok(z)
    }

    /// Lifted state at sample `k` of a trajectory; needs `k >= n_delays`.
    pub fn lift_at(&self, traj: &Trajectory, k: usize, mode: SqrtMode) -> Result<Vec<f64>> {
        if k < self.n_delays || k > traj.len() {
            return Err(Error::OutOfRange(format!(
                "lifting sample {k} needs {} past inputs",
                self.n_delays
            )));
        }
        let past: Vec<Vec<f64>> = (1..=self.n_delays).map(|d| traj.input(k - d)).collect();
        self.lift(&traj.state(k), &past, mode)
    }
}

/// Column-wise snapshot triples `(z_k, u_k, z_{k+1})`.
#[derive(Debug, Clone)]
pub struct Snapshots {
    pub z: Mat,
    pub u: Mat,
    pub z_next: Mat,
}

impl Snapshots {
    pub fn new(z: Mat, u: Mat, z_next: Mat) -> Result<Self> {
        if z.shape() != z_next.shape() || u.cols() != z.cols() {
            return Err(Error::shape(
                "Snapshots",
                format!("z {:?}, u {:?}, z_next {:?}", z.shape(), u.shape(), z_next.shape()),
            ));
        }
        Ok(Self { z, u, z_next })
    }

    pub fn len(&self) -> usize {
        self.z.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.z.cols() == 0
    }

    /// All snapshots `k = n_delays .. T-1` of a trajectory.
    pub fn from_trajectory(spec: &DictionarySpec, traj: &Trajectory, mode: SqrtMode) -> Result<Self> {
        let start = spec.n_delays;
        let t = traj.len();
        if t <= start {
            return Err(Error::Data(format!(
                "trajectory with {t} samples has no snapshots for {} delays",
                spec.n_delays
            )));
        }
        let count = t - start;
        let p = spec.lifted_dim(traj.n_states(), traj.n_inputs());
        let mut z = Mat::zeros(p, count);
        let mut z_next = Mat::zeros(p, count);
        let mut prev = spec.lift_at(traj, start, mode)?;
        for (c, k) in (start..t).enumerate() {
            let next = spec.lift_at(traj, k + 1, mode)?;
            z.set_col(c, &prev);
            z_next.set_col(c, &next);
            prev = next;
        }
        let u = traj.inputs().cols_range(start, t);
        Snapshots::new(z, u, z_next)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdmdModel {
    pub spec: DictionarySpec,
    pub n_states: usize,
    pub n_inputs: usize,
    /// `p x p`
    pub a: Mat,
    /// `p x m`
    pub b: Mat,
    pub state_indices: Vec<usize>,
    pub ridge: f64,
    /// Sum of squared one-step residuals over the fitted snapshots.
    pub residual: f64,
}

/// Propagation rule for multi-step prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    /// `z_{k+1} = A z_k + B u_k` entirely in lifted space.
    Linear,
    /// Decode the states after every step and rebuild the dictionary terms
    /// from them and the true past inputs. Diagnostic only.
    Relift,
}

/// Ridge regression on the normal equations:
/// `[A B] = Z' Theta^T (Theta Theta^T + ridge I)^{-1}`, `Theta = [Z; U]`.
pub fn fit(spec: DictionarySpec, n_states: usize, snapshots: &Snapshots, ridge: f64) -> Result<EdmdModel> {
    spec.validate()?;
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::Precondition(format!("ridge must be >= 0, got {ridge}")));
    }
    let p = snapshots.z.rows();
    let m = snapshots.u.rows();
    if p != spec.lifted_dim(n_states, m) {
        return Err(Error::shape(
            "edmd::fit",
            format!("lifted dimension {p}, dictionary defines {}", spec.lifted_dim(n_states, m)),
        ));
    }
    if snapshots.len() < p + m {
        return Err(Error::Precondition(format!(
            "{} snapshots for {} unknowns per row",
            snapshots.len(),
            p + m
        )));
    }
    if !snapshots.z.is_finite() || !snapshots.u.is_finite() || !snapshots.z_next.is_finite() {
        return Err(Error::NonFinite("eDMD snapshots".into()));
    }
    let theta = Mat::vstack(&snapshots.z, &snapshots.u)?;
    let q = p + m;
    let mut gram = Mat::zeros(q, q);
    gemm(1.0, &theta, Op::N, &theta, Op::T, 0.0, &mut gram)?;
    for i in 0..q {
        gram[(i, i)] += ridge;
    }
    // rhs = Theta Z'^T  (q x p), solve gram * X = rhs, [A B] = X^T
    let mut rhs = Mat::zeros(q, p);
    gemm(1.0, &theta, Op::N, &snapshots.z_next, Op::T, 0.0, &mut rhs)?;
    let sol = solve_spd(&gram, &rhs).map_err(|e| match e {
        Error::Singular(msg) if ridge == 0.0 => Error::Singular(format!(
            "{msg}; the Gram matrix is rank deficient, use a positive ridge parameter"
        )),
        other => other,
    })?;
    let ab = sol.transpose();
    let a = ab.cols_range(0, p);
    let b = ab.cols_range(p, q);

    let mut resid = snapshots.z_next.clone();
    gemm(-1.0, &ab, Op::N, &theta, Op::N, 1.0, &mut resid)?;
    Ok(EdmdModel {
        spec,
        n_states,
        n_inputs: m,
        a,
        b,
        state_indices: spec.state_indices(n_states),
        ridge,
        residual: resid.frobenius_sq(),
    })
}

/// Regularized objective `sum ||z' - A z - B u||^2 + ridge ||[A B]||_F^2`.
pub fn objective(a: &Mat, b: &Mat, snapshots: &Snapshots, ridge: f64) -> Result<f64> {
    let mut resid = snapshots.z_next.clone();
    gemm(-1.0, a, Op::N, &snapshots.z, Op::N, 1.0, &mut resid)?;
    gemm(-1.0, b, Op::N, &snapshots.u, Op::N, 1.0, &mut resid)?;
    Ok(resid.frobenius_sq() + ridge * (a.frobenius_sq() + b.frobenius_sq()))
}

impl EdmdModel {
    pub fn lifted_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.spec.lifted_dim(self.n_states, self.n_inputs);
        if self.a.shape() != (p, p) || self.b.shape() != (p, self.n_inputs) {
            return Err(Error::shape("EdmdModel", "matrices do not match the dictionary"));
        }
        if self.state_indices.iter().any(|&i| i >= p) {
            return Err(Error::shape("EdmdModel", "state index outside the lifted vector"));
        }
        if !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::NonFinite("eDMD model matrices".into()));
        }
        Ok(())
    }

    /// `A z + B u`.
    pub fn step(&self, z: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let mut next = self.a.matvec(z)?;
        let bu = self.b.matvec(u)?;
        for (a, b) in next.iter_mut().zip(bu) {
            *a += b;
        }
        Ok(next)
    }

    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        self.state_indices.iter().map(|&i| z[i]).collect()
    }

    /// Predicts `x_1 ..= x_N` from `x_0`, its `n_delays` past inputs (most
    /// recent first) and the inputs `u_0 .. u_{N-1}` (columns of `inputs`).
    /// Returns an `n x N` matrix.
    pub fn predict_rollout(
        &self,
        x0: &[f64],
        past_inputs: &[Vec<f64>],
        inputs: &Mat,
        n: usize,
        mode: RolloutMode,
        sqrt_mode: SqrtMode,
    ) -> Result<Mat> {
        if inputs.cols() < n || inputs.rows() != self.n_inputs {
            return Err(Error::Precondition(format!(
                "{}x{} input matrix for a {n}-step rollout",
                inputs.rows(),
                inputs.cols()
            )));
        }
        let mut z = self.spec.lift(x0, past_inputs, sqrt_mode)?;
        let mut history: Vec<Vec<f64>> = past_inputs.to_vec();
        let mut out = Mat::zeros(self.n_states, n);
        for k in 0..n {
            let u = inputs.col(k);
            z = self.step(&z, &u)?;
            if mode == RolloutMode::Relift {
                if !history.is_empty() {
                    history.pop();
                    history.insert(0, u);
                }
                z = self.spec.lift(&self.project(&z), &history, SqrtMode::ClampAtZero)?;
            }
            out.set_col(k, &self.project(&z));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_spec() -> DictionarySpec {
        DictionarySpec {
            degree: 1,
            include_sqrt: false,
            n_delays: 0,
        }
    }

    /// x_{k+1} = 0.9 x_k + 0.1 u_k with a random input
    fn scalar_linear_trajectory(n: usize) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut x = vec![0.5];
        for k in 0..n {
            x.push(0.9 * x[k] + 0.1 * u[k]);
        }
        Trajectory::new(Mat::from_vec(1, n + 1, x).unwrap(), Mat::from_vec(1, n, u).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn lifted_dimensions() {
        let known = DictionarySpec { degree: 2, include_sqrt: true, n_delays: 20 };
        let unknown = DictionarySpec { include_sqrt: false, ..known };
        assert_eq!(known.lifted_dim(2, 1), 28);
        assert_eq!(unknown.lifted_dim(2, 1), 26);
        assert_eq!(DictionarySpec { degree: 3, include_sqrt: false, n_delays: 0 }.lifted_dim(2, 1), 10);
    }

    #[test]
    fn lift_at_origin() {
        let spec = DictionarySpec { degree: 2, include_sqrt: true, n_delays: 20 };
        let z = spec.lift(&[0.0, 0.0], &vec![vec![0.0]; 20], SqrtMode::Strict).unwrap();
        assert_eq!(z.len(), 28);
        assert_eq!(z[0], 1.0);
        assert!(z[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lift_hand_values() {
        let spec = DictionarySpec { degree: 2, include_sqrt: true, n_delays: 2 };
        let z = spec.lift(&[1.0, 1.0], &[vec![0.0], vec![0.0]], SqrtMode::Strict).unwrap();
        assert!(z[..8].iter().all(|&v| v == 1.0));
        let z = spec.lift(&[4.0, 9.0], &[vec![0.01], vec![0.02]], SqrtMode::Strict).unwrap();
        assert_eq!(z, vec![1.0, 4.0, 9.0, 16.0, 36.0, 81.0, 2.0, 3.0, 0.01, 0.02]);
        assert_eq!(spec.state_indices(2), vec![1, 2]);
    }

    #[test]
    fn lift_negative_state() {
        let spec = DictionarySpec { degree: 2, include_sqrt: true, n_delays: 0 };
        assert!(matches!(spec.lift(&[-0.1, 1.0], &[], SqrtMode::Strict), Err(Error::Domain(_))));
        let z = spec.lift(&[-0.1, 1.0], &[], SqrtMode::ClampAtZero).unwrap();
        assert_eq!(z[6], 0.0);
        assert_eq!(z[1], -0.1);
    }

    #[test]
    fn recovers_scalar_linear_system() {
        let traj = scalar_linear_trajectory(200);
        let spec = identity_spec();
        let snaps = Snapshots::from_trajectory(&spec, &traj, SqrtMode::Strict).unwrap();
        let model = fit(spec, 1, &snaps, 0.0).unwrap();
        assert!((model.a[(1, 1)] - 0.9).abs() < 1e-8);
        assert!((model.b[(1, 0)] - 0.1).abs() < 1e-8);
        assert!(model.a[(1, 0)].abs() < 1e-8);
        let pred = model
            .predict_rollout(&traj.state(0), &[], traj.inputs(), 100, RolloutMode::Linear, SqrtMode::Strict)
            .unwrap();
        for k in 0..100 {
            assert!((pred[(0, k)] - traj.state(k + 1)[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn fit_with_constant_term_recovers_affine_free_system() {
        // 2 states with the degree-1 dictionary [1, x1, x2]
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a0 = [[0.8, 0.1], [-0.2, 0.7]];
        let b0 = [0.3, -0.5];
        let n = 300;
        let mut xs = vec![[0.2, -0.4]];
        let mut us = Vec::new();
        for k in 0..n {
            let u: f64 = rng.random_range(-1.0..1.0);
            let x = xs[k];
            xs.push([
                a0[0][0] * x[0] + a0[0][1] * x[1] + b0[0] * u,
                a0[1][0] * x[0] + a0[1][1] * x[1] + b0[1] * u,
            ]);
            us.push(u);
        }
        let states = Mat::from_fn(2, n + 1, |i, k| xs[k][i]);
        let inputs = Mat::from_vec(1, n, us).unwrap();
        let traj = Trajectory::new(states, inputs, 1.0).unwrap();
        let spec = identity_spec();
        let snaps = Snapshots::from_trajectory(&spec, &traj, SqrtMode::Strict).unwrap();
        let model = fit(spec, 2, &snaps, 0.0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((model.a[(i + 1, j + 1)] - a0[i][j]).abs() < 1e-8);
            }
            assert!((model.b[(i + 1, 0)] - b0[i]).abs() < 1e-8);
        }
        assert!(model.residual < 1e-20);

        let pred = model
            .predict_rollout(&traj.state(0), &[], traj.inputs(), 100, RolloutMode::Linear, SqrtMode::Strict)
            .unwrap();
        for k in 0..100 {
            for i in 0..2 {
                assert!((pred[(i, k)] - xs[k + 1][i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_targets_give_zero_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = identity_spec();
        let z = Mat::from_fn(3, 50, |i, _| if i == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let u = Mat::from_fn(1, 50, |_, _| rng.random_range(-1.0..1.0));
        let snaps = Snapshots::new(z, u, Mat::zeros(3, 50)).unwrap();
        let model = fit(spec, 2, &snaps, 1e-3).unwrap();
        assert_eq!(model.a.max_abs(), 0.0);
        assert_eq!(model.b.max_abs(), 0.0);
    }

    #[test]
    fn rank_deficient_without_ridge_is_singular() {
        let spec = identity_spec();
        // x2 duplicates x1
        let z = Mat::from_fn(3, 40, |i, k| if i == 0 { 1.0 } else { (k as f64 * 0.37).sin() });
        let u = Mat::from_fn(1, 40, |_, k| (k as f64 * 1.3).cos());
        let snaps = Snapshots::new(z.clone(), u, z).unwrap();
        let err = fit(spec, 2, &snaps, 0.0).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
        assert!(err.to_string().contains("ridge"));
        assert!(fit(spec, 2, &snaps, 1e-6).is_ok());
    }

    #[test]
    fn ridge_shrinks_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = identity_spec();
        let z = Mat::from_fn(3, 80, |i, _| if i == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let u = Mat::from_fn(1, 80, |_, _| rng.random_range(-1.0..1.0));
        let zn = Mat::from_fn(3, 80, |_, _| rng.random_range(-1.0..1.0));
        let snaps = Snapshots::new(z, u, zn).unwrap();
        let mut last = f64::INFINITY;
        for ridge in [0.0, 1e-2, 1e-1, 1.0, 10.0, 1e2, 1e3, 1e5, 1e8] {
            let m = fit(spec, 2, &snaps, ridge).unwrap();
            let norm = (m.a.frobenius_sq() + m.b.frobenius_sq()).sqrt();
            assert!(norm < last, "ridge {ridge}: {norm} >= {last}");
            last = norm;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn fitted_model_is_a_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let spec = DictionarySpec { degree: 2, include_sqrt: true, n_delays: 3 };
        let states = Mat::from_fn(2, 301, |_, _| rng.random_range(0.0..4.0));
        let inputs = Mat::from_fn(1, 300, |_, _| rng.random_range(0.0..0.03));
        let traj = Trajectory::new(states, inputs, 10.0).unwrap();
        let snaps = Snapshots::from_trajectory(&spec, &traj, SqrtMode::Strict).unwrap();
        let ridge = 1e-4;
        let model = fit(spec, 2, &snaps, ridge).unwrap();
        let base = objective(&model.a, &model.b, &snaps, ridge).unwrap();
        for _ in 0..20 {
            let mut a = model.a.clone();
            let mut b = model.b.clone();
            let da = Mat::from_fn(a.rows(), a.cols(), |_, _| rng.random_range(-1.0..1.0));
            let db = Mat::from_fn(b.rows(), b.cols(), |_, _| rng.random_range(-1.0..1.0));
            a.axpy(1e-4, &da).unwrap();
            b.axpy(1e-4, &db).unwrap();
            let perturbed = objective(&a, &b, &snaps, ridge).unwrap();
            assert!(perturbed >= base * (1.0 - 1e-12), "{perturbed} < {base}");
        }
    }

    #[test]
    fn identity_dynamics_keep_state_constant() {
        let spec = DictionarySpec { degree: 2, include_sqrt: true, n_delays: 2 };
        let p = spec.lifted_dim(2, 1);
        let model = EdmdModel {
            spec,
            n_states: 2,
            n_inputs: 1,
            a: Mat::identity(p),
            b: Mat::zeros(p, 1),
            state_indices: spec.state_indices(2),
            ridge: 0.0,
            residual: 0.0,
        };
        let inputs = Mat::from_fn(1, 10, |_, k| k as f64);
        let pred = model
            .predict_rollout(&[1.5, 0.3], &[vec![0.0], vec![0.0]], &inputs, 10, RolloutMode::Linear, SqrtMode::Strict)
            .unwrap();
        for k in 0..10 {
            assert_eq!(pred.col(k), vec![1.5, 0.3]);
        }
    }

    #[test]
    fn one_step_rollout_equals_model_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = DictionarySpec { degree: 2, include_sqrt: true, n_delays: 4 };
        let states = Mat::from_fn(2, 201, |_, _| rng.random_range(0.0..4.0));
        let inputs = Mat::from_fn(1, 200, |_, _| rng.random_range(0.0..0.03));
        let traj = Trajectory::new(states, inputs, 10.0).unwrap();
        let snaps = Snapshots::from_trajectory(&spec, &traj, SqrtMode::Strict).unwrap();
        let model = fit(spec, 2, &snaps, 1e-8).unwrap();
        for k in [4, 50, 199] {
            let past: Vec<Vec<f64>> = (1..=4).map(|d| traj.input(k - d)).collect();
            let pred = model
                .predict_rollout(&traj.state(k), &past, &traj.inputs().cols_range(k, k + 1), 1, RolloutMode::Linear, SqrtMode::Strict)
                .unwrap();
            let z = spec.lift_at(&traj, k, SqrtMode::Strict).unwrap();
            let direct = model.step(&z, &traj.input(k)).unwrap();
            assert_eq!(pred.col(0), model.project(&direct));
        }
    }

    #[test]
    fn relift_mode_shifts_true_inputs() {
        let spec = DictionarySpec { degree: 1, include_sqrt: false, n_delays: 2 };
        let p = spec.lifted_dim(1, 1);
        // x_{k+1} = u_{k-2}: A picks the oldest delay slot
        let mut a = Mat::zeros(p, p);
        a[(0, 0)] = 1.0;
        a[(1, 3)] = 1.0;
        a[(3, 2)] = 1.0;
        let mut b = Mat::zeros(p, 1);
        b[(2, 0)] = 1.0;
        let model = EdmdModel { spec, n_states: 1, n_inputs: 1, a, b, state_indices: vec![1], ridge: 0.0, residual: 0.0 };
        let inputs = Mat::from_fn(1, 5, |_, k| 10.0 + k as f64);
        let past = vec![vec![2.0], vec![1.0]];
        let lin = model.predict_rollout(&[0.0], &past, &inputs, 5, RolloutMode::Linear, SqrtMode::Strict).unwrap();
        let rel = model.predict_rollout(&[0.0], &past, &inputs, 5, RolloutMode::Relift, SqrtMode::Strict).unwrap();
        assert_eq!(lin.row(0), &[1.0, 2.0, 10.0, 11.0, 12.0]);
        assert_eq!(rel.row(0), lin.row(0));
    }
}
