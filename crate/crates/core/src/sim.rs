//! Two-tank cascade with a transport delay on the inflow.
//!
//! ```text
//! dh1/dt = q(t - tau) - (k1/F1) sqrt(h1)
//! dh2/dt = (k1/F2) sqrt(h1) - (k2/F2) sqrt(h2)
//! ```
//!
//! The inflow enters `dh1/dt` directly, so `q` is effectively a level rate
//! [m/s]. With the default `F1 = 1 m^2` this coincides with a volumetric
//! flow divided by the cross-section.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Trajectory;
use crate::error::{Error, Result};
use crate::nn::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TankParams {
    pub k1: f64,
    pub k2: f64,
    pub f1: f64,
    pub f2: f64,
    /// Input delay as a whole number of sampling periods.
    pub tau_steps: usize,
    /// Sampling period [s].
    pub ts: f64,
    /// RK4 sub-steps per sampling period.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn default_substeps() -> usize {
    10
}

impl Default for TankParams {
    fn default() -> Self {
        Self {
            k1: 0.015,
            k2: 0.015,
            f1: 1.0,
            f2: 1.0,
            tau_steps: 20,
            ts: 10.0,
            substeps: 10,
        }
    }
}

impl TankParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [("k1", self.k1), ("k2", self.k2), ("F1", self.f1), ("F2", self.f2), ("Ts", self.ts)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Precondition(format!("{name} must be positive, got {v}")));
            }
        }
        if self.substeps == 0 {
            return Err(Error::Precondition("substeps must be at least 1".into()));
        }
        Ok(())
    }

    /// Levels at which a constant inflow `q` is in equilibrium.
    pub fn steady_state(&self, q: f64) -> TankState {
        let r1 = q * self.f1 / self.k1;
        let r2 = q * self.f1 / self.k2;
        TankState { h1: r1 * r1, h2: r2 * r2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TankState {
    pub h1: f64,
    pub h2: f64,
}

impl TankState {
    pub fn new(h1: f64, h2: f64) -> Self {
        Self { h1, h2 }
    }

    fn clamped(self) -> Self {
        Self {
            h1: self.h1.max(0.0),
            h2: self.h2.max(0.0),
        }
    }

    fn axpy(self, a: f64, d: (f64, f64)) -> Self {
        Self {
            h1: self.h1 + a * d.0,
            h2: self.h2 + a * d.1,
        }
    }
}

/// Piecewise-constant inflow, one value per sampling period.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal(pub Vec<f64>);

impl InputSignal {
    pub fn constant(q: f64, n: usize) -> Self {
        Self(vec![q; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Right-hand side of the tank model for a given (already delayed) inflow.
pub fn derivative(state: TankState, delayed_q: f64, params: &TankParams) -> Result<(f64, f64)> {
    if state.h1 < 0.0 || state.h2 < 0.0 || state.h1.is_nan() || state.h2.is_nan() {
        return Err(Error::Domain(format!(
            "tank levels must be non-negative, got h1={}, h2={}",
            state.h1, state.h2
        )));
    }
    let out1 = params.k1 * state.h1.sqrt();
    let out2 = params.k2 * state.h2.sqrt();
    Ok((delayed_q - out1 / params.f1, (out1 - out2) / params.f2))
}

/// One RK4 step of length `dt` with inflow `q` held constant. Stage states
/// are clamped at zero before evaluating the square roots.
fn rk4(state: TankState, q: f64, params: &TankParams, dt: f64) -> Result<TankState> {
    let k1 = derivative(state, q, params)?;
    let k2 = derivative(state.axpy(0.5 * dt, k1).clamped(), q, params)?;
    let k3 = derivative(state.axpy(0.5 * dt, k2).clamped(), q, params)?;
    let k4 = derivative(state.axpy(dt, k3).clamped(), q, params)?;
    Ok(TankState {
        h1: state.h1 + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        h2: state.h2 + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    }
    .clamped())
}

/// Advances the plant by one interval `dt` (split into `params.substeps`
/// RK4 steps).
///
/// `input_buffer` holds the most recent inputs, oldest first, ending with the
/// input of the current sample; the plant sees the entry `tau_steps` samples
/// back from the end, held constant over the interval.
pub fn step(state: TankState, input_buffer: &[f64], params: &TankParams, dt: f64) -> Result<TankState> {
    if !(dt > 0.0) {
        return Err(Error::Precondition(format!("dt must be positive, got {dt}")));
    }
    if input_buffer.len() <= params.tau_steps {
        return Err(Error::Precondition(format!(
            "input buffer holds {} samples, a delay of {} needs at least {}",
            input_buffer.len(),
            params.tau_steps,
            params.tau_steps + 1
        )));
    }
    let q = input_buffer[input_buffer.len() - 1 - params.tau_steps];
    step_with_substeps(state, q, params, dt, params.substeps)
}

/// Integrates over `dt` with a fixed inflow using `substeps` RK4 steps.
pub fn step_with_substeps(
    state: TankState,
    q: f64,
    params: &TankParams,
    dt: f64,
    substeps: usize,
) -> Result<TankState> {
    if substeps == 0 {
        return Err(Error::Precondition("substeps must be at least 1".into()));
    }
    let h = dt / substeps as f64;
    let mut s = state;
    for _ in 0..substeps {
        s = rk4(s, q, params, h)?;
    }
    Ok(s)
}

/// Simulates `n_steps` sampling periods. Inputs before `t = 0` are zero; state
/// `k + 1` is driven by input sample `k - tau_steps`.
pub fn simulate(params: &TankParams, signal: &InputSignal, x0: TankState, n_steps: usize) -> Result<Trajectory> {
    params.validate()?;
    if signal.len() < n_steps {
        return Err(Error::Precondition(format!(
            "signal has {} samples, {n_steps} requested",
            signal.len()
        )));
    }
    let tau = params.tau_steps;
    let mut padded = vec![0.0; tau];
    padded.extend_from_slice(&signal.0[..n_steps]);

    let mut states = Mat::zeros(2, n_steps + 1);
    let mut s = x0;
    states[(0, 0)] = s.h1;
    states[(1, 0)] = s.h2;
    for k in 0..n_steps {
        s = step(s, &padded[k..=k + tau], params, params.ts)?;
        states[(0, k + 1)] = s.h1;
        states[(1, k + 1)] = s.h2;
    }
    let inputs = Mat::from_vec(1, n_steps, signal.0[..n_steps].to_vec())?;
    Trajectory::new(states, inputs, params.ts)
}

/// Random staircase: each segment holds a value drawn uniformly from
/// `[q_min, q_max]` for a uniformly drawn number of samples in
/// `[hold_min, hold_max]`.
pub fn generate_random_input(
    seed: u64,
    n_steps: usize,
    q_min: f64,
    q_max: f64,
    hold_min: usize,
    hold_max: usize,
) -> Result<InputSignal> {
    if !(q_min <= q_max) || !q_min.is_finite() || !q_max.is_finite() {
        return Err(Error::Precondition(format!("invalid flow range [{q_min}, {q_max}]")));
    }
    if hold_min == 0 || hold_min > hold_max {
        return Err(Error::Precondition(format!(
            "invalid hold range [{hold_min}, {hold_max}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_steps);
    while values.len() < n_steps {
        let q = if q_min == q_max {
            q_min
        } else {
            rng.random_range(q_min..=q_max)
        };
        let hold = rng.random_range(hold_min..=hold_max);
        let take = hold.min(n_steps - values.len());
        values.extend(std::iter::repeat(q).take(take));
    }
    Ok(InputSignal(values))
}

/// Adds i.i.d. `N(0, std^2)` noise to every state sample. Inputs are copied
/// unchanged.
pub fn add_noise(traj: &Trajectory, std: f64, seed: u64) -> Result<Trajectory> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::Precondition(format!("noise std must be >= 0, got {std}")));
    }
    if std == 0.0 {
        return Ok(traj.clone());
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::Precondition(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = traj.states().clone();
    for v in states.as_mut_slice() {
        *v += normal.sample(&mut rng);
    }
    Trajectory::new(states, traj.inputs().clone(), traj.ts())
}
