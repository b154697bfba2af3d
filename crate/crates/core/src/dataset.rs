//! Trajectories, history windows, multi-step supervision windows and
//! normalization.
//!
//! A trajectory with `T` samples holds states `x_0 ..= x_T` and inputs
//! `u_0 .. u_{T-1}`: sample `k` is the pair `(x_k, u_k)` and `x_T` is the
//! terminal state closing the last transition.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mat;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Mat,
    inputs: Mat,
    ts: f64,
}

impl Trajectory {
    /// `states` is `n x (T+1)`, `inputs` is `m x T`.
    pub fn new(states: Mat, inputs: Mat, ts: f64) -> Result<Self> {
        if states.cols() != inputs.cols() + 1 {
            return Err(Error::shape(
                "Trajectory::new",
                format!("{} state columns for {} input columns", states.cols(), inputs.cols()),
            ));
        }
        if !(ts > 0.0) {
            return Err(Error::Precondition(format!("sampling period must be positive, got {ts}")));
        }
        if !states.is_finite() || !inputs.is_finite() {
            return Err(Error::NonFinite("trajectory data".into()));
        }
        Ok(Self { states, inputs, ts })
    }

    /// Number of samples `T`.
    pub fn len(&self) -> usize {
        self.inputs.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_states(&self) -> usize {
        self.states.rows()
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.rows()
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn states(&self) -> &Mat {
        &self.states
    }

    pub fn inputs(&self) -> &Mat {
        &self.inputs
    }

    pub fn state(&self, k: usize) -> Vec<f64> {
        self.states.col(k)
    }

    pub fn input(&self, k: usize) -> Vec<f64> {
        self.inputs.col(k)
    }

    /// Samples `start..end` (with terminal state `x_end`).
    pub fn slice(&self, start: usize, end: usize) -> Result<Trajectory> {
        if start > end || end > self.len() {
            return Err(Error::OutOfRange(format!(
                "slice {start}..{end} of a trajectory with {} samples",
                self.len()
            )));
        }
        Trajectory::new(
            self.states.cols_range(start, end + 1),
            self.inputs.cols_range(start, end),
            self.ts,
        )
    }

    fn column_names(&self) -> Vec<String> {
        let mut names = vec!["t".to_string()];
        names.extend((1..=self.n_states()).map(|i| format!("h{i}")));
        if self.n_inputs() == 1 {
            names.push("q".into());
        } else {
            names.extend((1..=self.n_inputs()).map(|i| format!("q{i}")));
        }
        names
    }

    /// CSV with header `t,h1,h2,q`, one row per state sample. The terminal row
    /// has an empty input field. Values use the shortest representation that
    /// parses back to the same `f64`.
    pub fn write_csv(&self, mut w: impl Write, comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(w, "# {line}")?;
            }
        }
        writeln!(w, "{}", self.column_names().join(","))?;
        for k in 0..=self.len() {
            let mut line = format!("{}", k as f64 * self.ts);
            for i in 0..self.n_states() {
                line.push(',');
                line.push_str(&format!("{}", self.states[(i, k)]));
            }
            for j in 0..self.n_inputs() {
                line.push(',');
                if k < self.len() {
                    line.push_str(&format!("{}", self.inputs[(j, k)]));
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_csv(&mut w, comment).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Parses the CSV produced by [`Trajectory::write_csv`]. Lines starting
    /// with `#` are ignored.
    pub fn read_csv(r: impl BufRead) -> Result<Trajectory> {
        let mut lines = r
            .lines()
            .map(|l| l.map_err(|e| Error::Data(e.to_string())))
            .filter(|l| !matches!(l, Ok(s) if s.starts_with('#') || s.trim().is_empty()));
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty trajectory file".into()))??;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") {
            return Err(Error::Data(format!("unexpected header `{header}`")));
        }
        let n = cols.iter().filter(|c| c.starts_with('h')).count();
        let m = cols.iter().filter(|c| c.starts_with('q')).count();
        if n == 0 || m == 0 || 1 + n + m != cols.len() {
            return Err(Error::Data(format!("unexpected header `{header}`")));
        }
        let parse = |s: &str, row: usize| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Data(format!("row {row}: `{s}`: {e}")))
        };
        let mut times = Vec::new();
        let mut xs: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut us: Vec<Vec<f64>> = vec![Vec::new(); m];
        let mut terminal_seen = false;
        for (row, line) in lines.enumerate() {
            let line = line?;
            if terminal_seen {
                return Err(Error::Data(format!("row {row}: data after the terminal row")));
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::Data(format!("row {row}: expected {} fields", cols.len())));
            }
            times.push(parse(fields[0], row)?);
            for i in 0..n {
                xs[i].push(parse(fields[1 + i], row)?);
            }
            if fields[1 + n..].iter().all(|f| f.trim().is_empty()) {
                terminal_seen = true;
            } else {
                for j in 0..m {
                    us[j].push(parse(fields[1 + n + j], row)?);
                }
            }
        }
        if !terminal_seen {
            return Err(Error::Data("missing terminal row (empty input field)".into()));
        }
        let t = us[0].len();
        let ts = if times.len() >= 2 { times[1] - times[0] } else { 1.0 };
        let states = Mat::from_vec(n, t + 1, xs.concat())?;
        let inputs = Mat::from_vec(m, t, us.concat())?;
        Trajectory::new(states, inputs, ts)
    }

    pub fn load_csv(path: &Path) -> Result<Trajectory> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(BufReader::new(f))
    }
}

/// The last `eta_H` state and input columns before a sample, oldest first,
/// states stacked over inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    pub matrix: Mat,
}

impl HistoryWindow {
    pub fn len(&self) -> usize {
        self.matrix.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.cols() == 0
    }
}

/// `H = [x_{k-eta} .. x_{k-1}; u_{k-eta} .. u_{k-1}]`.
pub fn build_history(traj: &Trajectory, k: usize, eta_h: usize) -> Result<HistoryWindow> {
    if eta_h == 0 {
        return Err(Error::Precondition("history length must be at least 1".into()));
    }
    if k < eta_h || k > traj.len() {
        return Err(Error::OutOfRange(format!(
            "history of length {eta_h} at sample {k} (trajectory has {} samples)",
            traj.len()
        )));
    }
    let xs = traj.states.cols_range(k - eta_h, k);
    let us = traj.inputs.cols_range(k - eta_h, k);
    Ok(HistoryWindow {
        matrix: Mat::vstack(&xs, &us)?,
    })
}

/// Contiguous split: the first `ceil(T/2)` samples train, the rest test. The
/// boundary state is the terminal state of the training half and the initial
/// state of the test half.
pub fn split_train_test(traj: &Trajectory) -> Result<(Trajectory, Trajectory)> {
    let t = traj.len();
    if t < 2 {
        return Err(Error::Precondition(format!("cannot split {t} samples")));
    }
    let cut = t.div_ceil(2);
    Ok((traj.slice(0, cut)?, traj.slice(cut, t)?))
}

/// Multi-step supervision window anchored at sample `k` of a trajectory.
///
/// Covers samples `k - eta_H ..= k + N_L`; the history of each future state
/// `x_{k+i}` is available as [`SupervisionWindow::history`]`(i)`.
#[derive(Debug, Clone, Copy)]
pub struct SupervisionWindow<'a> {
    traj: &'a Trajectory,
    pub k: usize,
    pub eta_h: usize,
    pub horizon: usize,
}

impl<'a> SupervisionWindow<'a> {
    pub fn trajectory(&self) -> &'a Trajectory {
        self.traj
    }

    /// `H_{k+i}` for `i in 0..=N_L`.
    pub fn history(&self, i: usize) -> Result<HistoryWindow> {
        if i > self.horizon {
            return Err(Error::OutOfRange(format!("history {i} beyond horizon {}", self.horizon)));
        }
        build_history(self.traj, self.k + i, self.eta_h)
    }

    pub fn x_k(&self) -> Vec<f64> {
        self.traj.state(self.k)
    }

    /// `x_{k+i}` for `i in 0..=N_L`.
    pub fn state(&self, i: usize) -> Vec<f64> {
        self.traj.state(self.k + i)
    }

    /// `u_{k+i}` for `i in 0..N_L`.
    pub fn input(&self, i: usize) -> Vec<f64> {
        self.traj.input(self.k + i)
    }

    /// `u_k .. u_{k+N_L-1}`.
    pub fn u_future(&self) -> Vec<Vec<f64>> {
        (0..self.horizon).map(|i| self.input(i)).collect()
    }

    /// `x_{k+1} ..= x_{k+N_L}`.
    pub fn x_future(&self) -> Vec<Vec<f64>> {
        (1..=self.horizon).map(|i| self.state(i)).collect()
    }

    /// Absolute sample index of local offset `j`, where offset 0 is
    /// `k - eta_H`.
    pub fn sample(&self, j: usize) -> usize {
        self.k - self.eta_h + j
    }
}

/// Windows at `k = eta_H, eta_H + stride, ...` while `k + N_L <= T`. Returns
/// an empty list when the trajectory is too short.
pub fn make_windows(traj: &Trajectory, eta_h: usize, horizon: usize, stride: usize) -> Result<Vec<SupervisionWindow<'_>>> {
    if eta_h == 0 || horizon == 0 || stride == 0 {
        return Err(Error::Precondition(
            "history length, horizon and stride must be at least 1".into(),
        ));
    }
    let t = traj.len();
    if t < eta_h + horizon {
        return Ok(Vec::new());
    }
    Ok((eta_h..=t - horizon)
        .step_by(stride)
        .map(|k| SupervisionWindow {
            traj,
            k,
            eta_h,
            horizon,
        })
        .collect())
}

/// Per-channel affine map `(v - shift) / scale`. States are standardized,
/// inputs are min-max scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub state_shift: Vec<f64>,
    pub state_scale: Vec<f64>,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
}

impl Normalizer {
    /// Fit on training data only. Channels without spread get `scale = 1`.
    pub fn fit(train: &Trajectory) -> Normalizer {
        let mut state_shift = Vec::new();
        let mut state_scale = Vec::new();
        for i in 0..train.n_states() {
            let row = train.states.row(i);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            state_shift.push(mean);
            state_scale.push(if std > 0.0 && std.is_finite() { std } else { 1.0 });
        }
        let mut input_shift = Vec::new();
        let mut input_scale = Vec::new();
        for j in 0..train.n_inputs() {
            let row = train.inputs.row(j);
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (lo, span) = if lo.is_finite() && hi > lo { (lo, hi - lo) } else if lo.is_finite() { (lo, 1.0) } else { (0.0, 1.0) };
            input_shift.push(lo);
            input_scale.push(span);
        }
        Normalizer {
            state_shift,
            state_scale,
            input_shift,
            input_scale,
        }
    }

    pub fn normalize_state(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.state_shift.iter().zip(&self.state_scale))
            .map(|(v, (s, c))| (v - s) / c)
            .collect()
    }

    pub fn denormalize_state(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.state_shift.iter().zip(&self.state_scale))
            .map(|(v, (s, c))| v * c + s)
            .collect()
    }

    pub fn normalize_input(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.input_shift.iter().zip(&self.input_scale))
            .map(|(v, (s, c))| (v - s) / c)
            .collect()
    }

    fn map_rows(m: &Mat, shift: &[f64], scale: &[f64], forward: bool) -> Result<Mat> {
        if m.rows() != shift.len() {
            return Err(Error::shape(
                "Normalizer",
                format!("{} channels, normalizer has {}", m.rows(), shift.len()),
            ));
        }
        let mut out = m.clone();
        for i in 0..m.rows() {
            let (s, c) = (shift[i], scale[i]);
            for v in out.row_mut(i) {
                *v = if forward { (*v - s) / c } else { *v * c + s };
            }
        }
        Ok(out)
    }

    /// States as columns, `n x N`.
    pub fn denormalize_states(&self, m: &Mat) -> Result<Mat> {
        Self::map_rows(m, &self.state_shift, &self.state_scale, false)
    }

    pub fn apply(&self, traj: &Trajectory) -> Result<Trajectory> {
        Trajectory::new(
            Self::map_rows(&traj.states, &self.state_shift, &self.state_scale, true)?,
            Self::map_rows(&traj.inputs, &self.input_shift, &self.input_scale, true)?,
            traj.ts,
        )
    }

    pub fn invert(&self, traj: &Trajectory) -> Result<Trajectory> {
        Trajectory::new(
            Self::map_rows(&traj.states, &self.state_shift, &self.state_scale, false)?,
            Self::map_rows(&traj.inputs, &self.input_shift, &self.input_scale, false)?,
            traj.ts,
        )
    }
}
