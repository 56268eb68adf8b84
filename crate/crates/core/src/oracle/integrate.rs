//! Method-of-steps RK4 integration of `x' = F(x(t), x(t - tau))`.

use serde::{Deserialize, Serialize};

use super::interp::{cubic_weights, MIDPOINT};
use super::OracleError;
use crate::cycle::Seed;
use crate::model::ModelSpec;
use crate::spectral::FourierSeries;

/// A uniformly stepped solution. `history` holds the initial function on
/// the grid `-tau, -tau + dt, ..., 0`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    dt: f64,
    steps_per_delay: usize,
    history: Vec<f64>,
    states: Vec<f64>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps_per_delay(&self) -> usize {
        self.steps_per_delay
    }

    /// Number of stored states, including `t = 0`.
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// One component over all stored steps.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.states.iter().skip(c).step_by(self.dim).copied().collect()
    }

    /// Four-point Lagrange interpolation of the stored states, `0 <= t <= end`.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; self.dim];
        if n < 4 {
            let j = ((t / self.dt).round().max(0.0) as usize).min(n - 1);
            out.copy_from_slice(self.state(j));
            return out;
        }
        let pos = t / self.dt;
        let base = (pos.floor() as i64 - 1).clamp(0, n as i64 - 4) as usize;
        let w = cubic_weights(pos - base as f64);
        for (i, wi) in w.iter().enumerate() {
            for (o, s) in out.iter_mut().zip(self.state(base + i)) {
                *o += wi * s;
            }
        }
        out
    }
}

/// Integrates from the initial function `history` on `[-tau, 0]` to `t_end`.
///
/// `dt` is shrunk so that it divides `tau` into at least ten steps. Delayed
/// values at step nodes are stored states, midpoint values use four-point
/// interpolation, and delayed times inside `[-tau, 0)` read `history`
/// directly.
pub fn integrate_dde(
    model: &ModelSpec,
    history: impl Fn(f64, &mut [f64]),
    t_end: f64,
    dt: f64,
) -> Result<Trajectory, OracleError> {
    let tau = model.tau();
    if !(tau > 0.0) {
        return Err(OracleError::InvalidDelay(tau));
    }
    if !(dt > 0.0 && dt.is_finite() && t_end >= 0.0 && t_end.is_finite()) {
        return Err(OracleError::InvalidOptions(format!("dt = {dt}, t_end = {t_end}")));
    }
    let n_tau = ((tau / dt - 1e-9).ceil() as usize).max(10);
    let dt = tau / n_tau as f64;
    let n_steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let m = model.dim();

    let mut hist = vec![0.0; (n_tau + 1) * m];
    for (i, chunk) in hist.chunks_mut(m).enumerate() {
        history((i as f64 - n_tau as f64) * dt, chunk);
    }
    let mut states = Vec::with_capacity((n_steps + 1) * m);
    states.extend_from_slice(&hist[n_tau * m..]);
    if states.iter().any(|v| !v.is_finite()) {
        return Err(OracleError::NonFinite { time: 0.0 });
    }

    let mut tmp = vec![0.0; m];
    let mut d0 = vec![0.0; m];
    let mut dh = vec![0.0; m];
    let mut d1 = vec![0.0; m];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut x = vec![0.0; m];

    for j in 0..n_steps {
        // Delayed index for the step start; the stage values follow.
        let lag = j as i64 - n_tau as i64;
        let stored = |idx: i64, out: &mut [f64], states: &[f64]| {
            if idx <= 0 {
                out.copy_from_slice(&hist[((idx + n_tau as i64) as usize) * m..][..m]);
            } else {
                out.copy_from_slice(&states[idx as usize * m..][..m]);
            }
        };
        stored(lag, &mut d0, &states);
        stored(lag + 1, &mut d1, &states);
        if lag < 0 {
            history((lag as f64 + 0.5) * dt, &mut dh);
        } else {
            let (base, w) = if lag == 0 { (0usize, cubic_weights(0.5)) } else { (lag as usize - 1, MIDPOINT) };
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (i, wi) in w.iter().enumerate() {
                for c in 0..m {
                    dh[c] += wi * states[(base + i) * m + c];
                }
            }
        }

        x.copy_from_slice(&states[j * m..(j + 1) * m]);
        model.rhs_into(&x, &d0, &mut k1);
        for c in 0..m {
            tmp[c] = x[c] + 0.5 * dt * k1[c];
        }
        model.rhs_into(&tmp, &dh, &mut k2);
        for c in 0..m {
            tmp[c] = x[c] + 0.5 * dt * k2[c];
        }
        model.rhs_into(&tmp, &dh, &mut k3);
        for c in 0..m {
            tmp[c] = x[c] + dt * k3[c];
        }
        model.rhs_into(&tmp, &d1, &mut k4);
        for c in 0..m {
            tmp[c] = x[c] + dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        if tmp.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::NonFinite { time: j as f64 * dt });
        }
        states.extend_from_slice(&tmp);
    }
    Ok(Trajectory {
        dim: m,
        dt,
        steps_per_delay: n_tau,
        history: hist,
        states,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettleOptions {
    /// Integration time discarded before crossings are collected.
    pub transient: f64,
    /// Length of the window in which crossings are collected.
    pub window: f64,
    pub dt: f64,
    /// Component used for crossings and for the phase anchor.
    pub component: usize,
    /// Truncation order of the returned seed.
    pub order: usize,
}

impl Default for SettleOptions {
    fn default() -> Self {
        Self {
            transient: 500.0,
            window: 200.0,
            dt: 0.01,
            component: 0,
            order: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SettledCycle {
    /// Mean of the last ten crossing intervals.
    pub period: f64,
    /// `(max - min) / mean` of those intervals.
    pub spread: f64,
    pub crossings: Vec<f64>,
    /// Time at which the anchor component peaks; sample `n` is taken at
    /// `peak_time + n T / (2M + 1)`.
    pub peak_time: f64,
    pub samples: Vec<f64>,
    pub seed: Seed,
}

/// Integrates past a transient and reads the period off successive upward
/// crossings of the anchor component through its window mean.
pub fn settle_to_cycle(
    model: &ModelSpec,
    history: impl Fn(f64, &mut [f64]),
    opts: &SettleOptions,
) -> Result<SettledCycle, OracleError> {
    if opts.component >= model.dim() || opts.order == 0 || !(opts.window > 0.0) || !(opts.transient >= 0.0) {
        return Err(OracleError::InvalidOptions(format!("{opts:?}")));
    }
    let traj = integrate_dde(model, history, opts.transient + opts.window, opts.dt)?;
    let values = traj.component(opts.component);
    let start = (opts.transient / traj.dt()).ceil() as usize;
    let window = &values[start.min(values.len() - 1)..];
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let (lo, hi) = window.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let scale = hi.abs().max(lo.abs()).max(1e-300);
    let mut crossings = Vec::new();
    if hi - lo > 1e-8 * scale.max(1.0) {
        for j in start..values.len() - 1 {
            let (a, b) = (values[j] - mean, values[j + 1] - mean);
            if a < 0.0 && b >= 0.0 {
                crossings.push(refine_crossing(&traj, opts.component, mean, traj.time(j), traj.time(j + 1)));
            }
        }
    }
    if crossings.len() < 12 {
        return Err(OracleError::NoOscillationDetected { crossings: crossings.len() });
    }
    let last = &crossings[crossings.len() - 11..];
    let intervals: Vec<f64> = last.windows(2).map(|w| w[1] - w[0]).collect();
    let period = intervals.iter().sum::<f64>() / intervals.len() as f64;
    let (imin, imax) = intervals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let spread = (imax - imin) / period;
    if spread > 0.01 {
        return Err(OracleError::PeriodDrift { spread });
    }

    let c = crossings.len();
    let peak_time = find_peak(&traj, opts.component, crossings[c - 3], crossings[c - 2]);
    let k = 2 * opts.order + 1;
    let mut samples = Vec::with_capacity(k * model.dim());
    for n in -(opts.order as i64)..=opts.order as i64 {
        samples.extend(traj.state_at(peak_time + n as f64 * period / k as f64));
    }
    let series = FourierSeries::from_samples(&samples, model.dim(), opts.order, period)
        .map_err(|e| OracleError::InvalidOptions(e.to_string()))?;
    Ok(SettledCycle {
        period,
        spread,
        crossings,
        peak_time,
        samples,
        seed: Seed::new(series),
    })
}

fn refine_crossing(traj: &Trajectory, c: usize, level: f64, mut a: f64, mut b: f64) -> f64 {
    let f = |t: f64| traj.state_at(t)[c] - level;
    let fa = f(a);
    for _ in 0..60 {
        let mid = 0.5 * (a + b);
        if (f(mid) < 0.0) == (fa < 0.0) {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

fn find_peak(traj: &Trajectory, c: usize, from: f64, to: f64) -> f64 {
    let dt = traj.dt();
    let j0 = (from / dt).ceil() as usize;
    let j1 = ((to / dt).floor() as usize).min(traj.len() - 2);
    let mut best = j0.max(1);
    for j in j0.max(1)..=j1 {
        if traj.state(j)[c] > traj.state(best)[c] {
            best = j;
        }
    }
    // Golden-section polish on the interpolant around the best node.
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (traj.time(best) - dt, traj.time(best) + dt);
    let f = |t: f64| -traj.state_at(t)[c];
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    0.5 * (a + b)
}
