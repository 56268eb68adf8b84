//! The delay equation as `m (N + 1)` ordinary differential equations:
//! block `y_i(t)` tracks `x(t - i tau / N)`, the first block obeys the model,
//! and the others are transported by first-order upwind differences.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::interp::PeriodicInterpolant;
use super::OracleError;
use crate::cycle::PeriodicOrbit;
use crate::model::ModelSpec;

#[derive(Clone)]
pub struct DiscretizedSystem {
    model: ModelSpec,
    segments: usize,
    rate: f64,
}

impl std::fmt::Debug for DiscretizedSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscretizedSystem")
            .field("model", &self.model.name())
            .field("segments", &self.segments)
            .field("rate", &self.rate)
            .finish()
    }
}

pub fn build_discretized(model: &ModelSpec, segments: usize) -> Result<DiscretizedSystem, OracleError> {
    if segments < 2 {
        return Err(OracleError::InvalidOptions(format!("need at least 2 segments, got {segments}")));
    }
    if !(model.tau() > 0.0) {
        return Err(OracleError::InvalidDelay(model.tau()));
    }
    Ok(DiscretizedSystem {
        model: model.clone(),
        segments,
        rate: segments as f64 / model.tau(),
    })
}

impl DiscretizedSystem {
    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    /// `N / tau`.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.model.dim() * (self.segments + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn rhs(&self, y: &[f64], out: &mut [f64]) {
        let m = self.model.dim();
        let n = self.segments;
        self.model.rhs_into(&y[..m], &y[n * m..], &mut out[..m]);
        for i in m..y.len() {
            out[i] = self.rate * (y[i - m] - y[i]);
        }
    }

    /// Dense Jacobian of [`rhs`](Self::rhs) at `y`.
    pub fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        let m = self.model.dim();
        let n = self.segments;
        let size = self.len();
        let mut j = DMatrix::zeros(size, size);
        let (now, delayed) = (&y[..m], &y[n * m..]);
        let a = self.model.jac_now(now, delayed);
        let b = self.model.jac_delayed(now, delayed);
        for r in 0..m {
            for c in 0..m {
                j[(r, c)] = a[(r, c)];
                j[(r, n * m + c)] += b[(r, c)];
            }
        }
        for i in m..size {
            j[(i, i - m)] = self.rate;
            j[(i, i)] = -self.rate;
        }
        j
    }

    /// `y_i = phi(-i tau / N)`.
    pub fn lift(&self, history: impl Fn(f64, &mut [f64])) -> Vec<f64> {
        let m = self.model.dim();
        let mut y = vec![0.0; self.len()];
        for (i, chunk) in y.chunks_mut(m).enumerate() {
            history(-(i as f64) / self.rate, chunk);
        }
        y
    }

    /// Largest stable RK4 step for the transport blocks at Courant number
    /// `cfl`.
    pub fn max_step(&self, cfl: f64) -> f64 {
        cfl / self.rate
    }

    /// Classical RK4 on the ODE system; returns the first block at every
    /// step and the final state.
    pub fn integrate(&self, y0: &[f64], t_end: f64, dt: f64) -> Result<(Vec<f64>, Vec<f64>), OracleError> {
        let m = self.model.dim();
        let steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
        let dt = if steps > 0 { t_end / steps as f64 } else { dt };
        let size = self.len();
        let mut y = y0.to_vec();
        let mut track = Vec::with_capacity((steps + 1) * m);
        track.extend_from_slice(&y[..m]);
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
            (vec![0.0; size], vec![0.0; size], vec![0.0; size], vec![0.0; size], vec![0.0; size]);
        for s in 0..steps {
            self.rhs(&y, &mut k1);
            axpy(&y, 0.5 * dt, &k1, &mut tmp);
            self.rhs(&tmp, &mut k2);
            axpy(&y, 0.5 * dt, &k2, &mut tmp);
            self.rhs(&tmp, &mut k3);
            axpy(&y, dt, &k3, &mut tmp);
            self.rhs(&tmp, &mut k4);
            for i in 0..size {
                y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if y[..m].iter().any(|v| !v.is_finite()) {
                return Err(OracleError::NonFinite { time: s as f64 * dt });
            }
            track.extend_from_slice(&y[..m]);
        }
        Ok((track, y))
    }
}

fn axpy(y: &[f64], a: f64, k: &[f64], out: &mut [f64]) {
    for ((o, y), k) in out.iter_mut().zip(y).zip(k) {
        *o = y + a * k;
    }
}

/// The discretized variational equation `g' = J(t) g` along a periodic
/// orbit, with Jacobian blocks tabulated at every RK4 half step of one
/// period. The orbit is read through the oracle's own trigonometric
/// interpolant of its samples.
#[derive(Debug, Clone)]
pub struct LinearFlow {
    dim: usize,
    segments: usize,
    rate: f64,
    period: f64,
    /// Steps per period, a multiple of the number of orbit samples.
    steps: usize,
    stride: usize,
    samples: usize,
    /// Row-major `DF0`, `DF1` at half steps `0, dt/2, ..., T`.
    df0: Vec<f64>,
    df1: Vec<f64>,
    orbit: PeriodicInterpolant,
}

/// Direction of the period map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    /// `g' = (J - mu) g` from `0` to `T`.
    Forward,
    /// `w' = -(J - mu)^T w` from `T` back to `0`.
    Adjoint,
}

impl LinearFlow {
    pub fn new(system: &DiscretizedSystem, orbit: &PeriodicOrbit, cfl: f64) -> Result<Self, OracleError> {
        if system.model().dim() != orbit.dim() {
            return Err(OracleError::InvalidOptions("orbit and system dimensions differ".into()));
        }
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(OracleError::InvalidOptions(format!("Courant number {cfl} outside (0, 1]")));
        }
        let m = orbit.dim();
        let k = orbit.grid().len();
        let period = orbit.period();
        let tau = system.model().tau();
        let interp = PeriodicInterpolant::new(orbit.samples(), m, period);
        let stride = (period * system.rate() / (cfl * k as f64)).ceil().max(1.0) as usize;
        let steps = stride * k;
        let dt = period / steps as f64;
        let model = system.model();
        let half = 2 * steps + 1;
        let mm = m * m;
        let mut df0 = vec![0.0; half * mm];
        let mut df1 = vec![0.0; half * mm];
        df0.par_chunks_mut(mm).zip(df1.par_chunks_mut(mm)).enumerate().for_each(|(j, (a, b))| {
            let t = 0.5 * dt * j as f64;
            let now = interp.eval(t);
            let past = interp.eval(t - tau);
            model.field().jac_now(&now, &past, a);
            model.field().jac_delayed(&now, &past, b);
        });
        Ok(Self {
            dim: m,
            segments: system.segments(),
            rate: system.rate(),
            period,
            steps,
            stride,
            samples: k,
            df0,
            df1,
            orbit: interp,
        })
    }

    pub fn len(&self) -> usize {
        self.dim * (self.segments + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Number of orbit grid samples `2M + 1`.
    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.period / self.steps as f64
    }

    /// The orbit at time `t` as seen by the oracle.
    pub fn orbit_state(&self, t: f64) -> Vec<f64> {
        self.orbit.eval(t)
    }

    /// Orbit derivative by a central difference of the interpolant.
    pub fn orbit_velocity(&self, t: f64) -> Vec<f64> {
        let h = 1e-5 * self.period;
        let a = self.orbit.eval(t + h);
        let b = self.orbit.eval(t - h);
        a.iter().zip(&b).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }

    /// Lifted orbit velocity `x'(t - i tau / N)` for every block.
    pub fn lifted_velocity(&self, t: f64) -> Vec<f64> {
        (0..=self.segments)
            .flat_map(|i| self.orbit_velocity(t - i as f64 / self.rate))
            .collect()
    }

    fn apply(&self, half: usize, sweep: Sweep, shift: f64, v: &[f64], out: &mut [f64]) {
        let m = self.dim;
        let n = self.segments;
        let h = self.rate;
        let a = &self.df0[half * m * m..][..m * m];
        let b = &self.df1[half * m * m..][..m * m];
        match sweep {
            Sweep::Forward => {
                for r in 0..m {
                    let mut s = -shift * v[r];
                    for c in 0..m {
                        s += a[r * m + c] * v[c] + b[r * m + c] * v[n * m + c];
                    }
                    out[r] = s;
                }
                for i in m..v.len() {
                    out[i] = h * (v[i - m] - v[i]) - shift * v[i];
                }
            }
            Sweep::Adjoint => {
                // out = -(J - shift)^T v
                let last = n * m;
                for c in 0..m {
                    let mut s0 = 0.0;
                    let mut sn = 0.0;
                    for r in 0..m {
                        s0 += a[r * m + c] * v[r];
                        sn += b[r * m + c] * v[r];
                    }
                    out[c] = -(s0 + h * v[m + c] - shift * v[c]);
                    out[last + c] = -(-h * v[last + c] + sn - shift * v[last + c]);
                }
                for i in m..last {
                    out[i] = -(-h * v[i] + h * v[i + m] - shift * v[i]);
                }
            }
        }
    }

    /// Propagates `v` over one period of the `shift`-ed equation. When
    /// `record` is given, the first block is written there at every orbit
    /// grid time `n T / K`, sample-major in the orbit's `n = -M..M` ordering.
    /// With `shift` equal to a Floquet exponent the recorded profile is the
    /// periodic mode.
    pub fn propagate(&self, v: &mut [f64], sweep: Sweep, shift: f64, record: Option<&mut [f64]>) {
        match record {
            None => self.propagate_with(v, sweep, shift, |_, _| {}),
            Some(r) => {
                let m = self.dim;
                self.propagate_with(v, sweep, shift, |pos, state| r[pos * m..(pos + 1) * m].copy_from_slice(&state[..m]))
            }
        }
    }

    /// Time in `[0, T)` of orbit grid position `pos` (`n + M`).
    pub fn grid_time(&self, pos: usize) -> f64 {
        let half_k = self.samples / 2;
        let i = if pos >= half_k { pos - half_k } else { pos + half_k + 1 };
        i as f64 * self.period / self.samples as f64
    }

    /// Propagates `v` over one period and calls `visit(pos, state)` once for
    /// every orbit grid position as the sweep passes its time.
    pub fn propagate_with(&self, v: &mut [f64], sweep: Sweep, shift: f64, mut visit: impl FnMut(usize, &[f64])) {
        let size = v.len();
        let dt = self.dt();
        let half_k = self.samples / 2;
        let pos_of = |i: usize| if i <= half_k { i + half_k } else { i - half_k - 1 };
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
            (vec![0.0; size], vec![0.0; size], vec![0.0; size], vec![0.0; size], vec![0.0; size]);
        let (sign, origin) = match sweep {
            Sweep::Forward => (1i64, 0i64),
            Sweep::Adjoint => (-1, 2 * self.steps as i64),
        };
        if matches!(sweep, Sweep::Forward) {
            visit(pos_of(0), v);
        }
        for s in 0..self.steps {
            let j = (origin + sign * 2 * s as i64) as usize;
            let jm = (j as i64 + sign) as usize;
            let je = (j as i64 + 2 * sign) as usize;
            let step = sign as f64 * dt;
            self.apply(j, sweep, shift, v, &mut k1);
            axpy(v, 0.5 * step, &k1, &mut tmp);
            self.apply(jm, sweep, shift, &tmp, &mut k2);
            axpy(v, 0.5 * step, &k2, &mut tmp);
            self.apply(jm, sweep, shift, &tmp, &mut k3);
            axpy(v, step, &k3, &mut tmp);
            self.apply(je, sweep, shift, &tmp, &mut k4);
            for i in 0..size {
                v[i] += step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            let done = s + 1;
            if done % self.stride == 0 {
                match sweep {
                    Sweep::Forward if done < self.steps => visit(pos_of(done / self.stride), v),
                    Sweep::Adjoint => visit(pos_of((self.samples - done / self.stride) % self.samples), v),
                    _ => {}
                }
            }
        }
    }

    /// Propagates several vectors in parallel.
    pub fn propagate_many(&self, vs: &mut [Vec<f64>], sweep: Sweep, shift: f64) {
        vs.par_iter_mut().for_each(|v| self.propagate(v, sweep, shift, None));
    }
}
