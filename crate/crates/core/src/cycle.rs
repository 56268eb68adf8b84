//! Harmonic-balance periodic orbits.
//!
//! The unknowns are the sampled orbit `X` (sample-major, `m (2M+1)` values)
//! and the period `T`. The zero problem collocates the delay equation on the
//! grid and appends one phase condition: the derivative of the anchor
//! component vanishes at `t = 0`. It is solved with a damped Gauss-Newton
//! (Levenberg-Marquardt) iteration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelSpec;
use crate::spectral::{apply_blocks, FourierSeries, SpectralError, SpectralGrid, SpectralOperators};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CycleError {
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("invalid seed: {0}")]
    InvalidSeed(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("vector field returned a non-finite value at sample {sample}")]
    NonFinite { sample: usize },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("damped normal equations stayed singular (damping {damping:e})")]
    SingularJacobian { damping: f64 },
    #[error("solution collapsed to an equilibrium (largest harmonic {max_harmonic:e})")]
    DivergedToEquilibrium { max_harmonic: f64 },
}

/// Options for [`solve_cycle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Truncation order `M`.
    pub order: usize,
    /// State component whose derivative is pinned to zero at `t = 0`.
    pub anchor: usize,
    pub max_iterations: usize,
    /// Target max-norm of the zero-problem residual.
    pub tolerance: f64,
    pub initial_damping: f64,
    pub damping_factor: f64,
    /// Iteration stops once a step is shorter than this.
    pub min_step: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            order: 20,
            anchor: 0,
            max_iterations: 200,
            tolerance: 1e-10,
            initial_damping: 1e-3,
            damping_factor: 10.0,
            min_step: 1e-14,
        }
    }
}

impl SolveOptions {
    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }

    pub fn with_anchor(mut self, anchor: usize) -> Self {
        self.anchor = anchor;
        self
    }

    fn validate(&self, dim: usize) -> Result<(), CycleError> {
        if self.order == 0 {
            return Err(CycleError::InvalidOptions("order must be at least 1".into()));
        }
        if self.anchor >= dim {
            return Err(CycleError::InvalidOptions(format!(
                "anchor component {} out of range for dimension {dim}",
                self.anchor
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(CycleError::InvalidOptions("tolerance must be positive".into()));
        }
        if !(self.damping_factor > 1.0 && self.initial_damping > 0.0) {
            return Err(CycleError::InvalidOptions("damping schedule must be positive and expanding".into()));
        }
        Ok(())
    }
}

/// Initial guess: a periodic function and its period.
#[derive(Debug, Clone, PartialEq)]
pub struct Seed {
    pub series: FourierSeries,
    pub period: f64,
}

impl Seed {
    pub fn new(series: FourierSeries) -> Self {
        let period = series.period();
        Self { series, period }
    }
}

/// Single-harmonic seed `x_c(t) = amplitude_c cos(2 pi t / period)`.
pub fn seed_from_ansatz(dim: usize, amplitude: &[f64], period: f64) -> Result<Seed, CycleError> {
    if amplitude.len() != dim {
        return Err(CycleError::InvalidSeed(format!(
            "{} amplitudes for dimension {dim}",
            amplitude.len()
        )));
    }
    if !(period.is_finite() && period > 0.0) {
        return Err(CycleError::InvalidSeed(format!("period guess {period}")));
    }
    let mut coeffs = vec![num_complex::Complex64::new(0.0, 0.0); 3 * dim];
    for (c, a) in amplitude.iter().enumerate() {
        coeffs[c] = (a / 2.0).into();
        coeffs[2 * dim + c] = (a / 2.0).into();
    }
    let series = FourierSeries::from_coefficients(dim, period, 1, coeffs)?;
    Ok(Seed { series, period })
}

/// A converged harmonic-balance orbit.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    model: ModelSpec,
    period: f64,
    anchor: usize,
    samples: Vec<f64>,
    series: FourierSeries,
    residual_norm: f64,
    iterations: usize,
}

impl PeriodicOrbit {
    /// Rebuilds an orbit from stored samples, re-evaluating the residual with
    /// fresh operators.
    pub fn from_samples(
        model: ModelSpec,
        samples: Vec<f64>,
        period: f64,
        anchor: usize,
    ) -> Result<Self, CycleError> {
        let m = model.dim();
        if samples.is_empty() || samples.len() % m != 0 || (samples.len() / m) % 2 == 0 {
            return Err(CycleError::InvalidSeed(format!(
                "{} samples do not form an odd grid of dimension {m}",
                samples.len()
            )));
        }
        let order = (samples.len() / m - 1) / 2;
        let series = FourierSeries::from_samples(&samples, m, order, period)?;
        let r = residual(&model, &samples, period, anchor)?;
        Ok(Self {
            model,
            period,
            anchor,
            samples,
            series,
            residual_norm: max_norm(&r),
            iterations: 0,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn tau(&self) -> f64 {
        self.model.tau()
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.period
    }

    pub fn order(&self) -> usize {
        self.series.order()
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn grid(&self) -> SpectralGrid {
        self.series.grid()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn series(&self) -> &FourierSeries {
        &self.series
    }

    pub fn residual_norm(&self) -> f64 {
        self.residual_norm
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn state(&self, t: f64) -> Vec<f64> {
        self.series.evaluate(t)
    }

    /// Samples of `x(t_n + shift)` read from the Fourier interpolant.
    pub fn shifted_samples(&self, shift: f64) -> Vec<f64> {
        self.grid()
            .times()
            .iter()
            .flat_map(|&t| self.series.evaluate(t + shift))
            .collect()
    }

    /// Spectrally differentiated samples of the orbit, `x'(t_n)`.
    pub fn derivative_samples(&self) -> Vec<f64> {
        self.series.derivative().samples()
    }

    /// Largest per-sample Euclidean norm.
    pub fn amplitude(&self) -> f64 {
        let m = self.dim();
        self.samples
            .chunks(m)
            .map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Collocated residual of the zero problem: `m (2M+1)` equation entries
/// followed by the phase condition.
pub fn residual(model: &ModelSpec, x: &[f64], period: f64, anchor: usize) -> Result<Vec<f64>, CycleError> {
    let m = model.dim();
    if x.is_empty() || x.len() % m != 0 || (x.len() / m) % 2 == 0 {
        return Err(CycleError::InvalidSeed(format!(
            "{} samples do not form an odd grid of dimension {m}",
            x.len()
        )));
    }
    if anchor >= m {
        return Err(CycleError::InvalidOptions(format!("anchor {anchor} out of range")));
    }
    let order = (x.len() / m - 1) / 2;
    let ops = SpectralOperators::new(order, period, model.tau(), 0.0)?;
    Collocation::new(model, ops, anchor).residual(x)
}

struct Collocation<'a> {
    model: &'a ModelSpec,
    ops: SpectralOperators,
    anchor: usize,
}

impl<'a> Collocation<'a> {
    fn new(model: &'a ModelSpec, ops: SpectralOperators, anchor: usize) -> Self {
        Self { model, ops, anchor }
    }

    fn k(&self) -> usize {
        self.ops.grid().len()
    }

    fn residual(&self, x: &[f64]) -> Result<Vec<f64>, CycleError> {
        let m = self.model.dim();
        let k = self.k();
        let dx = apply_blocks(self.ops.derivative(), x, m);
        let xd = apply_blocks(self.ops.delay(), x, m);
        let mut r = Vec::with_capacity(m * k + 1);
        let mut f = vec![0.0; m];
        for n in 0..k {
            let s = n * m..(n + 1) * m;
            self.model.rhs_into(&x[s.clone()], &xd[s.clone()], &mut f);
            if f.iter().any(|v| !v.is_finite()) {
                return Err(CycleError::NonFinite { sample: n });
            }
            r.extend(dx[s].iter().zip(&f).map(|(d, fv)| d - fv));
        }
        r.push(dx[self.ops.grid().origin() * m + self.anchor]);
        Ok(r)
    }

    /// Analytic Jacobian of the residual with respect to `X` (without the
    /// period column).
    fn jacobian_x(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.model.dim();
        let k = self.k();
        let xd = apply_blocks(self.ops.delay(), x, m);
        let d = self.ops.derivative();
        let delay = self.ops.delay();
        let mut jac = DMatrix::zeros(m * k + 1, m * k);
        let mut j0 = vec![0.0; m * m];
        let mut j1 = vec![0.0; m * m];
        let field = self.model.field();
        for n in 0..k {
            let s = n * m..(n + 1) * m;
            field.jac_now(&x[s.clone()], &xd[s.clone()], &mut j0);
            field.jac_delayed(&x[s.clone()], &xd[s], &mut j1);
            for col in 0..k {
                let dw = d[(n, col)];
                let lw = delay[(n, col)];
                for i in 0..m {
                    let row = n * m + i;
                    jac[(row, col * m + i)] += dw;
                    for j in 0..m {
                        jac[(row, col * m + j)] -= j1[i * m + j] * lw;
                    }
                }
            }
            for i in 0..m {
                for j in 0..m {
                    jac[(n * m + i, n * m + j)] -= j0[i * m + j];
                }
            }
        }
        let origin = self.ops.grid().origin();
        for col in 0..k {
            jac[(m * k, col * m + self.anchor)] = d[(origin, col)];
        }
        jac
    }
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

struct Evaluator<'a> {
    model: &'a ModelSpec,
    order: usize,
    anchor: usize,
    cached: Option<SpectralOperators>,
}

impl<'a> Evaluator<'a> {
    fn operators(&mut self, period: f64) -> Result<SpectralOperators, CycleError> {
        if let Some(ops) = &self.cached {
            let p = ops.grid().period();
            if ((p - period) / period).abs() <= 1e-14 {
                return Ok(ops.clone());
            }
        }
        let ops = SpectralOperators::new(self.order, period, self.model.tau(), 0.0)?;
        self.cached = Some(ops.clone());
        Ok(ops)
    }

    fn residual(&mut self, x: &[f64], period: f64) -> Result<Vec<f64>, CycleError> {
        let ops = self.operators(period)?;
        Collocation::new(self.model, ops, self.anchor).residual(x)
    }

    fn jacobian(&mut self, x: &[f64], period: f64) -> Result<DMatrix<f64>, CycleError> {
        let ops = self.operators(period)?;
        let jx = Collocation::new(self.model, ops, self.anchor).jacobian_x(x);
        let n = jx.ncols();
        let mut jac = jx.insert_column(n, 0.0);
        // Both the frequencies and the delay phases depend on T, so the
        // period column is differenced.
        let h = 1e-6 * period;
        let rp = self.residual(x, period + h)?;
        let rm = self.residual(x, period - h)?;
        for (i, (a, b)) in rp.iter().zip(&rm).enumerate() {
            jac[(i, n)] = (a - b) / (2.0 * h);
        }
        Ok(jac)
    }
}

/// Solves the harmonic-balance zero problem starting from `seed`.
pub fn solve_cycle(model: &ModelSpec, seed: &Seed, opts: &SolveOptions) -> Result<PeriodicOrbit, CycleError> {
    let m = model.dim();
    opts.validate(m)?;
    if seed.series.dim() != m {
        return Err(CycleError::InvalidSeed(format!(
            "seed dimension {} differs from model dimension {m}",
            seed.series.dim()
        )));
    }
    if !(seed.period.is_finite() && seed.period > 0.0) {
        return Err(CycleError::InvalidSeed(format!("period guess {}", seed.period)));
    }
    let grid = SpectralGrid::new(opts.order, seed.period)?;
    let series = seed.series.with_period(seed.period);
    let mut x: Vec<f64> = grid.times().iter().flat_map(|&t| series.evaluate(t)).collect();
    let mut period = seed.period;
    let nx = x.len();

    let mut eval = Evaluator {
        model,
        order: opts.order,
        anchor: opts.anchor,
        cached: None,
    };
    let mut r = eval.residual(&x, period)?;
    let mut cost = sum_sq(&r);
    let mut damping = opts.initial_damping;
    let mut iterations = 0;

    while max_norm(&r) > opts.tolerance {
        if iterations >= opts.max_iterations {
            return Err(CycleError::MaxIterations {
                iterations,
                residual: max_norm(&r),
            });
        }
        iterations += 1;
        let jac = eval.jacobian(&x, period)?;
        let jt = jac.transpose();
        let normal = &jt * &jac;
        let gradient = &jt * DVector::from_column_slice(&r);
        let diag_floor = 1e-12 * normal.diagonal().max().max(f64::MIN_POSITIVE);

        let mut accepted = false;
        let mut step_norm = f64::INFINITY;
        while damping <= 1e16 {
            let mut damped = normal.clone();
            for i in 0..=nx {
                damped[(i, i)] += damping * normal[(i, i)].max(diag_floor);
            }
            let Some(chol) = damped.cholesky() else {
                damping *= opts.damping_factor;
                continue;
            };
            let step = -chol.solve(&gradient);
            step_norm = step.norm();
            let trial_period = period + step[nx];
            if !(trial_period.is_finite() && trial_period > 0.0) {
                damping *= opts.damping_factor;
                continue;
            }
            let trial_x: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            match eval.residual(&trial_x, trial_period) {
                Ok(trial_r) if sum_sq(&trial_r) < cost => {
                    x = trial_x;
                    period = trial_period;
                    cost = sum_sq(&trial_r);
                    r = trial_r;
                    damping = (damping / opts.damping_factor).max(1e-15);
                    accepted = true;
                    break;
                }
                _ => damping *= opts.damping_factor,
            }
        }
        if !accepted {
            if max_norm(&r) <= opts.tolerance {
                break;
            }
            if step_norm.is_infinite() {
                return Err(CycleError::SingularJacobian { damping });
            }
            return Err(CycleError::MaxIterations {
                iterations,
                residual: max_norm(&r),
            });
        }
        if step_norm <= opts.min_step {
            break;
        }
    }

    let final_residual = max_norm(&r);
    if final_residual > opts.tolerance {
        return Err(CycleError::MaxIterations {
            iterations,
            residual: final_residual,
        });
    }
    let series = FourierSeries::from_samples(&x, m, opts.order, period)?;
    let max_harmonic = series.max_harmonic();
    if max_harmonic < 1e-8 {
        return Err(CycleError::DivergedToEquilibrium { max_harmonic });
    }
    Ok(PeriodicOrbit {
        model: model.clone(),
        period,
        anchor: opts.anchor,
        samples: x,
        series,
        residual_norm: final_residual,
        iterations,
    })
}

/// One row of a truncation sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub order: usize,
    pub result: Result<SweepValues, CycleError>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepValues {
    pub period: f64,
    /// `sum_{|p| > M/2} |a_p|^2`
    pub tail: f64,
    pub residual: f64,
}

/// Solves at each truncation order, warm-starting every solve from the
/// previous converged orbit.
pub fn convergence_sweep(
    model: &ModelSpec,
    seed: &Seed,
    opts: &SolveOptions,
    orders: &[usize],
) -> Result<Vec<SweepRow>, CycleError> {
    if orders.is_empty() {
        return Err(CycleError::InvalidOptions("empty truncation list".into()));
    }
    if orders.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CycleError::InvalidOptions("truncation list must be increasing".into()));
    }
    let mut current = seed.clone();
    let mut rows = Vec::with_capacity(orders.len());
    for &order in orders {
        let o = opts.clone().with_order(order);
        let result = solve_cycle(model, &current, &o).map(|orbit| {
            current = Seed::new(orbit.series().clone());
            SweepValues {
                period: orbit.period(),
                tail: orbit.series().tail_energy(),
                residual: orbit.residual_norm(),
            }
        });
        rows.push(SweepRow { order, result });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cos_on_grid(order: usize, scale: f64) -> Vec<f64> {
        SpectralGrid::new(order, 2.0 * PI)
            .unwrap()
            .times()
            .iter()
            .map(|t| scale * t.cos())
            .collect()
    }

    #[test]
    fn exact_cycle_has_zero_residual() {
        let model = ModelSpec::kotani_scalar(0.05);
        let r = residual(&model, &cos_on_grid(20, 1.0), 2.0 * PI, 0).unwrap();
        assert_eq!(r.len(), 42);
        assert!(max_norm(&r) <= 1e-10);
        assert!(r[41].abs() <= 1e-10);
    }

    #[test]
    fn scaled_cycle_is_not_a_solution() {
        let model = ModelSpec::kotani_scalar(0.05);
        let x = cos_on_grid(20, 1.1);
        let r = residual(&model, &x, 2.0 * PI, 0).unwrap();
        // Direct evaluation: F(1.1 cos t, 1.1 sin t) + 1.1 sin t
        //   = 0.05 * 1.1 cos t (1 - 1.21), peaking at 0.01155.
        assert!(max_norm(&r) > 1e-3);
        assert!((max_norm(&r) - 0.05 * 1.1 * 0.21).abs() < 1e-12);
    }

    #[test]
    fn analytic_jacobian_matches_differences() {
        let model = ModelSpec::cortico_thalamic_default();
        let order = 4;
        let period = 31.0;
        let x: Vec<f64> = (0..18).map(|i| 0.03 * (0.7 * i as f64).sin()).collect();
        let ops = SpectralOperators::new(order, period, model.tau(), 0.0).unwrap();
        let col = Collocation::new(&model, ops, 1);
        let jac = col.jacobian_x(&x);
        for j in 0..x.len() {
            let h = 1e-7;
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let rp = col.residual(&xp).unwrap();
            let rm = col.residual(&xm).unwrap();
            for i in 0..rp.len() {
                let fd = (rp[i] - rm[i]) / (2.0 * h);
                assert!((fd - jac[(i, j)]).abs() < 1e-7, "({i},{j}) {fd} vs {}", jac[(i, j)]);
            }
        }
    }

    #[test]
    fn ansatz_seed() {
        let s = seed_from_ansatz(1, &[1.0], 2.0 * PI).unwrap();
        for t in [0.0, 0.4, 2.0] {
            assert!((s.series.evaluate(t)[0] - f64::cos(t)).abs() < 1e-15);
        }
        let z = seed_from_ansatz(1, &[0.0], 2.0 * PI).unwrap();
        assert_eq!(z.series.max_harmonic(), 0.0);
        let two = seed_from_ansatz(2, &[0.1, 0.05], 30.0).unwrap();
        assert!((two.series.coeff(1, 0).re - 0.05).abs() < 1e-16);
        assert!((two.series.coeff(-1, 1).re - 0.025).abs() < 1e-16);
        assert!(seed_from_ansatz(2, &[0.1], 30.0).is_err());
        assert!(seed_from_ansatz(1, &[0.1], -3.0).is_err());
    }

    #[test]
    fn kotani_from_distant_seed() {
        let model = ModelSpec::kotani_scalar(0.05);
        let seed = seed_from_ansatz(1, &[0.8], 6.0).unwrap();
        let orbit = solve_cycle(&model, &seed, &SolveOptions::default()).unwrap();
        assert!((orbit.period() - 2.0 * PI).abs() < 1e-8);
        assert!((orbit.series().coeff(1, 0).re - 0.5).abs() < 1e-8);
        for (x, t) in orbit.samples().iter().zip(orbit.grid().times()) {
            assert!((x - t.cos()).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_seed_collapses_to_equilibrium() {
        for model in [ModelSpec::kotani_scalar(0.05), ModelSpec::cortico_thalamic_default()] {
            let seed = seed_from_ansatz(model.dim(), &vec![0.0; model.dim()], 7.0).unwrap();
            assert!(matches!(
                solve_cycle(&model, &seed, &SolveOptions::default()),
                Err(CycleError::DivergedToEquilibrium { .. })
            ));
        }
    }

    #[test]
    fn bad_options_rejected() {
        let model = ModelSpec::kotani_scalar(0.05);
        let seed = seed_from_ansatz(1, &[1.0], 6.0).unwrap();
        let opts = SolveOptions::default().with_anchor(1);
        assert!(matches!(solve_cycle(&model, &seed, &opts), Err(CycleError::InvalidOptions(_))));
        let opts = SolveOptions::default().with_order(0);
        assert!(matches!(solve_cycle(&model, &seed, &opts), Err(CycleError::InvalidOptions(_))));
    }

    #[test]
    fn kotani_sweep_keeps_exact_period() {
        let model = ModelSpec::kotani_scalar(0.05);
        let seed = seed_from_ansatz(1, &[0.9], 6.1).unwrap();
        let rows = convergence_sweep(&model, &seed, &SolveOptions::default(), &[5, 10, 20]).unwrap();
        assert_eq!(rows.len(), 3);
        for row in rows {
            let v = row.result.unwrap();
            assert!((v.period - 2.0 * PI).abs() < 1e-8, "M={} T={}", row.order, v.period);
        }
        let single = convergence_sweep(&model, &seed, &SolveOptions::default(), &[20]).unwrap();
        assert_eq!(single.len(), 1);
        assert!(convergence_sweep(&model, &seed, &SolveOptions::default(), &[20, 10]).is_err());
    }
}
