//! Fourier collocation machinery on the symmetric grid `t_n = n T / (2M + 1)`,
//! `n = -M..=M`.
//!
//! Sampled signals are stored sample-major: the state of dimension `m` at grid
//! point `n` occupies `x[(n + M) * m .. (n + M + 1) * m]`. Every module in the
//! crate uses this layout.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("truncation order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error("period must be positive and finite, got {0}")]
    InvalidPeriod(f64),
    #[error("delay must be non-negative and finite, got {0}")]
    InvalidDelay(f64),
    #[error("expected {expected} sample values, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("operator {name} has imaginary residue {residue:e} above {threshold:e}")]
    ImaginaryResidue {
        name: &'static str,
        residue: f64,
        threshold: f64,
    },
}

/// The `2M + 1` collocation times of a `T`-periodic signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralGrid {
    order: usize,
    period: f64,
}

impl SpectralGrid {
    pub fn new(order: usize, period: f64) -> Result<Self, SpectralError> {
        if order == 0 {
            return Err(SpectralError::InvalidOrder(order));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(SpectralError::InvalidPeriod(period));
        }
        Ok(Self { order, period })
    }

    /// Truncation order `M`.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Number of grid points, `2M + 1`.
    pub fn len(&self) -> usize {
        2 * self.order + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.period / self.len() as f64
    }

    /// Time of the grid point with storage index `k` (so `k = M` is `t = 0`).
    pub fn time(&self, k: usize) -> f64 {
        (k as f64 - self.order as f64) * self.spacing()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    /// Storage index of the `t = 0` sample.
    pub fn origin(&self) -> usize {
        self.order
    }

    /// Angular frequencies `omega_p = 2 pi p / T` for `p = -M..=M`.
    pub fn frequencies(&self) -> Vec<f64> {
        let m = self.order as f64;
        (0..self.len())
            .map(|k| 2.0 * PI * (k as f64 - m) / self.period)
            .collect()
    }
}

/// Truncated Fourier series `x(t) = sum_p a_p exp(i omega_p t)` with
/// `a_{-p} = conj(a_p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierSeries {
    dim: usize,
    period: f64,
    order: usize,
    /// `coeffs[(p + M) * dim + c]`
    coeffs: Vec<Complex64>,
}

impl FourierSeries {
    /// Builds a series from coefficients indexed `(p + M) * dim + c`. The
    /// coefficients are symmetrized so the synthesized signal is real.
    pub fn from_coefficients(
        dim: usize,
        period: f64,
        order: usize,
        coeffs: Vec<Complex64>,
    ) -> Result<Self, SpectralError> {
        let grid = SpectralGrid::new(order, period)?;
        let expected = grid.len() * dim;
        if coeffs.len() != expected || dim == 0 {
            return Err(SpectralError::DimensionMismatch {
                expected,
                actual: coeffs.len(),
            });
        }
        let mut series = Self {
            dim,
            period,
            order,
            coeffs,
        };
        series.symmetrize();
        Ok(series)
    }

    /// Discrete Fourier analysis of sample-major values on the grid of
    /// `order` and `period`.
    pub fn from_samples(
        samples: &[f64],
        dim: usize,
        order: usize,
        period: f64,
    ) -> Result<Self, SpectralError> {
        let grid = SpectralGrid::new(order, period)?;
        let k_len = grid.len();
        if dim == 0 || samples.len() != k_len * dim {
            return Err(SpectralError::DimensionMismatch {
                expected: k_len * dim,
                actual: samples.len(),
            });
        }
        let m = order as i64;
        let kf = k_len as f64;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); k_len * dim];
        for p in -m..=m {
            let row = (p + m) as usize;
            for n in -m..=m {
                let phase = -2.0 * PI * ((n * p).rem_euclid(k_len as i64)) as f64 / kf;
                let w = Complex64::from_polar(1.0 / kf, phase);
                let base = (n + m) as usize * dim;
                for c in 0..dim {
                    coeffs[row * dim + c] += w * samples[base + c];
                }
            }
        }
        let mut series = Self {
            dim,
            period,
            order,
            coeffs,
        };
        series.symmetrize();
        Ok(series)
    }

    fn symmetrize(&mut self) {
        let m = self.order;
        for p in 0..=m {
            for c in 0..self.dim {
                let ip = (m + p) * self.dim + c;
                let im = (m - p) * self.dim + c;
                let avg = 0.5 * (self.coeffs[ip] + self.coeffs[im].conj());
                self.coeffs[ip] = avg;
                self.coeffs[im] = avg.conj();
            }
        }
        for c in 0..self.dim {
            let i0 = m * self.dim + c;
            self.coeffs[i0] = Complex64::new(self.coeffs[i0].re, 0.0);
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn grid(&self) -> SpectralGrid {
        SpectralGrid {
            order: self.order,
            period: self.period,
        }
    }

    /// Coefficient `a_p` of component `c`.
    pub fn coeff(&self, p: i64, c: usize) -> Complex64 {
        let m = self.order as i64;
        if p.abs() > m {
            return Complex64::new(0.0, 0.0);
        }
        self.coeffs[(p + m) as usize * self.dim + c]
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn evaluate(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.evaluate_into(t, &mut out);
        out
    }

    pub fn evaluate_into(&self, t: f64, out: &mut [f64]) {
        let m = self.order;
        let omega = 2.0 * PI / self.period;
        for (c, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = self.coeffs[m * self.dim + c].re;
        }
        // Positive harmonics only: conj symmetry doubles the real part.
        for p in 1..=m {
            let e = Complex64::from_polar(1.0, omega * p as f64 * t);
            for (c, o) in out.iter_mut().enumerate().take(self.dim) {
                *o += 2.0 * (self.coeffs[(m + p) * self.dim + c] * e).re;
            }
        }
    }

    /// Time derivative as a new series.
    pub fn derivative(&self) -> Self {
        let m = self.order as i64;
        let omega = 2.0 * PI / self.period;
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let p = (i / self.dim) as i64 - m;
                a * Complex64::new(0.0, omega * p as f64)
            })
            .collect();
        Self {
            dim: self.dim,
            period: self.period,
            order: self.order,
            coeffs,
        }
    }

    /// Same function re-expressed at another truncation order (zero padding
    /// or truncation of harmonics).
    pub fn with_order(&self, order: usize) -> Self {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); (2 * order + 1) * self.dim];
        let keep = order.min(self.order) as i64;
        for p in -keep..=keep {
            for c in 0..self.dim {
                coeffs[(p + order as i64) as usize * self.dim + c] = self.coeff(p, c);
            }
        }
        Self {
            dim: self.dim,
            period: self.period,
            order,
            coeffs,
        }
    }

    /// Same coefficients reinterpreted with a different period.
    pub fn with_period(&self, period: f64) -> Self {
        Self {
            period,
            ..self.clone()
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|a| a * factor).collect(),
            ..self.clone()
        }
    }

    /// Values on the series' own collocation grid.
    pub fn samples(&self) -> Vec<f64> {
        self.grid()
            .times()
            .iter()
            .flat_map(|&t| self.evaluate(t))
            .collect()
    }

    /// `sum_{|p| > M/2} |a_p|^2` over all components.
    pub fn tail_energy(&self) -> f64 {
        let m = self.order as i64;
        let cut = self.order as f64 / 2.0;
        (-m..=m)
            .filter(|p| (*p as f64).abs() > cut)
            .map(|p| (0..self.dim).map(|c| self.coeff(p, c).norm_sqr()).sum::<f64>())
            .sum()
    }

    /// Largest modulus among the non-constant harmonics.
    pub fn max_harmonic(&self) -> f64 {
        let m = self.order as i64;
        (1..=m)
            .flat_map(|p| (0..self.dim).map(move |c| (p, c)))
            .map(|(p, c)| self.coeff(p, c).norm())
            .fold(0.0, f64::max)
    }
}

/// Collocation operators for a given `(M, T, tau, mu)`.
///
/// The complex DFT matrix and its inverse are kept for inspection; downstream
/// code only needs the real derivative, delay and advance matrices.
#[derive(Debug, Clone)]
pub struct SpectralOperators {
    grid: SpectralGrid,
    tau: f64,
    mu: f64,
    s: DMatrix<Complex64>,
    s_inv: DMatrix<Complex64>,
    derivative: DMatrix<f64>,
    delay: DMatrix<f64>,
    advance: DMatrix<f64>,
    imaginary_residue: f64,
}

impl SpectralOperators {
    pub fn new(order: usize, period: f64, tau: f64, mu: f64) -> Result<Self, SpectralError> {
        let grid = SpectralGrid::new(order, period)?;
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(SpectralError::InvalidDelay(tau));
        }
        let k = grid.len();
        let m = order as i64;
        let kf = k as f64;
        let s = DMatrix::from_fn(k, k, |n, p| {
            let prod = ((n as i64 - m) * (p as i64 - m)).rem_euclid(k as i64) as f64;
            Complex64::from_polar(1.0, 2.0 * PI * prod / kf)
        });
        let s_inv = s.map(|z| z.conj() / kf);
        let omegas = grid.frequencies();
        let l: Vec<Complex64> = omegas.iter().map(|&w| Complex64::new(mu, w)).collect();
        let gamma: Vec<Complex64> = omegas
            .iter()
            .map(|&w| Complex64::from_polar(1.0, -w * tau))
            .collect();
        let gamma_adv: Vec<Complex64> = gamma.iter().map(|g| g.conj()).collect();

        let threshold = 1e-12 * kf;
        let (derivative, r1) = conjugate_diagonal(&s, &s_inv, &l);
        check_residue("derivative", r1, threshold)?;
        let (delay, r2) = conjugate_diagonal(&s, &s_inv, &gamma);
        check_residue("delay", r2, threshold)?;
        let (advance, r3) = conjugate_diagonal(&s, &s_inv, &gamma_adv);
        check_residue("advance", r3, threshold)?;

        Ok(Self {
            grid,
            tau,
            mu,
            s,
            s_inv,
            derivative,
            delay,
            advance,
            imaginary_residue: r1.max(r2).max(r3),
        })
    }

    pub fn grid(&self) -> SpectralGrid {
        self.grid
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// `[S]_{np} = exp(2 pi i n p / (2M + 1))`.
    pub fn vandermonde(&self) -> &DMatrix<Complex64> {
        &self.s
    }

    pub fn vandermonde_inverse(&self) -> &DMatrix<Complex64> {
        &self.s_inv
    }

    /// `Re(S L(mu) S^-1)`: `d/dt + mu` on samples.
    pub fn derivative(&self) -> &DMatrix<f64> {
        &self.derivative
    }

    /// `Re(S Gamma S^-1)`: maps samples of `x(t)` to samples of `x(t - tau)`.
    pub fn delay(&self) -> &DMatrix<f64> {
        &self.delay
    }

    /// `Re(S Gamma^* S^-1)`: maps samples of `x(t)` to samples of `x(t + tau)`.
    pub fn advance(&self) -> &DMatrix<f64> {
        &self.advance
    }

    /// Largest discarded imaginary part across the derived operators.
    pub fn imaginary_residue(&self) -> f64 {
        self.imaginary_residue
    }
}

fn check_residue(name: &'static str, residue: f64, threshold: f64) -> Result<(), SpectralError> {
    if residue > threshold {
        Err(SpectralError::ImaginaryResidue {
            name,
            residue,
            threshold,
        })
    } else {
        Ok(())
    }
}

fn conjugate_diagonal(
    s: &DMatrix<Complex64>,
    s_inv: &DMatrix<Complex64>,
    diag: &[Complex64],
) -> (DMatrix<f64>, f64) {
    let k = diag.len();
    let mut scaled = s.clone();
    for (p, d) in diag.iter().enumerate() {
        for n in 0..k {
            scaled[(n, p)] *= d;
        }
    }
    let full = scaled * s_inv;
    let residue = full.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    (full.map(|z| z.re), residue)
}

/// Applies a `(2M+1) x (2M+1)` operator to each state component of
/// sample-major data, i.e. computes `(op ⊗ I_m) x`.
pub fn apply_blocks(op: &DMatrix<f64>, x: &[f64], dim: usize) -> Vec<f64> {
    let k = op.nrows();
    debug_assert_eq!(x.len(), op.ncols() * dim);
    let mut out = vec![0.0; k * dim];
    for n in 0..k {
        let row = &mut out[n * dim..(n + 1) * dim];
        for j in 0..op.ncols() {
            let w = op[(n, j)];
            if w == 0.0 {
                continue;
            }
            for c in 0..dim {
                row[c] += w * x[j * dim + c];
            }
        }
    }
    out
}

/// Materializes `op ⊗ I_m`.
pub fn kron_identity(op: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let (r, c) = op.shape();
    let mut out = DMatrix::zeros(r * dim, c * dim);
    for i in 0..r {
        for j in 0..c {
            let w = op[(i, j)];
            for d in 0..dim {
                out[(i * dim + d, j * dim + d)] = w;
            }
        }
    }
    out
}

/// Block-diagonal matrix from `m x m` blocks.
pub fn block_diagonal(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let dim = blocks.first().map_or(0, |b| b.nrows());
    let n = blocks.len() * dim;
    let mut out = DMatrix::zeros(n, n);
    for (k, b) in blocks.iter().enumerate() {
        out.view_mut((k * dim, k * dim), (dim, dim)).copy_from(b);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cos_samples(order: usize) -> Vec<f64> {
        SpectralGrid::new(order, 2.0 * PI)
            .unwrap()
            .times()
            .iter()
            .map(|t| t.cos())
            .collect()
    }

    #[test]
    fn grid_is_symmetric_and_uniform() {
        let g = SpectralGrid::new(5, 3.0).unwrap();
        let t = g.times();
        assert_eq!(t.len(), 11);
        assert_eq!(t[5], 0.0);
        for k in 0..11 {
            assert_abs_diff_eq!(t[k], -t[10 - k], epsilon = 1e-15);
        }
        for w in t.windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], 3.0 / 11.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(
            SpectralOperators::new(0, 1.0, 0.0, 0.0).unwrap_err(),
            SpectralError::InvalidOrder(0)
        );
        assert!(matches!(
            SpectralOperators::new(3, -1.0, 0.0, 0.0),
            Err(SpectralError::InvalidPeriod(_))
        ));
        assert!(matches!(
            SpectralOperators::new(3, 1.0, -0.5, 0.0),
            Err(SpectralError::InvalidDelay(_))
        ));
    }

    #[test]
    fn vandermonde_for_m1() {
        let ops = SpectralOperators::new(1, 2.0 * PI, 0.0, 0.0).unwrap();
        let s = ops.vandermonde();
        for (i, n) in (-1i32..=1).enumerate() {
            for (j, p) in (-1i32..=1).enumerate() {
                let want = Complex64::from_polar(1.0, 2.0 * PI * (n * p) as f64 / 3.0);
                assert_abs_diff_eq!((s[(i, j)] - want).norm(), 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn derivative_of_cosine_m1() {
        let ops = SpectralOperators::new(1, 2.0 * PI, 0.0, 0.0).unwrap();
        let x = cos_samples(1);
        let dx = apply_blocks(ops.derivative(), &x, 1);
        for (k, t) in ops.grid().times().iter().enumerate() {
            assert_abs_diff_eq!(dx[k], -t.sin(), epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_delay_is_identity() {
        let ops = SpectralOperators::new(4, 1.7, 0.0, 0.0).unwrap();
        let id = DMatrix::<f64>::identity(9, 9);
        assert!((ops.delay() - &id).amax() < 1e-13);
        assert!((ops.advance() - &id).amax() < 1e-13);
    }

    #[test]
    fn derivative_is_shifted_antisymmetric() {
        let d0 = SpectralOperators::new(6, 2.3, 0.4, 0.0).unwrap();
        let dmu = SpectralOperators::new(6, 2.3, 0.4, -0.7).unwrap();
        let d = d0.derivative();
        assert!((d + d.transpose()).amax() < 1e-12);
        let shift = dmu.derivative() - d;
        assert!((shift - DMatrix::<f64>::identity(13, 13) * -0.7).amax() < 1e-12);
    }

    #[test]
    fn vandermonde_inverse() {
        let ops = SpectralOperators::new(7, 1.0, 0.3, 0.0).unwrap();
        let prod = ops.vandermonde() * ops.vandermonde_inverse();
        let id = DMatrix::<Complex64>::identity(15, 15);
        assert!((prod - id).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-12);
    }

    #[test]
    fn cosine_coefficients() {
        let s = FourierSeries::from_samples(&cos_samples(20), 1, 20, 2.0 * PI).unwrap();
        for p in -20..=20i64 {
            let want = if p.abs() == 1 { 0.5 } else { 0.0 };
            assert_abs_diff_eq!((s.coeff(p, 0) - want).norm(), 0.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(s.evaluate(0.0)[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.evaluate(PI / 3.0)[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn constant_samples() {
        let s = FourierSeries::from_samples(&[2.5; 9], 1, 4, 1.0).unwrap();
        assert_abs_diff_eq!(s.coeff(0, 0).re, 2.5, epsilon = 1e-14);
        assert!(s.max_harmonic() < 1e-14);
    }

    #[test]
    fn sample_count_mismatch() {
        assert_eq!(
            FourierSeries::from_samples(&[1.0; 8], 1, 4, 1.0).unwrap_err(),
            SpectralError::DimensionMismatch {
                expected: 9,
                actual: 8
            }
        );
    }

    #[test]
    fn apply_blocks_matches_kron() {
        let ops = SpectralOperators::new(3, 2.0, 0.7, 0.1).unwrap();
        let x: Vec<f64> = (0..14).map(|i| (i as f64 * 0.37).sin()).collect();
        let direct = apply_blocks(ops.delay(), &x, 2);
        let kron = kron_identity(ops.delay(), 2) * nalgebra::DVector::from_column_slice(&x);
        for (a, b) in direct.iter().zip(kron.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    fn trig_poly(coeffs: &[(f64, f64)], t: f64, omega: f64) -> f64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(p, (a, b))| a * (p as f64 * omega * t).cos() + b * (p as f64 * omega * t).sin())
            .sum()
    }

    proptest! {
        #[test]
        fn samples_round_trip(order in 1usize..12, period in 0.5f64..40.0, seed in prop::collection::vec(-3.0f64..3.0, 50)) {
            let k = 2 * order + 1;
            let x: Vec<f64> = (0..2 * k).map(|i| seed[i % seed.len()] * (1.0 + i as f64).sqrt()).collect();
            let s = FourierSeries::from_samples(&x, 2, order, period).unwrap();
            let back = s.samples();
            for (a, b) in x.iter().zip(back.iter()) {
                prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()) * k as f64);
            }
            for p in 0..=order as i64 {
                prop_assert!((s.coeff(p, 1) - s.coeff(-p, 1).conj()).norm() < 1e-15);
            }
        }

        #[test]
        fn operators_exact_on_trig_polys(order in 1usize..15, period in 0.5f64..40.0,
                                         tau in 0.0f64..20.0, raw in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16)) {
            let coeffs: Vec<(f64, f64)> = raw.into_iter().take(order + 1).collect();
            let ops = SpectralOperators::new(order, period, tau, 0.0).unwrap();
            let omega = 2.0 * PI / period;
            let times = ops.grid().times();
            let x: Vec<f64> = times.iter().map(|&t| trig_poly(&coeffs, t, omega)).collect();
            let dx = apply_blocks(ops.derivative(), &x, 1);
            let xd = apply_blocks(ops.delay(), &x, 1);
            let xa = apply_blocks(ops.advance(), &x, 1);
            let scale = 1.0 + coeffs.iter().enumerate().map(|(p, (a, b))| (a.abs() + b.abs()) * (1.0 + p as f64 * omega)).sum::<f64>();
            for (k, &t) in times.iter().enumerate() {
                let deriv: f64 = coeffs.iter().enumerate().map(|(p, (a, b))| {
                    let w = p as f64 * omega;
                    -a * w * (w * t).sin() + b * w * (w * t).cos()
                }).sum();
                prop_assert!((dx[k] - deriv).abs() < 1e-10 * scale);
                prop_assert!((xd[k] - trig_poly(&coeffs, t - tau, omega)).abs() < 1e-10 * scale);
                prop_assert!((xa[k] - trig_poly(&coeffs, t + tau, omega)).abs() < 1e-10 * scale);
            }
        }

        #[test]
        fn evaluation_is_periodic(order in 1usize..10, period in 0.5f64..40.0, t in -100.0f64..100.0,
                                  raw in prop::collection::vec(-1.0f64..1.0, 21)) {
            let x: Vec<f64> = raw.into_iter().take(2 * order + 1).collect();
            let s = FourierSeries::from_samples(&x, 1, order, period).unwrap();
            prop_assert!((s.evaluate(t)[0] - s.evaluate(t + period)[0]).abs() < 1e-12 * (1.0 + t.abs()));
        }
    }
}
