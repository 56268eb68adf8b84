//! Real Floquet exponents as roots of `det M(mu) = 0`, where
//! `M(mu) = (S L(mu) S^-1) ⊗ I - J0 - exp(-mu tau) J1 ((S Gamma S^-1) ⊗ I)`
//! is the collocated linearization about a harmonic-balance orbit.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cycle::PeriodicOrbit;
use crate::spectral::{kron_identity, FourierSeries, SpectralError, SpectralOperators};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FloquetError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("scan needs at least two grid points and an increasing range")]
    InvalidScan,
    #[error("no root in [{lo}, {hi}]: best relative sigma_min {best:e} at mu = {mu}")]
    NoRootInBracket { lo: f64, hi: f64, mu: f64, best: f64 },
    #[error("M(mu) is not singular at mu = {mu}: relative sigma_min {ratio:e}")]
    NotSingular { mu: f64, ratio: f64 },
    #[error("two smallest singular values agree to {gap:e} (relative); null space is not one-dimensional")]
    DegenerateNullspace { gap: f64 },
}

/// Relative `sigma_min / sigma_max` below which `M(mu)` is taken as singular
/// by the root polisher.
pub const ROOT_THRESHOLD: f64 = 1e-8;
/// Relative threshold for accepting a null vector.
pub const NULL_VECTOR_THRESHOLD: f64 = 1e-6;
/// Relative spacing of the two smallest singular values below which the null
/// space is reported as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-6;

/// `M(mu)` at one exponent.
#[derive(Debug, Clone)]
pub struct StabilityMatrix {
    pub mu: f64,
    pub matrix: DMatrix<f64>,
}

/// Precomputed, `mu`-independent parts of `M(mu)` for one orbit:
/// `M(mu) = base + mu I - exp(-mu tau) delayed`.
#[derive(Debug, Clone)]
pub struct StabilityOperator {
    tau: f64,
    base: DMatrix<f64>,
    delayed: DMatrix<f64>,
}

impl StabilityOperator {
    pub fn new(orbit: &PeriodicOrbit) -> Result<Self, FloquetError> {
        let m = orbit.dim();
        let k = orbit.grid().len();
        let model = orbit.model();
        let ops = SpectralOperators::new(orbit.order(), orbit.period(), orbit.tau(), 0.0)?;
        let x = orbit.samples();
        // Delayed orbit values come from the Fourier interpolant.
        let xd = orbit.shifted_samples(-orbit.tau());
        let mut base = kron_identity(ops.derivative(), m);
        let mut delayed = DMatrix::zeros(m * k, m * k);
        let field = model.field();
        let mut j0 = vec![0.0; m * m];
        let mut j1 = vec![0.0; m * m];
        let delay = ops.delay();
        for n in 0..k {
            let s = n * m..(n + 1) * m;
            field.jac_now(&x[s.clone()], &xd[s.clone()], &mut j0);
            field.jac_delayed(&x[s.clone()], &xd[s], &mut j1);
            for i in 0..m {
                for j in 0..m {
                    base[(n * m + i, n * m + j)] -= j0[i * m + j];
                }
            }
            // (J1 (Delta ⊗ I)) rows of sample n.
            for col in 0..k {
                let w = delay[(n, col)];
                if w == 0.0 {
                    continue;
                }
                for i in 0..m {
                    for j in 0..m {
                        delayed[(n * m + i, col * m + j)] += j1[i * m + j] * w;
                    }
                }
            }
        }
        Ok(Self {
            tau: orbit.tau(),
            base,
            delayed,
        })
    }

    pub fn size(&self) -> usize {
        self.base.nrows()
    }

    pub fn matrix(&self, mu: f64) -> DMatrix<f64> {
        let mut out = &self.base - &self.delayed * (-mu * self.tau).exp();
        for i in 0..out.nrows() {
            out[(i, i)] += mu;
        }
        out
    }

    /// `(log|det M(mu)|, sign det M(mu))` from an LU factorization with
    /// partial pivoting.
    pub fn log_det(&self, mu: f64) -> (f64, f64) {
        log_det(self.matrix(mu))
    }

    pub fn sigma_ratio(&self, mu: f64) -> f64 {
        let (lo, hi) = extreme_singular_values(&self.matrix(mu));
        lo / hi
    }
}

pub fn build_stability_matrix(orbit: &PeriodicOrbit, mu: f64) -> Result<StabilityMatrix, FloquetError> {
    Ok(StabilityMatrix {
        mu,
        matrix: StabilityOperator::new(orbit)?.matrix(mu),
    })
}

pub(crate) fn log_det(matrix: DMatrix<f64>) -> (f64, f64) {
    let lu = matrix.lu();
    let mut sign: f64 = lu.p().determinant();
    let mut log = 0.0;
    for u in lu.u().diagonal().iter() {
        if *u == 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        sign *= u.signum();
        log += u.abs().ln();
    }
    (log, sign)
}

pub(crate) fn extreme_singular_values(matrix: &DMatrix<f64>) -> (f64, f64) {
    let sv = matrix.singular_values();
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sv.iter().cloned().fold(0.0, f64::max);
    (lo, hi)
}

/// One point of a determinant scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub mu: f64,
    pub log_abs_det: f64,
    pub sign: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl ScanPoint {
    pub fn sigma_ratio(&self) -> f64 {
        self.sigma_min / self.sigma_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetScan {
    pub points: Vec<ScanPoint>,
    /// Grid points where the factorization broke down.
    pub failures: Vec<(f64, String)>,
}

/// Evaluates the stabilized determinant and the extreme singular values of
/// `M(mu)` on a uniform grid.
pub fn det_scan(orbit: &PeriodicOrbit, range: (f64, f64), grid_points: usize) -> Result<DetScan, FloquetError> {
    let op = StabilityOperator::new(orbit)?;
    det_scan_with(&op, range, grid_points)
}

pub fn det_scan_with(op: &StabilityOperator, range: (f64, f64), grid_points: usize) -> Result<DetScan, FloquetError> {
    let (lo, hi) = range;
    if grid_points < 2 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(FloquetError::InvalidScan);
    }
    let step = (hi - lo) / (grid_points - 1) as f64;
    let results: Vec<Result<ScanPoint, (f64, String)>> = (0..grid_points)
        .into_par_iter()
        .map(|i| {
            let mu = if i + 1 == grid_points { hi } else { lo + step * i as f64 };
            let matrix = op.matrix(mu);
            if matrix.iter().any(|v| !v.is_finite()) {
                return Err((mu, "non-finite matrix entry".to_string()));
            }
            let (sigma_min, sigma_max) = extreme_singular_values(&matrix);
            let (log_abs_det, sign) = log_det(matrix);
            if !log_abs_det.is_finite() {
                return Err((mu, "exactly singular pivot".to_string()));
            }
            Ok(ScanPoint {
                mu,
                log_abs_det,
                sign,
                sigma_min,
                sigma_max,
            })
        })
        .collect();
    let mut scan = DetScan {
        points: Vec::with_capacity(grid_points),
        failures: Vec::new(),
    };
    for r in results {
        match r {
            Ok(p) => scan.points.push(p),
            Err(f) => scan.failures.push(f),
        }
    }
    Ok(scan)
}

/// Candidate root intervals read off a scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bracket {
    /// The determinant changes sign between the endpoints.
    SignChange(f64, f64),
    /// `sigma_min` has an interior local minimum.
    Dip(f64, f64),
}

impl Bracket {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Bracket::SignChange(a, b) | Bracket::Dip(a, b) => (a, b),
        }
    }
}

/// Extracts root brackets from a scan. Sign changes take priority; local
/// minima of the relative `sigma_min` are reported when no sign change
/// covers them. Brackets touching `[-exclude_radius, exclude_radius]` are
/// dropped, which removes the trivial exponent.
pub fn brackets(scan: &DetScan, exclude_radius: f64) -> Vec<Bracket> {
    let pts = &scan.points;
    let mut out: Vec<Bracket> = Vec::new();
    for w in pts.windows(2) {
        if w[0].sign != w[1].sign {
            out.push(Bracket::SignChange(w[0].mu, w[1].mu));
        }
    }
    for i in 1..pts.len().saturating_sub(1) {
        let r = pts[i].sigma_ratio();
        if r < pts[i - 1].sigma_ratio() && r < pts[i + 1].sigma_ratio() {
            let (a, b) = (pts[i - 1].mu, pts[i + 1].mu);
            let covered = out.iter().any(|br| {
                let (lo, hi) = br.bounds();
                lo <= b && a <= hi
            });
            if !covered {
                out.push(Bracket::Dip(a, b));
            }
        }
    }
    out.retain(|br| {
        let (a, b) = br.bounds();
        b < -exclude_radius || a > exclude_radius
    });
    out.sort_by(|a, b| b.bounds().1.total_cmp(&a.bounds().1));
    out
}

/// Polishes a real exponent inside `bracket`: bisection on the determinant
/// sign when the endpoints differ in sign, golden-section search on the
/// relative `sigma_min` otherwise.
pub fn refine_exponent(orbit: &PeriodicOrbit, bracket: (f64, f64)) -> Result<f64, FloquetError> {
    let op = StabilityOperator::new(orbit)?;
    refine_exponent_with(&op, bracket)
}

pub fn refine_exponent_with(op: &StabilityOperator, bracket: (f64, f64)) -> Result<f64, FloquetError> {
    let (mut lo, mut hi) = if bracket.0 <= bracket.1 {
        bracket
    } else {
        (bracket.1, bracket.0)
    };
    let (_, s_lo) = op.log_det(lo);
    let (_, s_hi) = op.log_det(hi);
    let mu = if s_lo != s_hi && s_lo != 0.0 && s_hi != 0.0 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let (_, s) = op.log_det(mid);
            if s == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if s == s_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    } else {
        golden_section(|m| op.sigma_ratio(m), lo, hi)
    };
    let ratio = op.sigma_ratio(mu);
    if ratio <= ROOT_THRESHOLD {
        Ok(mu)
    } else {
        Err(FloquetError::NoRootInBracket {
            lo: bracket.0,
            hi: bracket.1,
            mu,
            best: ratio,
        })
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (a.abs() + b.abs()).max(1e-300) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        c
    } else {
        d
    }
}

/// A real Floquet exponent with its sampled eigenfunction.
#[derive(Debug, Clone)]
pub struct FloquetMode {
    pub mu: f64,
    /// Sample-major `rho(t_n)`, scaled so the largest sample norm is 1.
    pub samples: Vec<f64>,
    pub series: FourierSeries,
    /// Relative smallest singular value of `M(mu)`.
    pub sigma_min: f64,
    /// `|M(mu) R| / |R|`.
    pub residual: f64,
    /// `(sample index, component)` whose value was made positive.
    pub sign_reference: (usize, usize),
}

/// Null vector of `M(mu)`, normalized by `max_t |rho(t)| = 1` with the
/// largest-magnitude entry positive.
pub fn eigenfunction(orbit: &PeriodicOrbit, mu: f64) -> Result<FloquetMode, FloquetError> {
    let op = StabilityOperator::new(orbit)?;
    let matrix = op.matrix(mu);
    let null = null_vector(&matrix, Side::Right)?;
    if null.ratio > NULL_VECTOR_THRESHOLD {
        return Err(FloquetError::NotSingular { mu, ratio: null.ratio });
    }
    let m = orbit.dim();
    let (samples, sign_reference) = normalize_max_sample(null.vector.as_slice(), m);
    let r = DVector::from_column_slice(&samples);
    let residual = (&matrix * &r).norm() / r.norm();
    let series = FourierSeries::from_samples(&samples, m, orbit.order(), orbit.period())?;
    Ok(FloquetMode {
        mu,
        samples,
        series,
        sigma_min: null.ratio,
        residual,
        sign_reference,
    })
}

/// Scales sample-major data so the largest per-sample Euclidean norm is 1 and
/// the component of largest magnitude at that sample is positive.
pub fn normalize_max_sample(v: &[f64], dim: usize) -> (Vec<f64>, (usize, usize)) {
    let norms: Vec<f64> = v.chunks(dim).map(|s| s.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let norm = norms.iter().cloned().fold(0.0, f64::max);
    // Near-ties are resolved towards the earliest sample so that round-off
    // cannot flip the sign of symmetric profiles.
    let n_max = norms.iter().position(|&n| n >= norm * (1.0 - 1e-9)).unwrap_or(0);
    let block = &v[n_max * dim..(n_max + 1) * dim];
    let c_max = (0..dim)
        .max_by(|&a, &b| block[a].abs().total_cmp(&block[b].abs()))
        .unwrap_or(0);
    let scale = block[c_max].signum() / norm;
    (v.iter().map(|x| x * scale).collect(), (n_max, c_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Side {
    Right,
    Left,
}

pub(crate) struct NullVector {
    pub vector: DVector<f64>,
    pub ratio: f64,
}

/// Singular vector for the smallest singular value, from a full SVD.
pub(crate) fn null_vector(matrix: &DMatrix<f64>, side: Side) -> Result<NullVector, FloquetError> {
    let svd = match side {
        Side::Right => matrix.clone().svd(false, true),
        Side::Left => matrix.transpose().svd(false, true),
    };
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]));
    let smallest = order[0];
    let sigma_max = sv[order[order.len() - 1]];
    let gap = if order.len() > 1 {
        (sv[order[1]] - sv[smallest]) / sigma_max
    } else {
        f64::INFINITY
    };
    if gap <= DEGENERACY_GAP {
        return Err(FloquetError::DegenerateNullspace { gap });
    }
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    Ok(NullVector {
        vector: v_t.row(smallest).transpose(),
        ratio: sv[smallest] / sigma_max,
    })
}

/// Result of a full scan-and-refine pass.
#[derive(Debug, Clone)]
pub struct FloquetSpectrum {
    pub scan: DetScan,
    /// Refined exponents, largest first.
    pub exponents: Vec<f64>,
    /// Brackets that did not refine to a root.
    pub rejected: Vec<(Bracket, FloquetError)>,
}

impl FloquetSpectrum {
    /// Largest exponent outside `exclude_radius` of zero.
    pub fn leading_nontrivial(&self, exclude_radius: f64) -> Option<f64> {
        self.exponents.iter().copied().find(|mu| mu.abs() > exclude_radius)
    }
}

/// Scans `range`, brackets every candidate, and refines each one. The trivial
/// exponent is kept when the range contains zero, and nontrivial candidates
/// within `exclude_radius` of zero are skipped.
pub fn floquet_spectrum(
    orbit: &PeriodicOrbit,
    range: (f64, f64),
    grid_points: usize,
    exclude_radius: f64,
) -> Result<FloquetSpectrum, FloquetError> {
    let op = StabilityOperator::new(orbit)?;
    let scan = det_scan_with(&op, range, grid_points)?;
    let mut exponents = Vec::new();
    let mut rejected = Vec::new();
    if range.0 < 0.0 && range.1 > 0.0 {
        let r = exclude_radius.max(1e-6);
        match refine_exponent_with(&op, (-r, r)) {
            Ok(mu) => exponents.push(mu),
            Err(e) => rejected.push((Bracket::Dip(-r, r), e)),
        }
    }
    for br in brackets(&scan, exclude_radius) {
        match refine_exponent_with(&op, br.bounds()) {
            Ok(mu) if mu.abs() > exclude_radius => {
                if !exponents.iter().any(|e: &f64| (e - mu).abs() < 1e-9 * (1.0 + mu.abs())) {
                    exponents.push(mu);
                }
            }
            Ok(_) => {}
            Err(e) => rejected.push((br, e)),
        }
    }
    exponents.sort_by(|a, b| b.total_cmp(a));
    Ok(FloquetSpectrum {
        scan,
        exponents,
        rejected,
    })
}
