//! Phase and amplitude response curves as left null vectors of the
//! collocated adjoint operator, normalized through the delay bilinear form.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cycle::PeriodicOrbit;
use crate::floquet::{null_vector, FloquetError, FloquetMode, Side, NULL_VECTOR_THRESHOLD};
use crate::quadrature::gauss_legendre;
use crate::spectral::{kron_identity, FourierSeries, SpectralError, SpectralOperators};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdjointError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Floquet(#[from] FloquetError),
    #[error("adjoint operator is not singular at mu = {mu}: relative sigma_min {ratio:e}")]
    NotSingular { mu: f64, ratio: f64 },
    #[error("bilinear pairing {pairing:e} is too small to normalize against")]
    NormalizationSingular { pairing: f64 },
    #[error("quadrature needs at least one node")]
    InvalidNodes,
    #[error("mode and orbit disagree: {0}")]
    Mismatch(String),
}

/// Smallest admissible magnitude of the raw pairing.
pub const PAIRING_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Phase,
    Amplitude,
}

/// Whether the history integral in the amplitude normalization carries the
/// `exp(-mu tau)` factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairingVariant {
    #[default]
    Weighted,
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseOptions {
    pub nodes: usize,
    pub variant: PairingVariant,
}

impl Default for ResponseOptions {
    fn default() -> Self {
        Self {
            nodes: 64,
            variant: PairingVariant::Weighted,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResponseCurve {
    pub kind: ResponseKind,
    pub mu: f64,
    /// Sample-major values on the orbit grid.
    pub samples: Vec<f64>,
    pub series: FourierSeries,
    /// Pairing of the raw null vector before rescaling.
    pub raw_pairing: f64,
    /// `|B^T Q| / |Q|` for the final curve.
    pub nullspace_residual: f64,
    /// Relative smallest singular value of the adjoint operator.
    pub sigma_ratio: f64,
}

impl ResponseCurve {
    pub fn value(&self, t: f64) -> Vec<f64> {
        self.series.evaluate(t)
    }
}

/// `B(mu) = (-D(0) - mu I) ⊗ I + J0 + exp(-mu tau) (Delta ⊗ I) J1~`, where
/// `J1~` holds `DF1` evaluated at `(x(t_n + tau), x(t_n))`. Response curves
/// are left null vectors, `Q^T B(mu) = 0`.
pub fn build_adjoint_matrix(orbit: &PeriodicOrbit, mu: f64) -> Result<DMatrix<f64>, AdjointError> {
    let m = orbit.dim();
    let k = orbit.grid().len();
    let tau = orbit.tau();
    let ops = SpectralOperators::new(orbit.order(), orbit.period(), tau, 0.0)?;
    let field = orbit.model().field();
    let x = orbit.samples();
    let xd = orbit.shifted_samples(-tau);
    let xa = orbit.shifted_samples(tau);
    let mut b = -kron_identity(ops.derivative(), m);
    for i in 0..m * k {
        b[(i, i)] -= mu;
    }
    let mut j0 = vec![0.0; m * m];
    let mut j1 = vec![0.0; m * m];
    let weight = (-mu * tau).exp();
    let delay = ops.delay();
    for n in 0..k {
        let s = n * m..(n + 1) * m;
        field.jac_now(&x[s.clone()], &xd[s.clone()], &mut j0);
        for i in 0..m {
            for j in 0..m {
                b[(n * m + i, n * m + j)] += j0[i * m + j];
            }
        }
        // Column block n of (Delta ⊗ I) J1~ is Delta[:, n] ⊗ J1~(n).
        field.jac_delayed(&xa[s.clone()], &x[s], &mut j1);
        for row in 0..k {
            let w = delay[(row, n)] * weight;
            if w == 0.0 {
                continue;
            }
            for i in 0..m {
                for j in 0..m {
                    b[(row * m + i, n * m + j)] += w * j1[i * m + j];
                }
            }
        }
    }
    Ok(b)
}

/// `q(t0) rho(t0) + int_{-tau}^0 w(zeta) q(t0 + tau + zeta)^T DF1(t0 + tau + zeta) rho(t0 + zeta) dzeta`
/// with `w(zeta) = exp(-mu_q tau + (mu_rho - mu_q) zeta)`, the bilinear form
/// between `exp(-mu_q t) q(t)` and `exp(mu_rho t) rho(t)` at time `t0`
/// divided by `exp((mu_rho - mu_q) t0)`.
pub fn bilinear_form(
    orbit: &PeriodicOrbit,
    q: &FourierSeries,
    mu_q: f64,
    rho: &FourierSeries,
    mu_rho: f64,
    t0: f64,
    nodes: usize,
) -> Result<f64, AdjointError> {
    history_pairing(orbit, q, rho, t0, nodes, |zeta| {
        (-mu_q * orbit.tau() + (mu_rho - mu_q) * zeta).exp()
    })
}

fn history_pairing(
    orbit: &PeriodicOrbit,
    q: &FourierSeries,
    rho: &FourierSeries,
    t0: f64,
    nodes: usize,
    weight: impl Fn(f64) -> f64,
) -> Result<f64, AdjointError> {
    if nodes == 0 {
        return Err(AdjointError::InvalidNodes);
    }
    let m = orbit.dim();
    if q.dim() != m || rho.dim() != m {
        return Err(AdjointError::Mismatch(format!(
            "dimensions {} and {} against {m}",
            q.dim(),
            rho.dim()
        )));
    }
    let tau = orbit.tau();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = dot(&q.evaluate(t0), &rho.evaluate(t0));
    if tau == 0.0 {
        return Ok(total);
    }
    let (zetas, weights) = gauss_legendre(nodes, -tau, 0.0);
    let field = orbit.model().field();
    let series = orbit.series();
    let mut j1 = vec![0.0; m * m];
    let mut jr = vec![0.0; m];
    for (&zeta, &w) in zetas.iter().zip(&weights) {
        let s = t0 + tau + zeta;
        let now = series.evaluate(s);
        let past = series.evaluate(s - tau);
        field.jac_delayed(&now, &past, &mut j1);
        let r = rho.evaluate(t0 + zeta);
        for i in 0..m {
            jr[i] = (0..m).map(|j| j1[i * m + j] * r[j]).sum();
        }
        total += w * weight(zeta) * dot(&q.evaluate(s), &jr);
    }
    Ok(total)
}

/// Pairing between an adjoint and a forward mode sharing the exponent `mu`.
/// For the weighted variant this is independent of `t0`.
pub fn conserved_pairing(
    orbit: &PeriodicOrbit,
    q: &FourierSeries,
    rho: &FourierSeries,
    mu: f64,
    t0: f64,
    opts: &ResponseOptions,
) -> Result<f64, AdjointError> {
    match opts.variant {
        PairingVariant::Weighted => bilinear_form(orbit, q, mu, rho, mu, t0, opts.nodes),
        PairingVariant::Unweighted => history_pairing(orbit, q, rho, t0, opts.nodes, |_| 1.0),
    }
}

/// Phase response curve `z`, normalized so that the pairing with `x'` equals
/// the angular frequency.
pub fn phase_response(orbit: &PeriodicOrbit, opts: &ResponseOptions) -> Result<ResponseCurve, AdjointError> {
    let rho = orbit.series().derivative();
    solve_response(orbit, ResponseKind::Phase, 0.0, &rho, orbit.omega(), opts)
}

/// Amplitude response curve for a real Floquet mode, normalized so that its
/// pairing with the mode equals one.
pub fn amplitude_response(
    orbit: &PeriodicOrbit,
    mode: &FloquetMode,
    opts: &ResponseOptions,
) -> Result<ResponseCurve, AdjointError> {
    if mode.series.dim() != orbit.dim() || mode.series.order() != orbit.order() {
        return Err(AdjointError::Mismatch(format!(
            "mode has dimension {} and order {}",
            mode.series.dim(),
            mode.series.order()
        )));
    }
    solve_response(orbit, ResponseKind::Amplitude, mode.mu, &mode.series, 1.0, opts)
}

fn solve_response(
    orbit: &PeriodicOrbit,
    kind: ResponseKind,
    mu: f64,
    rho: &FourierSeries,
    target: f64,
    opts: &ResponseOptions,
) -> Result<ResponseCurve, AdjointError> {
    if opts.nodes == 0 {
        return Err(AdjointError::InvalidNodes);
    }
    let b = build_adjoint_matrix(orbit, mu)?;
    let null = null_vector(&b, Side::Left)?;
    if null.ratio > NULL_VECTOR_THRESHOLD {
        return Err(AdjointError::NotSingular { mu, ratio: null.ratio });
    }
    let m = orbit.dim();
    let raw = FourierSeries::from_samples(null.vector.as_slice(), m, orbit.order(), orbit.period())?;
    let pairing = conserved_pairing(orbit, &raw, rho, mu, 0.0, opts)?;
    if pairing.abs() < PAIRING_FLOOR {
        return Err(AdjointError::NormalizationSingular { pairing });
    }
    let scale = target / pairing;
    let samples: Vec<f64> = null.vector.iter().map(|v| v * scale).collect();
    let q = nalgebra::DVector::from_column_slice(&samples);
    let nullspace_residual = (b.transpose() * &q).norm() / q.norm();
    Ok(ResponseCurve {
        kind,
        mu,
        series: raw.scaled(scale),
        samples,
        raw_pairing: pairing,
        nullspace_residual,
        sigma_ratio: null.ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cycle::{seed_from_ansatz, solve_cycle, SolveOptions};
    use crate::floquet::eigenfunction;
    use crate::model::{ClosureField, ModelSpec};
    use std::sync::{Arc, OnceLock};

    fn kotani_orbit() -> &'static PeriodicOrbit {
        static ORBIT: OnceLock<PeriodicOrbit> = OnceLock::new();
        ORBIT.get_or_init(|| {
            let model = ModelSpec::kotani_scalar(0.05);
            let seed = seed_from_ansatz(1, &[1.0], 2.0 * std::f64::consts::PI).unwrap();
            solve_cycle(&model, &seed, &SolveOptions::default()).unwrap()
        })
    }

    fn kotani_mode() -> &'static FloquetMode {
        static MODE: OnceLock<FloquetMode> = OnceLock::new();
        MODE.get_or_init(|| {
            let mu = crate::floquet::refine_exponent(kotani_orbit(), (-0.05, -0.01)).unwrap();
            eigenfunction(kotani_orbit(), mu).unwrap()
        })
    }

    fn stuart_landau() -> PeriodicOrbit {
        let field = ClosureField::new(
            |z, _, out| {
                let r2 = z[0] * z[0] + z[1] * z[1];
                out[0] = z[0] - z[1] - z[0] * r2;
                out[1] = z[0] + z[1] - z[1] * r2;
            },
            |z, _, out| {
                let (x, y) = (z[0], z[1]);
                out.copy_from_slice(&[1.0 - 3.0 * x * x - y * y, -1.0 - 2.0 * x * y, 1.0 - 2.0 * x * y, 1.0 - x * x - 3.0 * y * y]);
            },
            |_, _, out| out.fill(0.0),
        );
        let model = ModelSpec::new("stuart_landau", 2, 0.0, Default::default(), Arc::new(field)).unwrap();
        let seed = seed_from_ansatz(2, &[0.9, 0.9], 6.0).unwrap();
        solve_cycle(&model, &seed, &SolveOptions::default().with_order(8)).unwrap()
    }

    #[test]
    fn ode_limit_matches_closed_form() {
        let orbit = stuart_landau();
        assert!((orbit.period() - 2.0 * std::f64::consts::PI).abs() < 1e-9);
        let z = phase_response(&orbit, &ResponseOptions::default()).unwrap();
        let xdot = orbit.derivative_samples();
        // Radial isochrons: z is the tangent scaled by 1/|x'|^2.
        for (a, b) in z.samples.iter().zip(&xdot) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        let mu = crate::floquet::refine_exponent(&orbit, (-2.5, -1.5)).unwrap();
        assert!((mu + 2.0).abs() < 1e-9);
        let mode = eigenfunction(&orbit, mu).unwrap();
        let q = amplitude_response(&orbit, &mode, &ResponseOptions::default()).unwrap();
        for (a, b) in q.samples.iter().zip(&mode.samples) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn adjoint_is_singular_at_exponents() {
        let orbit = kotani_orbit();
        let b0 = build_adjoint_matrix(orbit, 0.0).unwrap();
        let sv = b0.singular_values();
        assert!(sv.min() < 1e-10 * sv.max());
        let b = build_adjoint_matrix(orbit, kotani_mode().mu).unwrap();
        let sv = b.singular_values();
        assert!(sv.min() < 1e-8 * sv.max());
    }

    #[test]
    fn phase_normalization_holds() {
        let orbit = kotani_orbit();
        let opts = ResponseOptions::default();
        let z = phase_response(orbit, &opts).unwrap();
        let xdot = orbit.series().derivative();
        let p = conserved_pairing(orbit, &z.series, &xdot, 0.0, 0.0, &opts).unwrap();
        assert!((p - orbit.omega()).abs() < 1e-12);
        assert!(z.nullspace_residual < 1e-8);
        // Kicks at the maximum of cos do not move the phase.
        assert!(z.value(0.0)[0].abs() < 1e-8);
    }

    #[test]
    fn amplitude_scale_invariance() {
        let orbit = kotani_orbit();
        let mode = kotani_mode();
        let opts = ResponseOptions::default();
        let q = amplitude_response(orbit, mode, &opts).unwrap();
        let mut scaled = mode.clone();
        scaled.samples.iter_mut().for_each(|v| *v *= -3.5);
        scaled.series = scaled.series.scaled(-3.5);
        let q2 = amplitude_response(orbit, &scaled, &opts).unwrap();
        for ((a, b), r) in q.samples.iter().zip(&q2.samples).zip(&mode.samples) {
            assert!((a * r - b * r * -3.5).abs() < 1e-10);
        }
    }

    #[test]
    fn quadrature_converged_at_32_nodes() {
        let orbit = kotani_orbit();
        let mode = kotani_mode();
        let a = amplitude_response(orbit, mode, &ResponseOptions { nodes: 32, ..Default::default() }).unwrap();
        let b = amplitude_response(orbit, mode, &ResponseOptions::default()).unwrap();
        let d = a.samples.iter().zip(&b.samples).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(d < 1e-10, "{d}");
    }

    #[test]
    fn weighted_pairing_is_conserved() {
        let orbit = kotani_orbit();
        let mode = kotani_mode();
        let opts = ResponseOptions::default();
        let q = amplitude_response(orbit, mode, &opts).unwrap();
        let t = orbit.period();
        let values: Vec<f64> = (0..50)
            .map(|i| conserved_pairing(orbit, &q.series, &mode.series, mode.mu, t * i as f64 / 50.0, &opts).unwrap())
            .collect();
        let spread = values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        assert!(spread < 1e-8, "{spread}");
        // Without the weight the form is not invariant.
        let un = ResponseOptions { variant: PairingVariant::Unweighted, ..opts };
        let qu = amplitude_response(orbit, mode, &un).unwrap();
        let vals: Vec<f64> = (0..50)
            .map(|i| conserved_pairing(orbit, &qu.series, &mode.series, mode.mu, t * i as f64 / 50.0, &un).unwrap())
            .collect();
        let spread_u = vals.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        assert!(spread_u > 1e3 * spread.max(1e-14));
    }

    #[test]
    fn cross_pairings_vanish() {
        let orbit = kotani_orbit();
        let mode = kotani_mode();
        let opts = ResponseOptions::default();
        let z = phase_response(orbit, &opts).unwrap();
        let q = amplitude_response(orbit, mode, &opts).unwrap();
        let xdot = orbit.series().derivative();
        for t0 in [0.0, 1.0, 2.5] {
            let a = bilinear_form(orbit, &z.series, 0.0, &mode.series, mode.mu, t0, 64).unwrap();
            let b = bilinear_form(orbit, &q.series, mode.mu, &xdot, 0.0, t0, 64).unwrap();
            assert!(a.abs() < 1e-8 && b.abs() < 1e-8, "{a} {b}");
        }
    }

    #[test]
    fn rejects_zero_nodes_and_mismatch() {
        let orbit = kotani_orbit();
        let opts = ResponseOptions { nodes: 0, ..Default::default() };
        assert_eq!(phase_response(orbit, &opts).unwrap_err(), AdjointError::InvalidNodes);
        let mut mode = kotani_mode().clone();
        mode.series = mode.series.with_order(5);
        assert!(matches!(
            amplitude_response(orbit, &mode, &ResponseOptions::default()),
            Err(AdjointError::Mismatch(_))
        ));
    }

    #[test]
    fn zero_mode_cannot_normalize() {
        let orbit = kotani_orbit();
        let zero = orbit.series().scaled(0.0);
        let err = solve_response(orbit, ResponseKind::Amplitude, 0.0, &zero, 1.0, &ResponseOptions::default());
        assert!(matches!(err, Err(AdjointError::NormalizationSingular { .. })), "{err:?}");
    }
}
