//! Phase response measured by kicking the delay equation and timing the
//! asymptotic shift.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::integrate::{integrate_dde, Trajectory};
use super::interp::PeriodicInterpolant;
use super::OracleError;
use crate::cycle::PeriodicOrbit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrcOptions {
    /// Kick size; `None` uses `1e-3` times the orbit amplitude.
    pub eps: Option<f64>,
    pub component: usize,
    /// Periods integrated after the kick.
    pub periods: usize,
    pub dt: f64,
}

impl Default for PrcOptions {
    fn default() -> Self {
        Self {
            eps: None,
            component: 0,
            periods: 20,
            dt: 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrcPoint {
    /// Phase of the kick in `[0, 2 pi)`.
    pub phase: f64,
    pub eps: f64,
    /// Asymptotic phase advance in radians.
    pub shift: f64,
    /// `shift / eps`.
    pub response: f64,
}

/// For each phase, integrates an unperturbed copy of the orbit and a copy
/// whose current state is kicked by `eps` in one component, then measures
/// the time offset that best aligns the two over the last full period.
pub fn direct_prc(orbit: &PeriodicOrbit, phases: &[f64], opts: &PrcOptions) -> Result<Vec<PrcPoint>, OracleError> {
    let model = orbit.model();
    let m = orbit.dim();
    if opts.component >= m || opts.periods == 0 {
        return Err(OracleError::InvalidOptions(format!("{opts:?}")));
    }
    let eps = opts.eps.unwrap_or(1e-3 * orbit.amplitude());
    let interp = PeriodicInterpolant::new(orbit.samples(), m, orbit.period());
    let period = orbit.period();
    let omega = 2.0 * std::f64::consts::PI / period;
    let t_end = (opts.periods as f64 + 1.0) * period;
    phases
        .par_iter()
        .map(|&phase| {
            let t0 = phase / omega;
            let base = |s: f64, out: &mut [f64]| interp.eval_into(t0 + s, out);
            let kicked = |s: f64, out: &mut [f64]| {
                interp.eval_into(t0 + s, out);
                if s == 0.0 {
                    out[opts.component] += eps;
                }
            };
            let u = integrate_dde(model, base, t_end, opts.dt)?;
            let p = integrate_dde(model, kicked, t_end, opts.dt)?;
            let delay = alignment(&u, &p, t_end - 1.5 * period, t_end - 0.5 * period);
            let shift = omega * delay;
            Ok(PrcPoint {
                phase,
                eps,
                shift,
                response: shift / eps,
            })
        })
        .collect()
}

/// `d` minimizing `sum |p(t) - u(t + d)|^2` over samples in `[a, b]`, by
/// Gauss-Newton from `d = 0`.
fn alignment(u: &Trajectory, p: &Trajectory, a: f64, b: f64) -> f64 {
    let n = 400;
    let h = u.dt();
    let times: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
    let target: Vec<Vec<f64>> = times.iter().map(|&t| p.state_at(t)).collect();
    let mut d = 0.0;
    for _ in 0..20 {
        let (mut num, mut den) = (0.0, 0.0);
        for (t, pt) in times.iter().zip(&target) {
            let ut = u.state_at(t + d);
            let up = u.state_at(t + d + h);
            let um = u.state_at(t + d - h);
            for c in 0..ut.len() {
                let slope = (up[c] - um[c]) / (2.0 * h);
                num += (pt[c] - ut[c]) * slope;
                den += slope * slope;
            }
        }
        let step = num / den;
        d += step;
        if step.abs() < 1e-15 * (1.0 + d.abs()) {
            break;
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    #[test]
    fn alignment_recovers_a_known_offset() {
        let model = ModelSpec::kotani_scalar(0.05);
        let u = integrate_dde(&model, |t, o| o[0] = t.cos(), 20.0, 0.01).unwrap();
        let p = integrate_dde(&model, |t, o| o[0] = (t + 0.002).cos(), 20.0, 0.01).unwrap();
        let d = alignment(&u, &p, 10.0, 16.0);
        assert!((d - 0.002).abs() < 1e-9, "{d}");
    }
}
