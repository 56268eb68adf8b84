//! Response curves of the discretized system by backward integration of its
//! adjoint variational equation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::discretized::{LinearFlow, Sweep};
use super::monodromy::{subspace_iteration, ForwardMode, MonodromyOptions};
use super::OracleError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointOptions {
    pub subspace: usize,
    /// Periods of backward integration allowed before giving up.
    pub max_periods: usize,
    /// Relative periodicity residual of the selected adjoint vector.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        Self {
            subspace: 6,
            max_periods: 50,
            tolerance: 1e-8,
            seed: 11,
        }
    }
}

/// Which response to compute.
#[derive(Debug, Clone)]
pub enum DiscreteKind {
    /// Phase response, normalized against the lifted orbit velocity so the
    /// pairing equals the angular frequency.
    Phase,
    /// Amplitude response for a forward mode, normalized so the pairing with
    /// the mode equals one.
    Amplitude(ForwardMode),
}

#[derive(Debug, Clone)]
pub struct DiscreteResponse {
    /// Exponent of the selected adjoint multiplier, `log(lambda) / T`.
    pub mu: f64,
    pub multiplier: f64,
    /// First block of the periodic adjoint profile on the orbit grid.
    pub samples: Vec<f64>,
    /// Full adjoint state at `t = 0`, normalized.
    pub state: Vec<f64>,
    pub periods: usize,
    pub residual: f64,
}

/// Iterates the backward adjoint period map until the Ritz vector whose
/// multiplier is closest to the target (1 for the phase response, the
/// mode's multiplier otherwise) is periodic, then records one more period.
pub fn discretized_adjoint(
    flow: &LinearFlow,
    kind: &DiscreteKind,
    opts: &AdjointOptions,
) -> Result<DiscreteResponse, OracleError> {
    let target = match kind {
        DiscreteKind::Phase => 1.0,
        DiscreteKind::Amplitude(mode) => mode.multiplier,
    };
    let mopts = MonodromyOptions {
        subspace: opts.subspace,
        max_iterations: opts.max_periods,
        tolerance: opts.tolerance,
        seed: opts.seed,
    };
    let select = |pairs: &[super::monodromy::RitzPair]| {
        (0..pairs.len())
            .filter(|&i| pairs[i].vector.is_some())
            .min_by(|&a, &b| {
                (pairs[a].multiplier - target)
                    .norm()
                    .total_cmp(&(pairs[b].multiplier - target).norm())
            })
            .into_iter()
            .collect::<Vec<_>>()
    };
    let run = subspace_iteration(flow, Sweep::Adjoint, &mopts, select);
    let chosen = select(&run.pairs);
    let Some(&i) = chosen.first() else {
        return Err(OracleError::NoRealMultiplier { target });
    };
    let pair = &run.pairs[i];
    if !run.converged {
        return Err(OracleError::NonConvergentAdjoint {
            periods: run.iterations,
            residual: pair.residual,
        });
    }
    if (pair.multiplier - Complex64::new(target, 0.0)).norm() > 0.05 * target.abs().max(1e-3) {
        return Err(OracleError::NoRealMultiplier { target });
    }
    let multiplier = pair.multiplier.re;
    let mu = multiplier.ln() / flow.period();
    let m = flow.dim();
    let mut raw = vec![0.0; flow.samples() * m];
    let mut w = pair.vector.clone().expect("real pair");
    flow.propagate(&mut w, Sweep::Adjoint, mu, Some(&mut raw));
    let pairing: f64 = match kind {
        DiscreteKind::Phase => w.iter().zip(flow.lifted_velocity(0.0)).map(|(a, b)| a * b).sum(),
        DiscreteKind::Amplitude(mode) => w.iter().zip(&mode.state).map(|(a, b)| a * b).sum(),
    };
    let goal = match kind {
        DiscreteKind::Phase => 2.0 * std::f64::consts::PI / flow.period(),
        DiscreteKind::Amplitude(_) => 1.0,
    };
    let scale = goal / pairing;
    Ok(DiscreteResponse {
        mu,
        multiplier,
        samples: raw.iter().map(|v| v * scale).collect(),
        state: w.iter().map(|v| v * scale).collect(),
        periods: run.iterations + 1,
        residual: pair.residual,
    })
}

/// Largest deviation from its mean of the pairing `w(t) . g(t)` between the
/// adjoint solution and a forward solution over one period, relative to
/// the mean, sampled at the orbit grid times.
pub fn pairing_spread(flow: &LinearFlow, forward: &ForwardMode, adjoint: &DiscreteResponse) -> f64 {
    let k = flow.samples();
    let mut g_at = vec![Vec::new(); k];
    let mut g = forward.state.clone();
    flow.propagate_with(&mut g, Sweep::Forward, forward.mu, |pos, s| g_at[pos] = s.to_vec());
    let mut values = vec![0.0; k];
    let mut w = adjoint.state.clone();
    // Both sweeps use the same shift, so the pairing is invariant.
    let mu = forward.mu;
    flow.propagate_with(&mut w, Sweep::Adjoint, mu, |pos, s| {
        values[pos] = s.iter().zip(&g_at[pos]).map(|(a, b)| a * b).sum();
    });
    let mean = values.iter().sum::<f64>() / k as f64;
    values.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max) / mean.abs().max(1e-300)
}
