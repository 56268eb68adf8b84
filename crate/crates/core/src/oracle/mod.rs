//! Independent validation engine.
//!
//! Nothing here reuses the spectral operators: delayed values come from a
//! method-of-steps integrator or from the oracle's own interpolant, and
//! linear stability comes from the `N`-segment ODE discretization of the
//! delay equation.

use thiserror::Error;

pub mod adjoint;
pub mod discretized;
pub mod integrate;
pub mod interp;
pub mod monodromy;
pub mod prc;

pub use adjoint::{discretized_adjoint, pairing_spread, AdjointOptions, DiscreteKind, DiscreteResponse};
pub use discretized::{build_discretized, DiscretizedSystem, LinearFlow, Sweep};
pub use integrate::{integrate_dde, settle_to_cycle, SettleOptions, SettledCycle, Trajectory};
pub use monodromy::{forward_mode, monodromy_exponents, ForwardMode, MonodromyOptions, MonodromySpectrum, RitzPair};
pub use prc::{direct_prc, PrcOptions, PrcPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle needs a positive delay, got {0}")]
    InvalidDelay(f64),
    #[error("invalid oracle options: {0}")]
    InvalidOptions(String),
    #[error("state became non-finite after t = {time}")]
    NonFinite { time: f64 },
    #[error("only {crossings} upward crossings found; need 12")]
    NoOscillationDetected { crossings: usize },
    #[error("crossing intervals spread by {spread:e} of their mean")]
    PeriodDrift { spread: f64 },
    #[error("closest multiplier to 1 is {multiplier} (deviation {deviation:e})")]
    MonodromyIllConditioned { multiplier: f64, deviation: f64 },
    #[error("adjoint not periodic after {periods} periods (residual {residual:e})")]
    NonConvergentAdjoint { periods: usize, residual: f64 },
    #[error("no real multiplier near {target}")]
    NoRealMultiplier { target: f64 },
}

/// Richardson extrapolation of a quantity with error `O(N^-order)` from runs
/// at `N` (`coarse`) and `2N` (`fine`).
pub fn richardson(coarse: &[f64], fine: &[f64], order: u32) -> Vec<f64> {
    let f = 2f64.powi(order as i32);
    coarse.iter().zip(fine).map(|(c, h)| (f * h - c) / (f - 1.0)).collect()
}
