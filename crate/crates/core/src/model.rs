//! Autonomous single-delay models `x'(t) = F(x(t), x(t - tau))` and the two
//! shipped benchmarks.

use std::collections::BTreeMap;
use std::fmt;
use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Right-hand side of a delay equation together with its two partial
/// Jacobians. Jacobians are written row-major into `m * m` slices.
pub trait VectorField: Send + Sync {
    fn rhs(&self, now: &[f64], delayed: &[f64], out: &mut [f64]);
    /// `dF / d(now)`
    fn jac_now(&self, now: &[f64], delayed: &[f64], out: &mut [f64]);
    /// `dF / d(delayed)`
    fn jac_delayed(&self, now: &[f64], delayed: &[f64], out: &mut [f64]);
}

type RhsFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// Adapter for user models given as three closures.
pub struct ClosureField {
    rhs: Box<RhsFn>,
    jac_now: Box<RhsFn>,
    jac_delayed: Box<RhsFn>,
}

impl ClosureField {
    pub fn new(
        rhs: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        jac_now: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        jac_delayed: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            rhs: Box::new(rhs),
            jac_now: Box::new(jac_now),
            jac_delayed: Box::new(jac_delayed),
        }
    }
}

impl VectorField for ClosureField {
    fn rhs(&self, now: &[f64], delayed: &[f64], out: &mut [f64]) {
        (self.rhs)(now, delayed, out)
    }
    fn jac_now(&self, now: &[f64], delayed: &[f64], out: &mut [f64]) {
        (self.jac_now)(now, delayed, out)
    }
    fn jac_delayed(&self, now: &[f64], delayed: &[f64], out: &mut [f64]) {
        (self.jac_delayed)(now, delayed, out)
    }
}

/// A delay model: dimension, delay, named parameters and the vector field.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    dim: usize,
    tau: f64,
    params: BTreeMap<String, f64>,
    field: Arc<dyn VectorField>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("tau", &self.tau)
            .field("params", &self.params)
            .finish()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("model {model:?} has no parameter {param:?}")]
    UnknownParameter { model: String, param: String },
    #[error("delay must be non-negative and finite, got {0}")]
    InvalidDelay(f64),
    #[error("model dimension must be positive")]
    InvalidDimension,
    #[error("trial count must be at least 1")]
    NoTrials,
    #[error(
        "{jacobian} entry ({row}, {col}) at now={now:?}, delayed={delayed:?}: \
         analytic {analytic:e} vs central difference {numeric:e} (relative error {rel_error:e})"
    )]
    JacobianMismatch {
        jacobian: JacobianKind,
        row: usize,
        col: usize,
        now: Vec<f64>,
        delayed: Vec<f64>,
        analytic: f64,
        numeric: f64,
        rel_error: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianKind {
    Now,
    Delayed,
}

impl fmt::Display for JacobianKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JacobianKind::Now => f.write_str("DF0"),
            JacobianKind::Delayed => f.write_str("DF1"),
        }
    }
}

pub const KOTANI_DEFAULT_DELTA: f64 = 0.05;

/// Default cortico-thalamic parameters `(alpha, beta, gamma, delta, tau)`.
pub const CORTICO_DEFAULTS: [(&str, f64); 5] = [
    ("alpha", -0.039),
    ("beta", -0.4),
    ("gamma", -2.0),
    ("delta", -10.0),
    ("tau", 8.0),
];

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        tau: f64,
        params: BTreeMap<String, f64>,
        field: Arc<dyn VectorField>,
    ) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::InvalidDimension);
        }
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(ModelError::InvalidDelay(tau));
        }
        Ok(Self {
            name: name.into(),
            dim,
            tau,
            params,
            field,
        })
    }

    /// `x' = -x(t - pi/2) + delta x (1 - x^2 - x(t - pi/2)^2)`, which has the
    /// exact cycle `cos(t)` for every `delta`.
    pub fn kotani_scalar(delta: f64) -> Self {
        let field = ClosureField::new(
            move |z0, z1, out| out[0] = -z1[0] + delta * z0[0] * (1.0 - z0[0] * z0[0] - z1[0] * z1[0]),
            move |z0, z1, out| out[0] = delta * (1.0 - 3.0 * z0[0] * z0[0] - z1[0] * z1[0]),
            move |z0, z1, out| out[0] = -1.0 - 2.0 * delta * z0[0] * z1[0],
        );
        let params = BTreeMap::from([("delta".to_string(), delta)]);
        Self {
            name: "kotani".into(),
            dim: 1,
            tau: FRAC_PI_2,
            params,
            field: Arc::new(field),
        }
    }

    /// Two-variable cortico-thalamic rhythm model:
    /// `x' = y`, `y' = gamma y + alpha x + beta x(t - tau) + delta x^3`.
    pub fn cortico_thalamic(alpha: f64, beta: f64, gamma: f64, delta: f64, tau: f64) -> Self {
        let field = ClosureField::new(
            move |z0, z1, out| {
                out[0] = z0[1];
                out[1] = gamma * z0[1] + alpha * z0[0] + beta * z1[0] + delta * z0[0].powi(3);
            },
            move |z0, _z1, out| {
                out.copy_from_slice(&[0.0, 1.0, alpha + 3.0 * delta * z0[0] * z0[0], gamma]);
            },
            move |_z0, _z1, out| out.copy_from_slice(&[0.0, 0.0, beta, 0.0]),
        );
        let params = BTreeMap::from([
            ("alpha".to_string(), alpha),
            ("beta".to_string(), beta),
            ("gamma".to_string(), gamma),
            ("delta".to_string(), delta),
            ("tau".to_string(), tau),
        ]);
        Self {
            name: "cortico_thalamic".into(),
            dim: 2,
            tau,
            params,
            field: Arc::new(field),
        }
    }

    /// The cortico-thalamic model with the published parameter set.
    pub fn cortico_thalamic_default() -> Self {
        let [a, b, g, d, t] = CORTICO_DEFAULTS.map(|(_, v)| v);
        Self::cortico_thalamic(a, b, g, d, t)
    }

    /// Shipped model by name with parameter overrides applied on top of the
    /// defaults.
    pub fn builtin(name: &str, overrides: &BTreeMap<String, f64>) -> Result<Self, ModelError> {
        let known: BTreeMap<String, f64> = match name {
            "kotani" => BTreeMap::from([("delta".to_string(), KOTANI_DEFAULT_DELTA)]),
            "cortico_thalamic" => CORTICO_DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            other => return Err(ModelError::UnknownModel(other.to_string())),
        };
        let mut params = known.clone();
        for (k, v) in overrides {
            if !known.contains_key(k) {
                return Err(ModelError::UnknownParameter {
                    model: name.to_string(),
                    param: k.clone(),
                });
            }
            params.insert(k.clone(), *v);
        }
        Ok(match name {
            "kotani" => Self::kotani_scalar(params["delta"]),
            _ => {
                if !(params["tau"].is_finite() && params["tau"] >= 0.0) {
                    return Err(ModelError::InvalidDelay(params["tau"]));
                }
                Self::cortico_thalamic(
                    params["alpha"],
                    params["beta"],
                    params["gamma"],
                    params["delta"],
                    params["tau"],
                )
            }
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn field(&self) -> &dyn VectorField {
        self.field.as_ref()
    }

    pub fn rhs_into(&self, now: &[f64], delayed: &[f64], out: &mut [f64]) {
        self.field.rhs(now, delayed, out)
    }

    pub fn rhs(&self, now: &[f64], delayed: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.field.rhs(now, delayed, &mut out);
        out
    }

    pub fn jac_now(&self, now: &[f64], delayed: &[f64]) -> DMatrix<f64> {
        let mut buf = vec![0.0; self.dim * self.dim];
        self.field.jac_now(now, delayed, &mut buf);
        DMatrix::from_row_slice(self.dim, self.dim, &buf)
    }

    pub fn jac_delayed(&self, now: &[f64], delayed: &[f64]) -> DMatrix<f64> {
        let mut buf = vec![0.0; self.dim * self.dim];
        self.field.jac_delayed(now, delayed, &mut buf);
        DMatrix::from_row_slice(self.dim, self.dim, &buf)
    }

    /// Same vector field with its Jacobian callbacks replaced; used to build
    /// negative controls for [`verify_jacobians`].
    pub fn with_field(&self, field: Arc<dyn VectorField>) -> Self {
        Self {
            field,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianReport {
    pub trials: usize,
    pub max_rel_error: f64,
}

/// Compares the analytic Jacobians against central differences of `F` at
/// `trials` random points of `[-2, 2]^m x [-2, 2]^m`.
pub fn verify_jacobians(
    model: &ModelSpec,
    trials: usize,
    tol: f64,
    seed: u64,
) -> Result<JacobianReport, ModelError> {
    if trials == 0 {
        return Err(ModelError::NoTrials);
    }
    let m = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    for _ in 0..trials {
        let now: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let delayed: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
        for kind in [JacobianKind::Now, JacobianKind::Delayed] {
            let analytic = match kind {
                JacobianKind::Now => model.jac_now(&now, &delayed),
                JacobianKind::Delayed => model.jac_delayed(&now, &delayed),
            };
            for col in 0..m {
                let (mut a, mut b) = (now.clone(), delayed.clone());
                let target = match kind {
                    JacobianKind::Now => &mut a,
                    JacobianKind::Delayed => &mut b,
                };
                let h = 1e-5 * (1.0 + target[col].abs());
                let base = target[col];
                target[col] = base + h;
                model.rhs_into(&a, &b, &mut plus);
                let target = match kind {
                    JacobianKind::Now => &mut a,
                    JacobianKind::Delayed => &mut b,
                };
                target[col] = base - h;
                model.rhs_into(&a, &b, &mut minus);
                for row in 0..m {
                    let numeric = (plus[row] - minus[row]) / (2.0 * h);
                    let value = analytic[(row, col)];
                    let rel_error = (value - numeric).abs() / numeric.abs().max(1.0);
                    max_rel = max_rel.max(rel_error);
                    if rel_error > tol {
                        return Err(ModelError::JacobianMismatch {
                            jacobian: kind,
                            row,
                            col,
                            now,
                            delayed,
                            analytic: value,
                            numeric,
                            rel_error,
                        });
                    }
                }
            }
        }
    }
    Ok(JacobianReport {
        trials,
        max_rel_error: max_rel,
    })
}
