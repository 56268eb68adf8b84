//! Leading Floquet multipliers of the discretized system by subspace
//! iteration on the period map, with Rayleigh–Ritz extraction.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::discretized::{LinearFlow, Sweep};
use super::OracleError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonodromyOptions {
    /// Subspace dimension; must exceed the number of wanted multipliers.
    pub subspace: usize,
    pub max_iterations: usize,
    /// Relative residual `|Phi x - lambda x| / |x|` for real Ritz pairs.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for MonodromyOptions {
    fn default() -> Self {
        Self {
            subspace: 6,
            max_iterations: 50,
            tolerance: 1e-9,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RitzPair {
    pub multiplier: Complex64,
    /// `log(multiplier) / T`.
    pub exponent: Complex64,
    /// Ritz vector for real multipliers.
    pub vector: Option<Vec<f64>>,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct MonodromySpectrum {
    pub period: f64,
    /// Leading pairs by decreasing modulus.
    pub pairs: Vec<RitzPair>,
    /// `|lambda - 1|` for the multiplier closest to one.
    pub unit_deviation: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl MonodromySpectrum {
    pub fn exponents(&self) -> Vec<Complex64> {
        self.pairs.iter().map(|p| p.exponent).collect()
    }

    fn unit_index(&self) -> usize {
        nearest(&self.pairs, Complex64::new(1.0, 0.0))
    }

    pub fn unit(&self) -> &RitzPair {
        &self.pairs[self.unit_index()]
    }

    /// Largest real exponent other than the trivial one.
    pub fn leading_nontrivial(&self) -> Option<&RitzPair> {
        let u = self.unit_index();
        self.pairs
            .iter()
            .enumerate()
            .filter(|(i, p)| *i != u && p.vector.is_some())
            .map(|(_, p)| p)
            .next()
    }

    /// Real pair whose exponent is closest to `mu`.
    pub fn nearest_real(&self, mu: f64) -> Option<&RitzPair> {
        self.pairs
            .iter()
            .filter(|p| p.vector.is_some())
            .min_by(|a, b| (a.exponent.re - mu).abs().total_cmp(&(b.exponent.re - mu).abs()))
    }
}

fn nearest(pairs: &[RitzPair], target: Complex64) -> usize {
    (0..pairs.len())
        .min_by(|&a, &b| (pairs[a].multiplier - target).norm().total_cmp(&(pairs[b].multiplier - target).norm()))
        .unwrap_or(0)
}

/// Output of one run of subspace iteration.
pub(crate) struct Subspace {
    pub pairs: Vec<RitzPair>,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs subspace iteration on the period map of `sweep` (unshifted) until
/// every real Ritz pair accepted by `wanted` has residual below the
/// tolerance.
pub(crate) fn subspace_iteration(
    flow: &LinearFlow,
    sweep: Sweep,
    opts: &MonodromyOptions,
    wanted: impl Fn(&[RitzPair]) -> Vec<usize>,
) -> Subspace {
    let n = flow.len();
    let p = opts.subspace.max(1).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut q = orthonormalize(&DMatrix::from_fn(n, p, |_, _| rng.gen::<f64>() - 0.5));
    let period = flow.period();
    let mut last = Vec::new();
    for it in 1..=opts.max_iterations.max(1) {
        let mut cols: Vec<Vec<f64>> = (0..p).map(|j| q.column(j).iter().copied().collect()).collect();
        flow.propagate_many(&mut cols, sweep, 0.0);
        let y = DMatrix::from_fn(n, p, |i, j| cols[j][i]);
        let b = q.transpose() * &y;
        let pairs = ritz_pairs(&b, &q, &y, period);
        let targets = wanted(&pairs);
        let converged = !targets.is_empty()
            && targets.iter().all(|&i| pairs[i].vector.is_some() && pairs[i].residual <= opts.tolerance);
        if converged || it == opts.max_iterations.max(1) {
            return Subspace {
                pairs,
                iterations: it,
                converged,
            };
        }
        last = pairs;
        q = orthonormalize(&y);
    }
    Subspace {
        pairs: last,
        iterations: opts.max_iterations,
        converged: false,
    }
}

fn orthonormalize(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = a.shape();
    let mut q = a.clone();
    // Two passes of modified Gram-Schmidt.
    for _ in 0..2 {
        for j in 0..p {
            for k in 0..j {
                let d = q.column(k).dot(&q.column(j));
                let ck = q.column(k).clone_owned();
                q.column_mut(j).axpy(-d, &ck, 1.0);
            }
            let norm = q.column(j).norm();
            if norm > 0.0 {
                q.column_mut(j).scale_mut(1.0 / norm);
            }
        }
    }
    debug_assert_eq!(q.nrows(), n);
    q
}

fn ritz_pairs(b: &DMatrix<f64>, q: &DMatrix<f64>, y: &DMatrix<f64>, period: f64) -> Vec<RitzPair> {
    let p = b.nrows();
    let mut eig: Vec<Complex64> = b.complex_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    eig.into_iter()
        .map(|lambda| {
            let exponent = lambda.ln() / period;
            let real = lambda.im.abs() <= 1e-10 * lambda.norm().max(1e-300);
            if !real {
                return RitzPair {
                    multiplier: lambda,
                    exponent,
                    vector: None,
                    residual: f64::INFINITY,
                };
            }
            let lam = lambda.re;
            let shifted = b - DMatrix::identity(p, p) * lam;
            let svd = shifted.svd(false, true);
            let v_t = svd.v_t.expect("requested V^T");
            let k = svd
                .singular_values
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            let coeffs = v_t.row(k).transpose();
            let x = q * &coeffs;
            let r = y * &coeffs - &x * lam;
            RitzPair {
                multiplier: Complex64::new(lam, 0.0),
                exponent: Complex64::new(lam, 0.0).ln() / period,
                vector: Some(x.iter().copied().collect()),
                residual: r.norm() / (x.norm() * lam.abs()).max(1e-300),
            }
        })
        .collect()
}

/// Leading `k` multipliers of the forward period map. The multiplier
/// closest to one must lie within `1e-2` of it.
pub fn monodromy_exponents(
    flow: &LinearFlow,
    k: usize,
    opts: &MonodromyOptions,
) -> Result<MonodromySpectrum, OracleError> {
    if k == 0 || opts.subspace < k {
        return Err(OracleError::InvalidOptions(format!(
            "subspace {} cannot hold {k} multipliers",
            opts.subspace
        )));
    }
    // Convergence is judged on the trivial and leading nontrivial pairs.
    let run = subspace_iteration(flow, Sweep::Forward, opts, |pairs| {
        (0..pairs.len().min(k)).filter(|&i| pairs[i].vector.is_some()).take(2).collect()
    });
    let mut pairs = run.pairs;
    pairs.truncate(k);
    let u = nearest(&pairs, Complex64::new(1.0, 0.0));
    let unit_deviation = (pairs[u].multiplier - 1.0).norm();
    if unit_deviation > 1e-2 {
        return Err(OracleError::MonodromyIllConditioned {
            multiplier: pairs[u].multiplier.re,
            deviation: unit_deviation,
        });
    }
    Ok(MonodromySpectrum {
        period: flow.period(),
        pairs,
        unit_deviation,
        iterations: run.iterations,
        converged: run.converged,
    })
}

/// A real Floquet mode of the discretized system.
#[derive(Debug, Clone)]
pub struct ForwardMode {
    pub mu: f64,
    pub multiplier: f64,
    /// Full state `g(0)`, scaled consistently with `profile`.
    pub state: Vec<f64>,
    /// First block of `exp(-mu t) g(t)` on the orbit grid, scaled so the
    /// largest sample norm is 1 with its largest component positive.
    pub profile: Vec<f64>,
}

/// Periodic profile of the real Ritz pair `pair`.
pub fn forward_mode(flow: &LinearFlow, pair: &RitzPair) -> Result<ForwardMode, OracleError> {
    let vector = pair.vector.as_ref().ok_or(OracleError::NoRealMultiplier { target: pair.multiplier.re })?;
    let mu = pair.exponent.re;
    let m = flow.dim();
    let mut profile = vec![0.0; flow.samples() * m];
    let mut v = vector.clone();
    flow.propagate(&mut v, Sweep::Forward, mu, Some(&mut profile));
    let (normalized, _) = crate::floquet::normalize_max_sample(&profile, m);
    let ratio = ratio_of(&normalized, &profile);
    Ok(ForwardMode {
        mu,
        multiplier: pair.multiplier.re,
        state: vector.iter().map(|x| x * ratio).collect(),
        profile: normalized,
    })
}

/// Scalar `c` with `scaled = c * raw`.
pub(crate) fn ratio_of(scaled: &[f64], raw: &[f64]) -> f64 {
    let (i, _) = raw
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .unwrap_or((0, &1.0));
    scaled[i] / raw[i]
}
