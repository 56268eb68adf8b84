//! The `cycle`, `floquet`, `response` and `export` stages. Each stage reads
//! what earlier stages wrote (after checking hashes) and records its own
//! files in the manifest.

use std::f64::consts::PI;
use std::path::Path;

use ddehb::adjoint::{amplitude_response, conserved_pairing, phase_response, ResponseCurve, ResponseOptions};
use ddehb::floquet::{eigenfunction, floquet_spectrum};
use ddehb::oracle::{settle_to_cycle, SettleOptions};
use ddehb::{seed_from_ansatz, solve_cycle, FourierSeries, PeriodicOrbit, Seed, SolveOptions};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{RunConfig, SeedSource};
use crate::error::CliError;
use crate::files::{self, Manifest, StageWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Kind {
    Phase,
    Amplitude,
    Both,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Coefficient {
    pub p: i64,
    pub component: usize,
    pub re: f64,
    pub im: f64,
}

/// `coefficients.json`, `z.json` and `q.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientFile {
    pub quantity: String,
    pub dim: usize,
    pub order: usize,
    pub period: f64,
    /// Zero-problem residual for the orbit, null-space residual for curves.
    pub residual: f64,
    #[serde(default)]
    pub mu: Option<f64>,
    pub coefficients: Vec<Coefficient>,
}

impl CoefficientFile {
    fn new(quantity: &str, series: &FourierSeries, residual: f64, mu: Option<f64>) -> Self {
        let m = series.order() as i64;
        let coefficients = (-m..=m)
            .flat_map(|p| {
                (0..series.dim()).map(move |c| {
                    let a = series.coeff(p, c);
                    Coefficient {
                        p,
                        component: c,
                        re: a.re,
                        im: a.im,
                    }
                })
            })
            .collect();
        Self {
            quantity: quantity.into(),
            dim: series.dim(),
            order: series.order(),
            period: series.period(),
            residual,
            mu,
            coefficients,
        }
    }

    pub fn series(&self) -> Result<FourierSeries, CliError> {
        let m = self.order as i64;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); (2 * self.order + 1) * self.dim];
        for c in &self.coefficients {
            if c.p.abs() > m || c.component >= self.dim {
                return Err(CliError::Config(format!("coefficient (p={}, c={}) out of range", c.p, c.component)));
            }
            coeffs[(c.p + m) as usize * self.dim + c.component] = Complex64::new(c.re, c.im);
        }
        FourierSeries::from_coefficients(self.dim, self.period, self.order, coeffs).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// `exponents.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExponentReport {
    pub exponents: Vec<ExponentEntry>,
    pub leading_nontrivial: Option<f64>,
    pub rejected: Vec<String>,
    pub scan_failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExponentEntry {
    pub index: usize,
    pub mu: f64,
    pub multiplier: f64,
    pub sigma_ratio: Option<f64>,
    pub residual: Option<f64>,
    pub eigenfunction: Option<String>,
    pub error: Option<String>,
}

fn header(first: &str, prefix: &str, dim: usize) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain((0..dim).map(|c| format!("{prefix}{c}")))
        .collect()
}

/// Rows `(t_n, v(t_n))` on the orbit grid.
fn grid_rows(times: &[f64], samples: &[f64], dim: usize) -> Vec<Vec<f64>> {
    times
        .iter()
        .zip(samples.chunks(dim))
        .map(|(t, s)| std::iter::once(*t).chain(s.iter().copied()).collect())
        .collect()
}

pub fn solve_options(config: &RunConfig) -> SolveOptions {
    SolveOptions {
        order: config.harmonic.order,
        anchor: config.harmonic.anchor,
        max_iterations: config.harmonic.max_iterations,
        tolerance: config.harmonic.tolerance,
        ..SolveOptions::default()
    }
}

pub fn response_options(config: &RunConfig) -> ResponseOptions {
    ResponseOptions {
        nodes: config.response.nodes,
        variant: config.response.variant,
    }
}

pub fn make_seed(config: &RunConfig) -> Result<Seed, CliError> {
    let model = config.model()?;
    match config.seed.source {
        SeedSource::Ansatz => {
            let period = config.seed.period.ok_or_else(|| CliError::Config("seed.period is required".into()))?;
            seed_from_ansatz(model.dim(), &config.seed.amplitude, period).map_err(|e| CliError::Config(e.to_string()))
        }
        SeedSource::Oracle => {
            let s = &config.seed.settle;
            if s.history_amplitude.len() != model.dim() {
                return Err(CliError::Config(format!("seed.settle.history_amplitude needs {} entries", model.dim())));
            }
            let opts = SettleOptions {
                transient: s.transient,
                window: s.window,
                dt: s.dt,
                component: config.harmonic.anchor,
                order: config.harmonic.order,
            };
            let history = |t: f64, out: &mut [f64]| {
                for (o, a) in out.iter_mut().zip(&s.history_amplitude) {
                    *o = a * (s.history_frequency * t).cos();
                }
            };
            Ok(settle_to_cycle(&model, history, &opts).map_err(CliError::convergence)?.seed)
        }
        SeedSource::File => {
            let path = config.seed.file.as_ref().ok_or_else(|| CliError::Config("seed.file is required".into()))?;
            let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
            let file: CoefficientFile = files::parse_json(&bytes, &path.display().to_string())?;
            if file.dim != model.dim() {
                return Err(CliError::Config(format!("seed file has dimension {}, model has {}", file.dim, model.dim())));
            }
            Ok(Seed::new(file.series()?))
        }
    }
}

pub fn solve(config: &RunConfig) -> Result<PeriodicOrbit, CliError> {
    let seed = make_seed(config)?;
    solve_cycle(&config.model()?, &seed, &solve_options(config)).map_err(CliError::convergence)
}

pub fn cmd_cycle(config: &RunConfig, dir: &Path) -> Result<serde_json::Value, CliError> {
    let orbit = solve(config)?;
    let hash = config.hash();
    let mut w = StageWriter::new(dir, &hash)?;
    let m = orbit.dim();
    w.csv("orbit.csv", &header("t", "x", m), grid_rows(&orbit.grid().times(), orbit.samples(), m))?;
    w.json("coefficients.json", &CoefficientFile::new("orbit", orbit.series(), orbit.residual_norm(), None))?;
    let summary = json!({
        "period": orbit.period(),
        "omega": orbit.omega(),
        "residual": orbit.residual_norm(),
        "iterations": orbit.iterations(),
        "seed": config.seed.source,
    });
    let mut manifest = files::new_manifest(config);
    manifest.stages.insert("cycle".into(), w.finish(summary.clone()));
    files::write_manifest(dir, &manifest)?;
    Ok(summary)
}

/// Rebuilds the orbit from verified cycle files.
pub fn load_orbit(config: &RunConfig, dir: &Path, manifest: &Manifest) -> Result<PeriodicOrbit, CliError> {
    let coeff: CoefficientFile = files::parse_json(&files::read_verified(dir, manifest, "cycle", "coefficients.json")?, "coefficients.json")?;
    let rows = files::parse_csv(&files::read_verified(dir, manifest, "cycle", "orbit.csv")?, "orbit.csv", &manifest.config_sha256)?;
    let samples: Vec<f64> = rows.iter().flat_map(|r| r[1..].iter().copied()).collect();
    PeriodicOrbit::from_samples(config.model()?, samples, coeff.period, config.harmonic.anchor).map_err(|e| CliError::io("orbit.csv", e))
}

fn load_samples(dir: &Path, manifest: &Manifest, stage: &str, name: &str) -> Result<Vec<f64>, CliError> {
    let rows = files::parse_csv(&files::read_verified(dir, manifest, stage, name)?, name, &manifest.config_sha256)?;
    Ok(rows.iter().flat_map(|r| r[1..].iter().copied()).collect())
}

pub fn cmd_floquet(config: &RunConfig, dir: &Path) -> Result<serde_json::Value, CliError> {
    let mut manifest = files::read_manifest(dir, config)?;
    let orbit = load_orbit(config, dir, &manifest)?;
    let f = &config.floquet;
    let spectrum = floquet_spectrum(&orbit, (f.range[0], f.range[1]), f.points, f.exclude_radius).map_err(CliError::convergence)?;
    let hash = config.hash();
    let mut w = StageWriter::new(dir, &hash)?;
    let head: Vec<String> = ["mu", "log_abs_det", "sign", "sigma_min", "sigma_max"].map(String::from).to_vec();
    w.csv(
        "scan.csv",
        &head,
        spectrum.scan.points.iter().map(|p| vec![p.mu, p.log_abs_det, p.sign, p.sigma_min, p.sigma_max]),
    )?;
    let m = orbit.dim();
    let times = orbit.grid().times();
    let mut entries = Vec::new();
    for (index, &mu) in spectrum.exponents.iter().enumerate() {
        let mut entry = ExponentEntry {
            index,
            mu,
            multiplier: (mu * orbit.period()).exp(),
            sigma_ratio: None,
            residual: None,
            eigenfunction: None,
            error: None,
        };
        match eigenfunction(&orbit, mu) {
            Ok(mode) => {
                let name = format!("eigenfunction_{index}.csv");
                w.csv(&name, &header("t", "rho", m), grid_rows(&times, &mode.samples, m))?;
                entry.sigma_ratio = Some(mode.sigma_min);
                entry.residual = Some(mode.residual);
                entry.eigenfunction = Some(name);
            }
            Err(e) => entry.error = Some(e.to_string()),
        }
        entries.push(entry);
    }
    let report = ExponentReport {
        leading_nontrivial: spectrum.leading_nontrivial(f.exclude_radius),
        exponents: entries,
        rejected: spectrum.rejected.iter().map(|(b, e)| format!("{:?}: {e}", b.bounds())).collect(),
        scan_failures: spectrum.scan.failures.iter().map(|(mu, e)| format!("{mu}: {e}")).collect(),
    };
    w.json("exponents.json", &report)?;
    let summary = json!({
        "exponents": spectrum.exponents,
        "leading_nontrivial": report.leading_nontrivial,
        "scan_points": spectrum.scan.points.len(),
    });
    manifest.stages.retain(|k, _| k == "cycle");
    manifest.stages.insert("floquet".into(), w.finish(summary.clone()));
    files::write_manifest(dir, &manifest)?;
    Ok(summary)
}

/// Identity error and spread of the conserved pairing over eight base
/// times.
pub fn normalization_check(
    orbit: &PeriodicOrbit,
    curve: &ResponseCurve,
    rho: &FourierSeries,
    target: f64,
    opts: &ResponseOptions,
) -> Result<(f64, f64), CliError> {
    let values = (0..8)
        .map(|i| conserved_pairing(orbit, &curve.series, rho, curve.mu, orbit.period() * i as f64 / 8.0, opts))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(CliError::convergence)?;
    let identity = (values[0] - target).abs() / target.abs();
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((identity, hi - lo))
}

/// The listed exponent nearest `requested`, or the leading nontrivial one.
fn pick_exponent(report: &ExponentReport, requested: Option<f64>) -> Result<(usize, f64), CliError> {
    let usable: Vec<&ExponentEntry> = report.exponents.iter().filter(|e| e.eigenfunction.is_some()).collect();
    let chosen = match requested {
        Some(mu) => usable.iter().min_by(|a, b| (a.mu - mu).abs().total_cmp(&(b.mu - mu).abs())),
        None => {
            let lead = report
                .leading_nontrivial
                .ok_or_else(|| CliError::Precondition("the Floquet report has no nontrivial exponent".into()))?;
            usable.iter().find(|e| e.mu == lead)
        }
    };
    chosen
        .map(|e| (e.index, e.mu))
        .ok_or_else(|| CliError::Precondition("no exponent with an eigenfunction in the Floquet report".into()))
}

pub fn cmd_response(config: &RunConfig, dir: &Path, kind: Kind, exponent: Option<f64>) -> Result<serde_json::Value, CliError> {
    let mut manifest = files::read_manifest(dir, config)?;
    let orbit = load_orbit(config, dir, &manifest)?;
    let want_amplitude = kind != Kind::Phase;
    // Checked before any computation.
    let floquet = if want_amplitude {
        if !manifest.stages.contains_key("floquet") {
            return Err(CliError::Precondition("the amplitude response needs a `floquet` run first".into()));
        }
        let report: ExponentReport = files::parse_json(&files::read_verified(dir, &manifest, "floquet", "exponents.json")?, "exponents.json")?;
        let (index, mu) = pick_exponent(&report, exponent)?;
        let name = format!("eigenfunction_{index}.csv");
        let samples = load_samples(dir, &manifest, "floquet", &name)?;
        Some((mu, name, samples))
    } else {
        None
    };
    let opts = response_options(config);
    let hash = config.hash();
    let mut w = StageWriter::new(dir, &hash)?;
    let m = orbit.dim();
    let times = orbit.grid().times();
    let mut summary = serde_json::Map::new();
    if kind != Kind::Amplitude {
        let z = phase_response(&orbit, &opts).map_err(CliError::convergence)?;
        let (identity, spread) = normalization_check(&orbit, &z, &orbit.series().derivative(), orbit.omega(), &opts)?;
        w.csv("z.csv", &header("t", "z", m), grid_rows(&times, &z.samples, m))?;
        w.json("z.json", &CoefficientFile::new("phase_response", &z.series, z.nullspace_residual, Some(0.0)))?;
        summary.insert(
            "phase".into(),
            json!({ "identity_error": identity, "pairing_spread": spread, "nullspace_residual": z.nullspace_residual }),
        );
    }
    if let Some((mu, name, samples)) = floquet {
        let mode = eigenfunction(&orbit, mu).map_err(CliError::convergence)?;
        if mode.samples.iter().zip(&samples).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(CliError::Stale {
                path: dir.join(name),
                expected: "eigenfunction of the stored orbit".into(),
                found: "a different profile".into(),
            });
        }
        let q = amplitude_response(&orbit, &mode, &opts).map_err(CliError::convergence)?;
        let (identity, spread) = normalization_check(&orbit, &q, &mode.series, 1.0, &opts)?;
        w.csv("q.csv", &header("t", "q", m), grid_rows(&times, &q.samples, m))?;
        w.json("q.json", &CoefficientFile::new("amplitude_response", &q.series, q.nullspace_residual, Some(mu)))?;
        summary.insert(
            "amplitude".into(),
            json!({ "mu": mu, "identity_error": identity, "pairing_spread": spread, "nullspace_residual": q.nullspace_residual }),
        );
    }
    summary.insert("variant".into(), json!(config.response.variant));
    let summary = serde_json::Value::Object(summary);
    manifest.stages.retain(|k, _| k == "cycle" || k == "floquet");
    manifest.stages.insert("response".into(), w.finish(summary.clone()));
    files::write_manifest(dir, &manifest)?;
    Ok(summary)
}

/// Resamples every stored curve on a uniform phase grid of `points` values
/// in `[0, 2 pi)`, using its trigonometric interpolant.
pub fn cmd_export(config: &RunConfig, dir: &Path, points: usize) -> Result<serde_json::Value, CliError> {
    if points == 0 {
        return Err(CliError::Config("--points must be positive".into()));
    }
    let mut manifest = files::read_manifest(dir, config)?;
    let orbit = load_orbit(config, dir, &manifest)?;
    let m = orbit.dim();
    let mut sources = vec![("orbit", "cycle", "orbit.csv".to_string(), "x")];
    if let Some(stage) = manifest.stages.get("floquet") {
        let mut names: Vec<&String> = stage.files.keys().filter(|k| k.starts_with("eigenfunction_")).collect();
        names.sort();
        for n in names {
            sources.push(("eigenfunction", "floquet", n.clone(), "rho"));
        }
    }
    if let Some(stage) = manifest.stages.get("response") {
        for (name, prefix) in [("z.csv", "z"), ("q.csv", "q")] {
            if stage.files.contains_key(name) {
                sources.push(("response", "response", name.to_string(), prefix));
            }
        }
    }
    let hash = config.hash();
    let mut w = StageWriter::new(dir, &hash)?;
    let mut written = Vec::new();
    for (_, stage, name, prefix) in &sources {
        let samples = load_samples(dir, &manifest, stage, name)?;
        let series = FourierSeries::from_samples(&samples, m, orbit.order(), orbit.period()).map_err(|e| CliError::io(name, e))?;
        let rows = (0..points).map(|j| {
            let phase = 2.0 * PI * j as f64 / points as f64;
            std::iter::once(phase).chain(series.evaluate(phase / orbit.omega())).collect()
        });
        let out = format!("figure_{name}");
        w.csv(&out, &header("phase", prefix, m), rows)?;
        written.push(out);
    }
    let summary = json!({ "points": points, "files": written });
    manifest.stages.insert("export".into(), w.finish(summary.clone()));
    files::write_manifest(dir, &manifest)?;
    Ok(summary)
}
