//! Full pipeline plus oracle comparisons, reported as a pass/fail table.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use ddehb::adjoint::{amplitude_response, phase_response};
use ddehb::floquet::{eigenfunction, floquet_spectrum, normalize_max_sample, refine_exponent, StabilityOperator};
use ddehb::oracle::{
    build_discretized, direct_prc, discretized_adjoint, forward_mode, monodromy_exponents, richardson, AdjointOptions,
    DiscreteKind, LinearFlow, MonodromyOptions, PrcOptions,
};
use ddehb::{solve_cycle, PeriodicOrbit, Seed};
use serde::Serialize;

use crate::commands::{self, normalization_check, response_options, solve_options};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::files::{self, StageWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Reported for reference; not judged.
    Info,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub measured: f64,
    pub tolerance: Option<f64>,
    pub seconds: f64,
    pub note: String,
}

#[derive(Default, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    fn judge(&mut self, name: &str, measured: f64, tolerance: f64, started: Instant, note: String) {
        let status = if measured <= tolerance { Status::Pass } else { Status::Fail };
        self.push(name, status, measured, Some(tolerance), started, note);
    }

    fn info(&mut self, name: &str, measured: f64, started: Instant, note: String) {
        self.push(name, Status::Info, measured, None, started, note);
    }

    fn push(&mut self, name: &str, status: Status, measured: f64, tolerance: Option<f64>, started: Instant, note: String) {
        self.checks.push(Check {
            name: name.into(),
            status,
            measured,
            tolerance,
            seconds: started.elapsed().as_secs_f64(),
            note,
        });
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| c.status == Status::Fail).count()
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<6} {:<38} {:>12} {:>10} {:>9}  note\n", "status", "check", "measured", "tolerance", "seconds");
        for c in &self.checks {
            let status = match c.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Info => "info",
            };
            let tol = c.tolerance.map(|t| format!("{t:.1e}")).unwrap_or_else(|| "-".into());
            out += &format!(
                "{status:<6} {:<38} {:>12.3e} {tol:>10} {:>9.2}  {}\n",
                c.name, c.measured, c.seconds, c.note
            );
        }
        out
    }
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn rel_sup(reference: &[f64], other: &[f64]) -> f64 {
    sup(reference, other) / max_abs(reference).max(1e-300)
}

struct OracleCurves {
    mu: f64,
    unit: f64,
    z: Vec<f64>,
    q: Vec<f64>,
    rho: Vec<f64>,
}

fn oracle_curves(orbit: &PeriodicOrbit, segments: usize, cfl: f64) -> Result<OracleCurves, CliError> {
    let sys = build_discretized(orbit.model(), segments).map_err(CliError::convergence)?;
    let flow = LinearFlow::new(&sys, orbit, cfl).map_err(CliError::convergence)?;
    let spec = monodromy_exponents(&flow, 5, &MonodromyOptions::default()).map_err(CliError::convergence)?;
    let lead = spec
        .leading_nontrivial()
        .ok_or_else(|| CliError::Convergence("oracle found no real nontrivial multiplier".into()))?;
    let mode = forward_mode(&flow, lead).map_err(CliError::convergence)?;
    let opts = AdjointOptions::default();
    let z = discretized_adjoint(&flow, &DiscreteKind::Phase, &opts).map_err(CliError::convergence)?;
    let q = discretized_adjoint(&flow, &DiscreteKind::Amplitude(mode.clone()), &opts).map_err(CliError::convergence)?;
    Ok(OracleCurves {
        mu: lead.exponent.re,
        unit: spec.unit_deviation,
        z: z.samples,
        q: q.samples,
        rho: mode.profile,
    })
}

pub fn run(config: &RunConfig, dir: &Path) -> Result<Report, CliError> {
    let mut report = Report::default();
    let model = config.model()?;

    let t = Instant::now();
    let orbit = commands::solve(config)?;
    report.judge(
        "cycle residual",
        orbit.residual_norm(),
        config.harmonic.tolerance,
        t,
        format!("T = {:.12}, {} iterations", orbit.period(), orbit.iterations()),
    );
    if model.name() == "kotani" {
        let dt = (orbit.period() - 2.0 * PI).abs();
        let cos: Vec<f64> = orbit.grid().times().iter().map(|t| t.cos()).collect();
        report.judge("exact cycle: |T - 2 pi|", dt, 1e-8, t, String::new());
        report.judge("exact cycle: sup |x - cos t|", sup(orbit.samples(), &cos), 1e-8, t, String::new());
    }

    if let Ok(manifest) = files::read_manifest(dir, config) {
        if manifest.stages.contains_key("cycle") {
            let t = Instant::now();
            let stored = commands::load_orbit(config, dir, &manifest)?;
            report.judge(
                "stored orbit matches fresh solve",
                sup(stored.samples(), orbit.samples()),
                1e-8,
                t,
                dir.join("orbit.csv").display().to_string(),
            );
        }
    }

    let t = Instant::now();
    let op = StabilityOperator::new(&orbit).map_err(CliError::convergence)?;
    report.judge("trivial mode: sigma_min / sigma_max", op.sigma_ratio(0.0), 1e-8, t, String::new());
    let trivial = eigenfunction(&orbit, 0.0).map_err(CliError::convergence)?;
    let (xdot, _) = normalize_max_sample(&orbit.derivative_samples(), orbit.dim());
    report.judge("trivial mode: sup |rho_0 - x'|", sup(&trivial.samples, &xdot), 1e-6, t, String::new());

    let t = Instant::now();
    let f = &config.floquet;
    let spectrum = floquet_spectrum(&orbit, (f.range[0], f.range[1]), f.points, f.exclude_radius).map_err(CliError::convergence)?;
    let mu = spectrum
        .leading_nontrivial(f.exclude_radius)
        .ok_or_else(|| CliError::Convergence("no nontrivial exponent in the scan range".into()))?;
    report.info("leading nontrivial exponent", mu, t, format!("{} exponents found", spectrum.exponents.len()));

    let t = Instant::now();
    let doubled = solve_options(config).with_order(2 * config.harmonic.order);
    let orbit2 = solve_cycle(&model, &Seed::new(orbit.series().clone()), &doubled).map_err(CliError::convergence)?;
    let w = 0.05 * mu.abs();
    let mu2 = refine_exponent(&orbit2, (mu - w, mu + w)).map_err(CliError::convergence)?;
    report.judge("exponent change under M -> 2M", (mu2 - mu).abs(), 1e-6, t, String::new());

    let t = Instant::now();
    let opts = response_options(config);
    let rho = eigenfunction(&orbit, mu).map_err(CliError::convergence)?;
    let z = phase_response(&orbit, &opts).map_err(CliError::convergence)?;
    let q = amplitude_response(&orbit, &rho, &opts).map_err(CliError::convergence)?;
    let (zi, zs) = normalization_check(&orbit, &z, &orbit.series().derivative(), orbit.omega(), &opts)?;
    let (qi, qs) = normalization_check(&orbit, &q, &rho.series, 1.0, &opts)?;
    report.judge("phase normalization identity", zi, 1e-8, t, String::new());
    report.judge("amplitude normalization identity", qi, 1e-8, t, String::new());
    report.judge("phase pairing spread", zs, 1e-6, t, "8 base times".into());
    report.judge("amplitude pairing spread", qs, 1e-6, t, "8 base times".into());

    let o = &config.oracle;
    if model.tau() > 0.0 {
        let t = Instant::now();
        let coarse = oracle_curves(&orbit, o.segments, o.cfl)?;
        report.info("oracle unit multiplier |lambda - 1|", coarse.unit, t, format!("N = {}", o.segments));
        let (oz, oq, orho, omu, label) = if o.extrapolate {
            let fine = oracle_curves(&orbit, 2 * o.segments, o.cfl)?;
            report.info("oracle unit multiplier |lambda - 1|", fine.unit, t, format!("N = {}", 2 * o.segments));
            (
                richardson(&coarse.z, &fine.z, 1),
                richardson(&coarse.q, &fine.q, 1),
                richardson(&coarse.rho, &fine.rho, 1),
                2.0 * fine.mu - coarse.mu,
                format!("extrapolated from N = {}, {}", o.segments, 2 * o.segments),
            )
        } else {
            (coarse.z, coarse.q, coarse.rho, coarse.mu, format!("N = {}", o.segments))
        };
        report.judge("oracle exponent (relative)", (omu - mu).abs() / mu.abs(), o.exponent_tolerance, t, format!("{label}, mu = {omu:.7}"));
        report.judge("oracle z (relative sup)", rel_sup(&z.samples, &oz), o.curve_tolerance, t, label.clone());
        report.judge("oracle q (relative sup)", rel_sup(&q.samples, &oq), o.curve_tolerance, t, label.clone());
        report.judge("oracle rho (relative sup)", rel_sup(&rho.samples, &orho), o.curve_tolerance, t, label);
    }

    if o.prc_phases > 0 {
        let t = Instant::now();
        let phases: Vec<f64> = (0..o.prc_phases).map(|i| 2.0 * PI * i as f64 / o.prc_phases as f64).collect();
        let popts = PrcOptions {
            periods: o.prc_periods,
            dt: o.prc_dt,
            component: 0,
            eps: None,
        };
        let full = direct_prc(&orbit, &phases, &popts).map_err(CliError::convergence)?;
        let half = direct_prc(&orbit, &phases, &PrcOptions { eps: Some(full[0].eps / 2.0), ..popts }).map_err(CliError::convergence)?;
        let zs: Vec<f64> = phases.iter().map(|&p| z.value(p / orbit.omega())[0]).collect();
        let measured: Vec<f64> = full.iter().map(|p| p.response).collect();
        report.judge("direct perturbation vs z (relative sup)", rel_sup(&zs, &measured), o.prc_tolerance, t, format!("{} phases", phases.len()));
        let shifts = |v: &[ddehb::oracle::PrcPoint]| max_abs(&v.iter().map(|p| p.shift).collect::<Vec<_>>());
        let ratio = shifts(&full) / shifts(&half);
        report.judge("kick halving shift ratio |r/2 - 1|", (ratio / 2.0 - 1.0).abs(), 0.02, t, format!("ratio {ratio:.5}"));
    }

    let hash = config.hash();
    let mut w = StageWriter::new(dir, &hash)?;
    w.json("validation.json", &report)?;
    let mut manifest = files::read_manifest(dir, config).unwrap_or_else(|_| files::new_manifest(config));
    manifest.stages.insert(
        "validate".into(),
        w.finish(serde_json::json!({ "failures": report.failures(), "checks": report.checks.len() })),
    );
    files::write_manifest(dir, &manifest)?;
    Ok(report)
}
