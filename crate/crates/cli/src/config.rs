//! Run configuration: TOML on disk, dotted `key=value` overrides, validation
//! and a content hash used to tie output files to the run that made them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ddehb::adjoint::PairingVariant;
use ddehb::ModelSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const KOTANI_FIG1: &str = include_str!("../configs/kotani_fig1.toml");
pub const CORTICO_FIG2: &str = include_str!("../configs/cortico_fig2.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub harmonic: HarmonicConfig,
    pub seed: SeedConfig,
    pub floquet: FloquetConfig,
    #[serde(default)]
    pub response: ResponseConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarmonicConfig {
    pub order: usize,
    pub anchor: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for HarmonicConfig {
    fn default() -> Self {
        Self {
            order: 20,
            anchor: 0,
            tolerance: 1e-10,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Ansatz,
    Oracle,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub source: SeedSource,
    /// Per-component cosine amplitude for the ansatz seed.
    #[serde(default)]
    pub amplitude: Vec<f64>,
    /// Period guess for the ansatz seed.
    #[serde(default)]
    pub period: Option<f64>,
    /// Coefficient JSON written by a previous `cycle` run.
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub settle: SettleConfig,
}

/// Transient integration for the oracle seed. The history is
/// `x_c(s) = history_amplitude[c] cos(history_frequency s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SettleConfig {
    pub history_amplitude: Vec<f64>,
    pub history_frequency: f64,
    pub transient: f64,
    pub window: f64,
    pub dt: f64,
}

impl Default for SettleConfig {
    fn default() -> Self {
        Self {
            history_amplitude: vec![0.1],
            history_frequency: 0.3,
            transient: 500.0,
            window: 200.0,
            dt: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloquetConfig {
    pub range: [f64; 2],
    pub points: usize,
    #[serde(default = "default_exclude")]
    pub exclude_radius: f64,
}

fn default_exclude() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResponseConfig {
    pub nodes: usize,
    pub variant: PairingVariant,
}

impl Default for ResponseConfig {
    fn default() -> Self {
        Self {
            nodes: 64,
            variant: PairingVariant::Weighted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Segments of the discretized delay line.
    pub segments: usize,
    /// Also run `2 N` segments and compare against the first-order
    /// Richardson extrapolation of the two.
    pub extrapolate: bool,
    pub cfl: f64,
    /// Curve tolerance, relative to the largest sample of the curve.
    pub curve_tolerance: f64,
    /// Exponent tolerance, relative to the exponent.
    pub exponent_tolerance: f64,
    /// Direct-perturbation phases; 0 skips the check.
    pub prc_phases: usize,
    pub prc_periods: usize,
    pub prc_dt: f64,
    pub prc_tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            segments: 2000,
            extrapolate: true,
            cfl: 0.8,
            curve_tolerance: 1e-3,
            exponent_tolerance: 1e-2,
            prc_phases: 16,
            prc_periods: 20,
            prc_dt: 0.005,
            prc_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Loads a config by path, or one of the shipped configs by name.
pub fn load(source: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = match source {
        "kotani_fig1" => KOTANI_FIG1.to_string(),
        "cortico_fig2" => CORTICO_FIG2.to_string(),
        path => std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {path}: {e}")))?,
    };
    let mut value: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(format!("{source}: {}", e.message())))?;
    for item in overrides {
        apply_override(&mut value, item)?;
    }
    let config: RunConfig = toml::Value::Table(value)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Sets `a.b.c = value`, parsing the value as TOML and falling back to a
/// bare string.
fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {item:?} is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut node = table;
    for part in path {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?}: {part:?} is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let model = self.model()?;
        let h = &self.harmonic;
        if h.order == 0 {
            return bad("harmonic.order must be at least 1".into());
        }
        if h.anchor >= model.dim() {
            return bad(format!("harmonic.anchor {} out of range for dimension {}", h.anchor, model.dim()));
        }
        if !(h.tolerance > 0.0) || h.max_iterations == 0 {
            return bad("harmonic.tolerance and harmonic.max_iterations must be positive".into());
        }
        match self.seed.source {
            SeedSource::Ansatz => {
                if self.seed.amplitude.len() != model.dim() {
                    return bad(format!("seed.amplitude needs {} entries", model.dim()));
                }
                if !self.seed.period.is_some_and(|p| p > 0.0 && p.is_finite()) {
                    return bad("seed.period must be a positive number".into());
                }
            }
            SeedSource::File => {
                if self.seed.file.is_none() {
                    return bad("seed.file is required for the file seed".into());
                }
            }
            SeedSource::Oracle => {
                let s = &self.seed.settle;
                if s.history_amplitude.len() != model.dim() {
                    return bad(format!("seed.settle.history_amplitude needs {} entries", model.dim()));
                }
                if !(s.dt > 0.0 && s.transient >= 0.0 && s.window > 0.0) {
                    return bad("seed.settle needs positive dt and window".into());
                }
            }
        }
        let f = &self.floquet;
        if !(f.range[0] < f.range[1]) || f.points < 2 || !(f.exclude_radius >= 0.0) {
            return bad("floquet.range must increase, floquet.points must be at least 2".into());
        }
        if self.response.nodes == 0 {
            return bad("response.nodes must be positive".into());
        }
        let o = &self.oracle;
        if o.segments < 2 || !(o.cfl > 0.0 && o.cfl <= 1.0) || o.prc_periods == 0 || !(o.prc_dt > 0.0) {
            return bad("oracle.segments >= 2, 0 < oracle.cfl <= 1, positive PRC settings required".into());
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelSpec, CliError> {
        ModelSpec::builtin(&self.model.name, &self.model.params).map_err(|e| CliError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputConfig::default();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf).unwrap_or_else(|| self.output.dir.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_parse() {
        let k = load("kotani_fig1", &[]).unwrap();
        assert_eq!(k.model.name, "kotani");
        assert_eq!(k.harmonic.order, 20);
        let c = load("cortico_fig2", &[]).unwrap();
        assert_eq!(c.model.params["tau"], 8.0);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = load("kotani_fig1", &["harmonic.order=12".into(), "model.params.delta=0.1".into()]).unwrap();
        assert_eq!(c.harmonic.order, 12);
        assert_eq!(c.model.params["delta"], 0.1);
        assert_ne!(c.hash(), load("kotani_fig1", &[]).unwrap().hash());
    }

    #[test]
    fn rejects_bad_input_before_computing() {
        assert!(matches!(load("kotani_fig1", &["harmonic.order=0".into()]), Err(CliError::Config(_))));
        assert!(matches!(load("kotani_fig1", &["harmonic.bogus=1".into()]), Err(CliError::Config(_))));
        assert!(matches!(load("kotani_fig1", &["model.params.beta=1".into()]), Err(CliError::Config(_))));
        assert!(matches!(load("kotani_fig1", &["noequals".into()]), Err(CliError::Config(_))));
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = load("kotani_fig1", &[]).unwrap();
        let b = load("kotani_fig1", &["output.dir=\"elsewhere\"".into()]).unwrap();
        assert_eq!(a.hash(), b.hash());
    }
}
