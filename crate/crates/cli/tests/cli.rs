use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ddehb(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddehb"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn kotani_cycle_is_the_cosine() {
    let dir = tempfile::tempdir().unwrap();
    let o = ddehb(&["cycle", "--config", "kotani_fig1"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let coeff = json(&dir.path().join("coefficients.json"));
    let period = coeff["period"].as_f64().unwrap();
    assert!((period - 2.0 * std::f64::consts::PI).abs() < 1e-8);
    let table = rows(&dir.path().join("orbit.csv"));
    assert_eq!(table.len(), 41);
    for r in &table {
        assert!((r[1] - r[0].cos()).abs() < 1e-8);
    }
    let manifest = json(&dir.path().join("manifest.json"));
    let hash = manifest["config_sha256"].as_str().unwrap();
    let first = fs::read_to_string(dir.path().join("orbit.csv")).unwrap();
    assert!(first.starts_with(&format!("# config_sha256={hash}\n")));
    assert_eq!(coeff["config_sha256"], hash);
}

#[test]
fn zero_order_is_a_config_error_with_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = ddehb(&["cycle", "--config", "kotani_fig1", "--override", "harmonic.order=0"], &out);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
    let o = ddehb(&["cycle", "--config", "kotani_fig1", "--override", "harmonic.typo=3"], &out);
    assert_eq!(code(&o), 2);
    let o = ddehb(&["cycle", "--config", "kotani_fig1", "--seed-from", "file"], &out);
    assert_eq!(code(&o), 2);
}

#[test]
fn full_pipeline_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [
        &["cycle", "--config", "kotani_fig1"][..],
        &["floquet", "--config", "kotani_fig1"],
        &["response", "--config", "kotani_fig1"],
        &["export", "--config", "kotani_fig1", "--points", "64"],
    ] {
        let o = ddehb(args, d);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let report = json(&d.join("exponents.json"));
    let mus: Vec<f64> = report["exponents"].as_array().unwrap().iter().map(|e| e["mu"].as_f64().unwrap()).collect();
    assert!(mus[0].abs() < 1e-8);
    assert!((report["leading_nontrivial"].as_f64().unwrap() + 0.029044149218).abs() < 1e-9);

    // The trivial eigenfunction is the velocity -sin t, scaled so the
    // largest grid sample is 1.
    let rho = rows(&d.join("eigenfunction_0.csv"));
    let peak = rho.iter().map(|r| r[0].sin().abs()).fold(0.0, f64::max);
    for r in &rho {
        assert!((r[1] + r[0].sin() / peak).abs() < 1e-6, "{r:?}");
    }
    let manifest = json(&d.join("manifest.json"));
    let phase = &manifest["stages"]["response"]["summary"]["phase"];
    assert!(phase["identity_error"].as_f64().unwrap() < 1e-8);
    assert!(phase["pairing_spread"].as_f64().unwrap() < 1e-6);
    let amp = &manifest["stages"]["response"]["summary"]["amplitude"];
    assert!(amp["identity_error"].as_f64().unwrap() < 1e-8);

    let fig = rows(&d.join("figure_orbit.csv"));
    assert_eq!(fig.len(), 64);
    for r in &fig {
        assert!((r[1] - r[0].cos()).abs() < 1e-8);
    }
    assert!(d.join("figure_z.csv").exists() && d.join("figure_q.csv").exists());
}

#[test]
fn scan_without_roots_gives_empty_list() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let extra = ["--override", "floquet.range=[0.5, 0.6]"];
    let cycle: Vec<&str> = ["cycle", "--config", "kotani_fig1"].into_iter().chain(extra).collect();
    assert_eq!(code(&ddehb(&cycle, d)), 0);
    let floquet: Vec<&str> = ["floquet", "--config", "kotani_fig1"].into_iter().chain(extra).collect();
    assert_eq!(code(&ddehb(&floquet, d)), 0);
    let report = json(&d.join("exponents.json"));
    assert!(report["exponents"].as_array().unwrap().is_empty());
    assert_eq!(rows(&d.join("scan.csv")).len(), 151);
}

#[test]
fn downstream_commands_refuse_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&ddehb(&["floquet", "--config", "kotani_fig1"], d)), 2);
    assert_eq!(code(&ddehb(&["cycle", "--config", "kotani_fig1"], d)), 0);

    // Amplitude response before any Floquet run.
    assert_eq!(code(&ddehb(&["response", "--config", "kotani_fig1", "--kind", "amplitude"], d)), 2);
    assert_eq!(code(&ddehb(&["response", "--config", "kotani_fig1", "--kind", "phase"], d)), 0);

    // Orbit made under a different config.
    let stale = ddehb(&["floquet", "--config", "kotani_fig1", "--override", "model.params.delta=0.1"], d);
    assert_eq!(code(&stale), 2);
    assert!(String::from_utf8_lossy(&stale.stderr).contains("stale"));

    // Edited orbit file.
    let path = d.join("orbit.csv");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replacen("e-1\n", "e-2\n", 1)).unwrap();
    let corrupt = ddehb(&["floquet", "--config", "kotani_fig1"], d);
    assert_eq!(code(&corrupt), 5);
    assert!(String::from_utf8_lossy(&corrupt.stderr).contains("corrupted"));
    let corrupt = ddehb(&["validate", "--config", "kotani_fig1"], d);
    assert_eq!(code(&corrupt), 5);
}

#[test]
fn identical_runs_are_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        for cmd in ["cycle", "floquet", "response"] {
            assert_eq!(code(&ddehb(&[cmd, "--config", "kotani_fig1"], d)), 0);
        }
    }
    for name in ["orbit.csv", "scan.csv", "eigenfunction_1.csv", "z.csv", "q.csv", "manifest.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_from_file_reuses_a_previous_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    assert_eq!(code(&ddehb(&["cycle", "--config", "kotani_fig1"], &first)), 0);
    let seed = format!("seed.file=\"{}\"", first.join("coefficients.json").display());
    let second = dir.path().join("second");
    let o = ddehb(&["cycle", "--config", "kotani_fig1", "--seed-from", "file", "--override", &seed], &second);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a = rows(&first.join("orbit.csv"));
    let b = rows(&second.join("orbit.csv"));
    for (x, y) in a.iter().zip(&b) {
        assert!((x[1] - y[1]).abs() < 1e-10);
    }
}

#[test]
fn cortico_exponent_from_shipped_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&ddehb(&["cycle", "--config", "cortico_fig2"], d)), 0);
    assert_eq!(code(&ddehb(&["floquet", "--config", "cortico_fig2"], d)), 0);
    let report = json(&d.join("exponents.json"));
    let mu = report["leading_nontrivial"].as_f64().unwrap();
    assert!((mu + 0.00296).abs() < 5e-5, "{mu}");
    let table = rows(&d.join("orbit.csv"));
    assert_eq!(table[0].len(), 3);
}

#[test]
fn kotani_validation_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = ddehb(&["validate", "--config", "kotani_fig1"], dir.path());
    let table = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{table}\n{}", String::from_utf8_lossy(&o.stderr));
    assert!(!table.contains("FAIL"));
    let report = json(&dir.path().join("validation.json"));
    assert!(report["checks"].as_array().unwrap().len() >= 15);
}

#[test]
fn raw_oracle_at_n2000_fails_the_tight_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let o = ddehb(
        &[
            "validate",
            "--config",
            "kotani_fig1",
            "--override",
            "oracle.extrapolate=false",
            "--override",
            "oracle.prc_phases=0",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 4);
}
