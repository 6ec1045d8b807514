use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ibcem::config::parse_config;
use ibcem::io::{parse_measurements, Manifest};

const DISK: &str = r#"
[geometry]
alpha = [0.5]

[electrodes.layout]
kind = "four-disk"

[grid]
extent = [-1.0, 1.0]
cells = 40

[currents]
kind = "adjacent"
"#;

fn run(dir: &Path, args: &[&str], config: &str) -> Output {
    let path = dir.join("run.toml");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_ibcem"))
        .args(args)
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .current_dir(dir)
        .output()
        .unwrap()
}

fn manifest(dir: &Path) -> Manifest {
    Manifest::parse(&fs::read_to_string(dir.join("out/manifest.toml")).unwrap()).unwrap()
}

#[test]
fn dump_mesh_echoes_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["dump-mesh"], DISK);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(dir.path());
    assert_eq!(m.command, "dump-mesh");
    assert_eq!(m.config, parse_config(DISK).unwrap());
    assert!(m.timings.contains_key("total"));
    let csv = fs::read_to_string(dir.path().join("out/boundary_points.csv")).unwrap();
    assert!(csv.starts_with("x,y,theta,orientation,clamped,electrode\n"));
    assert!(fs::read_to_string(dir.path().join("out/mesh.pgm")).unwrap().starts_with("P2\n41 41\n255\n"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["forward"], &DISK.replace("cells = 40", "cells = 40\nspacing = 1"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
    let out = run(dir.path(), &["forward"], &DISK.replace("[-1.0, 1.0]", "[-0.5, 0.5]"));
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["invert-sigma"], DISK);
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_ibcem")).args(["forward", "/nonexistent.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_ibcem"))
        .env("IBCEM_THREADS", "zero")
        .args(["forward", "/nonexistent.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sigma.csv"), "1,1\n1,-1\n").unwrap();
    let config = DISK.to_string() + "[physics.sigma]\nkind = \"raster\"\npath = \"sigma.csv\"\n";
    let out = run(dir.path(), &["forward"], &config);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn forward_writes_measurements_and_fields() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sigma.csv"), "1,1,1\n1,2,1\n1,1,1\n").unwrap();
    let config = DISK.to_string() + "[physics.sigma]\nkind = \"raster\"\npath = \"sigma.csv\"\n";
    let out = run(dir.path(), &["forward"], &config);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let u = parse_measurements(&fs::read_to_string(dir.path().join("out/measurements.csv")).unwrap()).unwrap();
    assert_eq!((u.electrodes(), u.patterns()), (4, 3));
    assert!(u.columns.iter().all(|c| c[0] == 0.0));
    let field = fs::read_to_string(dir.path().join("out/field_p1.csv")).unwrap();
    let mut lines = field.lines();
    assert_eq!(lines.next(), Some("x,y,region,u"));
    let regions: Vec<&str> = lines.map(|l| l.split(',').nth(2).unwrap()).collect();
    for r in ["interior", "exterior", "boundary"] {
        assert!(regions.contains(&r));
    }
    assert_eq!(manifest(dir.path()).results["patterns"].as_integer(), Some(3));
}

#[test]
fn make_data_is_reproducible_and_scaled() {
    let dir = tempfile::tempdir().unwrap();
    let clean = DISK.to_string() + "[data]\ncells = 50\n";
    assert!(run(dir.path(), &["make-data"], &clean).status.success());
    let a = fs::read(dir.path().join("out/data_clean.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("out/data_noisy.csv")).unwrap());

    let noisy = DISK.to_string() + "[data]\ncells = 50\nnoise = 0.02\nseed = 7\n";
    assert!(run(dir.path(), &["make-data"], &noisy).status.success());
    let first = fs::read(dir.path().join("out/data_noisy.csv")).unwrap();
    assert_eq!(fs::read(dir.path().join("out/data_clean.csv")).unwrap(), a);
    assert_ne!(first, a);
    let rel = manifest(dir.path()).results["relative_noise"].as_float().unwrap();
    assert!((rel - 0.02).abs() < 1e-12, "{rel}");
    assert_eq!(manifest(dir.path()).seed, Some(7));
    assert!(run(dir.path(), &["make-data"], &noisy).status.success());
    assert_eq!(fs::read(dir.path().join("out/data_noisy.csv")).unwrap(), first);
}

#[test]
fn convergence_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = DISK.to_string() + "[sweep]\nh = [0.1, 0.05, 0.025]\nfield = { kind = \"quadratic\" }\n";
    let out = run(dir.path(), &["convergence"], &config);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(dir.path().join("out/convergence.gp").exists());
    assert!(manifest(dir.path()).results.contains_key("order_u"));
}

#[test]
fn inversions_write_histories() {
    let dir = tempfile::tempdir().unwrap();
    let data = DISK.to_string() + "[data]\ncells = 40\n";
    assert!(run(dir.path(), &["make-data"], &data).status.success());
    fs::copy(dir.path().join("out/data_clean.csv"), dir.path().join("u.csv")).unwrap();

    let sigma = DISK.to_string()
        + "[invert_sigma]\nmeasurements = \"u.csv\"\ntruth_center = [0.0, 0.0]\n[invert_sigma.settings]\nmax_iterations = 2\n";
    let out = run(dir.path(), &["invert-sigma"], &sigma);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let h = fs::read_to_string(dir.path().join("out/sigma_history.csv")).unwrap();
    assert!(h.starts_with("n,F,t_n,norm_dsigma\n"));
    assert!(dir.path().join("out/sigma.pgm").exists());

    let electrodes = DISK.to_string()
        + "[invert_electrodes]\nmeasurements = \"u.csv\"\n"
        + "start_theta1 = [-2.4, -0.7853981633974483, 0.7853981633974483, 2.356194490192345]\n"
        + "start_theta2 = [-1.856194490192345, -0.2853981633974483, 1.2853981633974483, 2.856194490192345]\n"
        + "[invert_electrodes.settings]\nmax_iterations = 2\n";
    let out = run(dir.path(), &["invert-electrodes"], &electrodes);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let h = fs::read_to_string(dir.path().join("out/electrodes_history.csv")).unwrap();
    assert!(h.starts_with("n,F,grad_norm,theta1_1,"));
    let m = manifest(dir.path());
    let cal = m.results["calibration"].as_table().unwrap();
    assert_eq!(cal["signs"].as_array().unwrap().len(), 2);
    assert_eq!(m.results["theta1"].as_array().unwrap().len(), 4);
}
