use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use ibcem::config::{load_config, RunConfig};
use ibcem::conductivity::{AnalyticConductivity, Conductivity};
use ibcem::convergence::run_sweep;
use ibcem::forward::ForwardProblem;
use ibcem::inverse::add_noise;
use ibcem::inverse::conductivity::{simulate, thresholded_centroid, SigmaInversion};
use ibcem::inverse::electrodes::{calibrate_endpoint_signs, ElectrodeInversion, EndpointMode};
use ibcem::io::{self, Manifest};
use ibcem::mesh::NodeKind;
use ibcem::{Error, Result};

/// Thread count for the rayon pool (default: all cores).
const THREADS_VAR: &str = "IBCEM_THREADS";

#[derive(Parser)]
#[command(name = "ibcem", version, about = "Immersed-boundary finite differences for complete-electrode EIT")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for every current pattern; write measurements, fields and images.
    Forward(Args),
    /// Simulate clean and noisy measurements on the `[data]` grid.
    MakeData(Args),
    /// Manufactured-solution sweep over `[sweep].h`.
    Convergence(Args),
    /// Reconstruct the conductivity from `[invert_sigma].measurements`.
    InvertSigma(Args),
    /// Reconstruct electrode angles from `[invert_electrodes].measurements`.
    InvertElectrodes(Args),
    /// Node classes and boundary points of the grid.
    DumpMesh(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML run configuration.
    config: PathBuf,
    /// Output directory (overrides `[output].dir`).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: {THREADS_VAR} must be a positive integer, got '{v}'");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    let (name, args): (&str, &Args) = match &command {
        Command::Forward(a) => ("forward", a),
        Command::MakeData(a) => ("make-data", a),
        Command::Convergence(a) => ("convergence", a),
        Command::InvertSigma(a) => ("invert-sigma", a),
        Command::InvertElectrodes(a) => ("invert-electrodes", a),
        Command::DumpMesh(a) => ("dump-mesh", a),
    };
    let config = load_config(&args.config)?;
    let out = args.out.clone().unwrap_or_else(|| config.output.dir.clone());
    std::fs::create_dir_all(&out)?;
    let mut manifest = Manifest::new(name, &config);
    let start = Instant::now();
    match command {
        Command::Forward(_) => forward(&config, &out, &mut manifest)?,
        Command::MakeData(_) => make_data(&config, &out, &mut manifest)?,
        Command::Convergence(_) => convergence(&config, &out, &mut manifest)?,
        Command::InvertSigma(_) => invert_sigma(&config, &out, &mut manifest)?,
        Command::InvertElectrodes(_) => invert_electrodes(&config, &out, &mut manifest)?,
        Command::DumpMesh(_) => dump_mesh(&config, &out, &mut manifest)?,
    }
    manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
    io::write(&out.join("manifest.toml"), &manifest.to_toml())
}

fn timed<T>(manifest: &mut Manifest, key: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let v = f()?;
    manifest.timings.insert(key.into(), t.elapsed().as_secs_f64());
    Ok(v)
}

fn forward(config: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<()> {
    let mesh = timed(manifest, "mesh", || config.mesh())?;
    let sigma = config.sigma()?;
    let patterns = config.patterns()?;
    let p = &config.physics;
    let problem = timed(manifest, "assemble", || {
        ForwardProblem::new(mesh.clone(), sigma.as_ref(), p.ground, p.epsilon, p.solver)
    })?;
    let (u, sols) = timed(manifest, "solve", || problem.solve_patterns(&patterns))?;
    io::write(&out.join("measurements.csv"), &io::format_measurements(&u))?;
    for (k, sol) in sols.iter().enumerate() {
        io::write(&out.join(format!("field_p{}.csv", k + 1)), &io::format_field(&mesh, sol))?;
        if config.output.pgm {
            let values = io::interior_values(&mesh, |n| sol.node_value(&mesh, n));
            io::write(&out.join(format!("field_p{}.pgm", k + 1)), &io::format_pgm(mesh.side(), &values))?;
        }
    }
    manifest.result("unknowns", mesh.unknowns() as i64);
    manifest.result("patterns", patterns.len() as i64);
    Ok(())
}

fn make_data(config: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<()> {
    let data = config.data.as_ref().ok_or_else(|| Error::Config("missing [data]".into()))?;
    let mesh = timed(manifest, "mesh", || config.mesh_with_cells(data.cells))?;
    let sigma = config.sigma()?;
    let patterns = config.patterns()?;
    let p = &config.physics;
    let clean = timed(manifest, "solve", || simulate(&mesh, sigma.as_ref(), &patterns, p.ground, p.epsilon, p.solver))?;
    let noisy = add_noise(&clean, data.noise, data.seed)?;
    io::write(&out.join("data_clean.csv"), &io::format_measurements(&clean))?;
    io::write(&out.join("data_noisy.csv"), &io::format_measurements(&noisy))?;
    let rel = if clean.frobenius() > 0.0 { noisy.distance(&clean) / clean.frobenius() } else { 0.0 };
    manifest.result("relative_noise", rel);
    manifest.result("cells", data.cells as i64);
    Ok(())
}

fn convergence(config: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<()> {
    let case = config.sweep_case()?;
    let report = timed(manifest, "sweep", || run_sweep(&case))?;
    io::write(&out.join("convergence.csv"), &io::format_convergence(&report.rows))?;
    io::write(
        &out.join("convergence.gp"),
        &io::gnuplot_stub("convergence.csv", 1, &[(2, "u max"), (3, "u L2"), (4, "grad u max")], true),
    )?;
    print!("{}", report.summary());
    for (key, order) in [("order_u", report.order_u), ("order_u_l2", report.order_u_l2), ("order_grad", report.order_grad)] {
        if let Some(o) = order {
            manifest.result(key, o.to_string());
        }
    }
    manifest.result("failed_spacings", report.failures.len() as i64);
    if report.rows.len() < 2 {
        return Err(Error::Sweep(format!("only {} of {} spacings solved", report.rows.len(), case.h.len())));
    }
    Ok(())
}

fn invert_sigma(config: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<()> {
    let s = config.invert_sigma.as_ref().ok_or_else(|| Error::Config("missing [invert_sigma]".into()))?;
    let measured = io::read_measurements(&s.measurements)?;
    let mesh = config.mesh()?;
    let patterns = config.patterns()?;
    let background = AnalyticConductivity::constant(s.background);
    let inv = timed(manifest, "setup", || SigmaInversion::new(mesh, background, patterns, measured, s.settings))?;
    let outcome = timed(manifest, "descent", || {
        inv.reconstruct_with(inv.background_field(), |it| {
            eprintln!("n = {:3}  F = {:.6e}  t = {:.3e}", it.n, it.value, it.step)
        })
    })?;
    let mesh = inv.mesh();
    io::write(&out.join("sigma_history.csv"), &io::format_sigma_history(&outcome.history))?;
    io::write(&out.join("sigma_history.gp"), &io::gnuplot_stub("sigma_history.csv", 1, &[(2, "F")], false))?;
    let mut csv = String::from("x,y,sigma\n");
    for n in 0..mesh.node_count() {
        if mesh.kind(n) == NodeKind::Interior {
            let p = mesh.node_point(n);
            csv.push_str(&format!("{},{},{}\n", io::fmt_e17(p[0]), io::fmt_e17(p[1]), io::fmt_e17(outcome.field.value(p))));
        }
    }
    io::write(&out.join("sigma.csv"), &csv)?;
    if config.output.pgm {
        let values = io::interior_values(mesh, |n| outcome.field.value(mesh.node_point(n)));
        io::write(&out.join("sigma.pgm"), &io::format_pgm(mesh.side(), &values))?;
    }
    manifest.result("F", outcome.value);
    manifest.result("iterations", outcome.history.len() as i64);
    manifest.result("stop", format!("{:?}", outcome.stop));
    if let Some(c) = thresholded_centroid(mesh, outcome.field.deviation(), 0.5) {
        manifest.result("centroid", toml::Value::Array(vec![c[0].into(), c[1].into()]));
        if let Some(t) = s.truth_center {
            manifest.result("centroid_distance", ((c[0] - t[0]).powi(2) + (c[1] - t[1]).powi(2)).sqrt());
        }
    }
    Ok(())
}

fn invert_electrodes(config: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<()> {
    let e = config.invert_electrodes.as_ref().ok_or_else(|| Error::Config("missing [invert_electrodes]".into()))?;
    let measured = io::read_measurements(&e.measurements)?;
    let shape = config.shape()?;
    let nominal = config.layout(&shape)?;
    let start = config.electrode_start(e, &shape, &nominal)?;
    let prior = config.electrode_prior(e, &shape, &nominal)?;
    let mesh = config.mesh()?;
    let patterns = config.patterns()?;
    let sigma = config
        .analytic_sigma()
        .ok_or_else(|| Error::Config("electrode reconstruction needs an analytic conductivity".into()))?;
    if e.calibrate {
        let settings = ibcem::inverse::electrodes::ElectrodeSettings { mode: EndpointMode::Free, ..e.settings };
        let free = ElectrodeInversion::new(&mesh, sigma.clone(), patterns.clone(), measured.clone(), &start, settings)?;
        let cal = timed(manifest, "calibration", || calibrate_endpoint_signs(&free, free.start(), e.calibration_step, 1e-8))?;
        let mut table = toml::map::Map::new();
        table.insert("signs".into(), toml::Value::Array(vec![cal.signs[0].into(), cal.signs[1].into()]));
        table.insert("agreeing".into(), (cal.agreeing as i64).into());
        table.insert("considered".into(), (cal.considered as i64).into());
        table.insert("step".into(), e.calibration_step.into());
        let terms = cal.samples.iter().map(|s| toml::Value::Array(vec![s.0.into(), s.1.into()])).collect();
        table.insert("term_vs_fd".into(), toml::Value::Array(terms));
        manifest.result("calibration", toml::Value::Table(table));
    }
    let inv = ElectrodeInversion::new(&mesh, sigma, patterns, measured, &start, e.settings)?.with_prior(&prior)?;
    let outcome = timed(manifest, "descent", || {
        inv.reconstruct_with(|it| eprintln!("n = {:3}  F = {:.6e}  |g| = {:.3e}", it.n, it.value, it.gradient_norm))
    })?;
    io::write(&out.join("electrodes_history.csv"), &io::format_electrode_history(&outcome.history))?;
    io::write(
        &out.join("electrodes_history.gp"),
        &io::gnuplot_stub("electrodes_history.csv", 1, &[(2, "F"), (3, "grad norm")], false),
    )?;
    let angles = |v: &[f64]| toml::Value::Array(v.iter().map(|&x| x.into()).collect());
    manifest.result("theta1", angles(outcome.layout.theta1()));
    manifest.result("theta2", angles(outcome.layout.theta2()));
    manifest.result("F", outcome.value);
    manifest.result("iterations", outcome.history.len() as i64);
    manifest.result("stop", format!("{:?}", outcome.stop));
    Ok(())
}

fn dump_mesh(config: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<()> {
    let mesh = timed(manifest, "mesh", || config.mesh())?;
    let mut csv = String::from("x,y,theta,orientation,clamped,electrode\n");
    for bp in mesh.boundary_points() {
        let electrode = bp.electrode.map_or(0, |m| m + 1);
        csv.push_str(&format!(
            "{},{},{},{:?},{},{electrode}\n",
            io::fmt_e17(bp.point[0]),
            io::fmt_e17(bp.point[1]),
            io::fmt_e17(bp.theta),
            bp.orientation,
            bp.clamped
        ));
    }
    io::write(&out.join("boundary_points.csv"), &csv)?;
    if config.output.pgm {
        let values: Vec<Option<f64>> = (0..mesh.node_count())
            .map(|n| match mesh.kind(n) {
                NodeKind::Interior if mesh.is_irregular(n) => Some(0.5),
                NodeKind::Interior => Some(1.0),
                NodeKind::Exterior => Some(0.0),
                NodeKind::Dirichlet => None,
            })
            .collect();
        io::write(&out.join("mesh.pgm"), &io::format_pgm(mesh.side(), &values))?;
    }
    let s = mesh.summary();
    println!(
        "cells {}  interior {}  exterior {}  irregular {}  boundary points {}  clamped {}  unknowns {}",
        s.cells, s.interior, s.exterior, s.irregular, s.boundary_points, s.clamped, s.unknowns
    );
    let table = toml::Value::try_from(&s).map_err(|e| Error::Config(e.to_string()))?;
    manifest.result("mesh", table);
    Ok(())
}
