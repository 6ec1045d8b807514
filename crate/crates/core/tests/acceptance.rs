//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `IBCEM_ACCEPTANCE=1,2,11` selects criteria; `IBCEM_ACCEPTANCE_STRICT=1`
//! turns failed criteria into a non-zero exit status (the default only fails
//! on errors and panics, so that `cargo test` reports the numbers).

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ibcem::assembly::{electrode_quadrature, AssembledSystem, GroundMode, SourceData, DEFAULT_EPSILON};
use ibcem::conductivity::AnalyticConductivity;
use ibcem::convergence::{fit_order, run_sweep, Order, SweepCase, SweepReport};
use ibcem::forward::{CurrentPatterns, ForwardProblem, Manufactured};
use ibcem::geometry::{Admittivity, BoundaryShape, ElectrodeLayout, Point};
use ibcem::inverse::add_noise;
use ibcem::inverse::conductivity::{center_inclusion, simulate, thresholded_centroid, SigmaInversion, SigmaSettings};
use ibcem::inverse::electrodes::{calibrate_endpoint_signs, ElectrodeInversion, ElectrodeSettings, ENDPOINT_SIGNS};
use ibcem::mesh::{CartesianMesh, Neighbor, NodeKind};
use ibcem::shapes;
use ibcem::solve::{Factorization, SolverOptions};
use ibcem::Result;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict { pass, detail: detail.into() })
}

fn domains() -> [(&'static str, BoundaryShape); 3] {
    [("omega1", shapes::omega1()), ("omega2", shapes::omega2()), ("omega3", shapes::omega3())]
}

fn reference_mesh(shape: &BoundaryShape, h: f64) -> Result<CartesianMesh> {
    let layout = shapes::standard_layout(shape, Admittivity::constant(1.0));
    CartesianMesh::build(shape, &layout, shapes::REFERENCE_EXTENT, h)
}

fn sweep_h() -> Vec<f64> {
    vec![1.0 / 25.0, 1.0 / 40.0, 1.0 / 60.0, 1.0 / 80.0, 1.0 / 100.0]
}

fn show(o: Option<Order>) -> String {
    o.map_or_else(|| "n/a".into(), |o| o.to_string())
}

fn green_identity() -> Result<Verdict> {
    let t = Instant::now();
    let mesh = reference_mesh(&shapes::omega1(), 1.0 / 50.0)?;
    let eps = DEFAULT_EPSILON;
    let pb = ForwardProblem::new(mesh, &AnalyticConductivity::constant(1.0), GroundMode::FirstElectrode, eps, SolverOptions::default())?;
    let mut e1 = vec![0.0; 16];
    e1[0] = 1.0;
    let sol = pb.solve_raw(&SourceData::currents(pb.mesh(), e1))?;
    let mesh = pb.mesh();
    let mut worst: f64 = 0.0;
    for (k, v) in sol.raw().iter().enumerate() {
        let physical = k >= mesh.grid_unknowns() || mesh.kind(mesh.grid_node(k)) == NodeKind::Interior;
        if physical {
            worst = worst.max((v - 1.0 / eps).abs() * eps);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(worst <= 1e-8 && secs < 5.0, format!("max|x - 1/eps|*eps = {worst:.2e} (<= 1e-8), {secs:.2} s (< 5 s)"))
}

fn constant_kernel() -> Result<Verdict> {
    let eps = DEFAULT_EPSILON;
    let mut worst: f64 = 0.0;
    for (_, shape) in domains() {
        let mesh = reference_mesh(&shape, 1.0 / 50.0)?;
        let sigma = AnalyticConductivity::constant(1.0);
        let ones = vec![1.0; mesh.unknowns()];
        let sys = AssembledSystem::assemble(&mesh, &sigma, GroundMode::FirstElectrode, eps)?;
        let r = sys.matrix().matvec(&ones);
        let e1 = sys.first_electrode_row();
        for (k, v) in r.iter().enumerate() {
            // exterior rows next to the outer square see its zero Dirichlet
            // value, which is not part of the constant vector
            let outer = if k < mesh.grid_unknowns() {
                let links = mesh.neighbors(mesh.grid_node(k));
                links.iter().filter(|l| l.neighbor == Neighbor::Dirichlet).count() as f64
            } else {
                0.0
            };
            let expect = if k == e1 { eps } else { outer };
            worst = worst.max((v - expect).abs());
        }
        let sys = AssembledSystem::assemble(&mesh, &sigma, GroundMode::MeanFree, eps)?;
        let r = sys.matrix().matvec(&ones);
        for m in 0..16 {
            worst = worst.max((r[e1 + m] - 16.0 * eps).abs());
        }
    }
    verdict(worst <= 1e-12, format!("max row deviation {worst:.2e} over omega1-3, both ground modes (<= 1e-12)"))
}

fn monotonicity() -> Result<Verdict> {
    let t = Instant::now();
    let shape = BoundaryShape::disk(0.5)?;
    let layout = shapes::four_electrode_disk_layout(Admittivity::constant(1.0));
    let mut cells = 40;
    let mesh = loop {
        let mesh = CartesianMesh::with_cells(&shape, &layout, shapes::UNIT_EXTENT, cells)?;
        if mesh.unknowns() <= 2000 {
            break mesh;
        }
        cells -= 2;
    };
    let sys = AssembledSystem::assemble(&mesh, &AnalyticConductivity::constant(1.0), GroundMode::FirstElectrode, 1.0)?;
    let lu = Factorization::new(sys.matrix(), SolverOptions::default())?;
    let n = mesh.unknowns();
    let mut min = f64::INFINITY;
    for chunk in (0..n).collect::<Vec<_>>().chunks(256) {
        let rhs: Vec<Vec<f64>> = chunk
            .iter()
            .map(|&j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                e
            })
            .collect();
        for col in lu.solve_many(&rhs)? {
            min = col.iter().copied().fold(min, f64::min);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        min >= -1e-10 && secs < 60.0,
        format!("{n} unknowns ({cells} cells), eps = 1: min entry of A^-1 = {min:.3e} (>= -1e-10), {secs:.1} s"),
    )
}

fn convergence_rates() -> Result<Verdict> {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, shape) in domains() {
        let case = SweepCase {
            layout: shapes::standard_layout(&shape, Admittivity::constant(1.0)),
            shape,
            extent: shapes::REFERENCE_EXTENT,
            sigma: AnalyticConductivity::constant(1.0),
            field: Manufactured::SinXy,
            potentials: vec![0.0; 16],
            h: sweep_h(),
            ground: GroundMode::FirstElectrode,
            epsilon: DEFAULT_EPSILON,
            solver: SolverOptions::default(),
        };
        let r = run_sweep(&case)?;
        let ok = r.failures.is_empty()
            && r.order_u.is_some_and(|o| o.at_least(0.8, 0.95))
            && r.order_grad.is_some_and(|o| o.at_least(0.8, 0.95));
        pass &= ok;
        parts.push(format!("{name}: u {} grad {}", show(r.order_u), show(r.order_grad)));
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= secs < 600.0;
    verdict(pass, format!("{}; {secs:.0} s (need order >= 0.8, r2 >= 0.95, < 600 s)", parts.join("; ")))
}

fn admittivity_models() -> Result<Verdict> {
    let mut reports: Vec<SweepReport> = Vec::new();
    for adm in [Admittivity::constant(1.0), Admittivity::smooth(1.0)] {
        let case = SweepCase {
            layout: shapes::four_electrode_disk_layout(adm),
            shape: BoundaryShape::disk(0.5)?,
            extent: shapes::UNIT_EXTENT,
            sigma: AnalyticConductivity::constant(1.0),
            field: Manufactured::ExpR2,
            potentials: vec![0.5 * 0.25f64.exp(); 4],
            h: vec![1.0 / 50.0, 1.0 / 100.0, 1.0 / 150.0],
            ground: GroundMode::FirstElectrode,
            epsilon: DEFAULT_EPSILON,
            solver: SolverOptions::default(),
        };
        reports.push(run_sweep(&case)?);
    }
    let (c, s) = (&reports[0], &reports[1]);
    let orders = c.order_u.is_some_and(|o| o.at_least(0.8, 0.0)) && s.order_u.is_some_and(|o| o.at_least(0.8, 0.0));
    let same_rows = c.rows.len() == 3 && s.rows.len() == 3;
    let ratio = c
        .rows
        .iter()
        .zip(&s.rows)
        .map(|(a, b)| (a.err_u_inf / b.err_u_inf).max(b.err_u_inf / a.err_u_inf))
        .fold(1.0, f64::max);
    verdict(
        orders && same_rows && ratio <= 3.0,
        format!(
            "u order classical {} smooth {}; worst per-h amplitude ratio {ratio:.2} (<= 3); grad u orders {} / {}",
            show(c.order_u),
            show(s.order_u),
            show(c.order_grad),
            show(s.order_grad)
        ),
    )
}

/// Errors at or below this level count as reproduced exactly.
const ROUND_OFF: f64 = 1e-10;

fn compatibility() -> Result<Verdict> {
    let shape = shapes::omega1();
    let eps = DEFAULT_EPSILON;
    let h = sweep_h();
    let (mut total, mut mean_free, mut scaled_sum) = (Vec::new(), Vec::new(), Vec::new());
    for &hh in &h {
        let mesh = reference_mesh(&shape, hh)?;
        for ground in [GroundMode::FirstElectrode, GroundMode::MeanFree] {
            let pb = ForwardProblem::new(mesh.clone(), &AnalyticConductivity::constant(1.0), ground, eps, SolverOptions::default())?;
            let mut unit = vec![0.0; 16];
            unit[0] = 1.0;
            let u = pb.solve_raw(&SourceData::currents(pb.mesh(), unit))?;
            match ground {
                GroundMode::FirstElectrode => {
                    total.push((eps * u.electrodes()[0] - 1.0).abs());
                    let mut pair = vec![0.0; 16];
                    pair[0] = 1.0;
                    pair[5] = -1.0;
                    let w = pb.solve_raw(&SourceData::currents(pb.mesh(), pair))?;
                    mean_free.push((eps * w.electrodes()[0]).abs());
                }
                GroundMode::MeanFree => {
                    let sum: f64 = u.electrodes().iter().sum();
                    scaled_sum.push((16.0 * eps * sum - 1.0).abs());
                }
            }
        }
    }
    let exact = total.iter().all(|&e| e <= ROUND_OFF);
    let first = if exact { Ok(Order::Exact) } else { fit_order(&h, &total) };
    let second = fit_order(&h, &mean_free)?;
    let third = fit_order(&h, &scaled_sum)?;
    let pass = first.as_ref().is_ok_and(|o| o.at_least(0.8, 0.0)) && second.at_least(0.8, 0.0);
    verdict(
        pass,
        format!(
            "sum I = 1: max|eps U1 - 1| = {:.1e} ({}); mean-free I: |eps U1| {:.1e} -> {:.1e}, order {second}; mean-free ground |eps M sum U - 1| order {third}",
            total.iter().copied().fold(0.0, f64::max),
            first.map_or_else(|e| e.to_string(), |o| o.to_string()),
            mean_free[0],
            mean_free[mean_free.len() - 1]
        ),
    )
}

struct SigmaFixture {
    inversion: SigmaInversion,
}

fn sigma_fixture(delta: f64) -> Result<SigmaFixture> {
    let shape = shapes::omega1();
    let layout = shapes::standard_layout(&shape, Admittivity::constant(1.0));
    let patterns = CurrentPatterns::adjacent(16);
    let s = SigmaSettings::default();
    let fine = CartesianMesh::with_cells(&shape, &layout, shapes::REFERENCE_EXTENT, 301)?;
    let clean = simulate(&fine, &center_inclusion(), &patterns, s.ground, s.epsilon, s.solver)?;
    let data = add_noise(&clean, delta, 1)?;
    let mesh = CartesianMesh::with_cells(&shape, &layout, shapes::REFERENCE_EXTENT, 200)?;
    let inversion = SigmaInversion::new(mesh, AnalyticConductivity::constant(1.0), patterns, data, s)?;
    Ok(SigmaFixture { inversion })
}

fn sigma_descent() -> Result<Verdict> {
    let inv = sigma_fixture(0.0)?.inversion;
    let start = inv.background_field();
    let eval = inv.evaluate(&start)?;
    let d = inv.descent_direction(&eval)?;
    let t = 1e-4;
    let fd = (inv.objective(&start.step(&d.direction, t))? - eval.value) / t;
    let rel = (fd - d.slope).abs() / fd.abs();
    let out = inv.reconstruct(start)?;
    let values: Vec<f64> = out.history.iter().map(|it| it.value).chain([out.value]).collect();
    let monotone = values.windows(2).all(|w| w[1] <= w[0]);
    verdict(
        monotone && rel <= 0.05,
        format!(
            "F {:.4e} -> {:.4e} over {} iterations, non-increasing: {monotone}; slope {:.5e} vs FD {:.5e} (rel {rel:.2e} <= 0.05)",
            values[0],
            out.value,
            out.history.len(),
            d.slope,
            fd
        ),
    )
}

fn sigma_localization() -> Result<Verdict> {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (delta, tol) in [(0.0, 0.2), (0.02, 0.3)] {
        let inv = sigma_fixture(delta)?.inversion;
        let out = inv.reconstruct(inv.background_field())?;
        match thresholded_centroid(inv.mesh(), out.field.deviation(), 0.5) {
            Some(c) => {
                let dist = c[0].hypot(c[1]);
                pass &= dist <= tol;
                parts.push(format!("delta {delta}: centroid ({:.3}, {:.3}), distance {dist:.3} (<= {tol})", c[0], c[1]));
            }
            None => {
                pass = false;
                parts.push(format!("delta {delta}: no positive deviation"));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= secs < 900.0;
    verdict(pass, format!("{}; {secs:.0} s (< 900 s)", parts.join("; ")))
}

fn disk_inversion(truth: &ElectrodeLayout, start: &ElectrodeLayout, cells: usize) -> Result<ElectrodeInversion> {
    let shape = BoundaryShape::disk(0.5)?;
    let mesh = CartesianMesh::with_cells(&shape, truth, shapes::UNIT_EXTENT, cells)?;
    let patterns = CurrentPatterns::adjacent(4);
    let s = ElectrodeSettings::default();
    let pb = ForwardProblem::new(mesh.clone(), &AnalyticConductivity::constant(1.0), s.ground, s.epsilon, s.solver)?;
    let (data, _) = pb.solve_patterns(&patterns)?;
    ElectrodeInversion::new(&mesh, AnalyticConductivity::constant(1.0), patterns, data, start, s)
}

fn electrode_recovery() -> Result<Verdict> {
    let base = shapes::four_electrode_disk_layout(Admittivity::constant(1.0));
    let mut pass = true;
    let mut parts = Vec::new();
    for row in 0..2 {
        let (mut t1, mut t2) = (base.theta1().to_vec(), base.theta2().to_vec());
        if row == 1 {
            t1[0] = -3.141592;
            t2[0] = -2.64;
        }
        let truth = base.with_angles(t1.clone(), t2.clone())?;
        let (mut s1, mut s2) = (t1.clone(), t2.clone());
        // perturbed parameter index in [Θ¹, Θ²]
        let k = if row == 0 {
            s1[0] = -3.141592;
            0
        } else {
            s2[0] = -1.85619;
            4
        };
        let start = base.with_angles(s1, s2)?;
        let inv = disk_inversion(&truth, &start, 200)?;
        let out = inv.reconstruct()?;
        let got: Vec<f64> = out.layout.theta1().iter().chain(out.layout.theta2()).copied().collect();
        let want: Vec<f64> = t1.iter().chain(&t2).copied().collect();
        let err = (got[k] - want[k]).abs();
        let drift = (0..8).filter(|&j| j != 0 && j != 4).map(|j| (got[j] - want[j]).abs()).fold(0.0, f64::max);
        pass &= err <= 5e-3 && drift < 1e-3;
        parts.push(format!(
            "row {}: recovered {:.6} vs {:.6} (err {err:.2e} <= 5e-3), other electrodes moved {drift:.2e} (< 1e-3), {:?} after {}",
            row + 1,
            got[k],
            want[k],
            out.stop,
            out.history.len()
        ));
    }
    verdict(pass, parts.join("; "))
}

fn sampling_gradient() -> Result<Verdict> {
    let truth = shapes::four_electrode_disk_layout(Admittivity::constant(1.0));
    let mut s1 = truth.theta1().to_vec();
    s1[0] = -3.141592;
    let start = truth.with_angles(s1, truth.theta2().to_vec())?;
    let inv = disk_inversion(&truth, &start, 200)?;
    let cal = calibrate_endpoint_signs(&inv, inv.start(), 1e-4, 1e-8)?;
    let eval = inv.evaluate(inv.start())?;
    let g = inv.sampling_gradient(&eval)?;
    let fd = inv.finite_difference_gradient(inv.start(), 1e-4)?;
    let mut worst: f64 = 0.0;
    let mut considered = 0;
    for (a, b) in g.iter().zip(&fd) {
        if b.abs() > 1e-8 {
            considered += 1;
            worst = worst.max((a - b).abs() / b.abs());
        }
    }
    let rel: Vec<String> = g.iter().zip(&fd).map(|(a, b)| format!("{:.3}", (a - b).abs() / b.abs())).collect();
    verdict(
        worst <= 0.1 && cal.signs == ENDPOINT_SIGNS,
        format!(
            "calibrated signs {:?} ({} of {} components agree), worst relative error {worst:.3} over {considered} components (<= 0.1); per component [{}]",
            cal.signs,
            cal.agreeing,
            cal.considered,
            rel.join(", ")
        ),
    )
}

fn affine_flux() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst, mut worst_normal): (f64, f64) = (0.0, 0.0);
    for (_, shape) in domains() {
        let mesh = reference_mesh(&shape, 1.0 / 50.0)?;
        let sys = AssembledSystem::assemble(&mesh, &AnalyticConductivity::constant(1.0), GroundMode::FirstElectrode, DEFAULT_EPSILON)?;
        let (a, bx, cy): (f64, f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let u = |p: Point| a + bx * p[0] + cy * p[1];
        let potentials: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut x = vec![0.0; mesh.unknowns()];
        for (k, &node) in mesh.grid_nodes().iter().enumerate() {
            x[k] = u(mesh.node_point(node));
        }
        for (b, bp) in mesh.boundary_points().iter().enumerate() {
            x[mesh.unknown_of_boundary(b)] = u(bp.point);
        }
        for (m, v) in potentials.iter().enumerate() {
            x[mesh.unknown_of_electrode(m)] = *v;
        }
        let quad = (0..16).map(|m| electrode_quadrature(&mesh, m)).collect::<Result<Vec<_>>>()?;
        let nb = mesh.boundary_points().len();
        for _ in 0..100 {
            let b = rng.gen_range(0..nb);
            let bp = mesh.boundary_point(b);
            let mut g = bx * bp.normal[0] + cy * bp.normal[1];
            if let Some(m) = bp.electrode {
                let i = quad[m].points.iter().position(|&p| p == b).expect("member point");
                g += quad[m].robin(i) * (u(bp.point) - potentials[m]);
            }
            // the assembled row is the normal-derivative residual times the
            // ray length, which is tiny where a boundary point sits next to
            // a grid node
            let normal = sys.flux_residual(&mesh, b, &x, g);
            worst = worst.max((normal * sys.stencils()[b].ray_length).abs());
            worst_normal = worst_normal.max(normal.abs());
        }
    }
    verdict(
        worst <= 1e-12,
        format!(
            "max assembled flux-row residual {worst:.2e} over 3 x 100 boundary points (<= 1e-12); unscaled normal-derivative residual {worst_normal:.2e}"
        ),
    )
}

fn quadrature_weights() -> Result<Verdict> {
    let shape = shapes::omega1();
    let layout = shapes::standard_layout(&shape, Admittivity::constant(1.0));
    let lengths: Vec<f64> = layout.arcs(&shape).iter().map(|a| a.length).collect();
    let h = sweep_h();
    let mut err = Vec::new();
    for &hh in &h {
        let mesh = CartesianMesh::build(&shape, &layout, shapes::REFERENCE_EXTENT, hh)?;
        let mut worst: f64 = 0.0;
        for (m, len) in lengths.iter().enumerate() {
            let q = electrode_quadrature(&mesh, m)?;
            worst = worst.max((q.weights.iter().sum::<f64>() - len).abs());
        }
        err.push(worst);
    }
    let order = if err.iter().all(|&e| e <= ROUND_OFF) { Order::Exact } else { fit_order(&h, &err)? };
    let detail: Vec<String> = err.iter().map(|e| format!("{e:.2e}")).collect();
    verdict(order.at_least(1.0, 0.0), format!("max |sum w - |E_m|| = [{}], order {order} (>= 1)", detail.join(", ")))
}

fn main() {
    let selected: Option<Vec<usize>> = std::env::var("IBCEM_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let strict = std::env::var("IBCEM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let criteria: [(usize, &str, fn() -> Result<Verdict>); 12] = [
        (1, "green identity", green_identity),
        (2, "constant kernel", constant_kernel),
        (3, "monotonicity", monotonicity),
        (4, "convergence rates", convergence_rates),
        (5, "classical vs smooth admittivity", admittivity_models),
        (6, "compatibility", compatibility),
        (7, "sigma descent", sigma_descent),
        (8, "sigma localization", sigma_localization),
        (9, "electrode recovery", electrode_recovery),
        (10, "sampling gradient", sampling_gradient),
        (11, "affine flux", affine_flux),
        (12, "quadrature weights", quadrature_weights),
    ];
    let (mut failed, mut broken) = (0, 0);
    for (n, name, run) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let line = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(Ok(v)) => {
                failed += usize::from(!v.pass);
                format!("{} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail)
            }
            Ok(Err(e)) => {
                broken += 1;
                format!("ERROR {e}")
            }
            Err(_) => {
                broken += 1;
                "ERROR panicked".to_string()
            }
        };
        println!("criterion {n:2} ({name}): {line} [{:.1} s]", t.elapsed().as_secs_f64());
    }
    println!("acceptance: {failed} failed, {broken} errors");
    if broken > 0 || (strict && failed > 0) {
        std::process::exit(1);
    }
}

