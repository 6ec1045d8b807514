//! Refinement sweeps against manufactured solutions.

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;

use crate::assembly::GroundMode;
use crate::conductivity::AnalyticConductivity;
use crate::error::{Error, Result};
use crate::forward::{manufacture_sources, numerical_gradient, ExactField, ForwardProblem, ForwardSolution, Manufactured};
use crate::geometry::{BoundaryShape, ElectrodeLayout};
use crate::mesh::{CartesianMesh, Extent, NodeKind};
use crate::solve::SolverOptions;

/// Errors at or below this are treated as exact when fitting orders.
pub const EXACT_THRESHOLD: f64 = 1e-13;

/// One refinement study.
#[derive(Clone, Debug)]
pub struct SweepCase {
    pub shape: BoundaryShape,
    pub layout: ElectrodeLayout,
    pub extent: Extent,
    pub sigma: AnalyticConductivity,
    pub field: Manufactured,
    pub potentials: Vec<f64>,
    /// Grid spacings, strictly decreasing.
    pub h: Vec<f64>,
    pub ground: GroundMode,
    pub epsilon: f64,
    pub solver: SolverOptions,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub h: f64,
    /// Max over interior nodes and boundary points.
    pub err_u_inf: f64,
    /// Grid L² over interior nodes.
    pub err_u_l2: f64,
    /// Max over regular interior nodes.
    pub err_grad_inf: f64,
    /// Max over all interior nodes.
    pub err_grad_all: f64,
    pub err_electrodes: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepFailure {
    pub h: f64,
    pub message: String,
}

/// Fitted convergence order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Order {
    /// All errors at round-off level.
    Exact,
    Fitted { slope: f64, r2: f64 },
}

impl Order {
    /// True for `Exact` or a fit with slope ≥ `order` and r² ≥ `r2`.
    pub fn at_least(&self, order: f64, r2: f64) -> bool {
        match *self {
            Order::Exact => true,
            Order::Fitted { slope, r2: q } => slope >= order && q >= r2,
        }
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Order::Exact => write!(f, "exact"),
            Order::Fitted { slope, r2 } => write!(f, "{slope:.3} (r2 = {r2:.3})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
    pub order_u: Option<Order>,
    pub order_u_l2: Option<Order>,
    pub order_grad: Option<Order>,
}

impl SweepReport {
    pub fn summary(&self) -> String {
        let show = |o: &Option<Order>| o.map_or_else(|| "n/a".to_string(), |o| o.to_string());
        let mut s = format!(
            "rows: {}\nfailures: {}\norder u (max): {}\norder u (L2): {}\norder grad u (max, regular nodes): {}\n",
            self.rows.len(),
            self.failures.len(),
            show(&self.order_u),
            show(&self.order_u_l2),
            show(&self.order_grad)
        );
        for fail in &self.failures {
            s.push_str(&format!("failed at h = {}: {}\n", fail.h, fail.message));
        }
        s
    }
}

/// Least-squares slope of `log err` against `log h`.
pub fn fit_order(h: &[f64], err: &[f64]) -> Result<Order> {
    if h.len() != err.len() || h.len() < 3 {
        return Err(Error::Dimension(format!("need at least 3 (h, error) pairs, got {}", h.len().min(err.len()))));
    }
    if err.iter().all(|&e| e <= EXACT_THRESHOLD) {
        return Ok(Order::Exact);
    }
    if h.iter().chain(err).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Dimension("errors and spacings must be positive".into()));
    }
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Dimension("all spacings are equal".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).min(1.0) };
    Ok(Order::Fitted { slope, r2 })
}

/// Errors of a grounded solution against `(u, U) − U₁`.
pub fn measure_errors(
    mesh: &CartesianMesh,
    sol: &ForwardSolution,
    field: &dyn ExactField,
    potentials: &[f64],
) -> SweepRow {
    let shift = potentials.first().copied().unwrap_or(0.0);
    let grad = numerical_gradient(mesh, sol);
    let mut row = SweepRow {
        h: mesh.h(),
        err_u_inf: 0.0,
        err_u_l2: 0.0,
        err_grad_inf: 0.0,
        err_grad_all: 0.0,
        err_electrodes: 0.0,
        seconds: 0.0,
    };
    let mut l2 = 0.0;
    for node in 0..mesh.node_count() {
        if mesh.kind(node) != NodeKind::Interior {
            continue;
        }
        let p = mesh.node_point(node);
        let e = (sol.node_value(mesh, node) - (field.value(p) - shift)).abs();
        row.err_u_inf = row.err_u_inf.max(e);
        l2 += e * e;
        if let Some(g) = grad[node] {
            let ge = field.gradient(p);
            let eg = (g[0] - ge[0]).hypot(g[1] - ge[1]);
            row.err_grad_all = row.err_grad_all.max(eg);
            if !mesh.is_irregular(node) {
                row.err_grad_inf = row.err_grad_inf.max(eg);
            }
        }
    }
    row.err_u_l2 = (l2 * mesh.h() * mesh.h()).sqrt();
    for (b, bp) in mesh.boundary_points().iter().enumerate() {
        let e = (sol.boundary_value(b) - (field.value(bp.point) - shift)).abs();
        row.err_u_inf = row.err_u_inf.max(e);
    }
    for (u, exact) in sol.electrodes().iter().zip(potentials) {
        row.err_electrodes = row.err_electrodes.max((u - (exact - shift)).abs());
    }
    row
}

fn run_one(case: &SweepCase, h: f64) -> Result<SweepRow> {
    let start = Instant::now();
    let mesh = CartesianMesh::build(&case.shape, &case.layout, case.extent, h)?;
    let problem = ForwardProblem::new(mesh, &case.sigma, case.ground, case.epsilon, case.solver)?;
    let src = manufacture_sources(problem.mesh(), &case.sigma, &case.field, &case.potentials)?;
    let sol = problem.solve(&src)?;
    let seconds = start.elapsed().as_secs_f64();
    let mut row = measure_errors(problem.mesh(), &sol, &case.field, &case.potentials);
    row.seconds = seconds;
    Ok(row)
}

/// Runs every spacing (in parallel), recording failures and fitting orders
/// on the successful rows.
pub fn run_sweep(case: &SweepCase) -> Result<SweepReport> {
    if case.h.windows(2).any(|w| w[1] >= w[0]) || case.h.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::Config("h list must be positive and strictly decreasing".into()));
    }
    let results: Vec<(f64, Result<SweepRow>)> = case.h.par_iter().map(|&h| (h, run_one(case, h))).collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (h, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(SweepFailure { h, message: e.to_string() }),
        }
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let fit = |f: fn(&SweepRow) -> f64| {
        let e: Vec<f64> = rows.iter().map(f).collect();
        fit_order(&hs, &e).ok()
    };
    Ok(SweepReport {
        order_u: fit(|r| r.err_u_inf),
        order_u_l2: fit(|r| r.err_u_l2),
        order_grad: fit(|r| r.err_grad_inf),
        rows,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::DEFAULT_EPSILON;
    use crate::geometry::Admittivity;
    use crate::shapes;

    fn slope(o: Order) -> f64 {
        match o {
            Order::Fitted { slope, .. } => slope,
            Order::Exact => f64::INFINITY,
        }
    }

    #[test]
    fn exact_power_laws() {
        let h = [0.1, 0.05, 0.025, 0.0125];
        let lin: Vec<f64> = h.iter().map(|v| 3.0 * v).collect();
        let quad: Vec<f64> = h.iter().map(|v| 0.5 * v * v).collect();
        assert!((slope(fit_order(&h, &lin).unwrap()) - 1.0).abs() < 1e-12);
        assert!((slope(fit_order(&h, &quad).unwrap()) - 2.0).abs() < 1e-12);
        assert_eq!(fit_order(&h, &[0.0; 4]).unwrap(), Order::Exact);
        assert!(fit_order(&h[..2], &lin[..2]).is_err());
    }

    #[test]
    fn noisy_linear_fit() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let h: Vec<f64> = (0..8).map(|k| 0.1 / 1.5f64.powi(k)).collect();
        let e: Vec<f64> = h.iter().map(|v| v * (1.0 + rng.gen_range(-0.1..0.1))).collect();
        let s = slope(fit_order(&h, &e).unwrap());
        assert!((0.85..=1.15).contains(&s), "{s}");
    }

    #[test]
    fn constant_field_is_exact() {
        let shape = BoundaryShape::disk(0.5).unwrap();
        let case = SweepCase {
            layout: shapes::four_electrode_disk_layout(Admittivity::constant(1.0)),
            shape,
            extent: shapes::UNIT_EXTENT,
            sigma: AnalyticConductivity::constant(1.0),
            field: Manufactured::Constant { value: 0.7 },
            potentials: vec![0.7; 4],
            h: vec![1.0 / 20.0, 1.0 / 30.0, 1.0 / 40.0],
            ground: GroundMode::FirstElectrode,
            epsilon: DEFAULT_EPSILON,
            solver: SolverOptions::default(),
        };
        let rep = run_sweep(&case).unwrap();
        assert!(rep.failures.is_empty());
        for r in &rep.rows {
            assert!(r.err_u_inf < 1e-8 && r.err_grad_all < 1e-8 && r.err_electrodes < 1e-8, "{r:?}");
        }
    }

    #[test]
    fn failures_are_recorded() {
        let shape = shapes::omega1();
        let case = SweepCase {
            layout: shapes::standard_layout(&shape, Admittivity::constant(1.0)),
            shape,
            extent: shapes::REFERENCE_EXTENT,
            sigma: AnalyticConductivity::constant(1.0),
            field: Manufactured::SinXy,
            potentials: vec![0.0; 16],
            // 0.3 does not divide the square, 1.0 leaves no margin
            h: vec![1.0, 0.3, 0.1],
            ground: GroundMode::FirstElectrode,
            epsilon: DEFAULT_EPSILON,
            solver: SolverOptions::default(),
        };
        let rep = run_sweep(&case).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(rep.failures.len(), 2);
        assert!(rep.order_u.is_none());
        assert!(run_sweep(&SweepCase { h: vec![0.1, 0.2], ..case }).is_err());
    }
}
