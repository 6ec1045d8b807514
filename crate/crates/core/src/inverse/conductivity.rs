//! Tikhonov-regularized conductivity reconstruction with an H¹ descent
//! direction and a golden-section line search.

use serde::{Deserialize, Serialize};

use crate::assembly::{GroundMode, DEFAULT_EPSILON};
use crate::conductivity::{AnalyticConductivity, Conductivity, Inclusion, NodeField};
use crate::error::{Error, Result};
use crate::forward::{numerical_gradient, CurrentPatterns, ForwardProblem, ForwardSolution, Measurements};
use crate::geometry::Point;
use crate::inverse::{adjoint_currents, check_shape, golden_section, misfit};
use crate::mesh::{CartesianMesh, Neighbor, NodeKind};
use crate::solve::{Factorization, LuPattern, SolverOptions};
use crate::sparse::SparseMatrix;

/// How the L² gradient density fed to the H¹ Riesz map is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientKind {
    /// Exact derivative of the discrete objective: one transposed solve per
    /// pattern and the derivative of every five-point row in σ.
    Discrete,
    /// `Σ_p ∇u^p·∇w^p` from numerical gradients of the forward and adjoint
    /// fields.
    Sampling,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaSettings {
    /// Weight of the H¹ penalty.
    pub regularization: f64,
    /// Stop when `|ΔF| < tau_stop·‖δσ‖_{L²}`.
    pub tau_stop: f64,
    pub max_iterations: usize,
    /// Upper end of the line-search interval.
    pub t_max: f64,
    pub sigma_min: f64,
    /// Final golden-section bracket relative to the interval.
    pub line_search_rtol: f64,
    pub gradient: GradientKind,
    pub ground: GroundMode,
    pub epsilon: f64,
    pub solver: SolverOptions,
}

impl Default for SigmaSettings {
    fn default() -> Self {
        Self {
            regularization: 1e-4,
            tau_stop: 1e-8,
            max_iterations: 20,
            t_max: 10.0,
            sigma_min: 1e-3,
            line_search_rtol: 1e-3,
            gradient: GradientKind::Discrete,
            ground: GroundMode::FirstElectrode,
            epsilon: DEFAULT_EPSILON,
            solver: SolverOptions::default(),
        }
    }
}

/// Background 1 with one bump of amplitude 1 and radius 0.5 at the origin.
pub fn center_inclusion() -> AnalyticConductivity {
    AnalyticConductivity::Inclusions {
        background: 1.0,
        inclusions: vec![Inclusion { center: [0.0, 0.0], radius: 0.5, amplitude: 1.0 }],
    }
}

/// Grounded measurements for every pattern.
pub fn simulate(
    mesh: &CartesianMesh,
    sigma: &dyn Conductivity,
    patterns: &CurrentPatterns,
    ground: GroundMode,
    epsilon: f64,
    solver: SolverOptions,
) -> Result<Measurements> {
    let problem = ForwardProblem::new(mesh.clone(), sigma, ground, epsilon, solver)?;
    Ok(problem.solve_patterns(patterns)?.0)
}

/// Forward state at one conductivity.
#[derive(Debug)]
pub struct Evaluation {
    pub field: NodeField,
    pub value: f64,
    pub misfit: f64,
    pub regularization: f64,
    pub measurements: Measurements,
    solutions: Vec<ForwardSolution>,
    problem: ForwardProblem,
}

impl Evaluation {
    pub fn solutions(&self) -> &[ForwardSolution] {
        &self.solutions
    }

    pub fn problem(&self) -> &ForwardProblem {
        &self.problem
    }
}

/// Descent direction `v` (per grid node, zero off the interior) and the
/// predicted slope `dF/dt = −‖v‖²_{H¹}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Descent {
    pub direction: Vec<f64>,
    pub slope: f64,
    /// Discrete L² norm of `v`.
    pub norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaIteration {
    pub n: usize,
    pub value: f64,
    pub step: f64,
    pub norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// `|ΔF| < τ‖δσ‖`.
    Converged,
    /// The direction vanished.
    ZeroDirection,
    /// No step on the line-search interval lowered F.
    NoDecrease,
    IterationLimit,
}

#[derive(Clone, Debug)]
pub struct SigmaOutcome {
    pub field: NodeField,
    pub value: f64,
    pub history: Vec<SigmaIteration>,
    pub stop: StopReason,
}

/// Reconstruction problem on one grid.
#[derive(Debug)]
pub struct SigmaInversion {
    mesh: CartesianMesh,
    background: AnalyticConductivity,
    patterns: CurrentPatterns,
    measured: Measurements,
    settings: SigmaSettings,
    interior: Vec<usize>,
    h1: SparseMatrix,
    h1_solver: Factorization,
    pattern: LuPattern,
}

impl SigmaInversion {
    pub fn new(
        mesh: CartesianMesh,
        background: AnalyticConductivity,
        patterns: CurrentPatterns,
        measured: Measurements,
        settings: SigmaSettings,
    ) -> Result<Self> {
        if measured.patterns() != patterns.len() || measured.electrodes() != mesh.electrode_count() {
            return Err(Error::Dimension(format!(
                "measurements are {}x{}, expected {}x{}",
                measured.electrodes(),
                measured.patterns(),
                mesh.electrode_count(),
                patterns.len()
            )));
        }
        if !(settings.regularization >= 0.0 && settings.t_max > 0.0 && settings.sigma_min > 0.0) {
            return Err(Error::Config("regularization must be ≥ 0, t_max and sigma_min > 0".into()));
        }
        let interior: Vec<usize> = (0..mesh.node_count()).filter(|&n| mesh.kind(n) == NodeKind::Interior).collect();
        let mut slot = vec![None; mesh.node_count()];
        for (k, &n) in interior.iter().enumerate() {
            slot[n] = Some(k);
        }
        let h1 = h1_matrix(&mesh, &interior, &slot);
        let h1_solver = Factorization::new(&h1, settings.solver)?;
        let probe = ForwardProblem::new(mesh.clone(), &background, settings.ground, settings.epsilon, settings.solver)?;
        let pattern = LuPattern::new(probe.factorization().matrix())?;
        Ok(Self { mesh, background, patterns, measured, settings, interior, h1, h1_solver, pattern })
    }

    pub fn mesh(&self) -> &CartesianMesh {
        &self.mesh
    }

    pub fn settings(&self) -> &SigmaSettings {
        &self.settings
    }

    pub fn background_field(&self) -> NodeField {
        NodeField::zeros(&self.mesh, self.background.clone())
    }

    fn gather(&self, per_node: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&n| per_node[n]).collect()
    }

    fn scatter(&self, per_interior: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mesh.node_count()];
        for (&n, v) in self.interior.iter().zip(per_interior) {
            out[n] = *v;
        }
        out
    }

    /// `⟨a, b⟩_{H¹} = h²·aᵀ(I + L)b` over interior nodes, with `L` the
    /// five-point Laplacian that vanishes at boundary points.
    pub fn h1_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let ai = self.gather(a);
        let bi = self.gather(b);
        let h2 = self.mesh.h() * self.mesh.h();
        h2 * ai.iter().zip(self.h1.matvec(&bi)).map(|(x, y)| x * y).sum::<f64>()
    }

    pub fn l2_norm(&self, a: &[f64]) -> f64 {
        self.mesh.h() * self.interior.iter().map(|&n| a[n] * a[n]).sum::<f64>().sqrt()
    }

    fn forward(&self, field: &NodeField) -> Result<ForwardProblem> {
        ForwardProblem::with_pattern(
            self.mesh.clone(),
            field,
            self.settings.ground,
            self.settings.epsilon,
            self.settings.solver,
            &self.pattern,
        )
    }

    pub fn evaluate(&self, field: &NodeField) -> Result<Evaluation> {
        if field.deviation().len() != self.mesh.node_count() {
            return Err(Error::Dimension("conductivity field is on a different grid".into()));
        }
        let problem = self.forward(field)?;
        let (measurements, solutions) = problem.solve_patterns(&self.patterns)?;
        let misfit = misfit(&measurements, &self.measured)?;
        let d = field.deviation();
        let regularization = 0.5 * self.settings.regularization * self.h1_inner(d, d);
        Ok(Evaluation {
            field: field.clone(),
            value: misfit + regularization,
            misfit,
            regularization,
            measurements,
            solutions,
            problem,
        })
    }

    pub fn objective(&self, field: &NodeField) -> Result<f64> {
        Ok(self.evaluate(field)?.value)
    }

    /// `v = (I + L)⁻¹ G − ϵ·(σ − σ_★)` with `G` the L² gradient density of
    /// the misfit (see [`GradientKind`]), so that `dF/dt = −‖v‖²_{H¹}`.
    pub fn descent_direction(&self, eval: &Evaluation) -> Result<Descent> {
        check_shape(&eval.measurements, &self.measured)?;
        let currents = adjoint_currents(&eval.measurements, &self.measured)?;
        let density = match self.settings.gradient {
            GradientKind::Discrete => self.discrete_density(eval, &currents)?,
            GradientKind::Sampling => self.sampling_density(eval, currents)?,
        };
        let riesz = self.h1_solver.solve(&density)?;
        let d = self.gather(eval.field.deviation());
        let v: Vec<f64> = riesz.iter().zip(&d).map(|(r, d)| r - self.settings.regularization * d).collect();
        let direction = self.scatter(&v);
        let slope = -self.h1_inner(&direction, &direction);
        let norm = self.l2_norm(&direction);
        Ok(Descent { direction, slope, norm })
    }

    fn sampling_density(&self, eval: &Evaluation, currents: Vec<Vec<f64>>) -> Result<Vec<f64>> {
        let (_, ws) = eval.problem.solve_patterns(&CurrentPatterns { columns: currents })?;
        let mut density = vec![0.0; self.interior.len()];
        for (u, w) in eval.solutions.iter().zip(&ws) {
            let gu = numerical_gradient(&self.mesh, u);
            let gw = numerical_gradient(&self.mesh, w);
            for (k, &n) in self.interior.iter().enumerate() {
                if let (Some(a), Some(b)) = (gu[n], gw[n]) {
                    density[k] += a[0] * b[0] + a[1] * b[1];
                }
            }
        }
        Ok(density)
    }

    /// `−(1/h²)·∂F/∂σ_n`. With `λ = A₁⁻ᵀĨ` (the ground shift of `A₁` does
    /// not see `λ` because `λ_{E₁} = 0`), `∂F/∂σ_n = −λᵀ(∂A/∂σ_n)x`, and only
    /// the five-point rows depend on nodal σ: the edge between nodes `k` and
    /// `j` carries `½(σ_k + σ_j)`, an edge to a boundary point `½σ_k`.
    fn discrete_density(&self, eval: &Evaluation, currents: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mesh = &self.mesh;
        let h = mesh.h();
        let mut slot = vec![usize::MAX; mesh.node_count()];
        for (k, &n) in self.interior.iter().enumerate() {
            slot[n] = k;
        }
        let mut density = vec![0.0; self.interior.len()];
        for (sol, current) in eval.solutions.iter().zip(currents) {
            let mut rhs = vec![0.0; mesh.unknowns()];
            for (m, c) in current.iter().enumerate() {
                rhs[mesh.unknown_of_electrode(m)] = *c;
            }
            let lambda = eval.problem.factorization().solve_transpose(&rhs)?;
            let x = sol.raw();
            for (k, &n) in self.interior.iter().enumerate() {
                let row = mesh.unknown_of_node(n).expect("interior unknown");
                let lk = lambda[row];
                if lk == 0.0 {
                    continue;
                }
                for link in mesh.neighbors(n) {
                    let other = match link.neighbor {
                        Neighbor::Node(j) => x[mesh.unknown_of_node(j).expect("grid unknown")],
                        Neighbor::Boundary(b) => x[mesh.unknown_of_boundary(b)],
                        Neighbor::Dirichlet => 0.0,
                    };
                    let c = 0.5 * lk * (h / link.distance) * (x[row] - other) / (h * h);
                    density[k] += c;
                    if let Neighbor::Node(j) = link.neighbor {
                        if slot[j] != usize::MAX {
                            density[slot[j]] += c;
                        }
                    }
                }
            }
        }
        Ok(density)
    }

    /// Largest step keeping every nodal conductivity above `sigma_min`,
    /// capped by `t_max`.
    pub fn step_bound(&self, field: &NodeField, direction: &[f64]) -> f64 {
        let mut t = self.settings.t_max;
        for &n in &self.interior {
            let v = direction[n];
            if v < 0.0 {
                let s = field.value(self.mesh.node_point(n));
                t = t.min(((s - self.settings.sigma_min) / -v).max(0.0));
            }
        }
        t
    }

    fn check_positive(&self, field: &NodeField) -> Result<()> {
        for &n in &self.interior {
            let p = self.mesh.node_point(n);
            let v = field.value(p);
            if !(v >= self.settings.sigma_min * (1.0 - 1e-12)) {
                return Err(Error::NonPositiveConductivity { value: v, x: p[0], y: p[1] });
            }
        }
        Ok(())
    }

    /// Descent iterations from `start`.
    pub fn reconstruct(&self, start: NodeField) -> Result<SigmaOutcome> {
        self.reconstruct_with(start, |_| {})
    }

    /// Like [`SigmaInversion::reconstruct`], reporting each iteration.
    pub fn reconstruct_with(&self, start: NodeField, mut observe: impl FnMut(&SigmaIteration)) -> Result<SigmaOutcome> {
        self.check_positive(&start)?;
        let mut field = start;
        let mut history = Vec::new();
        let mut value = self.objective(&field)?;
        for n in 0..self.settings.max_iterations {
            let eval = self.evaluate(&field)?;
            value = eval.value;
            let descent = self.descent_direction(&eval)?;
            if descent.norm == 0.0 || descent.slope == 0.0 {
                let rec = SigmaIteration { n, value, step: 0.0, norm: descent.norm };
                observe(&rec);
                history.push(rec);
                return Ok(SigmaOutcome { field, value, history, stop: StopReason::ZeroDirection });
            }
            let t_max = self.step_bound(&field, &descent.direction);
            let (t, next) = if t_max > 0.0 {
                golden_section(
                    |t| self.objective(&field.step(&descent.direction, t)),
                    value,
                    t_max,
                    self.settings.line_search_rtol,
                )?
            } else {
                (0.0, value)
            };
            let rec = SigmaIteration { n, value, step: t, norm: descent.norm };
            observe(&rec);
            history.push(rec);
            if t == 0.0 {
                return Ok(SigmaOutcome { field, value, history, stop: StopReason::NoDecrease });
            }
            field = field.step(&descent.direction, t);
            self.check_positive(&field)?;
            let change = (value - next).abs();
            value = next;
            if change < self.settings.tau_stop * descent.norm {
                return Ok(SigmaOutcome { field, value, history, stop: StopReason::Converged });
            }
        }
        Ok(SigmaOutcome { field, value, history, stop: StopReason::IterationLimit })
    }
}

/// `I + L` on interior nodes; `L` is `−Δ_h` with zero values at boundary
/// points (scaled by h²: unit off-diagonals between grid neighbours,
/// `h/d` for a boundary neighbour at distance `d`).
fn h1_matrix(mesh: &CartesianMesh, interior: &[usize], slot: &[Option<usize>]) -> SparseMatrix {
    let h = mesh.h();
    let h2 = h * h;
    let rows = interior
        .iter()
        .map(|&n| {
            let k = slot[n].expect("interior node");
            let mut diag = 1.0;
            let mut row = Vec::with_capacity(5);
            for link in mesh.neighbors(n) {
                let w = h / link.distance / h2;
                diag += w;
                if let Neighbor::Node(m) = link.neighbor {
                    if let Some(j) = slot[m] {
                        row.push((j, -w));
                    }
                }
            }
            row.push((k, diag));
            row
        })
        .collect();
    SparseMatrix::from_rows(interior.len(), rows)
}

/// Centroid of the nodes where `deviation ≥ fraction·max(deviation)`;
/// `None` when the maximum is not positive.
pub fn thresholded_centroid(mesh: &CartesianMesh, deviation: &[f64], fraction: f64) -> Option<Point> {
    let max = (0..mesh.node_count())
        .filter(|&n| mesh.kind(n) == NodeKind::Interior)
        .map(|n| deviation[n])
        .fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return None;
    }
    let (mut sx, mut sy, mut count) = (0.0, 0.0, 0usize);
    for n in 0..mesh.node_count() {
        if mesh.kind(n) == NodeKind::Interior && deviation[n] >= fraction * max {
            let p = mesh.node_point(n);
            sx += p[0];
            sy += p[1];
            count += 1;
        }
    }
    Some([sx / count as f64, sy / count as f64])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Admittivity;
    use crate::shapes;

    fn fixture(cells: usize, truth: &AnalyticConductivity) -> SigmaInversion {
        let shape = shapes::omega1();
        let layout = shapes::standard_layout(&shape, Admittivity::constant(1.0));
        let mesh = CartesianMesh::with_cells(&shape, &layout, shapes::REFERENCE_EXTENT, cells).unwrap();
        let patterns = CurrentPatterns::adjacent(16);
        let settings = SigmaSettings { max_iterations: 3, ..SigmaSettings::default() };
        let data = simulate(&mesh, truth, &patterns, settings.ground, settings.epsilon, settings.solver).unwrap();
        SigmaInversion::new(mesh, AnalyticConductivity::constant(1.0), patterns, data, settings).unwrap()
    }

    #[test]
    fn h1_matrix_is_symmetric_positive() {
        let inv = fixture(40, &AnalyticConductivity::constant(1.0));
        let t = inv.h1.transpose();
        for i in 0..inv.h1.rows() {
            let (cols, vals) = inv.h1.row(i);
            for (c, v) in cols.iter().zip(vals) {
                assert_eq!(t.get(i, *c), *v);
            }
        }
        let ones = vec![1.0; inv.mesh.node_count()];
        assert!(inv.h1_inner(&ones, &ones) > inv.l2_norm(&ones).powi(2));
    }

    #[test]
    fn truth_is_a_fixed_point() {
        let inv = fixture(40, &AnalyticConductivity::constant(1.0));
        let eval = inv.evaluate(&inv.background_field()).unwrap();
        assert!(eval.value < 1e-20, "{}", eval.value);
        let d = inv.descent_direction(&eval).unwrap();
        assert!(d.norm <= 1e-8, "{}", d.norm);
        let out = inv.reconstruct(inv.background_field()).unwrap();
        assert!(matches!(out.stop, StopReason::ZeroDirection | StopReason::NoDecrease | StopReason::Converged));
    }

    #[test]
    fn predicted_slope_matches_finite_differences() {
        let inv = fixture(160, &center_inclusion());
        let field = inv.background_field();
        let eval = inv.evaluate(&field).unwrap();
        assert!(eval.value > 0.0);
        let d = inv.descent_direction(&eval).unwrap();
        assert!(d.slope < 0.0);
        for (n, kind) in inv.mesh.kinds().iter().enumerate() {
            if *kind != NodeKind::Interior {
                assert_eq!(d.direction[n], 0.0);
            }
        }
        let t = 1e-4;
        let fd = (inv.objective(&field.step(&d.direction, t)).unwrap() - eval.value) / t;
        assert!((fd - d.slope).abs() < 0.05 * d.slope.abs(), "fd {fd} predicted {}", d.slope);
    }

    #[test]
    fn descent_lowers_the_objective() {
        let inv = fixture(40, &center_inclusion());
        let out = inv.reconstruct(inv.background_field()).unwrap();
        assert!(!out.history.is_empty());
        for w in out.history.windows(2) {
            assert!(w[1].value <= w[0].value);
        }
        assert!(out.value < out.history[0].value);
    }

    #[test]
    fn centroid_of_a_bump() {
        let inv = fixture(40, &AnalyticConductivity::constant(1.0));
        let bump = Inclusion { center: [0.3, -0.2], radius: 0.5, amplitude: 1.0 };
        let dev: Vec<f64> = (0..inv.mesh.node_count()).map(|n| bump.value(inv.mesh.node_point(n))).collect();
        let c = thresholded_centroid(&inv.mesh, &dev, 0.5).unwrap();
        assert!((c[0] - 0.3).abs() < 0.05 && (c[1] + 0.2).abs() < 0.05);
        assert!(thresholded_centroid(&inv.mesh, &vec![0.0; inv.mesh.node_count()], 0.5).is_none());
    }
}
