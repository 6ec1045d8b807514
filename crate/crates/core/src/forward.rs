//! Forward solves: sources, solutions, grounding, gradients and current
//! patterns.

use serde::{Deserialize, Serialize};

use crate::assembly::{electrode_quadrature, AssembledSystem, GroundMode, SourceData};
use crate::conductivity::Conductivity;
use crate::error::{Error, Result};
use crate::geometry::{unwrap_from, Point};
use crate::mesh::{CartesianMesh, Direction, Link, Neighbor, NodeKind};
use crate::quadrature::adaptive_simpson;
use crate::solve::{Factorization, LuPattern, SolverOptions};
use crate::sparse::SparseMatrix;

/// Absolute tolerance of the current integrals of manufactured data.
pub const CURRENT_TOL: f64 = 1e-12;

/// Analytic potential with first and second derivatives.
pub trait ExactField: Sync {
    fn value(&self, p: Point) -> f64;
    fn gradient(&self, p: Point) -> Point;
    fn laplacian(&self, p: Point) -> f64;
}

/// Manufactured potentials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Manufactured {
    /// `sin(xy)`
    SinXy,
    /// `exp(x² + y²)`
    ExpR2,
    /// `x² + y²`
    Quadratic,
    Affine { a: f64, b: f64, c: f64 },
    Constant { value: f64 },
}

impl ExactField for Manufactured {
    fn value(&self, p: Point) -> f64 {
        let [x, y] = p;
        match *self {
            Manufactured::SinXy => (x * y).sin(),
            Manufactured::ExpR2 => (x * x + y * y).exp(),
            Manufactured::Quadratic => x * x + y * y,
            Manufactured::Affine { a, b, c } => a + b * x + c * y,
            Manufactured::Constant { value } => value,
        }
    }

    fn gradient(&self, p: Point) -> Point {
        let [x, y] = p;
        match *self {
            Manufactured::SinXy => {
                let c = (x * y).cos();
                [y * c, x * c]
            }
            Manufactured::ExpR2 => {
                let e = (x * x + y * y).exp();
                [2.0 * x * e, 2.0 * y * e]
            }
            Manufactured::Quadratic => [2.0 * x, 2.0 * y],
            Manufactured::Affine { b, c, .. } => [b, c],
            Manufactured::Constant { .. } => [0.0, 0.0],
        }
    }

    fn laplacian(&self, p: Point) -> f64 {
        let [x, y] = p;
        match *self {
            Manufactured::SinXy => -(x * x + y * y) * (x * y).sin(),
            Manufactured::ExpR2 => {
                let r2 = x * x + y * y;
                (4.0 + 4.0 * r2) * r2.exp()
            }
            Manufactured::Quadratic => 4.0,
            Manufactured::Affine { .. } | Manufactured::Constant { .. } => 0.0,
        }
    }
}

/// Sources for which `(u_exact, U_exact)` solves the continuous problem:
/// `f = −∇·(σ∇u)`, `g = σ∇u·ν (+ ξ(u − U_m) on electrodes)`,
/// `I_m = ∫_{E_m} σ∇u·ν ds`.
pub fn manufacture_sources(
    mesh: &CartesianMesh,
    sigma: &dyn Conductivity,
    field: &dyn ExactField,
    potentials: &[f64],
) -> Result<SourceData> {
    let layout = mesh.layout();
    if potentials.len() != layout.len() {
        return Err(Error::Dimension(format!(
            "{} electrode potentials for {} electrodes",
            potentials.len(),
            layout.len()
        )));
    }
    let mut src = SourceData::zeros(mesh);
    for node in 0..mesh.node_count() {
        if mesh.kind(node) == NodeKind::Interior {
            let p = mesh.node_point(node);
            let gs = sigma.gradient(p);
            let gu = field.gradient(p);
            src.f[node] = -(sigma.value(p) * field.laplacian(p) + gs[0] * gu[0] + gs[1] * gu[1]);
        }
    }
    let mut robin = vec![(0, 0.0); mesh.boundary_points().len()];
    for m in 0..layout.len() {
        let q = electrode_quadrature(mesh, m)?;
        for (i, &b) in q.points.iter().enumerate() {
            robin[b] = (m, q.robin(i));
        }
    }
    for (b, bp) in mesh.boundary_points().iter().enumerate() {
        let gu = field.gradient(bp.point);
        let mut g = sigma.boundary_value(mesh, b) * (gu[0] * bp.normal[0] + gu[1] * bp.normal[1]);
        if bp.electrode.is_some() {
            let (m, xi) = robin[b];
            g += xi * (field.value(bp.point) - potentials[m]);
        }
        src.g[b] = g;
    }
    let shape = mesh.shape();
    for m in 0..layout.len() {
        let flux = |theta: f64| {
            let fr = shape.frame(theta);
            let gu = field.gradient(fr.point);
            sigma.value(fr.point) * (gu[0] * fr.normal[0] + gu[1] * fr.normal[1]) * fr.rho
        };
        src.currents[m] = adaptive_simpson(flux, layout.theta1()[m], layout.theta2()[m], CURRENT_TOL);
    }
    Ok(src)
}

/// `s = ΣI_m + ∫_Ω f + ∫_{gaps} g` with a grid sum for the volume term and
/// an arc-length trapezoid rule over the boundary points for the gaps.
pub fn compatibility_residual(mesh: &CartesianMesh, sources: &SourceData) -> f64 {
    let h2 = mesh.h() * mesh.h();
    let volume: f64 = (0..mesh.node_count())
        .filter(|&n| mesh.kind(n) == NodeKind::Interior)
        .map(|n| sources.f[n])
        .sum::<f64>()
        * h2;
    let bps = mesh.boundary_points();
    let mut order: Vec<usize> = (0..bps.len()).collect();
    order.sort_by(|&a, &b| bps[a].theta.total_cmp(&bps[b].theta));
    let mut gaps = 0.0;
    let k = order.len();
    for idx in 0..k {
        let a = order[idx];
        let b = order[(idx + 1) % k];
        let span = unwrap_from(bps[b].theta, bps[a].theta) - bps[a].theta;
        let ds = 0.5 * (bps[a].rho + bps[b].rho) * span;
        let ga = if bps[a].electrode.is_none() { sources.g[a] } else { 0.0 };
        let gb = if bps[b].electrode.is_none() { sources.g[b] } else { 0.0 };
        gaps += 0.5 * ds * (ga + gb);
    }
    sources.currents.iter().sum::<f64>() + volume + gaps
}

/// Currents with the first entry corrected by the compatibility residual.
pub fn corrected_currents(mesh: &CartesianMesh, sources: &SourceData) -> Vec<f64> {
    let s = compatibility_residual(mesh, sources);
    let mut c = sources.currents.clone();
    if let Some(first) = c.first_mut() {
        *first -= s;
    }
    c
}

/// Solution vector in unknown order: grid unknowns, boundary points, electrodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardSolution {
    values: Vec<f64>,
    grid: usize,
    boundary: usize,
}

impl ForwardSolution {
    pub fn from_raw(mesh: &CartesianMesh, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), mesh.unknowns());
        Self { values, grid: mesh.grid_unknowns(), boundary: mesh.boundary_points().len() }
    }

    pub fn raw(&self) -> &[f64] {
        &self.values
    }

    pub fn grid_values(&self) -> &[f64] {
        &self.values[..self.grid]
    }

    pub fn boundary_values(&self) -> &[f64] {
        &self.values[self.grid..self.grid + self.boundary]
    }

    pub fn electrodes(&self) -> &[f64] {
        &self.values[self.grid + self.boundary..]
    }

    /// Value at a grid node (zero on the outer square).
    pub fn node_value(&self, mesh: &CartesianMesh, node: usize) -> f64 {
        mesh.unknown_of_node(node).map_or(0.0, |k| self.values[k])
    }

    pub fn boundary_value(&self, b: usize) -> f64 {
        self.values[self.grid + b]
    }

    /// Value of the unknown a [`Link`] points to.
    pub fn link_value(&self, mesh: &CartesianMesh, link: &Link) -> f64 {
        match link.neighbor {
            Neighbor::Node(n) => self.node_value(mesh, n),
            Neighbor::Boundary(b) => self.boundary_value(b),
            Neighbor::Dirichlet => 0.0,
        }
    }

    /// Electrode potentials with `U₁` subtracted.
    pub fn grounded_electrodes(&self) -> Vec<f64> {
        let u = self.electrodes();
        u.iter().map(|v| v - u[0]).collect()
    }
}

/// One factorized system, ready for many right-hand sides.
///
/// `A_ε = A₁ − (1 − ε)·u·vᵀ` where `A₁` is the same system with ε = 1, `u`
/// the ground rows and `v` the ground unknowns. `A₁` is factorized and
/// `A_ε⁻¹` is applied through the Sherman–Morrison formula, using
/// `vᵀA₁⁻¹u = 1` (the constant kernel), which keeps the ε-independent part of
/// the solution at full precision for tiny ε.
#[derive(Debug)]
pub struct ForwardProblem {
    mesh: CartesianMesh,
    system: AssembledSystem,
    factorization: Factorization,
    /// `A₁⁻¹u` scaled to 1 at the first electrode: 𝟙 on Ω, the harmonic
    /// extension of 1 outside.
    kernel: Vec<f64>,
}

impl ForwardProblem {
    pub fn new(
        mesh: CartesianMesh,
        sigma: &dyn Conductivity,
        ground: GroundMode,
        epsilon: f64,
        solver: SolverOptions,
    ) -> Result<Self> {
        Self::build(mesh, sigma, ground, epsilon, solver, None)
    }

    /// Like [`ForwardProblem::new`], reusing a symbolic analysis.
    pub fn with_pattern(
        mesh: CartesianMesh,
        sigma: &dyn Conductivity,
        ground: GroundMode,
        epsilon: f64,
        solver: SolverOptions,
        pattern: &LuPattern,
    ) -> Result<Self> {
        Self::build(mesh, sigma, ground, epsilon, solver, Some(pattern))
    }

    fn build(
        mesh: CartesianMesh,
        sigma: &dyn Conductivity,
        ground: GroundMode,
        epsilon: f64,
        solver: SolverOptions,
        pattern: Option<&LuPattern>,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("ground weight must be positive, got {epsilon}")));
        }
        let system = AssembledSystem::assemble(&mesh, sigma, ground, epsilon)?;
        let shifted = shift_ground(&system, mesh.electrode_count(), 1.0 - epsilon);
        let factorization = match pattern {
            Some(p) => Factorization::with_pattern(&shifted, solver, p)?,
            None => Factorization::new(&shifted, solver)?,
        };
        let e1 = system.first_electrode_row();
        let mut u = vec![0.0; mesh.unknowns()];
        match ground {
            GroundMode::FirstElectrode => u[e1] = 1.0,
            GroundMode::MeanFree => u[e1..].iter_mut().for_each(|v| *v = 1.0),
        }
        let mut kernel = factorization.solve(&u)?;
        let scale = kernel[e1];
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Singular("non-finite ground kernel or solution".into()));
        }
        kernel.iter_mut().for_each(|v| *v /= scale);
        Ok(Self { mesh, system, factorization, kernel })
    }

    pub fn mesh(&self) -> &CartesianMesh {
        &self.mesh
    }

    pub fn system(&self) -> &AssembledSystem {
        &self.system
    }

    /// Factorization of the ε = 1 system.
    pub fn factorization(&self) -> &Factorization {
        &self.factorization
    }

    /// `𝟙` on Ω, harmonic outside.
    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    fn ground_dot(&self, y: &[f64]) -> f64 {
        let e1 = self.system.first_electrode_row();
        match self.system.ground() {
            GroundMode::FirstElectrode => y[e1],
            GroundMode::MeanFree => y[e1..].iter().sum(),
        }
    }

    fn finish_raw(&self, y: Vec<f64>) -> Result<ForwardSolution> {
        let eps = self.system.epsilon();
        // A₁⁻¹u = kernel / M in mean-free mode, kernel otherwise
        let m = match self.system.ground() {
            GroundMode::FirstElectrode => 1.0,
            GroundMode::MeanFree => self.mesh.electrode_count() as f64,
        };
        let c = (1.0 - eps) / eps * self.ground_dot(&y) / m;
        let x: Vec<f64> = y.iter().zip(&self.kernel).map(|(a, z)| a + c * z).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("non-finite ground kernel or solution".into()));
        }
        Ok(ForwardSolution::from_raw(&self.mesh, x))
    }

    fn finish_grounded(&self, mut y: Vec<f64>) -> ForwardSolution {
        let e1 = self.system.first_electrode_row();
        let shift = y[e1];
        y.iter_mut().zip(&self.kernel).for_each(|(v, z)| *v -= shift * z);
        y[e1] = 0.0;
        ForwardSolution::from_raw(&self.mesh, y)
    }

    /// Solution of `A_ε x = r(sources)`.
    pub fn solve_raw(&self, sources: &SourceData) -> Result<ForwardSolution> {
        let rhs = self.system.rhs(&self.mesh, sources)?;
        self.finish_raw(self.factorization.solve(&rhs)?)
    }

    /// Solution shifted so that `U₁ = 0`; this is the ε-independent part of
    /// the raw solution and does not involve `1/ε`.
    pub fn solve(&self, sources: &SourceData) -> Result<ForwardSolution> {
        let rhs = self.system.rhs(&self.mesh, sources)?;
        Ok(self.finish_grounded(self.factorization.solve(&rhs)?))
    }

    /// Grounds a raw solution.
    pub fn ground(&self, sol: ForwardSolution) -> ForwardSolution {
        self.finish_grounded(sol.values)
    }

    pub fn solve_currents(&self, currents: &[f64]) -> Result<ForwardSolution> {
        self.solve(&SourceData::currents(&self.mesh, currents.to_vec()))
    }

    /// Grounded solutions for many right-hand sides.
    pub fn solve_many(&self, sources: &[SourceData]) -> Result<Vec<ForwardSolution>> {
        let rhs = sources
            .iter()
            .map(|s| self.system.rhs(&self.mesh, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .factorization
            .solve_many(&rhs)?
            .into_iter()
            .map(|y| self.finish_grounded(y))
            .collect())
    }

    /// Grounded measurements (one column per pattern) and the solutions.
    pub fn solve_patterns(&self, patterns: &CurrentPatterns) -> Result<(Measurements, Vec<ForwardSolution>)> {
        let m = self.mesh.electrode_count();
        if patterns.electrodes() != m {
            return Err(Error::Dimension(format!(
                "patterns are for {} electrodes, mesh has {m}",
                patterns.electrodes()
            )));
        }
        let sources: Vec<SourceData> = patterns
            .columns
            .iter()
            .map(|c| SourceData::currents(&self.mesh, c.clone()))
            .collect();
        let sols = self.solve_many(&sources)?;
        let columns = sols.iter().map(|s| s.electrodes().to_vec()).collect();
        Ok((Measurements { columns }, sols))
    }
}

/// `A + shift·u·vᵀ` on the ground block.
fn shift_ground(system: &AssembledSystem, electrodes: usize, shift: f64) -> SparseMatrix {
    let a = system.matrix();
    let e1 = system.first_electrode_row();
    let rows = (0..a.rows())
        .map(|i| {
            let (cols, vals) = a.row(i);
            let mut row: Vec<(usize, f64)> = cols.iter().copied().zip(vals.iter().copied()).collect();
            match system.ground() {
                GroundMode::FirstElectrode if i == e1 => row.push((e1, shift)),
                GroundMode::MeanFree if i >= e1 => row.extend((0..electrodes).map(|k| (e1 + k, shift))),
                _ => {}
            }
            row
        })
        .collect();
    SparseMatrix::from_rows(a.cols(), rows)
}

/// Input current patterns, one column per pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurrentPatterns {
    pub columns: Vec<Vec<f64>>,
}

impl CurrentPatterns {
    pub fn new(columns: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = columns.first() else {
            return Err(Error::Dimension("no current pattern".into()));
        };
        if first.is_empty() || columns.iter().any(|c| c.len() != first.len()) {
            return Err(Error::Dimension("current patterns must have equal, non-zero lengths".into()));
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("non-finite current".into()));
        }
        Ok(Self { columns })
    }

    /// `e_p − e_{p+1}` for `p = 1..M−1`.
    pub fn adjacent(m: usize) -> Self {
        let columns = (0..m.saturating_sub(1))
            .map(|p| {
                let mut c = vec![0.0; m];
                c[p] = 1.0;
                c[p + 1] = -1.0;
                c
            })
            .collect();
        Self { columns }
    }

    /// `I_m = (−1)^m` with one-based `m`.
    pub fn alternating(m: usize) -> Self {
        Self { columns: vec![(1..=m).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect()] }
    }

    /// `e_a − e_b` with one-based indices.
    pub fn pair(m: usize, a: usize, b: usize) -> Result<Self> {
        if a == 0 || b == 0 || a > m || b > m || a == b {
            return Err(Error::Config(format!("invalid electrode pair ({a}, {b}) for {m} electrodes")));
        }
        let mut c = vec![0.0; m];
        c[a - 1] = 1.0;
        c[b - 1] = -1.0;
        Ok(Self { columns: vec![c] })
    }

    pub fn electrodes(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

/// Electrode potentials, one column per pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurements {
    pub columns: Vec<Vec<f64>>,
}

impl Measurements {
    pub fn electrodes(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn patterns(&self) -> usize {
        self.columns.len()
    }

    pub fn frobenius(&self) -> f64 {
        self.columns.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Measurements) -> f64 {
        self.columns
            .iter()
            .flatten()
            .zip(other.columns.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Each column minus its first entry.
    pub fn grounded(&self) -> Self {
        Self { columns: self.columns.iter().map(|c| c.iter().map(|v| v - c[0]).collect()).collect() }
    }
}

/// One-sided gaps shorter than this fraction of `h` are not differenced.
pub const MIN_GAP: f64 = 0.25;

/// Per-node gradient: centered differences between two grid neighbours,
/// otherwise a one-sided difference on the side with the larger gap (a
/// boundary point at its true distance counts as a neighbour). A component
/// whose larger gap is below `MIN_GAP·h` (a node sitting on ∂Ω between two
/// nearby boundary points) is averaged from the same-kind grid neighbours
/// instead. `None` on the outer square.
pub fn numerical_gradient(mesh: &CartesianMesh, sol: &ForwardSolution) -> Vec<Option<Point>> {
    let cutoff = MIN_GAP * mesh.h();
    let raw: Vec<Option<([f64; 2], [bool; 2])>> = (0..mesh.node_count())
        .map(|node| {
            if mesh.kind(node) == NodeKind::Dirichlet {
                return None;
            }
            let u = sol.node_value(mesh, node);
            let pair = |fwd: Direction, bwd: Direction| {
                let f = mesh.neighbor(node, fwd);
                let b = mesh.neighbor(node, bwd);
                let both_nodes = matches!(f.neighbor, Neighbor::Node(_)) && matches!(b.neighbor, Neighbor::Node(_));
                if both_nodes {
                    ((sol.link_value(mesh, &f) - sol.link_value(mesh, &b)) / (f.distance + b.distance), true)
                } else if f.distance >= b.distance {
                    ((sol.link_value(mesh, &f) - u) / f.distance, f.distance >= cutoff)
                } else {
                    ((u - sol.link_value(mesh, &b)) / b.distance, b.distance >= cutoff)
                }
            };
            let (gx, okx) = pair(Direction::East, Direction::West);
            let (gy, oky) = pair(Direction::North, Direction::South);
            Some(([gx, gy], [okx, oky]))
        })
        .collect();
    (0..mesh.node_count())
        .map(|node| {
            let (mut g, ok) = raw[node]?;
            for c in 0..2 {
                if ok[c] {
                    continue;
                }
                let (mut sum, mut count) = (0.0, 0);
                for link in mesh.neighbors(node) {
                    if let Neighbor::Node(n) = link.neighbor {
                        if let Some((gn, okn)) = raw[n] {
                            if okn[c] {
                                sum += gn[c];
                                count += 1;
                            }
                        }
                    }
                }
                if count > 0 {
                    g[c] = sum / count as f64;
                }
            }
            Some(g)
        })
        .collect()
}
