//! Linear system for the coupled interior, exterior, flux and electrode
//! equations.
//!
//! Row scaling: grid rows are stored multiplied by `h²`, flux rows by the
//! length of the ray that defines their stencil. Electrode rows are stored
//! as written. [`AssembledSystem::rhs`] applies the same scaling.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conductivity::Conductivity;
use crate::error::{Error, Result};
use crate::geometry::{unwrap_from, Point};
use crate::mesh::{CartesianMesh, Direction, Neighbor, NodeKind};
use crate::sparse::SparseMatrix;

/// Ground-fixing term added to the electrode equations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundMode {
    /// `ε·U₁` in the first electrode row.
    FirstElectrode,
    /// `ε·ΣU_k` in every electrode row.
    MeanFree,
}

/// Default ground-fixing parameter.
pub const DEFAULT_EPSILON: f64 = 1e-10;

/// Rays are followed up to this many grid spacings.
pub const RAY_REACH: f64 = 4.0;

/// Sources of the discrete problem.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceData {
    /// Volume source per grid node (read at interior nodes only).
    pub f: Vec<f64>,
    /// Boundary source per boundary point.
    pub g: Vec<f64>,
    /// Electrode currents.
    pub currents: Vec<f64>,
}

impl SourceData {
    pub fn zeros(mesh: &CartesianMesh) -> Self {
        Self {
            f: vec![0.0; mesh.node_count()],
            g: vec![0.0; mesh.boundary_points().len()],
            currents: vec![0.0; mesh.electrode_count()],
        }
    }

    pub fn currents(mesh: &CartesianMesh, currents: Vec<f64>) -> Self {
        Self { currents, ..Self::zeros(mesh) }
    }

    fn check(&self, mesh: &CartesianMesh) -> Result<()> {
        if self.f.len() != mesh.node_count()
            || self.g.len() != mesh.boundary_points().len()
            || self.currents.len() != mesh.electrode_count()
        {
            return Err(Error::Dimension(format!(
                "sources have lengths ({}, {}, {}), mesh expects ({}, {}, {})",
                self.f.len(),
                self.g.len(),
                self.currents.len(),
                mesh.node_count(),
                mesh.boundary_points().len(),
                mesh.electrode_count()
            )));
        }
        if self.f.iter().chain(&self.g).chain(&self.currents).any(|v| !v.is_finite()) {
            return Err(Error::Dimension("non-finite source value".into()));
        }
        Ok(())
    }
}

/// Gradients of the three linear basis functions on a triangle, or `None`
/// when the vertices are collinear.
pub fn basis_gradients(v: [Point; 3]) -> Option<[Point; 3]> {
    let mut out = [[0.0; 2]; 3];
    let scale = (0..3)
        .flat_map(|a| (0..3).map(move |b| (a, b)))
        .map(|(a, b)| (v[a][0] - v[b][0]).abs().max((v[a][1] - v[b][1]).abs()))
        .fold(0.0, f64::max);
    for j in 0..3 {
        let i = (j + 1) % 3;
        let k = (j + 2) % 3;
        let (xi, yi) = (v[i][0], v[i][1]);
        let (xj, yj) = (v[j][0], v[j][1]);
        let (xk, yk) = (v[k][0], v[k][1]);
        let det = (yk - yi) * (xj - xi) - (xk - xi) * (yj - yi);
        if !(det.abs() > 1e-10 * scale * scale) {
            return None;
        }
        out[j] = [(yk - yi) / det, (xi - xk) / det];
    }
    Some(out)
}

/// Discrete normal derivative at a boundary point from the linear
/// interpolant on the triangle `{B, N₁, N₂}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluxStencil {
    pub nodes: [usize; 2],
    /// Coefficients of `u_B`, `u_{N₁}`, `u_{N₂}` in `(∇u·ν)ʰ`.
    pub coefficients: [f64; 3],
    /// Distance along `−ν` from `B` to the segment `[N₁, N₂]`.
    pub ray_length: f64,
}

impl FluxStencil {
    pub fn apply(&self, u_boundary: f64, u_nodes: [f64; 2]) -> f64 {
        self.coefficients[0] * u_boundary + self.coefficients[1] * u_nodes[0] + self.coefficients[2] * u_nodes[1]
    }
}

/// Casts a ray from boundary point `b` along `−ν` and builds the stencil on
/// the first crossed grid segment whose endpoints are both interior and
/// which carries no boundary point.
pub fn flux_stencil(mesh: &CartesianMesh, b: usize) -> Result<FluxStencil> {
    let bp = mesh.boundary_point(b);
    let h = mesh.h();
    let lo = mesh.extent().lo;
    let cells = mesh.cells();
    let p = bp.point;
    let d = [-bp.normal[0], -bp.normal[1]];
    let t_min = 1e-12 * h;
    let t_max = RAY_REACH * h;

    // (t, axis, line index): axis 0 = vertical line x = x_i, 1 = horizontal line y = y_j
    let mut hits: Vec<(f64, usize, usize)> = Vec::new();
    for axis in 0..2 {
        if d[axis].abs() < 1e-15 {
            continue;
        }
        let f0 = (p[axis] - lo) / h;
        let f1 = (p[axis] + t_max * d[axis] - lo) / h;
        let (a, z) = (f0.min(f1).floor().max(0.0) as usize, (f0.max(f1).ceil() as usize).min(cells));
        for line in a..=z {
            let t = (lo + line as f64 * h - p[axis]) / d[axis];
            if t > t_min && t <= t_max {
                hits.push((t, axis, line));
            }
        }
    }
    hits.sort_by(|x, y| x.0.total_cmp(&y.0));

    let side = mesh.side();
    for (t, axis, line) in hits {
        let q = [p[0] + t * d[0], p[1] + t * d[1]];
        let other = 1 - axis;
        let f = (q[other] - lo) / h;
        let r = f.round();
        let node_at = |along: usize| if axis == 0 { mesh.node(line, along) } else { mesh.node(along, line) };
        let mut candidates: Vec<(usize, usize)> = Vec::new();
        if (f - r).abs() < 1e-9 && r >= 0.0 && r <= cells as f64 {
            let n = node_at(r as usize);
            let (i, j) = mesh.node_ij(n);
            if j > 0 {
                candidates.push((n, n - side));
            }
            if j < cells {
                candidates.push((n, n + side));
            }
            if i > 0 {
                candidates.push((n, n - 1));
            }
            if i < cells {
                candidates.push((n, n + 1));
            }
        } else if f >= 0.0 && f < cells as f64 {
            let k = f.floor() as usize;
            candidates.push((node_at(k), node_at(k + 1)));
        }
        for (n1, n2) in candidates {
            if mesh.kind(n1) != NodeKind::Interior
                || mesh.kind(n2) != NodeKind::Interior
                || mesh.crossing_between(n1, n2).is_some()
            {
                continue;
            }
            let Some(grads) = basis_gradients([p, mesh.node_point(n1), mesh.node_point(n2)]) else {
                continue;
            };
            let nu = bp.normal;
            let coefficients = grads.map(|g| g[0] * nu[0] + g[1] * nu[1]);
            return Ok(FluxStencil { nodes: [n1, n2], coefficients, ray_length: t });
        }
    }
    Err(Error::DegenerateStencil(b))
}

/// Quadrature on one electrode. Each boundary point stands for its control
/// arc and is weighted by the mean of the ramped electrode indicator there,
/// so the weights add up to about the electrode length and the system
/// depends smoothly on the end angles.
#[derive(Clone, Debug, PartialEq)]
pub struct ElectrodeQuadrature {
    pub points: Vec<usize>,
    pub weights: Vec<f64>,
    /// Mean admittivity over the part of each control arc inside the electrode.
    pub admittivity: Vec<f64>,
    /// Mean ramped indicator over each control arc.
    pub coverage: Vec<f64>,
    /// Signed arc length from `Θ¹` to each point.
    pub abscissae: Vec<f64>,
    pub length: f64,
}

impl ElectrodeQuadrature {
    /// `ξ` seen by the flux row of the `i`-th point.
    pub fn robin(&self, i: usize) -> f64 {
        self.admittivity[i] * self.coverage[i]
    }
}

pub fn electrode_quadrature(mesh: &CartesianMesh, m: usize) -> Result<ElectrodeQuadrature> {
    let points = mesh.electrode_points(m).to_vec();
    let shape = mesh.shape();
    let layout = mesh.layout();
    let inside = points.iter().filter(|&&b| layout.local_angle(m, mesh.boundary_point(b).theta).is_ok()).count();
    if inside < 2 {
        return Err(Error::ElectrodeUnresolved(m));
    }
    let (t1, t2) = (layout.theta1()[m], layout.theta2()[m]);
    let base = layout.center(m) - PI;
    let eta = mesh.electrode_ramp(m);
    let k = points.len();
    let mut weights = Vec::with_capacity(k);
    let mut admittivity = Vec::with_capacity(k);
    let mut coverage = Vec::with_capacity(k);
    let mut abscissae = Vec::with_capacity(k);
    for &b in &points {
        let bp = mesh.boundary_point(b);
        let [a, c] = bp.control;
        let frac = if c > a { (layout.ramped_cover(m, bp.control, eta) / (c - a)).min(1.0) } else { 1.0 };
        let theta = unwrap_from(bp.theta, base);
        let adm = match layout.overlap(m, bp.control) {
            Some((lo, hi)) => layout.mean_admittivity(m, lo, hi),
            None => {
                let end = theta.clamp(t1, t2);
                layout.mean_admittivity(m, end, end)
            }
        };
        weights.push(frac * shape.arc_length(a, c));
        coverage.push(frac);
        admittivity.push(adm);
        abscissae.push(shape.arc_length(t1, theta));
    }
    let length = shape.arc_length(t1, t2);
    Ok(ElectrodeQuadrature { points, weights, admittivity, coverage, abscissae, length })
}

/// `Σ_P ω_P φ(P)` over the boundary points of one electrode.
pub fn integrate_on_electrode(q: &ElectrodeQuadrature, values: impl Fn(usize) -> f64) -> f64 {
    q.points.iter().zip(&q.weights).map(|(&b, w)| w * values(b)).sum()
}

#[derive(Clone, Debug)]
pub struct AssembledSystem {
    matrix: SparseMatrix,
    stencils: Vec<FluxStencil>,
    quadrature: Vec<ElectrodeQuadrature>,
    sigma_boundary: Vec<f64>,
    h: f64,
    ground: GroundMode,
    epsilon: f64,
    grid_unknowns: usize,
    boundary_count: usize,
    electrodes: usize,
    interior: Vec<bool>,
}

/// Entries of the row of grid unknown `k` (unscaled operator times `h²`).
fn grid_row(mesh: &CartesianMesh, sigma: &dyn Conductivity, k: usize) -> Result<Vec<(usize, f64)>> {
    let node = mesh.grid_node(k);
    let h = mesh.h();
    let interior = mesh.kind(node) == NodeKind::Interior;
    let mut row = Vec::with_capacity(5);
    let mut diag = 0.0;
    for dir in Direction::ALL {
        let link = mesh.neighbor(node, dir);
        let s = if interior {
            let s = sigma.edge_value(mesh, node, dir, &link);
            if !(s > 0.0) {
                let p = mesh.node_point(node);
                return Err(Error::NonPositiveConductivity { value: s, x: p[0], y: p[1] });
            }
            s
        } else {
            1.0
        };
        let w = s * h / link.distance;
        diag += w;
        match link.neighbor {
            Neighbor::Node(n) => row.push((mesh.unknown_of_node(n).expect("grid unknown"), -w)),
            Neighbor::Boundary(b) => row.push((mesh.unknown_of_boundary(b), -w)),
            Neighbor::Dirichlet => {}
        }
    }
    row.push((k, diag));
    Ok(row)
}

impl AssembledSystem {
    pub fn assemble(
        mesh: &CartesianMesh,
        sigma: &dyn Conductivity,
        ground: GroundMode,
        epsilon: f64,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("ground parameter ε = {epsilon} must be positive")));
        }
        let ng = mesh.grid_unknowns();
        let nb = mesh.boundary_points().len();
        let ne = mesh.electrode_count();
        let n = mesh.unknowns();

        let stencils = (0..nb)
            .into_par_iter()
            .map(|b| flux_stencil(mesh, b))
            .collect::<Result<Vec<_>>>()?;
        let quadrature = (0..ne).map(|m| electrode_quadrature(mesh, m)).collect::<Result<Vec<_>>>()?;
        let sigma_boundary: Vec<f64> = (0..nb).map(|b| sigma.boundary_value(mesh, b)).collect();
        if let Some((b, &s)) = sigma_boundary.iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
            let p = mesh.boundary_point(b).point;
            return Err(Error::NonPositiveConductivity { value: s, x: p[0], y: p[1] });
        }

        let mut xi = vec![0.0; nb];
        for q in &quadrature {
            for (i, &b) in q.points.iter().enumerate() {
                xi[b] = q.robin(i);
            }
        }

        let mut rows = (0..ng)
            .into_par_iter()
            .map(|k| grid_row(mesh, sigma, k))
            .collect::<Result<Vec<_>>>()?;
        rows.reserve(nb + ne);

        for b in 0..nb {
            let st = &stencils[b];
            let t = st.ray_length;
            let s = sigma_boundary[b] * t;
            let me = mesh.unknown_of_boundary(b);
            let mut row = vec![
                (me, s * st.coefficients[0] + t * xi[b]),
                (mesh.unknown_of_node(st.nodes[0]).expect("interior node"), s * st.coefficients[1]),
                (mesh.unknown_of_node(st.nodes[1]).expect("interior node"), s * st.coefficients[2]),
            ];
            if let Some(m) = mesh.boundary_point(b).electrode {
                row.push((mesh.unknown_of_electrode(m), -t * xi[b]));
            }
            rows.push(row);
        }

        for (m, q) in quadrature.iter().enumerate() {
            let mut row = Vec::with_capacity(q.points.len() + ne + 1);
            let mut diag = 0.0;
            for ((&b, &w), &x) in q.points.iter().zip(&q.weights).zip(&q.admittivity) {
                diag += w * x;
                row.push((mesh.unknown_of_boundary(b), -w * x));
            }
            row.push((mesh.unknown_of_electrode(m), diag));
            match ground {
                GroundMode::FirstElectrode if m == 0 => row.push((mesh.unknown_of_electrode(0), epsilon)),
                GroundMode::FirstElectrode => {}
                GroundMode::MeanFree => row.extend((0..ne).map(|k| (mesh.unknown_of_electrode(k), epsilon))),
            }
            rows.push(row);
        }

        let interior = mesh.grid_nodes().iter().map(|&node| mesh.kind(node) == NodeKind::Interior).collect();
        Ok(Self {
            matrix: SparseMatrix::from_rows(n, rows),
            stencils,
            quadrature,
            sigma_boundary,
            h: mesh.h(),
            ground,
            epsilon,
            grid_unknowns: ng,
            boundary_count: nb,
            electrodes: ne,
            interior,
        })
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn stencils(&self) -> &[FluxStencil] {
        &self.stencils
    }

    pub fn quadrature(&self) -> &[ElectrodeQuadrature] {
        &self.quadrature
    }

    pub fn ground(&self) -> GroundMode {
        self.ground
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// σ used in the flux row of each boundary point.
    pub fn sigma_boundary(&self) -> &[f64] {
        &self.sigma_boundary
    }

    /// Index of the row of the first electrode.
    pub fn first_electrode_row(&self) -> usize {
        self.grid_unknowns + self.boundary_count
    }

    /// Right-hand side for `sources`, scaled like the rows.
    pub fn rhs(&self, mesh: &CartesianMesh, sources: &SourceData) -> Result<Vec<f64>> {
        sources.check(mesh)?;
        let h2 = self.h * self.h;
        let mut r = Vec::with_capacity(self.size());
        for k in 0..self.grid_unknowns {
            r.push(if self.interior[k] { h2 * sources.f[mesh.grid_node(k)] } else { 0.0 });
        }
        for b in 0..self.boundary_count {
            r.push(self.stencils[b].ray_length * sources.g[b]);
        }
        for (m, q) in self.quadrature.iter().enumerate() {
            r.push(sources.currents[m] - integrate_on_electrode(q, |b| sources.g[b]));
        }
        debug_assert_eq!(r.len(), self.grid_unknowns + self.boundary_count + self.electrodes);
        Ok(r)
    }

    /// Residual of the flux row of boundary point `b` in unscaled form:
    /// `σ(∇u·ν)ʰ + ξ(u_B − U_m) − g`.
    pub fn flux_residual(&self, mesh: &CartesianMesh, b: usize, x: &[f64], g: f64) -> f64 {
        let row = mesh.unknown_of_boundary(b);
        let scaled = self.matrix.row_dot(row, x);
        scaled / self.stencils[b].ray_length - g
    }
}
