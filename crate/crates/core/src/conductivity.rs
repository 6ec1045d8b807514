//! Conductivity fields: analytic profiles and nodal perturbations of a
//! known background.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::mesh::{CartesianMesh, Direction, Extent, Link, Neighbor, NodeKind};

/// Conductivity as seen by the assembly.
pub trait Conductivity: Send + Sync {
    fn value(&self, p: Point) -> f64;

    fn gradient(&self, p: Point) -> Point;

    /// σ at the midpoint between `node` and its nearest unknown in `dir`.
    fn edge_value(&self, mesh: &CartesianMesh, node: usize, dir: Direction, link: &Link) -> f64 {
        let p = mesh.node_point(node);
        let u = dir.unit();
        let d = 0.5 * link.distance;
        self.value([p[0] + d * u[0], p[1] + d * u[1]])
    }

    /// σ at boundary point `b`.
    fn boundary_value(&self, mesh: &CartesianMesh, b: usize) -> f64 {
        self.value(mesh.boundary_point(b).point)
    }
}

/// Smooth circular inclusion `amplitude·exp(1 − 1/(1 − (d/R)²))` for `d < R`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inclusion {
    pub center: Point,
    pub radius: f64,
    pub amplitude: f64,
}

impl Inclusion {
    pub fn value(&self, p: Point) -> f64 {
        let s2 = ((p[0] - self.center[0]).powi(2) + (p[1] - self.center[1]).powi(2)) / (self.radius * self.radius);
        if s2 >= 1.0 {
            0.0
        } else {
            self.amplitude * (1.0 - 1.0 / (1.0 - s2)).exp()
        }
    }

    pub fn gradient(&self, p: Point) -> Point {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let r2 = self.radius * self.radius;
        let s2 = (dx * dx + dy * dy) / r2;
        if s2 >= 1.0 {
            return [0.0, 0.0];
        }
        let q = 1.0 - s2;
        // d/d(s²) of exp(1 − 1/q) is −exp(1 − 1/q)/q²
        let ds2 = -self.amplitude * (1.0 - 1.0 / q).exp() / (q * q);
        [ds2 * 2.0 * dx / r2, ds2 * 2.0 * dy / r2]
    }
}

/// Closed-form conductivity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AnalyticConductivity {
    Constant { value: f64 },
    Inclusions { background: f64, inclusions: Vec<Inclusion> },
}

impl AnalyticConductivity {
    pub fn constant(value: f64) -> Self {
        AnalyticConductivity::Constant { value }
    }
}

impl Conductivity for AnalyticConductivity {
    fn value(&self, p: Point) -> f64 {
        match self {
            AnalyticConductivity::Constant { value } => *value,
            AnalyticConductivity::Inclusions { background, inclusions } => {
                background + inclusions.iter().map(|i| i.value(p)).sum::<f64>()
            }
        }
    }

    fn gradient(&self, p: Point) -> Point {
        match self {
            AnalyticConductivity::Constant { .. } => [0.0, 0.0],
            AnalyticConductivity::Inclusions { inclusions, .. } => inclusions.iter().fold([0.0, 0.0], |acc, i| {
                let g = i.gradient(p);
                [acc[0] + g[0], acc[1] + g[1]]
            }),
        }
    }
}

/// Samples on a uniform `n × n` lattice spanning `extent²` (first index
/// `x`, rows ordered by increasing `y`), bilinearly interpolated and
/// clamped outside.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterConductivity {
    extent: Extent,
    n: usize,
    values: Vec<f64>,
}

impl RasterConductivity {
    pub fn new(extent: Extent, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n < 2 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Config(format!("raster must be square with at least 2 samples per side, got {n} rows")));
        }
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        if let Some(k) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            let step = extent.width() / (n - 1) as f64;
            return Err(Error::NonPositiveConductivity {
                value: values[k],
                x: extent.lo + (k % n) as f64 * step,
                y: extent.lo + (k / n) as f64 * step,
            });
        }
        Ok(Self { extent, n, values })
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn samples(&self) -> usize {
        self.n
    }

    fn locate(&self, p: Point) -> (usize, usize, f64, f64, f64) {
        let cells = (self.n - 1) as f64;
        let step = self.extent.width() / cells;
        let fx = ((p[0] - self.extent.lo) / step).clamp(0.0, cells);
        let fy = ((p[1] - self.extent.lo) / step).clamp(0.0, cells);
        let i = (fx.floor() as usize).min(self.n - 2);
        let j = (fy.floor() as usize).min(self.n - 2);
        (i, j, fx - i as f64, fy - j as f64, step)
    }

    fn corners(&self, i: usize, j: usize) -> [f64; 4] {
        let k = j * self.n + i;
        [self.values[k], self.values[k + 1], self.values[k + self.n], self.values[k + self.n + 1]]
    }
}

impl Conductivity for RasterConductivity {
    fn value(&self, p: Point) -> f64 {
        let (i, j, a, b, _) = self.locate(p);
        let [v00, v10, v01, v11] = self.corners(i, j);
        (1.0 - b) * ((1.0 - a) * v00 + a * v10) + b * ((1.0 - a) * v01 + a * v11)
    }

    fn gradient(&self, p: Point) -> Point {
        let (i, j, a, b, step) = self.locate(p);
        let [v00, v10, v01, v11] = self.corners(i, j);
        [
            ((1.0 - b) * (v10 - v00) + b * (v11 - v01)) / step,
            ((1.0 - a) * (v01 - v00) + a * (v11 - v10)) / step,
        ]
    }
}

/// Background plus a deviation stored at grid nodes. The deviation is zero
/// at every non-interior node and at boundary points.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeField {
    background: AnalyticConductivity,
    extent: Extent,
    cells: usize,
    deviation: Vec<f64>,
}

impl NodeField {
    pub fn zeros(mesh: &CartesianMesh, background: AnalyticConductivity) -> Self {
        Self {
            background,
            extent: mesh.extent(),
            cells: mesh.cells(),
            deviation: vec![0.0; mesh.node_count()],
        }
    }

    /// Deviation given per node; entries at non-interior nodes are dropped.
    pub fn from_deviation(mesh: &CartesianMesh, background: AnalyticConductivity, mut deviation: Vec<f64>) -> Self {
        assert_eq!(deviation.len(), mesh.node_count(), "one value per grid node");
        for (d, kind) in deviation.iter_mut().zip(mesh.kinds()) {
            if *kind != NodeKind::Interior {
                *d = 0.0;
            }
        }
        Self { background, extent: mesh.extent(), cells: mesh.cells(), deviation }
    }

    /// Nodal interpolant of `target − background`.
    pub fn sample(mesh: &CartesianMesh, background: AnalyticConductivity, target: &dyn Conductivity) -> Self {
        let deviation = (0..mesh.node_count())
            .map(|n| {
                let p = mesh.node_point(n);
                target.value(p) - background.value(p)
            })
            .collect();
        Self::from_deviation(mesh, background, deviation)
    }

    pub fn background(&self) -> &AnalyticConductivity {
        &self.background
    }

    pub fn deviation(&self) -> &[f64] {
        &self.deviation
    }

    /// `self + t·direction`, both on the same grid.
    pub fn step(&self, direction: &[f64], t: f64) -> Self {
        let deviation = self.deviation.iter().zip(direction).map(|(d, v)| d + t * v).collect();
        Self { deviation, ..self.clone() }
    }

    fn h(&self) -> f64 {
        self.extent.width() / self.cells as f64
    }

    fn cell(&self, p: Point) -> (usize, usize, f64, f64) {
        let h = self.h();
        let fx = ((p[0] - self.extent.lo) / h).clamp(0.0, self.cells as f64);
        let fy = ((p[1] - self.extent.lo) / h).clamp(0.0, self.cells as f64);
        let i = (fx.floor() as usize).min(self.cells - 1);
        let j = (fy.floor() as usize).min(self.cells - 1);
        (i, j, fx - i as f64, fy - j as f64)
    }

    fn corners(&self, i: usize, j: usize) -> [f64; 4] {
        let side = self.cells + 1;
        let n = j * side + i;
        [self.deviation[n], self.deviation[n + 1], self.deviation[n + side], self.deviation[n + side + 1]]
    }

    /// Bilinear interpolant of the deviation.
    pub fn deviation_at(&self, p: Point) -> f64 {
        let (i, j, a, b) = self.cell(p);
        let [d00, d10, d01, d11] = self.corners(i, j);
        (1.0 - b) * ((1.0 - a) * d00 + a * d10) + b * ((1.0 - a) * d01 + a * d11)
    }
}

impl Conductivity for NodeField {
    fn value(&self, p: Point) -> f64 {
        self.background.value(p) + self.deviation_at(p)
    }

    fn gradient(&self, p: Point) -> Point {
        let (i, j, a, b) = self.cell(p);
        let [d00, d10, d01, d11] = self.corners(i, j);
        let h = self.h();
        let gx = ((1.0 - b) * (d10 - d00) + b * (d11 - d01)) / h;
        let gy = ((1.0 - a) * (d01 - d00) + a * (d11 - d10)) / h;
        let g = self.background.gradient(p);
        [g[0] + gx, g[1] + gy]
    }

    fn edge_value(&self, mesh: &CartesianMesh, node: usize, dir: Direction, link: &Link) -> f64 {
        let p = mesh.node_point(node);
        let u = dir.unit();
        let d = 0.5 * link.distance;
        let base = self.background.value([p[0] + d * u[0], p[1] + d * u[1]]);
        let here = self.deviation[node];
        base + match link.neighbor {
            Neighbor::Node(n) => 0.5 * (here + self.deviation[n]),
            Neighbor::Boundary(_) | Neighbor::Dirichlet => 0.5 * here,
        }
    }

    fn boundary_value(&self, mesh: &CartesianMesh, b: usize) -> f64 {
        self.background.value(mesh.boundary_point(b).point)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Admittivity, BoundaryShape, ElectrodeLayout};
    use crate::shapes;

    #[test]
    fn raster_reproduces_bilinear_data() {
        let extent = Extent { lo: -1.0, hi: 1.0 };
        let f = |x: f64, y: f64| 2.0 + 0.3 * x - 0.2 * y + 0.1 * x * y;
        let n = 5;
        let rows = (0..n)
            .map(|j| (0..n).map(|i| f(-1.0 + 0.5 * i as f64, -1.0 + 0.5 * j as f64)).collect())
            .collect();
        let r = RasterConductivity::new(extent, rows).unwrap();
        for p in [[0.1, 0.2], [-0.73, 0.9], [1.0, -1.0]] {
            assert!((r.value(p) - f(p[0], p[1])).abs() < 1e-14);
        }
        // bilinear within a cell: exact gradient of f at cell-local points
        let g = r.gradient([0.2, 0.3]);
        assert!((g[0] - (0.3 + 0.1 * 0.3)).abs() < 1e-13 && (g[1] - (-0.2 + 0.1 * 0.2)).abs() < 1e-13);
        assert_eq!(r.value([5.0, 5.0]), f(1.0, 1.0));
        assert!(matches!(
            RasterConductivity::new(extent, vec![vec![1.0, 1.0], vec![1.0, 0.0]]),
            Err(Error::NonPositiveConductivity { .. })
        ));
        assert!(RasterConductivity::new(extent, vec![vec![1.0, 1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn inclusion_gradient_matches_finite_differences() {
        let inc = Inclusion { center: [0.1, -0.2], radius: 0.6, amplitude: 1.5 };
        let d = 1e-6;
        for p in [[0.0, 0.0], [0.3, 0.1], [0.5, -0.4], [-0.3, -0.3]] {
            let g = inc.gradient(p);
            let fx = (inc.value([p[0] + d, p[1]]) - inc.value([p[0] - d, p[1]])) / (2.0 * d);
            let fy = (inc.value([p[0], p[1] + d]) - inc.value([p[0], p[1] - d])) / (2.0 * d);
            assert!((g[0] - fx).abs() < 1e-7 && (g[1] - fy).abs() < 1e-7);
        }
        assert_eq!(inc.value([0.1, -0.2]), 1.5);
        assert_eq!(inc.value([2.0, 2.0]), 0.0);
    }

    #[test]
    fn node_field_interpolates_and_vanishes_off_the_interior() {
        let disk = BoundaryShape::disk(1.5).unwrap();
        let layout = ElectrodeLayout::standard16(&disk, Admittivity::constant(1.0)).unwrap();
        let mesh = crate::mesh::CartesianMesh::build(&disk, &layout, shapes::REFERENCE_EXTENT, 0.1).unwrap();
        let affine: Vec<f64> = (0..mesh.node_count())
            .map(|n| {
                let p = mesh.node_point(n);
                1.0 + 2.0 * p[0] - p[1]
            })
            .collect();
        let field = NodeField::from_deviation(&mesh, AnalyticConductivity::constant(1.0), affine);
        let p = [0.033, -0.412];
        assert!((field.value(p) - (2.0 + 2.0 * p[0] - p[1])).abs() < 1e-12);
        let g = field.gradient(p);
        assert!((g[0] - 2.0).abs() < 1e-12 && (g[1] + 1.0).abs() < 1e-12);
        for (n, kind) in mesh.kinds().iter().enumerate() {
            if *kind != NodeKind::Interior {
                assert_eq!(field.deviation()[n], 0.0);
            }
        }
        for b in 0..mesh.boundary_points().len() {
            assert_eq!(field.boundary_value(&mesh, b), 1.0);
        }
    }
}
