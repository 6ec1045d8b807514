//! Uniform Cartesian grid over a square, with grid points classified against
//! the domain and boundary points inserted where grid segments cross `∂Ω`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{unwrap_from, BoundaryShape, ElectrodeLayout, Point, BOUNDARY_BAND};

/// Sub-samples per segment used to detect multiple crossings.
pub const SCAN_RESOLUTION: usize = 64;

/// Boundary points closer than `CLAMP_FRACTION·h` to a grid point are moved
/// back to that distance.
pub const CLAMP_FRACTION: f64 = 1e-3;

/// Half-width, in cells, of the ramps smoothing the electrode indicator.
pub const RAMP_CELLS: f64 = 2.0;

/// Square `[lo, hi]²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub lo: f64,
    pub hi: f64,
}

impl Extent {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("invalid extent [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Interior,
    Exterior,
    /// Node on the outer square, where the exterior potential is zero.
    Dirichlet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    East,
    West,
    North,
    South,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::East, Direction::West, Direction::North, Direction::South];

    pub fn unit(self) -> Point {
        match self {
            Direction::East => [1.0, 0.0],
            Direction::West => [-1.0, 0.0],
            Direction::North => [0.0, 1.0],
            Direction::South => [0.0, -1.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Neighbor {
    Node(usize),
    Boundary(usize),
    Dirichlet,
}

/// Nearest unknown in one direction and its distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Link {
    pub neighbor: Neighbor,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryPoint {
    pub point: Point,
    /// Polar angle of the root on `∂Ω` (kept when the point is clamped).
    pub theta: f64,
    pub normal: Point,
    pub rho: f64,
    pub orientation: Orientation,
    /// Grid node at the left (horizontal) or bottom (vertical) end of the segment.
    pub lower: usize,
    /// Distance from `lower` along the segment.
    pub offset: f64,
    /// Segment endpoint inside `Ω`.
    pub inner: usize,
    /// Segment endpoint outside `Ω`.
    pub outer: usize,
    pub clamped: bool,
    /// Angular control interval `[lo, hi]` around `theta`, bounded by the
    /// midpoints to the neighbouring boundary points.
    pub control: [f64; 2],
    pub electrode: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct CartesianMesh {
    shape: BoundaryShape,
    layout: ElectrodeLayout,
    extent: Extent,
    cells: usize,
    h: f64,
    kinds: Vec<NodeKind>,
    east: Vec<Option<usize>>,
    north: Vec<Option<usize>>,
    boundary: Vec<BoundaryPoint>,
    unknown_of_node: Vec<Option<usize>>,
    grid_nodes: Vec<usize>,
    electrode_points: Vec<Vec<usize>>,
    clamped: usize,
}

/// Class counts, for diagnostics.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MeshSummary {
    pub cells: usize,
    pub interior: usize,
    pub exterior: usize,
    pub dirichlet: usize,
    pub irregular: usize,
    pub boundary_points: usize,
    pub clamped: usize,
    pub unknowns: usize,
    pub electrode_points: Vec<usize>,
}

impl CartesianMesh {
    /// Grid of spacing `h`; `h` must divide the extent width.
    pub fn build(shape: &BoundaryShape, layout: &ElectrodeLayout, extent: Extent, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("grid spacing {h} must be positive")));
        }
        let ratio = extent.width() / h;
        let cells = ratio.round();
        if cells < 2.0 || (cells - ratio).abs() > 1e-6 * ratio {
            return Err(Error::Config(format!(
                "h = {h} does not divide the extent width {}",
                extent.width()
            )));
        }
        Self::with_cells(shape, layout, extent, cells as usize)
    }

    /// Grid with `cells` cells per side.
    pub fn with_cells(
        shape: &BoundaryShape,
        layout: &ElectrodeLayout,
        extent: Extent,
        cells: usize,
    ) -> Result<Self> {
        if cells < 2 {
            return Err(Error::Config(format!("need at least 2 cells per side, got {cells}")));
        }
        let h = extent.width() / cells as f64;
        check_margin(shape, extent, h)?;
        let side = cells + 1;
        let coord = |i: usize| extent.lo + i as f64 * h;
        let level = |p: Point| {
            let r = shape.radius(p[1].atan2(p[0]));
            p[0].hypot(p[1]) - r - BOUNDARY_BAND * r
        };

        let mut kinds = Vec::with_capacity(side * side);
        let mut phi = Vec::with_capacity(side * side);
        for j in 0..side {
            for i in 0..side {
                let p = [coord(i), coord(j)];
                let l = level(p);
                phi.push(l);
                let ring = i == 0 || j == 0 || i == cells || j == cells;
                kinds.push(if ring {
                    NodeKind::Dirichlet
                } else if l < 0.0 {
                    NodeKind::Interior
                } else {
                    NodeKind::Exterior
                });
            }
        }

        let mut east = vec![None; side * side];
        let mut north = vec![None; side * side];
        let mut boundary = Vec::new();
        let mut clamped = 0;
        for j in 0..side {
            for i in 0..side {
                let a = j * side + i;
                for orientation in [Orientation::Horizontal, Orientation::Vertical] {
                    let (b, dir) = match orientation {
                        Orientation::Horizontal if i < cells => (a + 1, [1.0, 0.0]),
                        Orientation::Vertical if j < cells => (a + side, [0.0, 1.0]),
                        _ => continue,
                    };
                    let pa = [coord(i), coord(j)];
                    let on_segment = |s: f64| [pa[0] + s * h * dir[0], pa[1] + s * h * dir[1]];
                    let (fa, fb) = (phi[a], phi[b]);
                    let crosses = (fa < 0.0) != (fb < 0.0);
                    if !crosses && fa.abs().min(fb.abs()) >= 2.0 * h {
                        continue;
                    }
                    let changes = count_sign_changes(|s| level(on_segment(s)), fa, fb);
                    if changes > 1 || (!crosses && changes > 0) {
                        return Err(Error::UnderResolved(format!(
                            "segment from ({:.6}, {:.6}) crosses the boundary {changes} times",
                            pa[0], pa[1]
                        )));
                    }
                    if !crosses {
                        continue;
                    }
                    let s = bisect(|s| level(on_segment(s)), fa < 0.0);
                    let root = on_segment(s);
                    let theta = root[1].atan2(root[0]);
                    let min_offset = CLAMP_FRACTION * h;
                    let raw = s * h;
                    let offset = raw.clamp(min_offset, h - min_offset);
                    let was_clamped = offset != raw;
                    clamped += was_clamped as usize;
                    let frame = shape.frame(theta);
                    let (inner, outer) = if fa < 0.0 { (a, b) } else { (b, a) };
                    let index = boundary.len();
                    boundary.push(BoundaryPoint {
                        point: [pa[0] + offset * dir[0], pa[1] + offset * dir[1]],
                        theta,
                        normal: frame.normal,
                        rho: frame.rho,
                        orientation,
                        lower: a,
                        offset,
                        inner,
                        outer,
                        clamped: was_clamped,
                        control: [theta, theta],
                        electrode: None,
                    });
                    match orientation {
                        Orientation::Horizontal => east[a] = Some(index),
                        Orientation::Vertical => north[a] = Some(index),
                    }
                }
            }
        }

        set_control_intervals(&mut boundary);

        let mut unknown_of_node = vec![None; side * side];
        let mut grid_nodes = Vec::new();
        for (node, kind) in kinds.iter().enumerate() {
            if *kind != NodeKind::Dirichlet {
                unknown_of_node[node] = Some(grid_nodes.len());
                grid_nodes.push(node);
            }
        }

        let mut mesh = Self {
            shape: shape.clone(),
            layout: layout.clone(),
            extent,
            cells,
            h,
            kinds,
            east,
            north,
            boundary,
            unknown_of_node,
            grid_nodes,
            electrode_points: Vec::new(),
            clamped,
        };
        mesh.assign_electrodes();
        Ok(mesh)
    }

    /// Same grid and boundary points with a different electrode layout.
    pub fn with_layout(&self, layout: &ElectrodeLayout) -> Self {
        let mut mesh = self.clone();
        mesh.layout = layout.clone();
        mesh.assign_electrodes();
        mesh
    }

    /// Angular half-width of the ramps at the ends of electrode `m`: about
    /// `RAMP_CELLS·h` of arc, at most a quarter of the electrode.
    pub fn electrode_ramp(&self, m: usize) -> f64 {
        let (t1, t2) = (self.layout.theta1()[m], self.layout.theta2()[m]);
        let speed = self.shape.arc_length(t1, t2) / (t2 - t1);
        (RAMP_CELLS * self.h / speed).min(0.25 * (t2 - t1))
    }

    /// A boundary point belongs to the electrode with the largest ramped
    /// cover on its control interval.
    fn assign_electrodes(&mut self) {
        let ramps: Vec<f64> = (0..self.layout.len()).map(|m| self.electrode_ramp(m)).collect();
        let layout = &self.layout;
        let mut lists = vec![Vec::new(); layout.len()];
        for (b, bp) in self.boundary.iter_mut().enumerate() {
            bp.electrode = (0..layout.len())
                .map(|m| (m, layout.ramped_cover(m, bp.control, ramps[m])))
                .filter(|&(_, c)| c > 0.0)
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(m, _)| m);
            if let Some(m) = bp.electrode {
                lists[m].push(b);
            }
        }
        for (m, list) in lists.iter_mut().enumerate() {
            let base = layout.center(m) - PI;
            let boundary = &self.boundary;
            list.sort_by(|&a, &b| {
                unwrap_from(boundary[a].theta, base).total_cmp(&unwrap_from(boundary[b].theta, base))
            });
        }
        self.electrode_points = lists;
    }

    pub fn shape(&self) -> &BoundaryShape {
        &self.shape
    }

    pub fn layout(&self) -> &ElectrodeLayout {
        &self.layout
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Grid points per side.
    pub fn side(&self) -> usize {
        self.cells + 1
    }

    pub fn node_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.side() + i
    }

    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        (node % self.side(), node / self.side())
    }

    pub fn node_point(&self, node: usize) -> Point {
        let (i, j) = self.node_ij(node);
        [self.extent.lo + i as f64 * self.h, self.extent.lo + j as f64 * self.h]
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.kinds[node]
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn boundary_points(&self) -> &[BoundaryPoint] {
        &self.boundary
    }

    pub fn boundary_point(&self, b: usize) -> &BoundaryPoint {
        &self.boundary[b]
    }

    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    /// Boundary points on electrode `m`, sorted by angle from `Θ¹_m`.
    pub fn electrode_points(&self, m: usize) -> &[usize] {
        &self.electrode_points[m]
    }

    /// Boundary point on the segment from `node` to its east neighbor.
    pub fn east_crossing(&self, node: usize) -> Option<usize> {
        self.east[node]
    }

    /// Boundary point on the segment from `node` to its north neighbor.
    pub fn north_crossing(&self, node: usize) -> Option<usize> {
        self.north[node]
    }

    pub fn grid_unknowns(&self) -> usize {
        self.grid_nodes.len()
    }

    /// Grid node carried by grid unknown `k`.
    pub fn grid_node(&self, k: usize) -> usize {
        self.grid_nodes[k]
    }

    pub fn grid_nodes(&self) -> &[usize] {
        &self.grid_nodes
    }

    pub fn unknown_of_node(&self, node: usize) -> Option<usize> {
        self.unknown_of_node[node]
    }

    pub fn unknown_of_boundary(&self, b: usize) -> usize {
        self.grid_nodes.len() + b
    }

    pub fn unknown_of_electrode(&self, m: usize) -> usize {
        self.grid_nodes.len() + self.boundary.len() + m
    }

    pub fn electrode_count(&self) -> usize {
        self.layout.len()
    }

    /// Total number of unknowns.
    pub fn unknowns(&self) -> usize {
        self.grid_nodes.len() + self.boundary.len() + self.layout.len()
    }

    /// Segment adjacent to `node` in direction `dir`, as (neighbor node, crossing).
    fn segment(&self, node: usize, dir: Direction) -> Option<(usize, Option<usize>)> {
        let (i, j) = self.node_ij(node);
        let side = self.side();
        match dir {
            Direction::East if i < self.cells => Some((node + 1, self.east[node])),
            Direction::West if i > 0 => Some((node - 1, self.east[node - 1])),
            Direction::North if j < self.cells => Some((node + side, self.north[node])),
            Direction::South if j > 0 => Some((node - side, self.north[node - side])),
            _ => None,
        }
    }

    /// Nearest unknown of `node` in direction `dir`.
    pub fn neighbor(&self, node: usize, dir: Direction) -> Link {
        let Some((next, crossing)) = self.segment(node, dir) else {
            return Link { neighbor: Neighbor::Dirichlet, distance: self.h };
        };
        if let Some(b) = crossing {
            let bp = &self.boundary[b];
            let distance = if bp.lower == node { bp.offset } else { self.h - bp.offset };
            return Link { neighbor: Neighbor::Boundary(b), distance };
        }
        let neighbor = match self.kinds[next] {
            NodeKind::Dirichlet => Neighbor::Dirichlet,
            _ => Neighbor::Node(next),
        };
        Link { neighbor, distance: self.h }
    }

    pub fn neighbors(&self, node: usize) -> [Link; 4] {
        Direction::ALL.map(|d| self.neighbor(node, d))
    }

    /// A grid point is irregular when a boundary point is one of its direct neighbors.
    pub fn is_irregular(&self, node: usize) -> bool {
        Direction::ALL
            .iter()
            .any(|&d| matches!(self.segment(node, d), Some((_, Some(_)))))
    }

    /// Boundary point on the segment between two adjacent nodes, if any.
    pub fn crossing_between(&self, a: usize, b: usize) -> Option<usize> {
        let (lo, hi) = (a.min(b), a.max(b));
        if hi == lo + 1 {
            self.east[lo]
        } else if hi == lo + self.side() {
            self.north[lo]
        } else {
            None
        }
    }

    /// Node index of the grid point nearest to `p` when `p` lies on the grid.
    pub fn locate(&self, p: Point) -> Option<(usize, usize)> {
        let fi = (p[0] - self.extent.lo) / self.h;
        let fj = (p[1] - self.extent.lo) / self.h;
        if fi < 0.0 || fj < 0.0 || fi > self.cells as f64 || fj > self.cells as f64 {
            return None;
        }
        Some((fi.round() as usize, fj.round() as usize))
    }

    pub fn summary(&self) -> MeshSummary {
        let count = |k: NodeKind| self.kinds.iter().filter(|&&x| x == k).count();
        MeshSummary {
            cells: self.cells,
            interior: count(NodeKind::Interior),
            exterior: count(NodeKind::Exterior),
            dirichlet: count(NodeKind::Dirichlet),
            irregular: (0..self.node_count())
                .filter(|&n| self.kinds[n] != NodeKind::Dirichlet && self.is_irregular(n))
                .count(),
            boundary_points: self.boundary.len(),
            clamped: self.clamped,
            unknowns: self.unknowns(),
            electrode_points: self.electrode_points.iter().map(Vec::len).collect(),
        }
    }
}

/// The square must contain the domain with a margin of at least `2h`.
pub fn check_margin(shape: &BoundaryShape, extent: Extent, h: f64) -> Result<()> {
    let samples = 4 * crate::geometry::SHAPE_SAMPLES;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..samples {
        let p = shape.point(std::f64::consts::TAU * k as f64 / samples as f64);
        lo = lo.min(p[0]).min(p[1]);
        hi = hi.max(p[0]).max(p[1]);
    }
    if lo < extent.lo + 2.0 * h || hi > extent.hi - 2.0 * h {
        return Err(Error::Margin(format!(
            "domain spans [{lo:.6}, {hi:.6}], extent [{}, {}], h = {h}",
            extent.lo, extent.hi
        )));
    }
    Ok(())
}

fn count_sign_changes<F: Fn(f64) -> f64>(f: F, fa: f64, fb: f64) -> usize {
    let mut changes = 0;
    let mut prev = fa < 0.0;
    for k in 1..=SCAN_RESOLUTION {
        let v = if k == SCAN_RESOLUTION { fb } else { f(k as f64 / SCAN_RESOLUTION as f64) };
        let now = v < 0.0;
        changes += (now != prev) as usize;
        prev = now;
    }
    changes
}

/// Root of `f` on `[0, 1]` given the side of `s = 0`.
fn bisect<F: Fn(f64) -> f64>(f: F, start_inside: bool) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) < 0.0) == start_inside {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn set_control_intervals(boundary: &mut [BoundaryPoint]) {
    let k = boundary.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| boundary[a].theta.total_cmp(&boundary[b].theta));
    for idx in 0..k {
        let me = order[idx];
        let t = boundary[me].theta;
        if k == 1 {
            boundary[me].control = [t - PI, t + PI];
            continue;
        }
        let prev = boundary[order[(idx + k - 1) % k]].theta;
        let next = boundary[order[(idx + 1) % k]].theta;
        let lo = t - 0.5 * (t - prev).rem_euclid(TAU);
        let hi = t + 0.5 * (next - t).rem_euclid(TAU);
        boundary[me].control = [lo, hi];
    }
}
