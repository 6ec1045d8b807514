//! Star-shaped domains described by a truncated Fourier series of the polar
//! radius, and electrodes described as angular arcs of their boundary.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::adaptive_simpson;

pub type Point = [f64; 2];

/// Samples used to validate `0 < r(θ) < 2`.
pub const SHAPE_SAMPLES: usize = 4096;

/// Relative tolerance of arc-length integrals.
pub const ARC_LENGTH_RTOL: f64 = 1e-10;

/// Relative band around the boundary inside which points count as interior.
pub const BOUNDARY_BAND: f64 = 1e-14;

/// Boundary `r(θ) = α₀ + Σ_k (α_k cos kθ + α_{k+N} sin kθ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryShape {
    alpha: Vec<f64>,
}

/// Point on the boundary with its outward normal, tangent and speed `ρ = |dx/dθ|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub point: Point,
    pub normal: Point,
    pub tangent: Point,
    pub rho: f64,
}

impl BoundaryShape {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() || alpha.len() % 2 == 0 {
            return Err(Error::Shape(format!(
                "expected 2N+1 coefficients, got {}",
                alpha.len()
            )));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::Shape("non-finite coefficient".into()));
        }
        let shape = Self { alpha };
        for k in 0..SHAPE_SAMPLES {
            let theta = TAU * k as f64 / SHAPE_SAMPLES as f64;
            let r = shape.radius(theta);
            if !(r > 0.0 && r < 2.0) {
                return Err(Error::Shape(format!("r({theta:.6}) = {r} is outside (0, 2)")));
            }
        }
        Ok(shape)
    }

    pub fn disk(radius: f64) -> Result<Self> {
        Self::new(vec![radius])
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Fourier order N.
    pub fn order(&self) -> usize {
        self.alpha.len() / 2
    }

    fn series(&self, theta: f64, derivative: u32) -> f64 {
        let n = self.order();
        let mut acc = if derivative == 0 { self.alpha[0] } else { 0.0 };
        for k in 1..=n {
            let kf = k as f64;
            let (s, c) = (kf * theta).sin_cos();
            let (a, b) = (self.alpha[k], self.alpha[k + n]);
            acc += match derivative {
                0 => a * c + b * s,
                1 => kf * (-a * s + b * c),
                _ => -kf * kf * (a * c + b * s),
            };
        }
        acc
    }

    pub fn radius(&self, theta: f64) -> f64 {
        self.series(theta, 0)
    }

    pub fn radius_deriv(&self, theta: f64) -> f64 {
        self.series(theta, 1)
    }

    pub fn radius_second_deriv(&self, theta: f64) -> f64 {
        self.series(theta, 2)
    }

    /// `ρ(θ) = sqrt(r² + r'²)`, the arc-length density.
    pub fn rho(&self, theta: f64) -> f64 {
        self.radius(theta).hypot(self.radius_deriv(theta))
    }

    pub fn point(&self, theta: f64) -> Point {
        let r = self.radius(theta);
        let (s, c) = theta.sin_cos();
        [r * c, r * s]
    }

    pub fn frame(&self, theta: f64) -> Frame {
        let r = self.radius(theta);
        let dr = self.radius_deriv(theta);
        let rho = r.hypot(dr);
        let (s, c) = theta.sin_cos();
        let u = [c, s];
        let v = [-s, c];
        Frame {
            point: [r * c, r * s],
            normal: [(r * u[0] - dr * v[0]) / rho, (r * u[1] - dr * v[1]) / rho],
            tangent: [(dr * u[0] + r * v[0]) / rho, (dr * u[1] + r * v[1]) / rho],
            rho,
        }
    }

    /// `‖p‖ − r(θ_p)`: negative inside, positive outside.
    pub fn level(&self, p: Point) -> f64 {
        p[0].hypot(p[1]) - self.radius(p[1].atan2(p[0]))
    }

    /// Classification test; points within `1e-14·r` of the boundary count
    /// as inside.
    pub fn is_inside(&self, p: Point) -> bool {
        let theta = p[1].atan2(p[0]);
        let r = self.radius(theta);
        p[0].hypot(p[1]) - r < BOUNDARY_BAND * r
    }

    /// Length of the arc between `theta_a` and `theta_b` (signed).
    pub fn arc_length(&self, theta_a: f64, theta_b: f64) -> f64 {
        let scale = self.alpha[0].abs().max(1e-3) * (theta_b - theta_a).abs();
        self.arc_length_tol(theta_a, theta_b, ARC_LENGTH_RTOL * scale * 1e-2)
    }

    pub(crate) fn arc_length_tol(&self, theta_a: f64, theta_b: f64, tol: f64) -> f64 {
        adaptive_simpson(|t| self.rho(t), theta_a, theta_b, tol)
    }

    pub fn perimeter(&self) -> f64 {
        self.arc_length(0.0, TAU)
    }

    /// Largest sampled radius.
    pub fn max_radius(&self) -> f64 {
        (0..SHAPE_SAMPLES)
            .map(|k| self.radius(TAU * k as f64 / SHAPE_SAMPLES as f64))
            .fold(0.0, f64::max)
    }

    /// Solves `length = ∫_{θ¹}^{θ²} ρ(θ) dθ` for `θ²` by Newton steps
    /// safeguarded with bisection.
    pub fn solve_end_angle(&self, theta1: f64, length: f64) -> Result<f64> {
        if !(length >= 0.0) || !length.is_finite() {
            return Err(Error::NoRoot(format!("electrode length {length} is not admissible")));
        }
        if length == 0.0 {
            return Ok(theta1);
        }
        let perimeter = self.arc_length(theta1, theta1 + TAU);
        if length >= perimeter {
            return Err(Error::NoRoot(format!(
                "length {length} exceeds the perimeter {perimeter}"
            )));
        }
        let target_tol = 1e-13 * length;
        let (mut lo, mut hi) = (theta1, theta1 + TAU);
        let mut theta = (theta1 + length / self.rho(theta1)).clamp(lo, hi);
        let mut residual = self.arc_length_tol(theta1, theta, 1e-15 * length) - length;
        for _ in 0..200 {
            if residual.abs() <= target_tol {
                return Ok(theta);
            }
            if residual > 0.0 {
                hi = theta;
            } else {
                lo = theta;
            }
            let newton = theta - residual / self.rho(theta);
            let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            // integrate only the increment to keep the residual accurate
            residual += self.arc_length_tol(theta, next, 1e-16 * length.max(1.0));
            theta = next;
            if hi - lo < 1e-15 {
                break;
            }
        }
        if residual.abs() <= 1e-12 * length {
            Ok(theta)
        } else {
            Err(Error::NoRoot(format!(
                "end angle from {theta1} with length {length} did not converge"
            )))
        }
    }
}

/// Contact admittivity on one electrode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Admittivity {
    /// Classical model, `ξ = 1/z`.
    Constant { impedance: f64 },
    /// `ξ = (1/z)·exp(1 − 1/(1 − s²))` on the central `support` fraction
    /// of the arc, zero elsewhere.
    SmoothBump { impedance: f64, support: f64 },
}

pub const DEFAULT_BUMP_SUPPORT: f64 = 0.8;

impl Admittivity {
    pub fn constant(impedance: f64) -> Self {
        Admittivity::Constant { impedance }
    }

    pub fn smooth(impedance: f64) -> Self {
        Admittivity::SmoothBump { impedance, support: DEFAULT_BUMP_SUPPORT }
    }

    pub fn impedance(&self) -> f64 {
        match *self {
            Admittivity::Constant { impedance } | Admittivity::SmoothBump { impedance, .. } => {
                impedance
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let z = self.impedance();
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::Layout(format!("contact impedance {z} must be positive")));
        }
        if let Admittivity::SmoothBump { support, .. } = *self {
            if !(support > 0.0 && support < 1.0) {
                return Err(Error::Layout(format!(
                    "bump support fraction {support} must lie in (0, 1)"
                )));
            }
        }
        Ok(())
    }

    /// Value at angle `theta` of an electrode spanning `[theta1, theta2]`,
    /// `theta` already unwrapped into that interval.
    fn value(&self, theta1: f64, theta2: f64, theta: f64) -> f64 {
        match *self {
            Admittivity::Constant { impedance } => 1.0 / impedance,
            Admittivity::SmoothBump { impedance, support } => {
                let center = 0.5 * (theta1 + theta2);
                let half = 0.5 * support * (theta2 - theta1);
                let s = (theta - center) / half;
                if s.abs() >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - s * s)).exp() / impedance
                }
            }
        }
    }
}

/// Electrodes `E_m = {r(θ)u(θ) : θ ∈ [Θ¹_m, Θ²_m]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeLayout {
    theta1: Vec<f64>,
    theta2: Vec<f64>,
    admittivity: Vec<Admittivity>,
}

/// Resolved electrode arc.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElectrodeArc {
    pub index: usize,
    pub theta1: f64,
    pub theta2: f64,
    pub length: f64,
}

impl ElectrodeArc {
    pub fn contains(&self, theta: f64) -> bool {
        unwrap_from(theta, self.theta1) <= self.theta2 + 1e-15
    }
}

/// Maps `theta` into `[base, base + 2π)`.
pub fn unwrap_from(theta: f64, base: f64) -> f64 {
    base + (theta - base).rem_euclid(TAU)
}

impl ElectrodeLayout {
    pub fn new(theta1: Vec<f64>, theta2: Vec<f64>, admittivity: Vec<Admittivity>) -> Result<Self> {
        let m = theta1.len();
        if m == 0 || theta2.len() != m || admittivity.len() != m {
            return Err(Error::Layout(format!(
                "need matching, non-empty angle and admittivity lists (got {}, {}, {})",
                m,
                theta2.len(),
                admittivity.len()
            )));
        }
        if theta1.iter().chain(&theta2).any(|t| !t.is_finite()) {
            return Err(Error::Layout("non-finite angle".into()));
        }
        for a in &admittivity {
            a.validate()?;
        }
        // Θ¹₁ < Θ²₁ < Θ¹₂ < … < Θ²_M < Θ¹₁ + 2π
        let mut prev = f64::NEG_INFINITY;
        for k in 0..m {
            if !(theta1[k] > prev && theta2[k] > theta1[k]) {
                return Err(Error::Layout(format!(
                    "electrode {} arc [{}, {}] is empty or overlaps its predecessor",
                    k + 1,
                    theta1[k],
                    theta2[k]
                )));
            }
            prev = theta2[k];
        }
        if !(theta2[m - 1] < theta1[0] + TAU) {
            return Err(Error::Layout(format!(
                "last electrode ends at {} which overlaps the first one",
                theta2[m - 1]
            )));
        }
        Ok(Self { theta1, theta2, admittivity })
    }

    /// Electrodes starting at `theta1` with a prescribed arc length each.
    pub fn with_lengths(
        shape: &BoundaryShape,
        theta1: Vec<f64>,
        lengths: &[f64],
        admittivity: Vec<Admittivity>,
    ) -> Result<Self> {
        if lengths.len() != theta1.len() {
            return Err(Error::Layout("one length per electrode expected".into()));
        }
        let theta2 = theta1
            .iter()
            .zip(lengths)
            .map(|(&t, &l)| shape.solve_end_angle(t, l))
            .collect::<Result<Vec<_>>>()?;
        Self::new(theta1, theta2, admittivity)
    }

    /// `count` electrodes with `Θ¹_k = start + 2π(k−1)/count` and common length.
    pub fn equally_spaced(
        shape: &BoundaryShape,
        count: usize,
        start: f64,
        length: f64,
        admittivity: Admittivity,
    ) -> Result<Self> {
        let theta1: Vec<f64> = (0..count).map(|k| start + TAU * k as f64 / count as f64).collect();
        Self::with_lengths(shape, theta1, &vec![length; count], vec![admittivity; count])
    }

    /// Sixteen electrodes, `Θ¹_k = −π + (k−1)π/8`, length 0.35.
    pub fn standard16(shape: &BoundaryShape, admittivity: Admittivity) -> Result<Self> {
        Self::equally_spaced(shape, 16, -PI, 0.35, admittivity)
    }

    pub fn len(&self) -> usize {
        self.theta1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta1.is_empty()
    }

    pub fn theta1(&self) -> &[f64] {
        &self.theta1
    }

    pub fn theta2(&self) -> &[f64] {
        &self.theta2
    }

    pub fn admittivity(&self) -> &[Admittivity] {
        &self.admittivity
    }

    pub fn with_angles(&self, theta1: Vec<f64>, theta2: Vec<f64>) -> Result<Self> {
        Self::new(theta1, theta2, self.admittivity.clone())
    }

    pub fn arcs(&self, shape: &BoundaryShape) -> Vec<ElectrodeArc> {
        (0..self.len())
            .map(|k| ElectrodeArc {
                index: k,
                theta1: self.theta1[k],
                theta2: self.theta2[k],
                length: shape.arc_length(self.theta1[k], self.theta2[k]),
            })
            .collect()
    }

    /// Electrode containing the boundary angle `theta`, if any.
    pub fn electrode_at(&self, theta: f64) -> Option<usize> {
        (0..self.len()).find(|&k| unwrap_from(theta, self.theta1[k]) <= self.theta2[k] + 1e-15)
    }

    /// `theta` unwrapped into electrode `m`'s angular interval.
    pub fn local_angle(&self, m: usize, theta: f64) -> Result<f64> {
        let t = unwrap_from(theta, self.theta1[m]);
        if t <= self.theta2[m] + 1e-15 {
            Ok(t.min(self.theta2[m]))
        } else {
            Err(Error::OutsideElectrode { electrode: m, theta })
        }
    }

    pub fn center(&self, m: usize) -> f64 {
        0.5 * (self.theta1[m] + self.theta2[m])
    }

    /// Part of the angular interval `control` (shorter than 2π) covered by
    /// electrode `m`, in the electrode's own angle range.
    pub fn overlap(&self, m: usize, control: [f64; 2]) -> Option<(f64, f64)> {
        let [a, b] = self.shift_near(m, control);
        let lo = a.max(self.theta1[m]);
        let hi = b.min(self.theta2[m]);
        (hi > lo).then_some((lo, hi))
    }

    fn shift_near(&self, m: usize, control: [f64; 2]) -> [f64; 2] {
        let mid = 0.5 * (control[0] + control[1]);
        let shift = unwrap_from(mid, self.center(m) - PI) - mid;
        [control[0] + shift, control[1] + shift]
    }

    /// `∫ χ dθ` over `control`, where `χ` is the indicator of electrode `m`
    /// with both jumps replaced by linear ramps of half-width `eta`.
    pub fn ramped_cover(&self, m: usize, control: [f64; 2], eta: f64) -> f64 {
        let [a, b] = self.shift_near(m, control);
        let prim = |x: f64| {
            if x <= -eta {
                0.0
            } else if x >= eta {
                x
            } else {
                (x + eta) * (x + eta) / (4.0 * eta)
            }
        };
        let (t1, t2) = (self.theta1[m], self.theta2[m]);
        ((prim(b - t1) - prim(a - t1)) - (prim(b - t2) - prim(a - t2))).max(0.0)
    }

    /// Mean of `ξ_m` over `[a, b] ⊂ [Θ¹_m, Θ²_m]`.
    pub fn mean_admittivity(&self, m: usize, a: f64, b: f64) -> f64 {
        let (t1, t2) = (self.theta1[m], self.theta2[m]);
        let adm = &self.admittivity[m];
        match adm {
            Admittivity::Constant { impedance } => 1.0 / impedance,
            Admittivity::SmoothBump { .. } => {
                // four-point Gauss-Legendre
                const NODES: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
                const WEIGHTS: [f64; 4] = [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];
                let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
                0.5 * NODES.iter().zip(WEIGHTS).map(|(x, w)| w * adm.value(t1, t2, c + r * x)).sum::<f64>()
            }
        }
    }

    pub fn admittivity_at(&self, m: usize, theta: f64) -> Result<f64> {
        if m >= self.len() {
            return Err(Error::Layout(format!("electrode index {m} out of range")));
        }
        let t = self.local_angle(m, theta)?;
        Ok(self.admittivity[m].value(self.theta1[m], self.theta2[m], t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::trapezoid;
    use crate::shapes;

    #[test]
    fn radius_of_the_reference_shapes() {
        let disk = BoundaryShape::disk(1.5).unwrap();
        assert_eq!(disk.radius(0.7), 1.5);
        assert_eq!(disk.radius_deriv(1.3), 0.0);
        assert_eq!(disk.radius_second_deriv(-2.0), 0.0);
        let omega2 = shapes::omega2();
        assert!((omega2.radius(0.0) - 1.77).abs() < 1e-15);
    }

    #[test]
    fn radius_derivatives_match_finite_differences() {
        let s = shapes::omega3();
        let d = 1e-5;
        for k in 0..50 {
            let t = -PI + 0.13 * k as f64;
            let fd1 = (s.radius(t + d) - s.radius(t - d)) / (2.0 * d);
            let fd2 = (s.radius_deriv(t + d) - s.radius_deriv(t - d)) / (2.0 * d);
            assert!((fd1 - s.radius_deriv(t)).abs() < 1e-8);
            assert!((fd2 - s.radius_second_deriv(t)).abs() < 1e-8);
        }
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        assert!(BoundaryShape::new(vec![]).is_err());
        assert!(BoundaryShape::new(vec![1.0, 0.1]).is_err());
        assert!(BoundaryShape::new(vec![2.5]).is_err());
        assert!(BoundaryShape::new(vec![0.5, 0.6, 0.0]).is_err());
    }

    #[test]
    fn disk_frame() {
        let disk = BoundaryShape::disk(1.5).unwrap();
        let f = disk.frame(0.0);
        assert_eq!(f.point, [1.5, 0.0]);
        assert_eq!(f.normal, [1.0, 0.0]);
        assert_eq!(f.tangent, [0.0, 1.0]);
        assert_eq!(f.rho, 1.5);
        let f = disk.frame(PI / 2.0);
        assert!((f.normal[0]).abs() < 1e-15 && (f.normal[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normal_matches_curve_finite_difference() {
        let s = shapes::omega2();
        let t = 0.3;
        let d = 1e-6;
        let a = s.point(t - d);
        let b = s.point(t + d);
        let tangent = [b[0] - a[0], b[1] - a[1]];
        let len = tangent[0].hypot(tangent[1]);
        // rotate the tangent clockwise to get the outward normal of a counter-clockwise curve
        let fd_normal = [tangent[1] / len, -tangent[0] / len];
        let f = s.frame(t);
        assert!((f.normal[0] - fd_normal[0]).abs() < 1e-6);
        assert!((f.normal[1] - fd_normal[1]).abs() < 1e-6);
    }

    #[test]
    fn frame_is_orthonormal_direct_and_outward() {
        for s in [shapes::omega1(), shapes::omega2(), shapes::omega3()] {
            for k in 0..SHAPE_SAMPLES {
                let t = TAU * k as f64 / SHAPE_SAMPLES as f64 - PI;
                let f = s.frame(t);
                let dot = f.normal[0] * f.tangent[0] + f.normal[1] * f.tangent[1];
                let cross = f.normal[0] * f.tangent[1] - f.normal[1] * f.tangent[0];
                assert!(dot.abs() < 1e-12);
                assert!((f.normal[0].hypot(f.normal[1]) - 1.0).abs() < 1e-12);
                assert!((f.tangent[0].hypot(f.tangent[1]) - 1.0).abs() < 1e-12);
                assert!((cross - 1.0).abs() < 1e-12);
                let out = [f.point[0] + 1e-6 * f.normal[0], f.point[1] + 1e-6 * f.normal[1]];
                let inn = [f.point[0] - 1e-6 * f.normal[0], f.point[1] - 1e-6 * f.normal[1]];
                assert!(!s.is_inside(out));
                assert!(s.is_inside(inn));
            }
        }
    }

    #[test]
    fn inside_tests() {
        let disk = BoundaryShape::disk(1.5).unwrap();
        assert!(disk.is_inside([0.0, 0.0]));
        assert!(!disk.is_inside([2.0, 0.0]));
        assert!(disk.is_inside([1.5, 0.0]));
        let s = shapes::omega3();
        let p: Point = [0.5, 0.5];
        let oracle = p[0].hypot(p[1]) < s.radius(p[1].atan2(p[0]));
        assert_eq!(s.is_inside(p), oracle);
        assert!(oracle);
    }

    #[test]
    fn arc_length_on_disk_and_against_trapezoid() {
        let disk = BoundaryShape::disk(1.5).unwrap();
        assert!((disk.arc_length(0.0, 0.2) - 0.3).abs() < 1e-13);
        let s = shapes::omega2();
        let oracle = trapezoid(|t| s.rho(t), 0.0, 0.25, 1_000_000);
        assert!((s.arc_length(0.0, 0.25) - oracle).abs() < 1e-8);
        let perim = trapezoid(|t| s.rho(t), 0.0, TAU, 1_000_000);
        assert!((s.perimeter() - perim).abs() < 1e-8);
    }

    #[test]
    fn end_angle_solutions() {
        let disk = BoundaryShape::disk(1.5).unwrap();
        let t2 = disk.solve_end_angle(-PI, 0.35).unwrap();
        assert!((t2 - (-PI + 7.0 / 30.0)).abs() < 1e-13);
        assert_eq!(disk.solve_end_angle(0.4, 0.0).unwrap(), 0.4);
        let s = shapes::omega3();
        let t2 = s.solve_end_angle(0.2, 0.35).unwrap();
        let back = adaptive_simpson(|t| s.rho(t), 0.2, t2, 1e-15);
        assert!((back - 0.35).abs() < 1e-10 * 0.35);
        assert!(s.solve_end_angle(0.0, 100.0).is_err());
        assert!(s.solve_end_angle(0.0, -1.0).is_err());
    }

    #[test]
    fn standard_layout_on_the_disk() {
        let disk = BoundaryShape::disk(1.5).unwrap();
        let layout = ElectrodeLayout::standard16(&disk, Admittivity::constant(1.0)).unwrap();
        for k in 0..16 {
            let t1 = -PI + k as f64 * PI / 8.0;
            assert!((layout.theta1()[k] - t1).abs() < 1e-14);
            assert!((layout.theta2()[k] - (t1 + 0.35 / 1.5)).abs() < 1e-12);
        }
        for arc in layout.arcs(&disk) {
            assert!((arc.length - 0.35).abs() < 1e-11);
        }
    }

    #[test]
    fn standard_layouts_are_disjoint_on_all_domains() {
        for s in [shapes::omega1(), shapes::omega2(), shapes::omega3()] {
            let layout = ElectrodeLayout::standard16(&s, Admittivity::constant(1.0)).unwrap();
            for arc in layout.arcs(&s) {
                assert!((arc.length - 0.35).abs() < 1e-10 * 0.35);
            }
        }
    }

    #[test]
    fn overlapping_arcs_are_rejected() {
        let a = vec![Admittivity::constant(1.0); 2];
        assert!(ElectrodeLayout::new(vec![0.0, 0.5], vec![0.6, 1.0], a.clone()).is_err());
        assert!(ElectrodeLayout::new(vec![0.0, 3.0], vec![1.0, 6.5], a.clone()).is_err());
        assert!(ElectrodeLayout::new(vec![0.0, 3.0], vec![1.0, 4.0], a).is_ok());
    }

    #[test]
    fn admittivity_models() {
        let layout = ElectrodeLayout::new(
            vec![0.0, 2.0],
            vec![1.0, 3.0],
            vec![Admittivity::constant(0.1), Admittivity::smooth(0.5)],
        )
        .unwrap();
        assert!((layout.admittivity_at(0, 0.3).unwrap() - 10.0).abs() < 1e-12);
        assert!((layout.admittivity_at(1, 2.5).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(layout.admittivity_at(1, 2.0 + 0.1 - 1e-12).unwrap(), 0.0);
        assert!(layout.admittivity_at(1, 2.1 + 1e-9).unwrap() < 1e-100);
        assert!(matches!(
            layout.admittivity_at(0, 1.5),
            Err(Error::OutsideElectrode { electrode: 0, .. })
        ));
        // angles are 2π-periodic
        assert!((layout.admittivity_at(0, 0.3 + TAU).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_bump_is_nonnegative_and_nonzero() {
        let layout = ElectrodeLayout::new(vec![-1.0], vec![-0.6], vec![Admittivity::smooth(1.0)]).unwrap();
        let mut max = 0.0f64;
        for k in 0..=1000 {
            let t = -1.0 + 0.4 * k as f64 / 1000.0;
            let v = layout.admittivity_at(0, t).unwrap();
            assert!(v >= 0.0);
            max = max.max(v);
        }
        assert!(max > 0.99);
    }
}
