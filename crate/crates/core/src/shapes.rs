//! Reference domains and electrode layouts used by the examples and tests.

use std::f64::consts::PI;

use crate::geometry::{Admittivity, BoundaryShape, ElectrodeLayout};
use crate::mesh::Extent;

/// Disk of radius 1.5.
pub fn omega1() -> BoundaryShape {
    BoundaryShape::new(vec![1.5]).expect("valid shape")
}

pub fn omega2() -> BoundaryShape {
    BoundaryShape::new(vec![1.51, 0.01, 0.05, 0.2, 0.035, 0.01, 0.1]).expect("valid shape")
}

pub fn omega3() -> BoundaryShape {
    BoundaryShape::new(vec![1.6, 0.002, 0.01, 0.003, 0.035, 0.2, 0.15]).expect("valid shape")
}

/// Perturbed disk used for the fixed-length electrode experiments.
pub fn fixed_length_domain() -> BoundaryShape {
    BoundaryShape::new(vec![0.8, 0.02, 0.001, 0.05, 0.001, 0.04, 0.001]).expect("valid shape")
}

pub fn by_name(name: &str) -> Option<BoundaryShape> {
    match name {
        "omega1" => Some(omega1()),
        "omega2" => Some(omega2()),
        "omega3" => Some(omega3()),
        "fixed-length" => Some(fixed_length_domain()),
        _ => None,
    }
}

/// Reference square `[-2, 2]²`.
pub const REFERENCE_EXTENT: Extent = Extent { lo: -2.0, hi: 2.0 };

/// Unit square `[-1, 1]²` used for the small disk experiments.
pub const UNIT_EXTENT: Extent = Extent { lo: -1.0, hi: 1.0 };

/// Sixteen electrodes of length 0.35 starting at `−π + kπ/8`.
pub fn standard_layout(shape: &BoundaryShape, admittivity: Admittivity) -> ElectrodeLayout {
    ElectrodeLayout::standard16(shape, admittivity).expect("standard layout fits the reference shapes")
}

/// Four electrodes spanning 0.5 rad each on a disk, `Θ¹_k = −3π/4 + (k−1)π/2`.
pub fn four_electrode_disk_layout(admittivity: Admittivity) -> ElectrodeLayout {
    let theta1: Vec<f64> = (0..4).map(|k| -0.75 * PI + k as f64 * 0.5 * PI).collect();
    let theta2 = theta1.iter().map(|t| t + 0.5).collect();
    ElectrodeLayout::new(theta1, theta2, vec![admittivity; 4]).expect("valid layout")
}
