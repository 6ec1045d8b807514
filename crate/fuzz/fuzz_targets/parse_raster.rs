#![no_main]

use ibcem::conductivity::{Conductivity, RasterConductivity};
use ibcem::mesh::Extent;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(rows) = ibcem::io::parse_matrix(text) else { return };
    let extent = Extent::new(-1.0, 1.0).unwrap();
    if let Ok(raster) = RasterConductivity::new(extent, rows) {
        for p in [[0.0, 0.0], [-1.0, -1.0], [1.0, 1.0], [0.3, -0.7], [5.0, -5.0]] {
            let v = raster.value(p);
            assert!(v.is_finite() && v > 0.0);
        }
    }
});
