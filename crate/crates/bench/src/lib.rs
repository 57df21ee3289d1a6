//! Shared fixtures for the criterion benchmarks.

use polybill_core::{linear_law, BilliardMap, Polygon};

pub const TRIANGLE: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
pub const QUAD: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.1], [0.85, 0.9], [0.2, 0.7]];

pub fn map(vertices: &[[f64; 2]], sigma: f64) -> BilliardMap {
    BilliardMap::new(
        Polygon::from_pairs(vertices).expect("fixture polygon"),
        linear_law(sigma).expect("fixture law"),
    )
}

pub fn triangle() -> BilliardMap {
    map(&TRIANGLE, 0.5)
}

pub fn quad() -> BilliardMap {
    map(&QUAD, 0.5)
}
