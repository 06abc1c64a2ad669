//! Analytic test images rendered at grid nodes.

use crate::error::Result;
use crate::grid::{ImageGrid, Point};

/// `c` everywhere.
pub fn constant(nx: usize, ny: usize, c: f64) -> Result<ImageGrid> {
    ImageGrid::from_fn(nx, ny, |_, _| c)
}

/// 0 left of `x = width/2`, 1 right of it, ½ on the line itself.
pub fn step(nx: usize, ny: usize) -> Result<ImageGrid> {
    let mid = nx.max(ny) as f64;
    let mid = 0.5 * nx as f64 / mid;
    ImageGrid::from_fn(nx, ny, |x, _| {
        if (x - mid).abs() < 1e-12 {
            0.5
        } else if x < mid {
            0.0
        } else {
            1.0
        }
    })
}

/// `x / width`, a unit-slope ramp on the unit square.
pub fn ramp(nx: usize, ny: usize) -> Result<ImageGrid> {
    let w = nx as f64 / nx.max(ny) as f64;
    ImageGrid::from_fn(nx, ny, |x, _| x / w)
}

/// `amplitude · exp(-|p - center|² / (2σ²))`.
pub fn gaussian_bump(
    nx: usize,
    ny: usize,
    center: Point,
    sigma: f64,
    amplitude: f64,
) -> Result<ImageGrid> {
    let s2 = 2.0 * sigma * sigma;
    ImageGrid::from_fn(nx, ny, |x, y| {
        amplitude * (-(Point::new(x, y).dist2(&center)) / s2).exp()
    })
}
