//! Rectangular pixel grid and the scalar fields that live on it.
//!
//! Pixels are identified with grid nodes, so a `W x H` image yields a grid of
//! `(W-1) x (H-1)` square cells. The longer side of the domain always has unit
//! length. Node `(i, j)` sits at `(i*h, j*h)` and is stored at `j*(nx+1) + i`;
//! cell `(i, j)` spans `[i*h, (i+1)*h] x [j*h, (j+1)*h]` and is stored at
//! `j*nx + i`. Image row `j` maps to `y = j*h`, so `y` grows downwards.

use crate::error::{Error, Result};

/// A point in domain coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist2(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(&self, other: &Point) -> f64 {
        self.dist2(other).sqrt()
    }
}

/// The discretized image domain together with the nodal datum `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    nx: usize,
    ny: usize,
    h: f64,
    f: Vec<f64>,
}

impl ImageGrid {
    /// Builds a grid from nodal image values, which must all lie in `[0, 1]`.
    pub fn new(nx: usize, ny: usize, f: Vec<f64>) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Size(format!(
                "grid needs at least 2x2 cells (3x3 pixels), got {nx}x{ny} cells"
            )));
        }
        if f.len() != (nx + 1) * (ny + 1) {
            return Err(Error::Size(format!(
                "expected {} nodal values for a {nx}x{ny} grid, got {}",
                (nx + 1) * (ny + 1),
                f.len()
            )));
        }
        if let Some((k, v)) = f
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Size(format!(
                "image value {v} at node {k} lies outside [0, 1]"
            )));
        }
        let h = 1.0 / nx.max(ny) as f64;
        Ok(ImageGrid { nx, ny, h, f })
    }

    /// Samples `image(x, y)` at every node.
    pub fn from_fn(nx: usize, ny: usize, image: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let h = 1.0 / nx.max(ny) as f64;
        let mut f = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                f.push(image(i as f64 * h, j as f64 * h));
            }
        }
        Self::new(nx, ny, f)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Cell side length.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.h
    }

    pub fn height(&self) -> f64 {
        self.ny as f64 * self.h
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Nodal image values.
    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn image(&self) -> NodalField {
        NodalField {
            nx: self.nx,
            ny: self.ny,
            values: self.f.clone(),
        }
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn node_point(&self, i: usize, j: usize) -> Point {
        Point::new(i as f64 * self.h, j as f64 * self.h)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        Point::new((i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h)
    }

    /// Center of the cell with linear index `k`.
    pub fn cell_center_of(&self, k: usize) -> Point {
        self.cell_center(k % self.nx, k / self.nx)
    }

    /// Global node indices of cell `(i, j)` in counter-clockwise order
    /// starting from the lower-left corner: `[sw, se, ne, nw]`.
    pub fn cell_nodes(&self, i: usize, j: usize) -> [usize; 4] {
        let sw = self.node_index(i, j);
        let nw = sw + self.nx + 1;
        [sw, sw + 1, nw + 1, nw]
    }

    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.width()).contains(&p.x) && (0.0..=self.height()).contains(&p.y)
    }

    /// Distance from `p` to the domain boundary (`p` assumed inside).
    pub fn boundary_distance(&self, p: Point) -> f64 {
        p.x.min(self.width() - p.x)
            .min(p.y)
            .min(self.height() - p.y)
    }

    /// The cell containing `p`, with points on shared edges assigned to the
    /// cell above/right except at the far boundary.
    pub fn locate(&self, p: Point) -> Result<(usize, usize, f64, f64)> {
        let tx = snap(p.x / self.h);
        let ty = snap(p.y / self.h);
        let (nx, ny) = (self.nx as f64, self.ny as f64);
        if !(tx >= 0.0 && tx <= nx && ty >= 0.0 && ty <= ny) {
            return Err(Error::Domain {
                x: p.x,
                y: p.y,
                width: self.width(),
                height: self.height(),
            });
        }
        let i = (tx.floor() as usize).min(self.nx - 1);
        let j = (ty.floor() as usize).min(self.ny - 1);
        Ok((i, j, tx - i as f64, ty - j as f64))
    }

    pub(crate) fn check_nodal(&self, field: &NodalField) -> Result<()> {
        self.check_dims((field.nx, field.ny))
    }

    pub(crate) fn check_cell(&self, field: &CellField) -> Result<()> {
        self.check_dims((field.nx, field.ny))
    }

    fn check_dims(&self, got: (usize, usize)) -> Result<()> {
        if got == (self.nx, self.ny) {
            Ok(())
        } else {
            Err(Error::Shape {
                expected: (self.nx, self.ny),
                got,
            })
        }
    }
}

// Coordinates within rounding distance of a grid line are pulled onto it so
// that evaluation at a node returns the stored value bit for bit.
fn snap(t: f64) -> f64 {
    let r = t.round();
    if (t - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        t
    }
}

/// Scalar field on the `(nx+1) x (ny+1)` grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl NodalField {
    pub fn constant(grid: &ImageGrid, value: f64) -> Self {
        NodalField {
            nx: grid.nx,
            ny: grid.ny,
            values: vec![value; grid.node_count()],
        }
    }

    pub fn zeros(grid: &ImageGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: &ImageGrid, g: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.node_count());
        for j in 0..=grid.ny {
            for i in 0..=grid.nx {
                let p = grid.node_point(i, j);
                values.push(g(p.x, p.y));
            }
        }
        NodalField {
            nx: grid.nx,
            ny: grid.ny,
            values,
        }
    }

    pub fn from_values(grid: &ImageGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Size(format!(
                "expected {} nodal values, got {}",
                grid.node_count(),
                values.len()
            )));
        }
        Ok(NodalField {
            nx: grid.nx,
            ny: grid.ny,
            values,
        })
    }

    pub(crate) fn from_raw(nx: usize, ny: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), (nx + 1) * (ny + 1));
        NodalField { nx, ny, values }
    }

    /// Field shape in cells, `(nx, ny)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * (self.nx + 1) + i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Scalar field with one value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl CellField {
    pub fn constant(grid: &ImageGrid, value: f64) -> Self {
        CellField {
            nx: grid.nx,
            ny: grid.ny,
            values: vec![value; grid.cell_count()],
        }
    }

    pub fn from_values(grid: &ImageGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::Size(format!(
                "expected {} cell values, got {}",
                grid.cell_count(),
                values.len()
            )));
        }
        Ok(CellField {
            nx: grid.nx,
            ny: grid.ny,
            values,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Tensor-product bilinear interpolation of `field` at `(x, y)`.
pub fn bilinear_eval(grid: &ImageGrid, field: &NodalField, x: f64, y: f64) -> Result<f64> {
    grid.check_nodal(field)?;
    let (i, j, s, t) = grid.locate(Point::new(x, y))?;
    let [sw, se, ne, nw] = grid.cell_nodes(i, j);
    let u = &field.values;
    Ok((1.0 - s) * (1.0 - t) * u[sw] + s * (1.0 - t) * u[se] + s * t * u[ne] + (1.0 - s) * t * u[nw])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(nx: usize, ny: usize) -> ImageGrid {
        ImageGrid::from_fn(nx, ny, |_, _| 0.0).unwrap()
    }

    #[test]
    fn rejects_tiny_grids() {
        assert!(matches!(
            ImageGrid::new(1, 1, vec![1.0; 4]),
            Err(Error::Size(_))
        ));
        assert!(ImageGrid::new(2, 2, vec![1.0; 9]).is_ok());
    }

    #[test]
    fn rejects_out_of_range_values() {
        let mut f = vec![0.5; 9];
        f[4] = 1.5;
        assert!(ImageGrid::new(2, 2, f).is_err());
    }

    #[test]
    fn longer_side_is_unit() {
        let g = grid(8, 4);
        assert_eq!(g.h(), 0.125);
        assert_eq!(g.width(), 1.0);
        assert_eq!(g.height(), 0.5);
    }

    #[test]
    fn constant_field_is_reproduced() {
        let g = grid(5, 3);
        let c = NodalField::constant(&g, 0.37);
        for &(x, y) in &[(0.0, 0.0), (0.31, 0.17), (1.0, 0.6), (0.5, 0.6)] {
            let v = bilinear_eval(&g, &c, x, y).unwrap();
            assert!((v - 0.37).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_field_is_reproduced() {
        let g = grid(10, 10);
        let xs = NodalField::from_fn(&g, |x, _| x);
        let x = 0.3 * g.h() * g.nx() as f64;
        for &y in &[0.0, 0.21, 0.77, 1.0] {
            assert!((bilinear_eval(&g, &xs, x, y).unwrap() - x).abs() < 1e-14);
        }
    }

    #[test]
    fn unit_cell_midpoint_is_average() {
        let g = grid(2, 2);
        let mut v = NodalField::zeros(&g);
        // nodal values alternate 0, 1, 0 along x
        for j in 0..=2 {
            v.values_mut()[g.node_index(1, j)] = 1.0;
        }
        let c = g.cell_center(0, 0);
        assert_eq!(bilinear_eval(&g, &v, c.x, c.y).unwrap(), 0.5);
    }

    #[test]
    fn outside_point_is_domain_error() {
        let g = grid(4, 4);
        let v = NodalField::zeros(&g);
        assert!(matches!(
            bilinear_eval(&g, &v, 1.01, 0.5),
            Err(Error::Domain { .. })
        ));
        assert!(bilinear_eval(&g, &v, 0.5, -0.2).is_err());
    }

    #[test]
    fn mismatched_field_is_shape_error() {
        let v = NodalField::zeros(&grid(3, 3));
        assert!(matches!(
            bilinear_eval(&grid(4, 4), &v, 0.5, 0.5),
            Err(Error::Shape { .. })
        ));
    }

    proptest! {
        #[test]
        fn exact_at_nodes(nx in 2usize..12, ny in 2usize..12, seed in any::<u64>()) {
            let g = grid(nx, ny);
            let v = NodalField::from_fn(&g, |x, y| ((x * 12.9898 + y * 78.233 + seed as f64 * 1e-9).sin() * 43758.5453).fract());
            for j in 0..=ny {
                for i in 0..=nx {
                    let p = g.node_point(i, j);
                    prop_assert_eq!(bilinear_eval(&g, &v, p.x, p.y).unwrap(), v.get(i, j));
                }
            }
        }

        #[test]
        fn bounded_by_cell_corners(vals in proptest::collection::vec(-5.0f64..5.0, 16), s in 0.0f64..=1.0, t in 0.0f64..=1.0) {
            let g = grid(3, 3);
            let v = NodalField::from_values(&g, vals).unwrap();
            let (i, j) = (1, 1);
            let x = (i as f64 + s) * g.h();
            let y = (j as f64 + t) * g.h();
            let val = bilinear_eval(&g, &v, x, y).unwrap();
            let (ci, cj, _, _) = g.locate(Point::new(x, y)).unwrap();
            let corners = g.cell_nodes(ci, cj).map(|k| v.values()[k]);
            let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(val >= lo - 1e-12 && val <= hi + 1e-12);
        }
    }
}
