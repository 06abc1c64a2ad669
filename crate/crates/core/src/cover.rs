//! Edge sets represented as finite unions of equal-radius balls.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{CellField, ImageGrid, Point};

/// A union of open balls `B_eps(y_i)` standing in for the edge set.
///
/// Cells whose centers fall inside the union get the conductivity `contrast`
/// instead of 1. The number of balls times `2 * radius` estimates the length
/// of the covered curve.
#[derive(Debug, Clone, PartialEq)]
pub struct BallCover {
    centers: Vec<Point>,
    radius: f64,
    contrast: f64,
}

impl BallCover {
    pub fn new(radius: f64, contrast: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!("ball radius must be positive, got {radius}")));
        }
        if !(contrast > 0.0 && contrast < 1.0) {
            return Err(Error::Config(format!("contrast must lie in (0, 1), got {contrast}")));
        }
        Ok(BallCover {
            centers: Vec::new(),
            radius,
            contrast,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn contrast(&self) -> f64 {
        self.contrast
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    /// Appends a ball center. The center must lie in the closed domain and
    /// must not repeat an existing center exactly.
    pub fn insert(&mut self, center: Point, grid: &ImageGrid) -> Result<()> {
        if !grid.contains(center) {
            return Err(Error::Domain {
                x: center.x,
                y: center.y,
                width: grid.width(),
                height: grid.height(),
            });
        }
        if self.centers.contains(&center) {
            return Err(Error::DuplicateCenter {
                x: center.x,
                y: center.y,
            });
        }
        self.centers.push(center);
        Ok(())
    }

    /// Whether `p` lies in the (open) union of balls.
    pub fn covers(&self, p: Point) -> bool {
        let r2 = self.radius * self.radius;
        self.centers.iter().any(|c| c.dist2(&p) < r2)
    }

    /// Number of maintained centers. This bounds the minimal number of balls
    /// producing the same indicator from above.
    pub fn ball_count(&self) -> usize {
        self.centers.len()
    }

    /// `2 * radius * ball_count`, the length surrogate of the covered set.
    pub fn length_estimate(&self) -> f64 {
        2.0 * self.radius * self.ball_count() as f64
    }

    /// Per-cell edge indicator: `contrast` inside the union, 1 elsewhere.
    /// Membership is decided at cell centers.
    pub fn indicator_field(&self, grid: &ImageGrid) -> CellField {
        let mut v = CellField::constant(grid, 1.0);
        let nx = grid.nx();
        let h = grid.h();
        let r2 = self.radius * self.radius;
        let span = |c: f64, n: usize| {
            let lo = ((c - self.radius) / h - 0.5).floor().max(0.0) as usize;
            let hi = (((c + self.radius) / h - 0.5).ceil().max(0.0) as usize).min(n - 1);
            (lo, hi)
        };
        let vals = v.values_mut();
        for c in &self.centers {
            let (i0, i1) = span(c.x, nx);
            let (j0, j1) = span(c.y, grid.ny());
            for j in j0..=j1 {
                for i in i0..=i1 {
                    if grid.cell_center(i, j).dist2(c) < r2 {
                        vals[j * nx + i] = self.contrast;
                    }
                }
            }
        }
        v
    }

    /// Union of two covers with identical radius and contrast.
    pub fn union(&self, other: &BallCover, grid: &ImageGrid) -> Result<BallCover> {
        if self.radius != other.radius || self.contrast != other.contrast {
            return Err(Error::Config(
                "cannot merge covers with different radius or contrast".into(),
            ));
        }
        let mut out = self.clone();
        for &c in &other.centers {
            out.insert(c, grid)?;
        }
        Ok(out)
    }

    /// CSV with a parameter comment line and an `x,y` header.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# epsilon={} kappa={}\nx,y\n", self.radius, self.contrast);
        for c in &self.centers {
            let _ = writeln!(s, "{},{}", c.x, c.y);
        }
        s
    }

    pub fn from_csv(text: &str, grid: &ImageGrid) -> Result<BallCover> {
        let mut params: Option<(f64, f64)> = None;
        let mut rows = Vec::new();
        let mut seen_header = false;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix('#') {
                let mut eps = None;
                let mut kappa = None;
                for kv in rest.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("epsilon", v)) => eps = Some(parse_f64(v, "epsilon")?),
                        Some(("kappa", v)) => kappa = Some(parse_f64(v, "kappa")?),
                        _ => {}
                    }
                }
                if let (Some(e), Some(k)) = (eps, kappa) {
                    params = Some((e, k));
                }
            } else if !seen_header {
                if line != "x,y" {
                    return Err(Error::Parse {
                        field: "cover header",
                        token: line.to_string(),
                    });
                }
                seen_header = true;
            } else {
                let (x, y) = line.split_once(',').ok_or_else(|| Error::Parse {
                    field: "cover row",
                    token: line.to_string(),
                })?;
                rows.push(Point::new(parse_f64(x, "x")?, parse_f64(y, "y")?));
            }
        }
        let (eps, kappa) = params.ok_or(Error::Parse {
            field: "cover parameters",
            token: "<missing `# epsilon=.. kappa=..` line>".into(),
        })?;
        let mut cover = BallCover::new(eps, kappa)?;
        for p in rows {
            cover.insert(p, grid)?;
        }
        Ok(cover)
    }
}

fn parse_f64(s: &str, field: &'static str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        field,
        token: s.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> ImageGrid {
        ImageGrid::from_fn(n, n, |_, _| 0.0).unwrap()
    }

    #[test]
    fn empty_cover_is_all_ones() {
        let g = grid(16);
        let c = BallCover::new(0.1, 0.01).unwrap();
        assert!(c.indicator_field(&g).values().iter().all(|&v| v == 1.0));
        assert_eq!(c.ball_count(), 0);
        assert_eq!(c.length_estimate(), 0.0);
    }

    #[test]
    fn huge_ball_covers_everything() {
        let g = grid(16);
        let mut c = BallCover::new(2.0, 0.25).unwrap();
        c.insert(Point::new(0.5, 0.5), &g).unwrap();
        assert!(c.indicator_field(&g).values().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn single_ball_matches_distance_scan() {
        let g = grid(64);
        let eps = 3.0 * g.h();
        let center = Point::new(0.4137, 0.5821);
        let mut c = BallCover::new(eps, 0.01).unwrap();
        c.insert(center, &g).unwrap();
        let v = c.indicator_field(&g);
        // brute-force scan over every cell
        let mut expected = 0;
        for j in 0..64 {
            for i in 0..64 {
                let x = (i as f64 + 0.5) / 64.0;
                let y = (j as f64 + 0.5) / 64.0;
                let inside = ((x - center.x).powi(2) + (y - center.y).powi(2)).sqrt() < eps;
                expected += inside as usize;
                assert_eq!(v.get(i, j) == 0.01, inside, "cell ({i},{j})");
            }
        }
        assert!(expected > 20);
    }

    #[test]
    fn counting_and_length() {
        let g = grid(32);
        let mut c = BallCover::new(0.05, 0.01).unwrap();
        for k in 0..10 {
            c.insert(Point::new(0.05 + 0.09 * k as f64, 0.5), &g).unwrap();
        }
        assert_eq!(c.ball_count(), 10);
        assert!((c.length_estimate() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn segment_cover_count() {
        // Centers spaced 2*eps*sqrt(1 - c^2) along a unit segment, c = 0.6.
        let g = grid(100);
        let eps = 0.05;
        let spacing = 2.0 * eps * (1.0f64 - 0.36).sqrt();
        let n = (1.0 / spacing).ceil() as usize + 1;
        let mut c = BallCover::new(eps, 0.01).unwrap();
        for k in 0..n {
            c.insert(Point::new((k as f64 * spacing).min(1.0), 0.5), &g).unwrap();
        }
        // every point of the segment is covered
        for s in 0..=1000 {
            assert!(c.covers(Point::new(s as f64 / 1000.0, 0.5)));
        }
        assert_eq!(n, 14);
        assert!((c.length_estimate() - 2.0 * eps * 14.0).abs() < 1e-12);
        // within the bound k + H1 / (2 eps sqrt(1 - c^2)) with k = 2 endpoint balls
        assert!(c.ball_count() as f64 <= 2.0 + 1.0 / spacing);
    }

    #[test]
    fn duplicates_and_outside_points_rejected() {
        let g = grid(8);
        let mut c = BallCover::new(0.2, 0.5).unwrap();
        c.insert(Point::new(0.5, 0.5), &g).unwrap();
        assert!(matches!(
            c.insert(Point::new(0.5, 0.5), &g),
            Err(Error::DuplicateCenter { .. })
        ));
        assert!(matches!(
            c.insert(Point::new(1.5, 0.5), &g),
            Err(Error::Domain { .. })
        ));
        assert!(BallCover::new(0.0, 0.5).is_err());
        assert!(BallCover::new(0.1, 1.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let g = grid(8);
        let mut c = BallCover::new(0.05, 0.01).unwrap();
        c.insert(Point::new(0.1, 0.2), &g).unwrap();
        c.insert(Point::new(0.3125, 0.9), &g).unwrap();
        let text = c.to_csv();
        assert!(text.starts_with("# epsilon=0.05 kappa=0.01\nx,y\n"));
        assert_eq!(BallCover::from_csv(&text, &g).unwrap(), c);
    }

    fn centers() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 0..8)
    }

    proptest! {
        #[test]
        fn indicator_is_two_valued_and_monotone(pts in centers(), extra in (0.0f64..=1.0, 0.0f64..=1.0)) {
            let g = grid(20);
            let mut c = BallCover::new(0.08, 0.03).unwrap();
            for (x, y) in pts {
                let _ = c.insert(Point::new(x, y), &g);
            }
            let before = c.indicator_field(&g);
            prop_assert!(before.values().iter().all(|&v| v == 0.03 || v == 1.0));
            let _ = c.insert(Point::new(extra.0, extra.1), &g);
            let after = c.indicator_field(&g);
            for (b, a) in before.values().iter().zip(after.values()) {
                prop_assert!(!(*b == 0.03 && *a == 1.0));
            }
        }

        #[test]
        fn length_is_additive(a in centers(), b in centers()) {
            let g = grid(20);
            let mut ca = BallCover::new(0.05, 0.01).unwrap();
            let mut cb = BallCover::new(0.05, 0.01).unwrap();
            for (x, y) in a { let _ = ca.insert(Point::new(x, y), &g); }
            for (x, y) in b {
                let p = Point::new(x, y);
                if !ca.centers().contains(&p) { let _ = cb.insert(p, &g); }
            }
            let u = ca.union(&cb, &g).unwrap();
            prop_assert!((u.length_estimate() - ca.length_estimate() - cb.length_estimate()).abs() < 1e-12);
        }
    }
}
