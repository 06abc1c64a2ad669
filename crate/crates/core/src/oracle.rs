//! Independent checks: exact energy changes by re-solving, expansion sweeps,
//! manufactured-solution convergence and descent audits.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::cover::BallCover;
use crate::energy::energy_g;
use crate::error::{Error, Result};
use crate::fem::{assemble_with_data, cell_gradients, default_max_iter, solve_cg};
use crate::grid::{CellField, ImageGrid, NodalField, Point};
use crate::topo::{predicted_delta_g, solve_for_indicator, RunTrace, TopoConfig};

/// Oracle solves run this much tighter than the configured tolerance.
pub const TOL_FACTOR: f64 = 100.0;

/// Below this magnitude a prediction counts as zero and errors are absolute.
pub const DEGENERATE: f64 = 1e-12;

fn oracle_settings(grid: &ImageGrid, cfg: &TopoConfig) -> (f64, usize) {
    let cap = cfg
        .cg_max_iter
        .unwrap_or_else(|| 10 * default_max_iter(grid.node_count()));
    (cfg.cg_tol / TOL_FACTOR, cap)
}

struct Baseline {
    u: NodalField,
    energy: f64,
}

fn baseline(grid: &ImageGrid, cover: &BallCover, cfg: &TopoConfig) -> Result<Baseline> {
    let (tol, cap) = oracle_settings(grid, cfg);
    let v = cover.indicator_field(grid);
    let (u, _) = solve_for_indicator(grid, &v, cfg.alpha, tol, cap, None)?;
    let energy = energy_g(&u, &v, grid, cfg.alpha)?.total;
    Ok(Baseline { u, energy })
}

fn delta_from(
    grid: &ImageGrid,
    base: &Baseline,
    cover: &BallCover,
    y: Point,
    cfg: &TopoConfig,
) -> Result<f64> {
    let (tol, cap) = oracle_settings(grid, cfg);
    let mut grown = BallCover::new(cfg.epsilon, cfg.kappa)?;
    for &c in cover.centers() {
        grown.insert(c, grid)?;
    }
    grown.insert(y, grid)?;
    let v = grown.indicator_field(grid);
    let (u, _) = solve_for_indicator(grid, &v, cfg.alpha, tol, cap, Some(&base.u))?;
    Ok(energy_g(&u, &v, grid, cfg.alpha)?.total - base.energy)
}

/// `G` after adding a ball at `y` minus `G` before, both minimized over `u`.
pub fn delta_g_exact(
    grid: &ImageGrid,
    cover: &BallCover,
    y: Point,
    cfg: &TopoConfig,
) -> Result<f64> {
    if cover.covers(y) {
        return Err(Error::Config(format!(
            "probe point ({}, {}) already lies inside the cover",
            y.x, y.y
        )));
    }
    if cover.radius() != cfg.epsilon || cover.contrast() != cfg.kappa {
        return Err(Error::Config(
            "cover radius and contrast must match the configuration".into(),
        ));
    }
    let base = baseline(grid, cover, cfg)?;
    delta_from(grid, &base, cover, y, cfg)
}

/// Predicted against exact energy change over a sweep of radii at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionProbe {
    /// The cell center the probe actually used.
    pub center: Point,
    /// `|∇u|²` of the ball-free solution at `center`.
    pub gsq: f64,
    pub epsilons: Vec<f64>,
    pub predicted: Vec<f64>,
    pub exact: Vec<f64>,
    /// Relative errors, or absolute ones when `degenerate` is set.
    pub rel_errors: Vec<f64>,
    /// Some prediction was below [`DEGENERATE`] in magnitude.
    pub degenerate: bool,
}

impl ExpansionProbe {
    pub const CSV_HEADER: &'static str = "epsilon,predicted,exact,rel_error";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for k in 0..self.epsilons.len() {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                self.epsilons[k], self.predicted[k], self.exact[k], self.rel_errors[k]
            );
        }
        s
    }

    /// Whether the errors shrink strictly along the sweep.
    pub fn strictly_decreasing(&self) -> bool {
        self.rel_errors.windows(2).all(|w| w[1] < w[0])
    }
}

/// Compares the predicted and exact energy change of a ball at `y` for each
/// radius in `epsilons`, starting from an empty cover.
///
/// `y` is moved to the center of the cell containing it, since candidate
/// centers and gradients live there. The configuration's `epsilon` is
/// replaced by each sweep value in turn.
pub fn expansion_probe(
    grid: &ImageGrid,
    y: Point,
    epsilons: &[f64],
    cfg: &TopoConfig,
) -> Result<ExpansionProbe> {
    if epsilons.is_empty() {
        return Err(Error::Config("epsilon sweep is empty".into()));
    }
    if epsilons.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::Config("sweep radii must be positive".into()));
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("sweep radii must be strictly decreasing".into()));
    }
    let eps_min = epsilons[epsilons.len() - 1];
    let eps_max = epsilons[0];
    if grid.h() > eps_min / 8.0 {
        return Err(Error::Config(format!(
            "grid too coarse: h = {} exceeds min(epsilon)/8 = {}",
            grid.h(),
            eps_min / 8.0
        )));
    }
    let (i, j, _, _) = grid.locate(y)?;
    let (i, j) = (i.min(grid.nx() - 1), j.min(grid.ny() - 1));
    let center = grid.cell_center(i, j);
    if grid.boundary_distance(center) < 3.0 * eps_max {
        return Err(Error::Config(format!(
            "probe point within 3*max(epsilon) = {} of the boundary",
            3.0 * eps_max
        )));
    }

    let mut base_cfg = cfg.clone();
    base_cfg.epsilon = eps_max;
    base_cfg.validate(grid)?;
    let empty = BallCover::new(eps_max, cfg.kappa)?;
    let base = baseline(grid, &empty, &base_cfg)?;
    let gsq = cell_gradients(&base.u, grid)?.gsq.get(i, j);

    let mut predicted = Vec::with_capacity(epsilons.len());
    let mut exact = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut c = cfg.clone();
        c.epsilon = eps;
        c.validate(grid)?;
        let empty = BallCover::new(eps, c.kappa)?;
        predicted.push(predicted_delta_g(gsq, &c));
        exact.push(delta_from(grid, &base, &empty, center, &c)?);
    }
    let degenerate = predicted.iter().any(|p| p.abs() < DEGENERATE);
    let rel_errors = predicted
        .iter()
        .zip(&exact)
        .map(|(p, e)| {
            let diff = (e - p).abs();
            if degenerate {
                diff
            } else {
                diff / p.abs()
            }
        })
        .collect();
    Ok(ExpansionProbe {
        center,
        gsq,
        epsilons: epsilons.to_vec(),
        predicted,
        exact,
        rel_errors,
        degenerate,
    })
}

/// Inputs of the standard expansion sweep: a Gaussian bump on 512² cells
/// probed at the domain center with radii 0.08, 0.04, 0.02.
#[derive(Debug, Clone)]
pub struct ProbeSetup {
    pub grid: ImageGrid,
    pub point: Point,
    pub epsilons: Vec<f64>,
    pub cfg: TopoConfig,
}

pub const PROBE_CELLS: usize = 512;
pub const PROBE_ALPHA: f64 = 0.002;
pub const PROBE_BUMP_CENTER: Point = Point::new(0.3, 0.3);
pub const PROBE_BUMP_SIGMA: f64 = 0.25;

pub fn reference_probe() -> Result<ProbeSetup> {
    let grid = crate::synthetic::gaussian_bump(
        PROBE_CELLS,
        PROBE_CELLS,
        PROBE_BUMP_CENTER,
        PROBE_BUMP_SIGMA,
        1.0,
    )?;
    let mut cfg = TopoConfig::new(PROBE_ALPHA, 1.0, 0.08);
    cfg.kappa = 0.01;
    Ok(ProbeSetup {
        grid,
        point: Point::new(0.5, 0.5),
        epsilons: vec![0.08, 0.04, 0.02],
        cfg,
    })
}

/// The manufactured solution `cos(πx) cos(πy)`.
pub fn manufactured_exact(x: f64, y: f64) -> f64 {
    (PI * x).cos() * (PI * y).cos()
}

/// Solves `u - αΔu = f` on `n × n` cells with `f = (1 + 2απ²) cos(πx) cos(πy)`
/// and returns the discrete L² norm of the nodal error.
pub fn manufactured_error(n: usize, alpha: f64) -> Result<f64> {
    let grid = ImageGrid::from_fn(n, n, |_, _| 0.0)?;
    let scale = 1.0 + 2.0 * alpha * PI * PI;
    let data: Vec<f64> = NodalField::from_fn(&grid, |x, y| scale * manufactured_exact(x, y))
        .into_values();
    let system = assemble_with_data(&grid, &CellField::constant(&grid, 1.0), alpha, &data)?;
    let (u, report) = solve_cg(&system, 1e-12, 10 * default_max_iter(grid.node_count()), None);
    if !report.converged {
        return Err(Error::solver("manufactured solve", report));
    }
    let exact = NodalField::from_fn(&grid, manufactured_exact);
    let sq: f64 = u
        .values()
        .iter()
        .zip(exact.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(grid.h() * sq.sqrt())
}

/// `(h, error)` for each level of a refinement study.
pub fn manufactured_convergence(levels: &[usize], alpha: f64) -> Result<Vec<(f64, f64)>> {
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("levels must be strictly refining".into()));
    }
    levels
        .iter()
        .map(|&n| Ok((1.0 / n as f64, manufactured_error(n, alpha)?)))
        .collect()
}

/// Ratios of successive errors.
pub fn convergence_ratios(study: &[(f64, f64)]) -> Vec<f64> {
    study.windows(2).map(|w| w[0].1 / w[1].1).collect()
}

/// CSV with header `h,l2_error,ratio`; the first row's ratio is empty.
pub fn convergence_csv(study: &[(f64, f64)]) -> String {
    let mut s = String::from("h,l2_error,ratio\n");
    for (k, &(h, e)) in study.iter().enumerate() {
        if k == 0 {
            let _ = writeln!(s, "{h},{e},");
        } else {
            let _ = writeln!(s, "{h},{e},{}", study[k - 1].1 / e);
        }
    }
    s
}

/// Whether the recorded `J` strictly decreases from each record to the next,
/// allowing `10 * cg_tol` of solver noise.
pub fn descent_audit(trace: &RunTrace) -> bool {
    let slack = 10.0 * trace.cg_tol;
    trace
        .records
        .windows(2)
        .all(|w| w[1].energy.total < w[0].energy.total + slack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::EnergyBreakdown;
    use crate::fem::SolverReport;
    use crate::synthetic;
    use crate::topo::IterationRecord;

    fn cfg(alpha: f64, eps: f64) -> TopoConfig {
        let mut c = TopoConfig::new(alpha, 1.0, eps);
        c.kappa = 0.01;
        c
    }

    #[test]
    fn constant_image_has_no_energy_change() {
        let g = synthetic::constant(32, 32, 0.6).unwrap();
        let c = cfg(1.0, 0.1);
        let cover = BallCover::new(0.1, 0.01).unwrap();
        let d = delta_g_exact(&g, &cover, Point::new(0.5, 0.5), &c).unwrap();
        assert!(d.abs() < 1e-12, "{d}");
    }

    #[test]
    fn bump_loses_energy() {
        let g = synthetic::gaussian_bump(48, 48, Point::new(0.4, 0.5), 0.15, 1.0).unwrap();
        let c = cfg(0.05, 0.08);
        let cover = BallCover::new(0.08, 0.01).unwrap();
        let d = delta_g_exact(&g, &cover, Point::new(0.55, 0.5), &c).unwrap();
        assert!(d < 0.0, "{d}");
    }

    #[test]
    fn probe_rejects_point_inside_cover_and_mismatched_radius() {
        let g = synthetic::ramp(32, 32).unwrap();
        let c = cfg(1.0, 0.1);
        let mut cover = BallCover::new(0.1, 0.01).unwrap();
        cover.insert(Point::new(0.5, 0.5), &g).unwrap();
        assert!(delta_g_exact(&g, &cover, Point::new(0.52, 0.5), &c).is_err());
        let other = BallCover::new(0.2, 0.01).unwrap();
        assert!(delta_g_exact(&g, &other, Point::new(0.5, 0.5), &c).is_err());
    }

    #[test]
    fn probe_preconditions() {
        let g = synthetic::ramp(64, 64).unwrap();
        let c = cfg(1.0, 0.1);
        let mid = Point::new(0.5, 0.5);
        // h = 1/64 > 0.1/8
        let err = expansion_probe(&g, mid, &[0.2, 0.1], &c).unwrap_err();
        assert!(err.to_string().contains("coarse"), "{err}");
        let err = expansion_probe(&g, Point::new(0.3, 0.5), &[0.16, 0.14], &c).unwrap_err();
        assert!(err.to_string().contains("boundary"), "{err}");
        assert!(expansion_probe(&g, mid, &[0.14, 0.16], &c).is_err());
        assert!(expansion_probe(&g, mid, &[], &c).is_err());
    }

    #[test]
    fn ramp_probe_uses_measured_gradient() {
        let g = synthetic::ramp(64, 64).unwrap();
        let c = cfg(0.2, 0.15);
        let p = expansion_probe(&g, Point::new(0.5, 0.5), &[0.15, 0.125], &c).unwrap();
        assert!(!p.degenerate);
        assert_eq!(p.center, g.cell_center(32, 32));
        let expected = -0.15f64.powi(2) * PI * 0.2 * (0.99 / 1.01) * p.gsq;
        assert!((p.predicted[0] - expected).abs() < 1e-14);
        // 1D Neumann solution of u - αu'' = x: u' = 1 - cosh((x-½)/√α) / cosh(1/(2√α))
        let x = p.center.x;
        let slope = 1.0 - ((x - 0.5) / 0.2f64.sqrt()).cosh() / (0.5 / 0.2f64.sqrt()).cosh();
        assert!((p.gsq / (slope * slope) - 1.0).abs() < 1e-3, "{} vs {}", p.gsq, slope * slope);
        assert!(p.exact.iter().all(|&e| e < 0.0));
        for k in 0..2 {
            let rel = (p.exact[k] - p.predicted[k]).abs() / p.predicted[k].abs();
            assert_eq!(p.rel_errors[k], rel);
        }
        let csv = p.to_csv();
        assert!(csv.starts_with("epsilon,predicted,exact,rel_error\n0.15,"));
    }

    #[test]
    fn flat_neighbourhood_is_degenerate() {
        let g = synthetic::constant(64, 64, 0.3).unwrap();
        let c = cfg(1.0, 0.125);
        let p = expansion_probe(&g, Point::new(0.5, 0.5), &[0.15, 0.125], &c).unwrap();
        assert!(p.degenerate);
        assert!(p.rel_errors.iter().all(|&e| e < 1e-12));
    }

    #[test]
    fn small_manufactured_study() {
        let study = manufactured_convergence(&[8, 16, 32], 0.5).unwrap();
        let ratios = convergence_ratios(&study);
        assert_eq!(ratios.len(), 2);
        assert!(ratios.iter().all(|r| (3.0..=5.0).contains(r)), "{ratios:?}");
        let csv = convergence_csv(&study);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "h,l2_error,ratio");
        assert!(lines[1].ends_with(','));
        assert!(manufactured_convergence(&[16, 8], 1.0).is_err());
    }

    #[test]
    fn tiny_alpha_approaches_projection_of_data() {
        // u ≈ f when the gradient penalty vanishes
        let err = manufactured_error(16, 1e-9).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    fn record(iter: usize, total: f64) -> IterationRecord {
        IterationRecord {
            iter,
            centers: Vec::new(),
            predicted_delta_j: Vec::new(),
            near_boundary: Vec::new(),
            ball_count: iter,
            energy: EnergyBreakdown::new(total, 0.0, 0.0),
            solver: SolverReport {
                iterations: 0,
                final_residual: 0.0,
                converged: true,
            },
        }
    }

    #[test]
    fn audit_cases() {
        let mut t = RunTrace::new(1e-9);
        assert!(descent_audit(&t));
        t.records = vec![record(0, 3.0), record(1, 2.0), record(2, 1.0)];
        assert!(descent_audit(&t));
        t.records.swap(1, 2);
        assert!(!descent_audit(&t));
        t.records = vec![record(0, 1.0), record(1, 1.0 + 5e-9)];
        assert!(descent_audit(&t));
    }
}
