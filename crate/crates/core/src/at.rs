//! Ambrosio-Tortorelli baseline: alternating exact minimization in `u` and `v`.

use std::fmt::Write as _;

use crate::energy::{cell_mean_square, energy_at, EnergyBreakdown};
use crate::error::{Error, Result};
use crate::fem::{assemble_operator, cell_dirichlet, default_max_iter, mass_apply, solve_cg};
use crate::fem::{SolverReport, SparseSystem};
use crate::grid::{CellField, ImageGrid, NodalField};

#[derive(Debug, Clone, PartialEq)]
pub struct AtConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Phase-field width.
    pub eps_at: f64,
    pub outer_iters: usize,
    pub cg_tol: f64,
    pub cg_max_iter: Option<usize>,
    /// Edge threshold for [`threshold_edges`].
    pub threshold: f64,
    /// Lower bound on the `u`-equation coefficient, keeping it elliptic as `v → 0`.
    pub floor: f64,
}

impl AtConfig {
    /// Defaults: 30 sweeps, CG tolerance `1e-9`, threshold 0.8, floor `1e-6`.
    pub fn new(alpha: f64, beta: f64, eps_at: f64) -> Self {
        AtConfig {
            alpha,
            beta,
            eps_at,
            outer_iters: 30,
            cg_tol: 1e-9,
            cg_max_iter: None,
            threshold: 0.8,
            floor: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("eps-at", self.eps_at),
            ("cg-tol", self.cg_tol),
            ("floor", self.floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie strictly between 0 and 1, got {}",
                self.threshold
            )));
        }
        if self.outer_iters == 0 || self.cg_max_iter == Some(0) {
            return Err(Error::Config("iteration counts must be positive".into()));
        }
        Ok(())
    }

    fn max_cg(&self, grid: &ImageGrid) -> usize {
        self.cg_max_iter
            .unwrap_or_else(|| default_max_iter(grid.node_count()))
    }
}

fn checked_solve(
    system: &SparseSystem,
    tol: f64,
    max_iter: usize,
    warm: Option<&NodalField>,
    stage: &str,
) -> Result<(NodalField, SolverReport)> {
    let (x, report) = solve_cg(system, tol, max_iter, warm);
    if report.converged {
        Ok((x, report))
    } else {
        Err(Error::solver(stage, report))
    }
}

/// The system solved by [`at_solve_u`]: coefficient `max(mean(v²), floor)` per cell.
pub fn u_system(v: &NodalField, grid: &ImageGrid, cfg: &AtConfig) -> Result<SparseSystem> {
    grid.check_nodal(v)?;
    let ones = vec![1.0; grid.cell_count()];
    let stiff: Vec<f64> = cell_mean_square(v, grid)
        .into_iter()
        .map(|m| cfg.alpha * m.max(cfg.floor))
        .collect();
    Ok(SparseSystem {
        matrix: assemble_operator(grid, &ones, &stiff),
        rhs: mass_apply(grid, &ones, grid.f()),
    })
}

/// Minimizes the energy over `u` for fixed `v`.
pub fn at_solve_u(
    v: &NodalField,
    grid: &ImageGrid,
    cfg: &AtConfig,
    warm_start: Option<&NodalField>,
) -> Result<(NodalField, SolverReport)> {
    let system = u_system(v, grid, cfg)?;
    checked_solve(&system, cfg.cg_tol, cfg.max_cg(grid), warm_start, "u-step")
}

/// The system solved by [`at_solve_v`]:
/// `∫ (α g + β/(2ε)) v φ + 2βε ∫ ⟨∇v, ∇φ⟩ = ∫ β/(2ε) φ`, where `g` is the
/// cell mean of `|∇u|²`.
pub fn v_system(u: &NodalField, grid: &ImageGrid, cfg: &AtConfig) -> Result<SparseSystem> {
    grid.check_nodal(u)?;
    let well = cfg.beta / (2.0 * cfg.eps_at);
    let area = grid.h() * grid.h();
    let mass_w: Vec<f64> = cell_dirichlet(u, grid)
        .into_iter()
        .map(|d| cfg.alpha * d / area + well)
        .collect();
    let stiff = vec![2.0 * cfg.beta * cfg.eps_at; grid.cell_count()];
    let rhs = mass_apply(
        grid,
        &vec![well; grid.cell_count()],
        &vec![1.0; grid.node_count()],
    );
    Ok(SparseSystem {
        matrix: assemble_operator(grid, &mass_w, &stiff),
        rhs,
    })
}

/// Minimizes the energy over `v` for fixed `u`.
pub fn at_solve_v(
    u: &NodalField,
    grid: &ImageGrid,
    cfg: &AtConfig,
    warm_start: Option<&NodalField>,
) -> Result<(NodalField, SolverReport)> {
    let system = v_system(u, grid, cfg)?;
    checked_solve(&system, cfg.cg_tol, cfg.max_cg(grid), warm_start, "v-step")
}

/// Energies after each half of one alternating sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AtSweep {
    pub sweep: usize,
    pub after_u: EnergyBreakdown,
    pub after_v: EnergyBreakdown,
    pub cg_iters_u: usize,
    pub cg_iters_v: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtTrace {
    pub cg_tol: f64,
    /// Energy of the starting point `(f, 1)`.
    pub initial: EnergyBreakdown,
    pub sweeps: Vec<AtSweep>,
}

impl AtTrace {
    pub const CSV_HEADER: &'static str = "iter,fidelity,dirichlet,length,total,cg_iters";

    /// One row per completed sweep, energies taken after the `v` half-step.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for w in &self.sweeps {
            let e = &w.after_v;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                w.sweep,
                e.fidelity,
                e.dirichlet,
                e.length,
                e.total,
                w.cg_iters_u + w.cg_iters_v
            );
        }
        s
    }

    /// Whether the energy never rises by more than `10 * cg_tol` from one
    /// half-step to the next.
    pub fn is_monotone(&self) -> bool {
        let slack = 10.0 * self.cg_tol;
        let mut prev = self.initial.total;
        for w in &self.sweeps {
            for e in [w.after_u.total, w.after_v.total] {
                if e > prev + slack {
                    return false;
                }
                prev = e;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtResult {
    pub u: NodalField,
    pub v: NodalField,
    pub trace: AtTrace,
}

/// Alternating minimization from `v ≡ 1` for `outer_iters` sweeps.
pub fn run_at(grid: &ImageGrid, cfg: &AtConfig) -> Result<AtResult> {
    cfg.validate()?;
    let energy = |u: &NodalField, v: &NodalField| {
        energy_at(u, v, grid, cfg.alpha, cfg.beta, cfg.eps_at)
    };
    let mut u = grid.image();
    let mut v = NodalField::constant(grid, 1.0);
    let mut trace = AtTrace {
        cg_tol: cfg.cg_tol,
        initial: energy(&u, &v)?,
        sweeps: Vec::with_capacity(cfg.outer_iters),
    };
    for sweep in 1..=cfg.outer_iters {
        let (next_u, ru) = at_solve_u(&v, grid, cfg, Some(&u))?;
        u = next_u;
        let after_u = energy(&u, &v)?;
        let (next_v, rv) = at_solve_v(&u, grid, cfg, Some(&v))?;
        v = next_v;
        trace.sweeps.push(AtSweep {
            sweep,
            after_u,
            after_v: energy(&u, &v)?,
            cg_iters_u: ru.iterations,
            cg_iters_v: rv.iterations,
        });
    }
    Ok(AtResult { u, v, trace })
}

/// Marks cells whose center value of `v` is below `threshold` with 1.
pub fn threshold_edges(v: &NodalField, grid: &ImageGrid, threshold: f64) -> Result<CellField> {
    grid.check_nodal(v)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "threshold must lie strictly between 0 and 1, got {threshold}"
        )));
    }
    let vals = v.values();
    let mut marks = Vec::with_capacity(grid.cell_count());
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let center: f64 = grid.cell_nodes(i, j).iter().map(|&k| vals[k]).sum::<f64>() / 4.0;
            marks.push(if center < threshold { 1.0 } else { 0.0 });
        }
    }
    CellField::from_values(grid, marks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble, cell_gradients};

    fn step(n: usize) -> ImageGrid {
        ImageGrid::from_fn(n, n, |x, _| if x < 0.5 { 0.0 } else { 1.0 }).unwrap()
    }

    #[test]
    fn unit_indicator_reproduces_plain_system() {
        let g = ImageGrid::from_fn(12, 9, |x, y| (x * y).sqrt()).unwrap();
        let cfg = AtConfig::new(3.0, 10.0, 0.1);
        let at = u_system(&NodalField::constant(&g, 1.0), &g, &cfg).unwrap();
        let plain = assemble(&g, &CellField::constant(&g, 1.0), 3.0).unwrap();
        for r in 0..at.matrix.dim() {
            for c in [r.saturating_sub(14), r.saturating_sub(13), r, r + 1, r + 13] {
                if c < at.matrix.dim() {
                    assert!((at.matrix.get(r, c) - plain.matrix.get(r, c)).abs() < 1e-12);
                }
            }
        }
        assert_eq!(at.rhs, plain.rhs);
    }

    #[test]
    fn constant_image_u_step() {
        let g = ImageGrid::from_fn(16, 16, |_, _| 0.7).unwrap();
        let cfg = AtConfig::new(20.0, 200.0, 0.05);
        let (u, _) = at_solve_u(&NodalField::constant(&g, 1.0), &g, &cfg, None).unwrap();
        assert!(u.values().iter().all(|x| (x - 0.7).abs() < 1e-8));
    }

    #[test]
    fn zero_indicator_matches_floor_coefficient_solve() {
        let g = step(32);
        let cfg = AtConfig::new(1.0, 1.0, 0.1);
        let (u, _) = at_solve_u(&NodalField::zeros(&g), &g, &cfg, None).unwrap();
        let direct = assemble(&g, &CellField::constant(&g, 1e-6), 1.0).unwrap();
        let (w, _) = solve_cg(&direct, 1e-12, 10_000, None);
        for (a, b) in u.values().iter().zip(w.values()) {
            assert!((a - b).abs() < 1e-7);
        }
        // fidelity dominates: u stays close to f away from the jump
        for j in 0..=32 {
            for i in (0..12).chain(21..=32) {
                let k = g.node_index(i, j);
                assert!((u.values()[k] - g.f()[k]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn flat_u_gives_unit_v() {
        let g = ImageGrid::from_fn(16, 16, |_, _| 0.2).unwrap();
        let cfg = AtConfig::new(20.0, 200.0, 0.05);
        let (v, _) = at_solve_v(&g.image(), &g, &cfg, None).unwrap();
        assert!(v.values().iter().all(|x| (x - 1.0).abs() < 1e-8));
    }

    #[test]
    fn constant_gradient_gives_constant_v() {
        let g = ImageGrid::from_fn(16, 16, |_, _| 0.0).unwrap();
        let cfg = AtConfig::new(2.0, 3.0, 0.1);
        let slope = 1.5;
        let u = NodalField::from_fn(&g, |x, _| slope * x);
        let gsq = slope * slope;
        let well = cfg.beta / (2.0 * cfg.eps_at);
        let expected = well / (cfg.alpha * gsq + well);
        let (v, _) = at_solve_v(&u, &g, &cfg, None).unwrap();
        assert!(v.values().iter().all(|x| (x - expected).abs() < 1e-8), "expected {expected}");
    }

    #[test]
    fn stronger_gradient_damps_v() {
        // left half gradient 0.5, right half gradient 2: v smaller on the right
        let g = ImageGrid::from_fn(32, 32, |_, _| 0.0).unwrap();
        let cfg = AtConfig::new(1.0, 1.0, 0.05);
        let u = NodalField::from_fn(&g, |x, _| if x < 0.5 { 0.5 * x } else { 0.25 + 2.0 * (x - 0.5) });
        let (v, _) = at_solve_v(&u, &g, &cfg, None).unwrap();
        for j in 0..=32 {
            for i in 0..12 {
                assert!(v.get(i, j) > v.get(32 - i, j));
            }
        }
        assert!(v.min() > 0.0 && v.max() <= 1.0 + 1e-8);
    }

    #[test]
    fn constant_image_run() {
        let g = ImageGrid::from_fn(16, 16, |_, _| 0.4).unwrap();
        let mut cfg = AtConfig::new(20.0, 200.0, 0.05);
        cfg.outer_iters = 1;
        let res = run_at(&g, &cfg).unwrap();
        assert!(res.u.values().iter().all(|x| (x - 0.4).abs() < 1e-8));
        assert!(res.v.values().iter().all(|x| (x - 1.0).abs() < 1e-8));
        assert!(res.trace.sweeps[0].after_v.total.abs() < 1e-12);
    }

    #[test]
    fn sweeps_descend_and_keep_v_in_range() {
        let g = ImageGrid::from_fn(32, 32, |x, y| {
            if (x - 0.5).powi(2) + (y - 0.45).powi(2) < 0.08 { 0.9 } else { 0.1 }
        })
        .unwrap();
        let mut cfg = AtConfig::new(0.01, 0.02, 0.05);
        cfg.outer_iters = 8;
        let res = run_at(&g, &cfg).unwrap();
        assert!(res.trace.is_monotone(), "{:#?}", res.trace);
        assert!(res.v.min() > 0.0);
        assert!(res.v.max() <= 1.0 + 1e-8);
        assert!(res.v.min() < 0.9);
        let csv = res.trace.to_csv();
        assert_eq!(csv.lines().count(), 9);
        // the v-field dips where u varies fastest
        let grads = cell_gradients(&res.u, &g).unwrap();
        let (kmax, _) = grads
            .gsq
            .values()
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |a, (k, &x)| if x > a.1 { (k, x) } else { a });
        let mask = threshold_edges(&res.v, &g, 0.9).unwrap();
        assert_eq!(mask.values()[kmax], 1.0);
    }

    #[test]
    fn thresholding() {
        let g = step(8);
        assert!(threshold_edges(&NodalField::constant(&g, 1.0), &g, 0.8)
            .unwrap()
            .values()
            .iter()
            .all(|&m| m == 0.0));
        assert!(threshold_edges(&NodalField::constant(&g, 0.5), &g, 0.8)
            .unwrap()
            .values()
            .iter()
            .all(|&m| m == 1.0));
        assert!(threshold_edges(&NodalField::constant(&g, 0.5), &g, 1.0).is_err());
    }
}
