//! Greedy ball insertion driven by the topological gradient.
//!
//! Each iteration solves for `u` with the current edge indicator, evaluates
//! `|∇u|²` at every cell center, and inserts balls where the predicted change
//!
//! ```text
//! ΔJ(y) ≈ -ε²πα (1-κ)/(1+κ) |∇u(y)|² + 2βε
//! ```
//!
//! is non-positive, largest predicted decrease first. The run stops when no
//! uncovered cell passes that test.

use std::fmt::Write as _;

use crate::cover::BallCover;
use crate::energy::{energy_j, EnergyBreakdown};
use crate::error::{Error, Result};
use crate::fem::{assemble, cell_gradients, default_max_iter, solve_cg, SolverReport};
use crate::grid::{CellField, ImageGrid, NodalField, Point};

#[derive(Debug, Clone, PartialEq)]
pub struct TopoConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Ball radius in domain units.
    pub epsilon: f64,
    /// Conductivity inside the balls.
    pub kappa: f64,
    /// Balls inserted per iteration at most.
    pub batch_size: usize,
    /// Minimum distance between centers chosen in the same iteration.
    pub separation: f64,
    pub max_iters: usize,
    pub cg_tol: f64,
    /// Overrides the default CG iteration cap when set.
    pub cg_max_iter: Option<usize>,
}

impl TopoConfig {
    /// Defaults: `κ = min(0.01, ε)`, batches of 16 separated by `ε`,
    /// at most 500 iterations, CG tolerance `1e-9`.
    pub fn new(alpha: f64, beta: f64, epsilon: f64) -> Self {
        TopoConfig {
            alpha,
            beta,
            epsilon,
            kappa: 0.01f64.min(epsilon),
            batch_size: 16,
            separation: epsilon,
            max_iters: 500,
            cg_tol: 1e-9,
            cg_max_iter: None,
        }
    }

    /// Checks the parameter ranges and their compatibility with `grid`.
    pub fn validate(&self, grid: &ImageGrid) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("epsilon", self.epsilon),
            ("cg-tol", self.cg_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::Config(format!("kappa must lie in (0, 1), got {}", self.kappa)));
        }
        if self.alpha * self.kappa >= 1.0 {
            return Err(Error::Config(format!(
                "alpha * kappa must be below 1, got {} * {} = {}",
                self.alpha,
                self.kappa,
                self.alpha * self.kappa
            )));
        }
        if self.kappa > self.epsilon {
            return Err(Error::Config(format!(
                "kappa ({}) must not exceed epsilon ({})",
                self.kappa, self.epsilon
            )));
        }
        if self.epsilon < 2.0 * grid.h() {
            return Err(Error::Config(format!(
                "epsilon ({}) must be at least two cells wide (2h = {})",
                self.epsilon,
                2.0 * grid.h()
            )));
        }
        if self.batch_size == 0 || self.max_iters == 0 {
            return Err(Error::Config("batch-size and max-iters must be positive".into()));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config(format!(
                "separation must be non-negative, got {}",
                self.separation
            )));
        }
        if self.cg_max_iter == Some(0) {
            return Err(Error::Config("CG iteration cap must be positive".into()));
        }
        Ok(())
    }

    fn contrast_factor(&self) -> f64 {
        (1.0 - self.kappa) / (1.0 + self.kappa)
    }

    /// Smallest `|∇u|²` that passes [`accept_test`].
    pub fn gsq_threshold(&self) -> f64 {
        2.0 * self.beta / (self.epsilon * self.alpha * std::f64::consts::PI * self.contrast_factor())
    }

    pub fn max_cg_iters(&self, grid: &ImageGrid) -> usize {
        self.cg_max_iter
            .unwrap_or_else(|| default_max_iter(grid.node_count()))
    }
}

/// Leading-order change of `G` when a ball of radius ε is added at a point
/// where `|∇u|² = gsq`.
pub fn predicted_delta_g(gsq: f64, cfg: &TopoConfig) -> f64 {
    -cfg.epsilon * cfg.epsilon * std::f64::consts::PI * cfg.alpha * cfg.contrast_factor() * gsq
}

/// Predicted change of `J`: [`predicted_delta_g`] plus the ball's length cost `2βε`.
pub fn predicted_delta_j(gsq: f64, cfg: &TopoConfig) -> f64 {
    predicted_delta_g(gsq, cfg) + 2.0 * cfg.beta * cfg.epsilon
}

/// Whether a ball at a point with `|∇u|² = gsq` is predicted not to increase `J`:
/// `(α/2)·π·(1-κ)/(1+κ)·gsq ≥ β/ε`. Equality accepts.
pub fn accept_test(gsq: f64, cfg: &TopoConfig) -> bool {
    0.5 * cfg.alpha * std::f64::consts::PI * cfg.contrast_factor() * gsq >= cfg.beta / cfg.epsilon
}

/// A ball center picked by [`select_batch`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    /// Linear index of the cell whose center is used.
    pub cell: usize,
    pub center: Point,
    pub gsq: f64,
}

/// Greedy choice of up to `batch_size` new centers.
///
/// Candidates are cell centers outside the current cover that pass
/// [`accept_test`], visited by decreasing `gsq` (ties: smaller cell index
/// first). A candidate closer than `separation` to a center already chosen in
/// this batch is skipped.
pub fn select_batch(
    gsq: &CellField,
    cover: &BallCover,
    cfg: &TopoConfig,
    grid: &ImageGrid,
) -> Result<Vec<Selection>> {
    grid.check_cell(gsq)?;
    let mut candidates: Vec<Selection> = gsq
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &g)| accept_test(g, cfg))
        .map(|(cell, &g)| Selection {
            cell,
            center: grid.cell_center_of(cell),
            gsq: g,
        })
        .filter(|s| !cover.covers(s.center))
        .collect();
    candidates.sort_by(|a, b| b.gsq.total_cmp(&a.gsq).then(a.cell.cmp(&b.cell)));

    let sep2 = cfg.separation * cfg.separation;
    let mut chosen: Vec<Selection> = Vec::with_capacity(cfg.batch_size);
    for c in candidates {
        if chosen.len() == cfg.batch_size {
            break;
        }
        if chosen.iter().all(|s| s.center.dist2(&c.center) >= sep2) {
            chosen.push(c);
        }
    }
    Ok(chosen)
}

/// One row of the audit trail. Record 0 is the initial solve with no balls.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Centers inserted in this iteration.
    pub centers: Vec<Point>,
    /// Predicted change of `J` for each inserted center.
    pub predicted_delta_j: Vec<f64>,
    /// Whether each center lies within ε of the domain boundary, where the
    /// expansion is not expected to be accurate.
    pub near_boundary: Vec<bool>,
    pub ball_count: usize,
    /// `J` recomputed from the exact re-solve after the insertion.
    pub energy: EnergyBreakdown,
    pub solver: SolverReport,
}

/// Per-iteration history of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    /// CG tolerance the solves were run at; sets the audit slack.
    pub cg_tol: f64,
    pub records: Vec<IterationRecord>,
}

impl RunTrace {
    pub fn new(cg_tol: f64) -> Self {
        RunTrace {
            cg_tol,
            records: Vec::new(),
        }
    }

    pub const CSV_HEADER: &'static str =
        "iter,n_new_balls,n_total_balls,fidelity,dirichlet,length,total,cg_iters";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let e = &r.energy;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.iter,
                r.centers.len(),
                r.ball_count,
                e.fidelity,
                e.dirichlet,
                e.length,
                e.total,
                r.solver.iterations
            );
        }
        s
    }

    /// All inserted centers in insertion order.
    pub fn selected_centers(&self) -> impl Iterator<Item = Point> + '_ {
        self.records.iter().flat_map(|r| r.centers.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// No uncovered cell passed the acceptance test.
    Threshold,
    /// Every cell center is already covered.
    NoCandidates,
    /// `max_iters` insertions were made and more were still accepted.
    MaxIters,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Threshold => "threshold",
            StopReason::NoCandidates => "no_candidates",
            StopReason::MaxIters => "max_iters",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub u: NodalField,
    pub cover: BallCover,
    pub v: CellField,
    pub trace: RunTrace,
    pub stopped_by: StopReason,
}

/// Minimizes `G(·, v)` for a cellwise indicator `v`.
pub fn solve_for_indicator(
    grid: &ImageGrid,
    v: &CellField,
    alpha: f64,
    tol: f64,
    max_iter: usize,
    warm_start: Option<&NodalField>,
) -> Result<(NodalField, SolverReport)> {
    let system = assemble(grid, v, alpha)?;
    let (u, report) = solve_cg(&system, tol, max_iter, warm_start);
    if report.converged {
        Ok((u, report))
    } else {
        Err(Error::solver("solve for u", report))
    }
}

/// Runs the insertion loop to completion.
pub fn run(grid: &ImageGrid, cfg: &TopoConfig) -> Result<SegmentationResult> {
    cfg.validate(grid)?;
    let max_cg = cfg.max_cg_iters(grid);
    let mut cover = BallCover::new(cfg.epsilon, cfg.kappa)?;
    let mut trace = RunTrace::new(cfg.cg_tol);

    let abort = |err: Error, trace: &RunTrace| match err {
        Error::Solver { stage, report, .. } => Error::Solver {
            stage,
            report,
            partial_trace: Some(Box::new(trace.clone())),
        },
        other => other,
    };

    let mut v = cover.indicator_field(grid);
    let (mut u, report) = solve_for_indicator(grid, &v, cfg.alpha, cfg.cg_tol, max_cg, None)
        .map_err(|e| abort(e, &trace))?;
    trace.records.push(IterationRecord {
        iter: 0,
        centers: Vec::new(),
        predicted_delta_j: Vec::new(),
        near_boundary: Vec::new(),
        ball_count: 0,
        energy: energy_j(&u, &cover, grid, cfg.alpha, cfg.beta)?,
        solver: report,
    });

    let mut iter = 0;
    let stopped_by = loop {
        let gsq = cell_gradients(&u, grid)?.gsq;
        let batch = select_batch(&gsq, &cover, cfg, grid)?;
        if batch.is_empty() {
            let uncovered = v.values().contains(&1.0);
            break if uncovered {
                StopReason::Threshold
            } else {
                StopReason::NoCandidates
            };
        }
        if iter == cfg.max_iters {
            break StopReason::MaxIters;
        }
        iter += 1;

        for s in &batch {
            cover.insert(s.center, grid)?;
        }
        v = cover.indicator_field(grid);
        let (next, report) =
            solve_for_indicator(grid, &v, cfg.alpha, cfg.cg_tol, max_cg, Some(&u))
                .map_err(|e| abort(e, &trace))?;
        u = next;
        trace.records.push(IterationRecord {
            iter,
            centers: batch.iter().map(|s| s.center).collect(),
            predicted_delta_j: batch.iter().map(|s| predicted_delta_j(s.gsq, cfg)).collect(),
            near_boundary: batch
                .iter()
                .map(|s| grid.boundary_distance(s.center) < cfg.epsilon)
                .collect(),
            ball_count: cover.ball_count(),
            energy: energy_j(&u, &cover, grid, cfg.alpha, cfg.beta)?,
            solver: report,
        });
    };

    Ok(SegmentationResult {
        u,
        cover,
        v,
        trace,
        stopped_by,
    })
}
