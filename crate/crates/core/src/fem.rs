//! Bilinear finite elements on the pixel grid.
//!
//! The weak problem
//!
//! ```text
//! ∫ u φ + α ∫ v ⟨∇u, ∇φ⟩ = ∫ f φ      for all bilinear φ
//! ```
//!
//! with `v` constant on each cell is assembled into a 9-point stencil
//! matrix and solved with Jacobi-preconditioned conjugate gradients.
//! Homogeneous Neumann conditions are natural and need no boundary rows.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{CellField, ImageGrid, NodalField};

/// Reference stiffness matrix `∫ ⟨∇φ_a, ∇φ_b⟩` on a square cell (independent
/// of the side length in 2D). Local order is `[sw, se, ne, nw]`.
pub const STIFFNESS_REF: [[f64; 4]; 4] = [
    [2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0],
    [-1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0],
    [-1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0],
    [-1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0],
];

/// Reference mass matrix `∫ φ_a φ_b` on the unit square; scale by `h²`.
pub const MASS_REF: [[f64; 4]; 4] = [
    [1.0 / 9.0, 1.0 / 18.0, 1.0 / 36.0, 1.0 / 18.0],
    [1.0 / 18.0, 1.0 / 9.0, 1.0 / 18.0, 1.0 / 36.0],
    [1.0 / 36.0, 1.0 / 18.0, 1.0 / 9.0, 1.0 / 18.0],
    [1.0 / 18.0, 1.0 / 36.0, 1.0 / 18.0, 1.0 / 9.0],
];

// (di, dj) of the local nodes [sw, se, ne, nw]
const LOCAL_OFFSETS: [(isize, isize); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];

/// Element mass and stiffness matrices for a square cell of side `h`.
pub fn element_matrices(h: f64) -> ([[f64; 4]; 4], [[f64; 4]; 4]) {
    let mut mass = MASS_REF;
    for row in &mut mass {
        for m in row.iter_mut() {
            *m *= h * h;
        }
    }
    (mass, STIFFNESS_REF)
}

/// `xᵀ A x` for a 4x4 element matrix.
pub fn quadratic_form(a: &[[f64; 4]; 4], x: &[f64; 4]) -> f64 {
    let mut s = 0.0;
    for (row, xa) in a.iter().zip(x) {
        let mut t = 0.0;
        for (m, xb) in row.iter().zip(x) {
            t += m * xb;
        }
        s += xa * t;
    }
    s
}

/// `∫_cell |∇u|²` for the bilinear interpolant of the local values
/// `[sw, se, ne, nw]`. Written in terms of edge differences so that it
/// vanishes exactly on constants.
pub fn stiffness_form(ue: &[f64; 4]) -> f64 {
    let [sw, se, ne, nw] = *ue;
    let (a, b) = (se - sw, ne - nw);
    let (c, d) = (nw - sw, ne - se);
    (a * a + a * b + b * b + c * c + c * d + d * d) / 3.0
}

/// The four nodal values of cell `(i, j)` in local order.
pub fn local_values(grid: &ImageGrid, values: &[f64], i: usize, j: usize) -> [f64; 4] {
    grid.cell_nodes(i, j).map(|k| values[k])
}

/// Symmetric operator stored as a 9-point stencil per node.
///
/// Slot `(dj + 1) * 3 + (di + 1)` of row `n` couples node `n` to the node at
/// offset `(di, dj)`. Slots pointing outside the grid hold exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilMatrix {
    nx: usize,
    ny: usize,
    coef: Vec<[f64; 9]>,
}

impl StencilMatrix {
    fn zeros(nx: usize, ny: usize) -> Self {
        StencilMatrix {
            nx,
            ny,
            coef: vec![[0.0; 9]; (nx + 1) * (ny + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.coef.len()
    }

    /// Entry `A[row, col]`; zero outside the stencil.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let w = (self.nx + 1) as isize;
        let (ri, rj) = (row as isize % w, row as isize / w);
        let (ci, cj) = (col as isize % w, col as isize / w);
        let (di, dj) = (ci - ri, cj - rj);
        if di.abs() > 1 || dj.abs() > 1 {
            return 0.0;
        }
        self.coef[row][slot(di, dj)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.coef.iter().map(|c| c[4]).collect()
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        let w = self.nx + 1;
        let ny = self.ny;
        y.par_chunks_mut(w).enumerate().for_each(|(j, yrow)| {
            // out-of-grid neighbours are clamped onto valid memory; their slots are zero
            let jm = j.saturating_sub(1);
            let jp = (j + 1).min(ny);
            let rows = [&x[jm * w..jm * w + w], &x[j * w..j * w + w], &x[jp * w..jp * w + w]];
            let crow = &self.coef[j * w..(j + 1) * w];
            for (i, (yi, c)) in yrow.iter_mut().zip(crow).enumerate() {
                let im = i.saturating_sub(1);
                let ip = (i + 1).min(w - 1);
                let mut s = 0.0;
                for (r, xr) in rows.iter().enumerate() {
                    s += c[3 * r] * xr[im] + c[3 * r + 1] * xr[i] + c[3 * r + 2] * xr[ip];
                }
                *yi = s;
            }
        });
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply(x, &mut y);
        y
    }
}

fn slot(di: isize, dj: isize) -> usize {
    ((dj + 1) * 3 + (di + 1)) as usize
}

/// Assembles `Σ_e (mass_w[e] M_e + stiff_w[e] K_e)` over all cells.
pub fn assemble_operator(grid: &ImageGrid, mass_w: &[f64], stiff_w: &[f64]) -> StencilMatrix {
    assert_eq!(mass_w.len(), grid.cell_count());
    assert_eq!(stiff_w.len(), grid.cell_count());
    let (mass, stiff) = element_matrices(grid.h());
    let mut a = StencilMatrix::zeros(grid.nx(), grid.ny());
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let e = grid.cell_index(i, j);
            let nodes = grid.cell_nodes(i, j);
            for (la, &na) in nodes.iter().enumerate() {
                let (ai, aj) = LOCAL_OFFSETS[la];
                for (lb, &_nb) in nodes.iter().enumerate() {
                    let (bi, bj) = LOCAL_OFFSETS[lb];
                    let val = mass_w[e] * mass[la][lb] + stiff_w[e] * stiff[la][lb];
                    a.coef[na][slot(bi - ai, bj - aj)] += val;
                }
            }
        }
    }
    a
}

/// `y = Σ_e w[e] M_e x_e`, i.e. the load vector of `∫ w x φ` for bilinear `x`
/// and cellwise-constant `w`.
pub fn mass_apply(grid: &ImageGrid, weights: &[f64], x: &[f64]) -> Vec<f64> {
    let (mass, _) = element_matrices(grid.h());
    let mut y = vec![0.0; grid.node_count()];
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let w = weights[grid.cell_index(i, j)];
            let nodes = grid.cell_nodes(i, j);
            let xe = nodes.map(|k| x[k]);
            for (a, &na) in nodes.iter().enumerate() {
                let mut s = 0.0;
                for b in 0..4 {
                    s += mass[a][b] * xe[b];
                }
                y[na] += w * s;
            }
        }
    }
    y
}

/// A symmetric positive definite system `A u = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    pub matrix: StencilMatrix,
    pub rhs: Vec<f64>,
}

/// Assembles the Euler-Lagrange system of `G(·, v)`:
/// `∫ u φ + α ∫ v ⟨∇u, ∇φ⟩ = ∫ f φ`.
pub fn assemble(grid: &ImageGrid, coeff: &CellField, alpha: f64) -> Result<SparseSystem> {
    assemble_with_data(grid, coeff, alpha, grid.f())
}

/// As [`assemble`], but with arbitrary nodal data in place of the image.
pub fn assemble_with_data(
    grid: &ImageGrid,
    coeff: &CellField,
    alpha: f64,
    data: &[f64],
) -> Result<SparseSystem> {
    grid.check_cell(coeff)?;
    if data.len() != grid.node_count() {
        return Err(Error::Size(format!(
            "expected {} nodal data values, got {}",
            grid.node_count(),
            data.len()
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    if let Some((cell, &value)) = coeff
        .values()
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
    {
        return Err(Error::Assembly { cell, value });
    }
    let ones = vec![1.0; grid.cell_count()];
    let stiff: Vec<f64> = coeff.values().iter().map(|v| alpha * v).collect();
    Ok(SparseSystem {
        matrix: assemble_operator(grid, &ones, &stiff),
        rhs: mass_apply(grid, &ones, data),
    })
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    /// `‖D⁻¹ r‖₂ / ‖D⁻¹ b‖₂` at exit.
    pub final_residual: f64,
    pub converged: bool,
}

/// Stopping parameters for [`solve_cg`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl CgSettings {
    pub const DEFAULT_TOL: f64 = 1e-9;

    /// `tol = 1e-9`, `max_iter = max(200, ceil(10 * sqrt(unknowns)))`.
    pub fn default_for(unknowns: usize) -> Self {
        CgSettings {
            tol: Self::DEFAULT_TOL,
            max_iter: default_max_iter(unknowns),
        }
    }

    pub fn with_tol(unknowns: usize, tol: f64) -> Self {
        CgSettings {
            tol,
            max_iter: default_max_iter(unknowns),
        }
    }
}

pub fn default_max_iter(unknowns: usize) -> usize {
    ((10.0 * (unknowns as f64).sqrt()).ceil() as usize).max(200)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients.
///
/// Iterates until `‖D⁻¹ r‖ ≤ tol ‖D⁻¹ b‖` or `max_iter` steps. Starts from
/// `warm_start` when given, else from zero. Non-convergence is reported,
/// not raised.
pub fn solve_cg(
    system: &SparseSystem,
    tol: f64,
    max_iter: usize,
    warm_start: Option<&NodalField>,
) -> (NodalField, SolverReport) {
    let a = &system.matrix;
    let b = &system.rhs;
    let n = a.dim();
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let wrap = |values: Vec<f64>| NodalField::from_raw(a.nx, a.ny, values);

    let b_norm = b
        .iter()
        .zip(&inv_diag)
        .map(|(bi, di)| (bi * di) * (bi * di))
        .sum::<f64>()
        .sqrt();
    if b_norm == 0.0 {
        let report = SolverReport {
            iterations: 0,
            final_residual: 0.0,
            converged: true,
        };
        return (wrap(vec![0.0; n]), report);
    }

    let mut x = match warm_start {
        Some(w) if w.values().len() == n => w.values().to_vec(),
        _ => vec![0.0; n],
    };
    let mut r = b.clone();
    if warm_start.is_some() {
        let ax = a.mul(&x);
        for (ri, axi) in r.iter_mut().zip(&ax) {
            *ri -= axi;
        }
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut residual = dot(&z, &z).sqrt() / b_norm;
    let mut iterations = 0;

    while residual > tol && iterations < max_iter {
        a.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if pq.is_nan() || pq <= 0.0 {
            break;
        }
        let step = rz / pq;
        let mut rz_new = 0.0;
        let mut zz = 0.0;
        for k in 0..n {
            x[k] += step * p[k];
            r[k] -= step * q[k];
            z[k] = r[k] * inv_diag[k];
            rz_new += r[k] * z[k];
            zz += z[k] * z[k];
        }
        iterations += 1;
        residual = zz.sqrt() / b_norm;
        let beta = rz_new / rz;
        rz = rz_new;
        for (pk, zk) in p.iter_mut().zip(&z) {
            *pk = zk + beta * *pk;
        }
    }

    let report = SolverReport {
        iterations,
        final_residual: residual,
        converged: residual <= tol,
    };
    (wrap(x), report)
}

/// Per-cell gradient of the bilinear interpolant at the cell center.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGradients {
    pub gx: CellField,
    pub gy: CellField,
    /// `gx² + gy²`
    pub gsq: CellField,
}

pub fn cell_gradients(u: &NodalField, grid: &ImageGrid) -> Result<CellGradients> {
    grid.check_nodal(u)?;
    let n = grid.cell_count();
    let nx = grid.nx();
    let two_h = 2.0 * grid.h();
    let vals = u.values();
    let grads: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|k| {
            let [sw, se, ne, nw] = grid.cell_nodes(k % nx, k / nx).map(|m| vals[m]);
            ((ne + se - (nw + sw)) / two_h, (ne + nw - (se + sw)) / two_h)
        })
        .collect();
    let gx: Vec<f64> = grads.iter().map(|g| g.0).collect();
    let gy: Vec<f64> = grads.iter().map(|g| g.1).collect();
    let gsq: Vec<f64> = grads.iter().map(|(x, y)| x * x + y * y).collect();
    Ok(CellGradients {
        gx: CellField::from_values(grid, gx)?,
        gy: CellField::from_values(grid, gy)?,
        gsq: CellField::from_values(grid, gsq)?,
    })
}

/// `∫_cell |∇u|²` for every cell.
pub fn cell_dirichlet(u: &NodalField, grid: &ImageGrid) -> Vec<f64> {
    let vals = u.values();
    (0..grid.ny())
        .flat_map(|j| (0..grid.nx()).map(move |i| (i, j)))
        .map(|(i, j)| stiffness_form(&local_values(grid, vals, i, j)))
        .collect()
}
