//! Exact discrete evaluation of the functionals in play.
//!
//! Every integral is taken over the bilinear interpolants with the element
//! mass and stiffness matrices, which integrate these integrands exactly and
//! coincide with the forms the solvers minimize.

use crate::cover::BallCover;
use crate::error::Result;
use crate::fem::{element_matrices, local_values, quadratic_form, stiffness_form, MASS_REF};
use crate::grid::{CellField, ImageGrid, NodalField};

/// The summands of a segmentation energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    /// `½ ∫ (u - f)²`
    pub fidelity: f64,
    /// weighted gradient term
    pub dirichlet: f64,
    /// edge-length term
    pub length: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(fidelity: f64, dirichlet: f64, length: f64) -> Self {
        EnergyBreakdown {
            fidelity,
            dirichlet,
            length,
            total: fidelity + dirichlet + length,
        }
    }

    /// `iter,fidelity,dirichlet,length,total`
    pub fn csv_row(&self, iter: usize) -> String {
        format!(
            "{iter},{},{},{},{}",
            self.fidelity, self.dirichlet, self.length, self.total
        )
    }

    pub const CSV_HEADER: &'static str = "iter,fidelity,dirichlet,length,total";
}

fn fidelity(u: &NodalField, grid: &ImageGrid) -> f64 {
    let (mass, _) = element_matrices(grid.h());
    let (uv, f) = (u.values(), grid.f());
    let mut sum = 0.0;
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let ue = local_values(grid, uv, i, j);
            let fe = local_values(grid, f, i, j);
            let d = [ue[0] - fe[0], ue[1] - fe[1], ue[2] - fe[2], ue[3] - fe[3]];
            sum += quadratic_form(&mass, &d);
        }
    }
    0.5 * sum
}

/// `G(u, v) = ½∫(u-f)² + (α/2)∫ v|∇u|²` for a cellwise-constant `v`.
pub fn energy_g(
    u: &NodalField,
    v: &CellField,
    grid: &ImageGrid,
    alpha: f64,
) -> Result<EnergyBreakdown> {
    grid.check_nodal(u)?;
    grid.check_cell(v)?;
    let uv = u.values();
    let mut dirichlet = 0.0;
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let ue = local_values(grid, uv, i, j);
            dirichlet += v.get(i, j) * stiffness_form(&ue);
        }
    }
    Ok(EnergyBreakdown::new(
        fidelity(u, grid),
        0.5 * alpha * dirichlet,
        0.0,
    ))
}

/// `J(u, v_Y) = G(u, v_Y) + 2βε·|Y|` for the indicator of `cover`.
pub fn energy_j(
    u: &NodalField,
    cover: &BallCover,
    grid: &ImageGrid,
    alpha: f64,
    beta: f64,
) -> Result<EnergyBreakdown> {
    let g = energy_g(u, &cover.indicator_field(grid), grid, alpha)?;
    let length = 2.0 * beta * cover.radius() * cover.ball_count() as f64;
    Ok(EnergyBreakdown::new(g.fidelity, g.dirichlet, length))
}

/// Per-cell mean of `v²` for a bilinear `v`.
pub fn cell_mean_square(v: &NodalField, grid: &ImageGrid) -> Vec<f64> {
    let vals = v.values();
    let mut out = Vec::with_capacity(grid.cell_count());
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            // MASS_REF integrates over the unit square, so this is the mean
            out.push(quadratic_form(&MASS_REF, &local_values(grid, vals, i, j)));
        }
    }
    out
}

/// Ambrosio-Tortorelli energy
///
/// ```text
/// ½∫(u-f)² + (α/2)∫ v²|∇u|² + β∫( ε|∇v|² + (v-1)²/(4ε) )
/// ```
///
/// The coupling term is evaluated cell by cell as `mean(v²) · ∫|∇u|²`, the
/// product form under which both alternating half-steps are exact
/// minimizations. It agrees with the pointwise integral whenever `v` or
/// `∇u` is constant on the cell.
pub fn energy_at(
    u: &NodalField,
    v: &NodalField,
    grid: &ImageGrid,
    alpha: f64,
    beta: f64,
    eps_at: f64,
) -> Result<EnergyBreakdown> {
    grid.check_nodal(u)?;
    grid.check_nodal(v)?;
    let (mass, _) = element_matrices(grid.h());
    let (uv, vv) = (u.values(), v.values());
    let mut coupling = 0.0;
    let mut grad_v = 0.0;
    let mut well = 0.0;
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let ue = local_values(grid, uv, i, j);
            let ve = local_values(grid, vv, i, j);
            let mean_v2 = quadratic_form(&MASS_REF, &ve);
            coupling += mean_v2 * stiffness_form(&ue);
            grad_v += stiffness_form(&ve);
            let dv = ve.map(|x| x - 1.0);
            well += quadratic_form(&mass, &dv);
        }
    }
    Ok(EnergyBreakdown::new(
        fidelity(u, grid),
        0.5 * alpha * coupling,
        beta * (eps_at * grad_v + well / (4.0 * eps_at)),
    ))
}
