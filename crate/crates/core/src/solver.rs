//! Minimization of the discrete exponential energy
//! `Γ_ε(v) = Σ_cells exp(H(D_cell v)/ε)·hx·hy` over interior node values
//! with Dirichlet boundary data.
//!
//! The energy is assembled in shifted form `exp(H/ε − M)` with
//! `M = max H/ε`, which leaves the Newton direction unchanged while never
//! overflowing; line searches compare the log-domain objective
//! `ε·ln Σ exp(H/ε)`, a monotone transform of Γ_ε with the same minimizer.
//! Cell loops parallelize over rows with ordered reductions, so results are
//! bit-reproducible at any thread count.

use crate::exec;
use crate::grid::{self, Grid2D, GridError, GridFunction, Rect};
use crate::hamiltonian::{Hamiltonian, HamiltonianError};
use crate::math::{SymMat2, Vec2};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("boundary data contains non-finite values")]
    BoundaryNotFinite,
    #[error("energy exponent H/eps reaches {max_ratio:.1}; increase eps or enable the log-domain objective")]
    EnergyOverflow { max_ratio: f64 },
    #[error("line search failed to decrease the energy at iteration {iter}")]
    LineSearchStalled { iter: usize },
    #[error("continuation ladder must be non-empty")]
    EmptyLadder,
}

/// When to switch the reported objective into the log domain. The internal
/// assembly is always shifted; this only controls the overflow check on the
/// reported `Γ_ε`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LogDomain {
    /// Shifted automatically once `max H/ε > 500`.
    Auto,
    Always,
    /// Fail with an overflow error rather than shifting.
    Never,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveConfig {
    pub eps: f64,
    pub max_iters: usize,
    /// Scale-free gradient tolerance factor: convergence at
    /// `sup|∇Γ| <= grad_tol·(1 + |Γ|)`, evaluated in the shifted domain.
    pub grad_tol: f64,
    /// Initial Newton damping in (0, 1].
    pub damping: f64,
    pub continuation_ladder: Vec<f64>,
    pub log_domain: LogDomain,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            eps: 0.1,
            max_iters: 400,
            grad_tol: 1e-9,
            damping: 1.0,
            continuation_ladder: Vec::new(),
            log_domain: LogDomain::Auto,
        }
    }
}

impl SolveConfig {
    pub fn with_eps(eps: f64) -> Self {
        SolveConfig {
            eps,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub log_energy: f64,
    pub grad_sup: f64,
    /// Sup of the diagonally scaled gradient |g_n|/d_n (Jacobi step size).
    pub step_sup: f64,
    pub step: f64,
    pub cg_iters: usize,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub u: GridFunction,
    pub eps: f64,
    /// Γ_ε(u); +∞ when it overflows f64 (see `log_energy`).
    pub energy: f64,
    /// ε·ln Γ_ε(u), always finite.
    pub log_energy: f64,
    /// Sup-norm of the discrete Aronsson residual
    /// `𝒜_H[u] + ε·div D_pH(Du)` over interior nodes.
    pub residual: f64,
    /// Final shifted energy-gradient sup-norm.
    pub grad_sup: f64,
    pub iters: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

// ---------------------------------------------------------------------------
// Cell assembly: bilinear elements, 2×2 Gauss quadrature
//
// A single cell-centered quadrature point leaves the checkerboard node
// mode in the kernel of the discrete energy; the 2×2 rule penalizes it
// while keeping the Hessian a 9-point stencil.
// ---------------------------------------------------------------------------

const GAUSS_OFF: f64 = 0.28867513459481287; // 1/(2√3)
const GAUSS_PTS: [(f64, f64); 4] = [
    (0.5 - GAUSS_OFF, 0.5 - GAUSS_OFF),
    (0.5 + GAUSS_OFF, 0.5 - GAUSS_OFF),
    (0.5 - GAUSS_OFF, 0.5 + GAUSS_OFF),
    (0.5 + GAUSS_OFF, 0.5 + GAUSS_OFF),
];
const N_QP: usize = 4;

#[derive(Clone, Copy)]
struct CellData {
    w: f64,
    gp: Vec2,
    b: SymMat2,
}

/// Gradient of the bilinear interpolant at local coordinates (ξ, η).
#[inline]
fn point_gradient(u: &[f64], grid: &Grid2D, ci: usize, cj: usize, xi: f64, eta: f64) -> Vec2 {
    let nx = grid.nx;
    let k00 = cj * nx + ci;
    let k01 = k00 + nx;
    let gx = ((u[k00 + 1] - u[k00]) * (1.0 - eta) + (u[k01 + 1] - u[k01]) * eta) / grid.hx();
    let gy = ((u[k01] - u[k00]) * (1.0 - xi) + (u[k01 + 1] - u[k00 + 1]) * xi) / grid.hy();
    Vec2::new(gx, gy)
}

/// Cell-midpoint bilinear gradient (diagnostic convention for sup-norms).
#[inline]
fn cell_gradient(u: &[f64], grid: &Grid2D, ci: usize, cj: usize) -> Vec2 {
    point_gradient(u, grid, ci, cj, 0.5, 0.5)
}

/// Sensitivity of the quadrature-point gradient to the four corner values.
#[inline]
fn corner_sensitivity(corner: usize, xi: f64, eta: f64, hx: f64, hy: f64) -> Vec2 {
    match corner {
        0 => Vec2::new(-(1.0 - eta) / hx, -(1.0 - xi) / hy), // 00
        1 => Vec2::new((1.0 - eta) / hx, -xi / hy),          // 10
        2 => Vec2::new(-eta / hx, (1.0 - xi) / hy),          // 01
        _ => Vec2::new(eta / hx, xi / hy),                   // 11
    }
}

/// H at every quadrature point; the global shift is the maximum over ε.
fn qp_h_values(h: &Hamiltonian, u: &GridFunction) -> Result<Vec<f64>, SolveError> {
    let g = u.grid;
    let (ncx, ncy) = (g.nx - 1, g.ny - 1);
    let rows = exec::map_indexed(ncy, |cj| -> Result<Vec<f64>, HamiltonianError> {
        let mut row = Vec::with_capacity(ncx * N_QP);
        for ci in 0..ncx {
            for (xi, eta) in GAUSS_PTS {
                row.push(h.eval(point_gradient(&u.values, &g, ci, cj, xi, eta))?);
            }
        }
        Ok(row)
    });
    let mut out = Vec::with_capacity(ncx * ncy * N_QP);
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

struct Assembly {
    /// One entry per (cell, quadrature point), row-major cells.
    cells: Vec<CellData>,
    shift: f64,
    /// Σ w·(hx·hy/4) in the shifted domain.
    e_shifted: f64,
    /// ε·ln Γ_ε.
    log_energy: f64,
}

fn assemble(
    h: &Hamiltonian,
    u: &GridFunction,
    eps: f64,
    with_derivatives: bool,
) -> Result<Assembly, SolveError> {
    let g = u.grid;
    let (ncx, ncy) = (g.nx - 1, g.ny - 1);
    let hvals = qp_h_values(h, u)?;
    let shift = hvals.iter().cloned().fold(0.0f64, f64::max) / eps;
    let cells_rows = exec::map_indexed(
        ncy,
        |cj| -> Result<(Vec<CellData>, f64), HamiltonianError> {
            let mut row = Vec::with_capacity(ncx * N_QP);
            let mut sum = 0.0;
            for ci in 0..ncx {
                for (q, (xi, eta)) in GAUSS_PTS.iter().enumerate() {
                    let p = point_gradient(&u.values, &g, ci, cj, *xi, *eta);
                    let w = (hvals[(cj * ncx + ci) * N_QP + q] / eps - shift).exp();
                    sum += w;
                    let (gp, b) = if with_derivatives {
                        (h.grad(p)?, h.hess(p)?)
                    } else {
                        (Vec2::ZERO, SymMat2::default())
                    };
                    row.push(CellData { w, gp, b });
                }
            }
            Ok((row, sum))
        },
    );
    let mut cells = Vec::with_capacity(ncx * ncy * N_QP);
    let mut parts = Vec::with_capacity(ncy);
    for r in cells_rows {
        let (row, sum) = r?;
        cells.extend(row);
        parts.push(sum);
    }
    let e_shifted = exec::sum_ordered(&parts) * g.hx() * g.hy() / N_QP as f64;
    let log_energy = eps * (shift + e_shifted.ln());
    Ok(Assembly {
        cells,
        shift,
        e_shifted,
        log_energy,
    })
}

/// ε·ln Γ_ε(u): the log-domain objective used by line searches.
pub fn log_energy(h: &Hamiltonian, u: &GridFunction, eps: f64) -> Result<f64, SolveError> {
    let g = u.grid;
    let hvals = qp_h_values(h, u)?;
    let per_row = (g.nx - 1) * N_QP;
    let shift = hvals.iter().cloned().fold(0.0f64, f64::max) / eps;
    let rows = exec::map_indexed(g.ny - 1, |cj| {
        let mut s = 0.0;
        for k in 0..per_row {
            s += (hvals[cj * per_row + k] / eps - shift).exp();
        }
        s
    });
    let e_shifted = exec::sum_ordered(&rows) * g.hx() * g.hy() / N_QP as f64;
    Ok(eps * (shift + e_shifted.ln()))
}

/// Γ_ε(u) itself; +∞ if it overflows.
pub fn energy(h: &Hamiltonian, u: &GridFunction, eps: f64) -> Result<f64, SolveError> {
    Ok((log_energy(h, u, eps)? / eps).exp())
}

/// The four cells around node (i, j), each with the corner role the node
/// plays there (0 = 00, 1 = 10, 2 = 01, 3 = 11).
#[inline]
fn node_cells(g: &Grid2D, i: usize, j: usize) -> [Option<(usize, usize)>; 4] {
    let (ncx, ncy) = (g.nx - 1, g.ny - 1);
    let mut out = [None, None, None, None];
    if i < ncx && j < ncy {
        out[0] = Some((j * ncx + i, 0));
    }
    if i >= 1 && j < ncy {
        out[1] = Some((j * ncx + i - 1, 1));
    }
    if i < ncx && j >= 1 {
        out[2] = Some(((j - 1) * ncx + i, 2));
    }
    if i >= 1 && j >= 1 {
        out[3] = Some(((j - 1) * ncx + i - 1, 3));
    }
    out
}

/// Shifted energy gradient over interior nodes (boundary entries zero).
fn gradient_field(asm: &Assembly, g: &Grid2D, eps: f64) -> Vec<f64> {
    let scale = g.hx() * g.hy() / (N_QP as f64 * eps);
    let (hx, hy) = (g.hx(), g.hy());
    let nx = g.nx;
    let rows = exec::map_indexed(g.ny, |j| {
        let mut row = vec![0.0; nx];
        if j == 0 || j == g.ny - 1 {
            return row;
        }
        for (i, slot) in row.iter_mut().enumerate().take(nx - 1).skip(1) {
            let mut acc = 0.0;
            for (cell_idx, corner) in node_cells(g, i, j).into_iter().flatten() {
                for (q, (xi, eta)) in GAUSS_PTS.iter().enumerate() {
                    let cd = &asm.cells[cell_idx * N_QP + q];
                    let s = corner_sensitivity(corner, *xi, *eta, hx, hy);
                    acc += cd.w * cd.gp.dot(s);
                }
            }
            *slot = acc * scale;
        }
        row
    });
    let mut out = Vec::with_capacity(g.len());
    for r in rows {
        out.extend(r);
    }
    out
}

/// Apply the shifted energy Hessian to a field vanishing on the boundary.
fn hessian_apply(asm: &Assembly, g: &Grid2D, eps: f64, x: &[f64], out: &mut [f64]) {
    let (ncx, ncy) = (g.nx - 1, g.ny - 1);
    // quadrature-point pass: w·[(1/ε)·⟨g_p, Gx⟩·g_p + B·Gx]
    let cell_aux = exec::map_indexed(ncy, |cj| {
        let mut row = Vec::with_capacity(ncx * N_QP);
        for ci in 0..ncx {
            for (q, (xi, eta)) in GAUSS_PTS.iter().enumerate() {
                let cd = &asm.cells[(cj * ncx + ci) * N_QP + q];
                let gx = point_gradient(x, g, ci, cj, *xi, *eta);
                let t1 = cd.gp.dot(gx);
                row.push((cd.gp * (t1 / eps) + cd.b.mul_vec(gx)) * cd.w);
            }
        }
        row
    });
    let mut aux = Vec::with_capacity(ncx * ncy * N_QP);
    for r in cell_aux {
        aux.extend(r);
    }
    let scale = g.hx() * g.hy() / (N_QP as f64 * eps);
    let (hx, hy) = (g.hx(), g.hy());
    let nx = g.nx;
    let rows = exec::map_indexed(g.ny, |j| {
        let mut row = vec![0.0; nx];
        if j == 0 || j == g.ny - 1 {
            return row;
        }
        for (i, slot) in row.iter_mut().enumerate().take(nx - 1).skip(1) {
            let mut acc = 0.0;
            for (cell_idx, corner) in node_cells(g, i, j).into_iter().flatten() {
                for (q, (xi, eta)) in GAUSS_PTS.iter().enumerate() {
                    let s = corner_sensitivity(corner, *xi, *eta, hx, hy);
                    acc += aux[cell_idx * N_QP + q].dot(s);
                }
            }
            *slot = acc * scale;
        }
        row
    });
    for (j, r) in rows.into_iter().enumerate() {
        out[j * nx..(j + 1) * nx].copy_from_slice(&r);
    }
}

/// Diagonal of the shifted Hessian (Jacobi preconditioner).
fn hessian_diag(asm: &Assembly, g: &Grid2D, eps: f64) -> Vec<f64> {
    let scale = g.hx() * g.hy() / (N_QP as f64 * eps);
    let (hx, hy) = (g.hx(), g.hy());
    let nx = g.nx;
    let rows = exec::map_indexed(g.ny, |j| {
        let mut row = vec![1.0; nx];
        if j == 0 || j == g.ny - 1 {
            return row;
        }
        for (i, slot) in row.iter_mut().enumerate().take(nx - 1).skip(1) {
            let mut acc = 0.0;
            for (cell_idx, corner) in node_cells(g, i, j).into_iter().flatten() {
                for (q, (xi, eta)) in GAUSS_PTS.iter().enumerate() {
                    let cd = &asm.cells[cell_idx * N_QP + q];
                    let s = corner_sensitivity(corner, *xi, *eta, hx, hy);
                    let t1 = cd.gp.dot(s);
                    acc += cd.w * (t1 * t1 / eps + cd.b.quad_form(s));
                }
            }
            *slot = (acc * scale).max(1e-300);
        }
        row
    });
    let mut out = Vec::with_capacity(g.len());
    for r in rows {
        out.extend(r);
    }
    out
}

// memory-bound and called per CG iteration: sequential row sums with a
// fixed order (bit-identical to the parallel reduction it replaces)
fn dot(g: &Grid2D, a: &[f64], b: &[f64]) -> f64 {
    let nx = g.nx;
    let mut parts = Vec::with_capacity(g.ny);
    for j in 0..g.ny {
        let mut s = 0.0;
        for i in 0..nx {
            s += a[j * nx + i] * b[j * nx + i];
        }
        parts.push(s);
    }
    exec::sum_ordered(&parts)
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

enum CgOutcome {
    Converged(usize),
    MaxIters(usize),
    IndefiniteAt(usize),
}

/// Jacobi-preconditioned CG for the Newton system `K d = -g`.
///
/// Convergence is measured in the preconditioned norm ⟨r, D⁻¹r⟩: the
/// exponential weights make the plain residual norm blind to low-H
/// regions, whose equations would otherwise never be solved.
fn newton_direction(
    asm: &Assembly,
    g2: &Grid2D,
    eps: f64,
    grad: &[f64],
    diag: &[f64],
    rel_tol: f64,
) -> (Vec<f64>, CgOutcome) {
    let n = g2.len();
    let mut d = vec![0.0; n];
    let mut r: Vec<f64> = grad.iter().map(|v| -v).collect();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(a, b)| a / b).collect();
    let mut p = z.clone();
    let mut rz = dot(g2, &r, &z);
    if rz <= 0.0 {
        return (d, CgOutcome::Converged(0));
    }
    let rz0 = rz;
    let mut ap = vec![0.0; n];
    let max_iters = 20 * (g2.nx + g2.ny);
    for it in 0..max_iters {
        hessian_apply(asm, g2, eps, &p, &mut ap);
        let pap = dot(g2, &p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return (d, CgOutcome::IndefiniteAt(it));
        }
        let alpha = rz / pap;
        for k in 0..n {
            d[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        for k in 0..n {
            z[k] = r[k] / diag[k];
        }
        let rz_new = dot(g2, &r, &z);
        if rz_new <= rel_tol * rel_tol * rz0 {
            return (d, CgOutcome::Converged(it + 1));
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    (d, CgOutcome::MaxIters(max_iters))
}

// ---------------------------------------------------------------------------
// Boundary handling and initial guess
// ---------------------------------------------------------------------------

fn impose_boundary(target: &mut GridFunction, boundary: &GridFunction) {
    for (i, j) in target.grid.boundary_nodes() {
        target.set(i, j, boundary.at(i, j));
    }
}

/// Transfinite (Coons) interpolation of the boundary ring; exact for
/// linear data.
fn coons_patch(grid: Grid2D, boundary: &GridFunction) -> GridFunction {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut u = GridFunction::zeros(grid);
    for j in 0..ny {
        let ty = j as f64 / (ny - 1) as f64;
        for i in 0..nx {
            let tx = i as f64 / (nx - 1) as f64;
            let south = boundary.at(i, 0);
            let north = boundary.at(i, ny - 1);
            let west = boundary.at(0, j);
            let east = boundary.at(nx - 1, j);
            let sw = boundary.at(0, 0);
            let se = boundary.at(nx - 1, 0);
            let nw = boundary.at(0, ny - 1);
            let ne = boundary.at(nx - 1, ny - 1);
            let v = (1.0 - ty) * south + ty * north + (1.0 - tx) * west + tx * east
                - ((1.0 - tx) * (1.0 - ty) * sw
                    + tx * (1.0 - ty) * se
                    + (1.0 - tx) * ty * nw
                    + tx * ty * ne);
            u.set(i, j, v);
        }
    }
    u
}

/// Discrete harmonic extension of the boundary data (5-point Laplacian,
/// CG), starting from the Coons patch.
pub fn harmonic_extension(grid: Grid2D, boundary: &GridFunction) -> GridFunction {
    let mut u = coons_patch(grid, boundary);
    impose_boundary(&mut u, boundary);
    let (nx, ny) = (grid.nx, grid.ny);
    let ihx2 = 1.0 / (grid.hx() * grid.hx());
    let ihy2 = 1.0 / (grid.hy() * grid.hy());
    let lap = |v: &[f64], i: usize, j: usize| -> f64 {
        (v[j * nx + i - 1] - 2.0 * v[j * nx + i] + v[j * nx + i + 1]) * ihx2
            + (v[(j - 1) * nx + i] - 2.0 * v[j * nx + i] + v[(j + 1) * nx + i]) * ihy2
    };
    let n = grid.len();
    let mut r = vec![0.0; n];
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            r[j * nx + i] = lap(&u.values, i, j);
        }
    }
    let b0 = dot(&grid, &r, &r).sqrt();
    if b0 == 0.0 {
        return u;
    }
    let mut p = r.clone();
    let mut rr = b0 * b0;
    let mut ap = vec![0.0; n];
    for _ in 0..4 * n {
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                ap[j * nx + i] = -lap(&p, i, j);
            }
        }
        let pap = dot(&grid, &p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for k in 0..n {
            u.values[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&grid, &r, &r);
        if rr_new.sqrt() <= 1e-13 * b0 {
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
    }
    u
}

// ---------------------------------------------------------------------------
// Newton driver
// ---------------------------------------------------------------------------

/// Minimize the discrete exponential energy with the given boundary data.
/// The boundary field supplies the Dirichlet ring; its interior is ignored.
pub fn solve_exp_harmonic(
    h: &Hamiltonian,
    grid: Grid2D,
    boundary: &GridFunction,
    cfg: &SolveConfig,
) -> Result<SolveResult, SolveError> {
    let init = harmonic_extension(grid, boundary);
    solve_with_init(h, grid, boundary, cfg, &init)
}

/// Same as [`solve_exp_harmonic`] but starting from an explicit field
/// (warm starts, robustness studies).
pub fn solve_with_init(
    h: &Hamiltonian,
    grid: Grid2D,
    boundary: &GridFunction,
    cfg: &SolveConfig,
    init: &GridFunction,
) -> Result<SolveResult, SolveError> {
    boundary
        .assert_finite()
        .map_err(|_| SolveError::BoundaryNotFinite)?;
    let eps = cfg.eps;
    let mut u = init.clone();
    impose_boundary(&mut u, boundary);

    let mut trace = Vec::new();
    let mut converged = false;
    let mut grad_sup = f64::INFINITY;
    let mut step_start = cfg.damping.clamp(1e-6, 1.0);
    let mut iters = 0;

    let u_scale = 1.0 + sup_norm(&u.values);
    let step_tol = cfg.grad_tol * u_scale * 10.0;
    let mut best_step_sup = f64::INFINITY;
    let mut stall = 0usize;
    // set once the global criterion first holds; from then on steps are
    // trust-capped so the remaining flat-region settling is monotone
    let mut settling = false;
    let mut cap_scale = 1.0f64;
    for iter in 0..cfg.max_iters {
        iters = iter + 1;
        let asm = assemble(h, &u, eps, true)?;
        if cfg.log_domain == LogDomain::Never && asm.shift > 700.0 {
            return Err(SolveError::EnergyOverflow {
                max_ratio: asm.shift,
            });
        }
        let g = gradient_field(&asm, &grid, eps);
        let diag = hessian_diag(&asm, &grid, eps);
        grad_sup = sup_norm(&g);
        // two-sided convergence test: the scale-free global criterion plus
        // a diagonally scaled one so that exponentially down-weighted
        // regions are held to the same relative accuracy; once the global
        // criterion holds and the scaled step stops improving the iterate
        // sits at the floating-point floor of the functional
        let global_ok = grad_sup <= cfg.grad_tol * (asm.e_shifted + (-asm.shift).exp());
        let step_sup = g
            .iter()
            .zip(&diag)
            .fold(0.0f64, |m, (gn, dn)| m.max((gn / dn).abs()));
        if global_ok {
            if step_sup < 0.9 * best_step_sup {
                best_step_sup = step_sup;
                stall = 0;
            } else {
                stall += 1;
            }
        } else {
            best_step_sup = f64::INFINITY;
            stall = 0;
        }
        if global_ok && (step_sup <= step_tol || stall >= 100000) {
            converged = true;
            trace.push(TraceEntry {
                iter,
                log_energy: asm.log_energy,
                grad_sup,
                step_sup,
                step: 0.0,
                cg_iters: 0,
            });
            break;
        }
        let (mut d, outcome) = newton_direction(&asm, &grid, eps, &g, &diag, 1e-2);
        let cg_iters = match outcome {
            CgOutcome::Converged(k) | CgOutcome::MaxIters(k) => k,
            CgOutcome::IndefiniteAt(k) => {
                // indefinite system: fall back to preconditioned descent
                for (dn, (gn, dia)) in d.iter_mut().zip(g.iter().zip(&diag)) {
                    *dn = -gn / dia;
                }
                k
            }
        };
        if global_ok {
            settling = true;
        }
        // per-node trust cap for the settling phase: limit the change of
        // the local exponent H(Dv)/ε per step, otherwise the exponential
        // weights in energy-flat regions make full Newton steps bounce
        // chaotically; the cap widens while full steps keep being accepted
        let clamp_direction = |d: &mut [f64], scale: f64| {
            let smax = 1.0 / grid.hx() + 1.0 / grid.hy();
            for j in 1..grid.ny - 1 {
                for i in 1..grid.nx - 1 {
                    let mut gp_max = 0.0f64;
                    for (cell_idx, _) in node_cells(&grid, i, j).into_iter().flatten() {
                        for q in 0..N_QP {
                            gp_max = gp_max.max(asm.cells[cell_idx * N_QP + q].gp.norm());
                        }
                    }
                    let cap = scale * eps / (gp_max * smax + 1e-300);
                    let k = grid.idx(i, j);
                    d[k] = d[k].clamp(-cap, cap);
                }
            }
        };
        if settling {
            clamp_direction(&mut d, cap_scale);
        }
        let mut slope = eps * dot(&grid, &g, &d) / asm.e_shifted;
        if slope >= 0.0 {
            for (dn, (gn, dia)) in d.iter_mut().zip(g.iter().zip(&diag)) {
                *dn = -gn / dia;
            }
            if settling {
                clamp_direction(&mut d, cap_scale);
            }
            slope = eps * dot(&grid, &g, &d) / asm.e_shifted;
            if slope >= 0.0 {
                return Err(SolveError::LineSearchStalled { iter });
            }
        }
        // Armijo backtracking on the log-domain objective
        let e0 = asm.log_energy;
        let mut alpha = step_start;
        let mut accepted = false;
        let mut trial = u.clone();
        for _ in 0..48 {
            for (t, (uv, dv)) in trial.values.iter_mut().zip(u.values.iter().zip(&d)) {
                *t = uv + alpha * dv;
            }
            let e1 = log_energy(h, &trial, eps)?;
            // fp slack: steps correcting exponentially down-weighted
            // regions change the energy below double precision
            if e1 <= e0 + 1e-4 * alpha * slope + 1e-15 * (1.0 + e0.abs()) {
                u.values.copy_from_slice(&trial.values);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(SolveError::LineSearchStalled { iter });
        }
        step_start = (2.0 * alpha).min(1.0);
        if settling {
            cap_scale = if alpha >= 1.0 {
                (cap_scale * 2.0).min(1024.0)
            } else {
                1.0
            };
        }
        trace.push(TraceEntry {
            iter,
            log_energy: e0,
            grad_sup,
            step_sup,
            step: alpha,
            cg_iters,
        });
    }

    let asm = assemble(h, &u, eps, false)?;
    let res_field = residual_aronsson(h, &u, eps)?;
    let residual = sup_norm(&res_field.values);
    u.assert_finite()?;
    Ok(SolveResult {
        u,
        eps,
        energy: (asm.log_energy / eps).exp(),
        log_energy: asm.log_energy,
        residual,
        grad_sup,
        iters,
        converged,
        trace,
    })
}

/// Discrete Aronsson residual field
/// `Σ H_pi(Du)H_pj(Du)u_xixj + ε·div[D_pH(Du)]` at interior nodes
/// (boundary ring zero). `eps = 0` evaluates the bare operator.
pub fn residual_aronsson(
    h: &Hamiltonian,
    u: &GridFunction,
    eps: f64,
) -> Result<GridFunction, SolveError> {
    let g2 = u.grid;
    let (qx, qy) = grid::gradient(u);
    let mut gx = GridFunction::zeros(g2);
    let mut gy = GridFunction::zeros(g2);
    for k in 0..g2.len() {
        let gv = h.grad(Vec2::new(qx.values[k], qy.values[k]))?;
        gx.values[k] = gv.x;
        gy.values[k] = gv.y;
    }
    let div_g = grid::divergence(&gx, &gy);
    let mut out = GridFunction::zeros(g2);
    for j in 1..g2.ny - 1 {
        for i in 1..g2.nx - 1 {
            let k = g2.idx(i, j);
            let a = grid::hessian_at(u, i, j);
            let gp = Vec2::new(gx.values[k], gy.values[k]);
            out.values[k] = a.quad_form(gp) + eps * div_g.values[k];
        }
    }
    Ok(out)
}

/// Solve along a decreasing ε ladder, warm-starting each solve from the
/// previous solution. Returns one result per rung.
pub fn eps_continuation(
    h: &Hamiltonian,
    grid: Grid2D,
    boundary: &GridFunction,
    cfg: &SolveConfig,
) -> Result<Vec<SolveResult>, SolveError> {
    let ladder = if cfg.continuation_ladder.is_empty() {
        vec![cfg.eps]
    } else {
        cfg.continuation_ladder.clone()
    };
    let mut out: Vec<SolveResult> = Vec::with_capacity(ladder.len());
    for &eps in &ladder {
        let mut c = cfg.clone();
        c.eps = eps;
        let res = match out.last() {
            Some(prev) => solve_with_init(h, grid, boundary, &c, &prev.u)?,
            None => solve_exp_harmonic(h, grid, boundary, &c)?,
        };
        out.push(res);
    }
    Ok(out)
}

/// One rung of the mollification pipeline.
#[derive(Clone, Debug)]
pub struct DeltaRun {
    pub delta: f64,
    pub results: Vec<SolveResult>,
    /// max over cells with center in the window of `H^δ(D_cell u)` at the
    /// finest ε.
    pub h_linf_v: f64,
}

/// For each δ: mollify H, run the ε continuation, and record the sup of
/// `H^δ(Du)` on the interior window — the quantity whose limsup the theory
/// bounds by the boundary-data energy.
pub fn delta_pipeline(
    h: &Hamiltonian,
    grid: Grid2D,
    boundary: &GridFunction,
    delta_ladder: &[f64],
    cfg: &SolveConfig,
    v_rect: Rect,
) -> Result<Vec<DeltaRun>, SolveError> {
    if delta_ladder.is_empty() {
        return Err(SolveError::EmptyLadder);
    }
    let mut out = Vec::with_capacity(delta_ladder.len());
    for &delta in delta_ladder {
        let hd = crate::hamiltonian::mollify(h, delta)?;
        let results = eps_continuation(&hd, grid, boundary, cfg)?;
        let last = results.last().expect("ladder non-empty");
        let h_linf_v = h_sup_on_cells(&hd, &last.u, Some(v_rect))?;
        out.push(DeltaRun {
            delta,
            results,
            h_linf_v,
        });
    }
    Ok(out)
}

/// max over cells (restricted to centers inside `window` when given) of
/// `H(D_cell u)`.
pub fn h_sup_on_cells(
    h: &Hamiltonian,
    u: &GridFunction,
    window: Option<Rect>,
) -> Result<f64, SolveError> {
    let g = u.grid;
    let mut worst = 0.0f64;
    for cj in 0..g.ny - 1 {
        for ci in 0..g.nx - 1 {
            let cx = g.x(ci) + 0.5 * g.hx();
            let cy = g.y(cj) + 0.5 * g.hy();
            if let Some(w) = window {
                if !w.contains(cx, cy) {
                    continue;
                }
            }
            worst = worst.max(h.eval(cell_gradient(&u.values, &g, ci, cj))?);
        }
    }
    Ok(worst)
}

/// Write the boundary ring of a fresh field from a closure.
pub fn boundary_from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> GridFunction {
    let mut b = GridFunction::zeros(grid);
    for (i, j) in grid.boundary_nodes() {
        b.set(i, j, f(grid.x(i), grid.y(j)));
    }
    b
}

/// The classical fourth-thirds profile `|x|^{4/3} − |y|^{4/3}`.
pub fn aronsson_profile(x: f64, y: f64) -> f64 {
    x.abs().powf(4.0 / 3.0) - y.abs().powf(4.0 / 3.0)
}
