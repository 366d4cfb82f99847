//! Pointwise structural identities relating the Aronsson operator, the
//! Hessian determinant and the gradient flux of H, verified exactly on a
//! closed-form registry and to discretization order on grid fields.
//!
//! With q = Dv, A = D²v, g = D_pH(q), B = D²H(q) and h = H(Dv) (so that
//! Dh = A g), the checked identities are:
//!
//! - structure:               ⟨B·Dh, Dh⟩ − div(g)·⟨A g, g⟩ = (−det A)·⟨adj(B) g, g⟩
//! - det-divergence:          2(−det A)(det B) = div{ B·Dh − div(g)·g }
//! - euclidean-structure:     |A q|² − Δv·⟨A q, q⟩ = (−det A)|q|²
//! - euclidean-det-div:       2(−det A) = div(A q − Δv·q)
//! - laplacian-structure:     |Dh|² − Δv·⟨A g, g⟩ = (−det A)|g|²
//! - laplacian-det-div:       div(Dh − Δv·g) = (−det A)·tr B
//! - solved-determinant:      on exponential-harmonic fields,
//!   (−det A)(det B) = 4 τ̃(q)·⟨B D√h, D√h⟩ + τ̃(q)·ε (div g)² / h
//!
//! The euclidean pair is the special case H = ½|p|² of the general pair;
//! the laplacian pair matches the Aronsson operator with the plain
//! Laplacian instead of div(g).

mod testfn;

pub use testfn::TestFn;

use crate::grid::{self, GridFunction};
use crate::hamiltonian::{Hamiltonian, HamiltonianError, Smoothness};
use crate::math::{SymMat2, SymTensor3, Vec2};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("identity check needs closed-form third derivatives for this Hamiltonian")]
    ThirdDerivativesUnavailable,
    #[error("identity check needs C2 smoothness, got {0:?}")]
    SmoothnessRequired(Smoothness),
    #[error("no valid sample points (all masked or outside the registry domain)")]
    NoSamples,
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdentityId {
    Structure,
    DetDivergence,
    EuclideanStructure,
    EuclideanDetDivergence,
    LaplacianStructure,
    LaplacianDetDivergence,
    SolvedDeterminant,
}

impl IdentityId {
    pub fn all() -> [IdentityId; 6] {
        [
            IdentityId::Structure,
            IdentityId::DetDivergence,
            IdentityId::EuclideanStructure,
            IdentityId::EuclideanDetDivergence,
            IdentityId::LaplacianStructure,
            IdentityId::LaplacianDetDivergence,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            IdentityId::Structure => "structure",
            IdentityId::DetDivergence => "det-divergence",
            IdentityId::EuclideanStructure => "euclidean-structure",
            IdentityId::EuclideanDetDivergence => "euclidean-det-divergence",
            IdentityId::LaplacianStructure => "laplacian-structure",
            IdentityId::LaplacianDetDivergence => "laplacian-det-divergence",
            IdentityId::SolvedDeterminant => "solved-determinant",
        }
    }

    pub fn from_name(s: &str) -> Option<IdentityId> {
        match s {
            "structure" => Some(IdentityId::Structure),
            "det-divergence" => Some(IdentityId::DetDivergence),
            "euclidean-structure" => Some(IdentityId::EuclideanStructure),
            "euclidean-det-divergence" => Some(IdentityId::EuclideanDetDivergence),
            "laplacian-structure" => Some(IdentityId::LaplacianStructure),
            "laplacian-det-divergence" => Some(IdentityId::LaplacianDetDivergence),
            "solved-determinant" => Some(IdentityId::SolvedDeterminant),
            _ => None,
        }
    }

    /// Whether the check needs third derivatives (an outer divergence).
    pub fn needs_third(&self) -> bool {
        matches!(
            self,
            IdentityId::DetDivergence
                | IdentityId::EuclideanDetDivergence
                | IdentityId::LaplacianDetDivergence
        )
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub id: IdentityId,
    pub n_samples: usize,
    pub max_abs_residual: f64,
    /// max residual divided by the larger of the two sides' maxima.
    pub relative_residual: f64,
    /// residual(h) / residual(h/2) when two resolutions were run.
    pub refinement_ratio: Option<f64>,
    /// fraction of interior nodes excluded by the degeneracy mask
    /// (solved-determinant check only).
    pub masked_fraction: Option<f64>,
    /// 90th percentile of the per-node relative residuals (grid checks).
    pub relative_p90: Option<f64>,
}

impl IdentityReport {
    /// log2 of the refinement ratio: the empirical convergence order.
    pub fn order_estimate(&self) -> Option<f64> {
        self.refinement_ratio.map(f64::log2)
    }
}

/// Everything needed to evaluate any identity at one point.
struct PointEval {
    q: Vec2,
    a: SymMat2,
    t: SymTensor3,
    g: Vec2,
    b: SymMat2,
    c: SymTensor3,
}

fn closed_form_eval(
    h: &Hamiltonian,
    v: &TestFn,
    p: Vec2,
    needs_third: bool,
) -> Result<PointEval, IdentityError> {
    if h.smoothness() < Smoothness::C2Plus {
        return Err(IdentityError::SmoothnessRequired(h.smoothness()));
    }
    let q = v.grad(p);
    let c = if needs_third {
        h.third(q)
            .ok_or(IdentityError::ThirdDerivativesUnavailable)?
    } else {
        SymTensor3::default()
    };
    Ok(PointEval {
        q,
        a: v.hess(p),
        t: v.third(p),
        g: h.grad(q)?,
        b: h.hess(q)?,
        c,
    })
}

fn mat_get(m: SymMat2, i: usize, j: usize) -> f64 {
    match (i, j) {
        (0, 0) => m.xx,
        (1, 1) => m.yy,
        _ => m.xy,
    }
}

fn vec_get(v: Vec2, i: usize) -> f64 {
    if i == 0 {
        v.x
    } else {
        v.y
    }
}

/// (lhs, rhs) of one identity at one point.
fn identity_sides(id: IdentityId, e: &PointEval) -> (f64, f64) {
    let PointEval { q, a, t, g, b, c } = e;
    let dh = a.mul_vec(*g); // D[H(Dv)]
    let div_g = b.xx * a.xx + 2.0 * b.xy * a.xy + b.yy * a.yy; // tr(BA)
    let aron = a.quad_form(*g); // ⟨A g, g⟩
    let neg_det_a = -a.det();
    match id {
        IdentityId::Structure => {
            let lhs = b.quad_form(dh) - div_g * aron;
            let rhs = neg_det_a * b.adjugate().quad_form(*g);
            (lhs, rhs)
        }
        IdentityId::EuclideanStructure => {
            let aq = a.mul_vec(*q);
            let lhs = aq.norm_sq() - a.trace() * a.quad_form(*q);
            let rhs = neg_det_a * q.norm_sq();
            (lhs, rhs)
        }
        IdentityId::LaplacianStructure => {
            let lhs = dh.norm_sq() - a.trace() * aron;
            let rhs = neg_det_a * g.norm_sq();
            (lhs, rhs)
        }
        IdentityId::DetDivergence => {
            // div{ B·(A g) − tr(BA)·g } expanded by the chain rule
            let mut div_f = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    // (∂_i B_ij)(Ag)_j with ∂_i B_jl = C_jlk A_ki
                    let mut dib_ij = 0.0;
                    for k in 0..2 {
                        dib_ij += c.get(i, j, k) * mat_get(*a, k, i);
                    }
                    div_f += dib_ij * vec_get(dh, j);
                    // B_ij ∂_i (Ag)_j
                    let mut d_ag_j = 0.0;
                    for l in 0..2 {
                        d_ag_j += t.get(j, l, i) * vec_get(*g, l);
                        for k in 0..2 {
                            d_ag_j += mat_get(*a, j, l) * mat_get(*b, l, k) * mat_get(*a, k, i);
                        }
                    }
                    div_f += mat_get(*b, i, j) * d_ag_j;
                }
                // −(∂_i tr(BA)) g_i
                let mut di_tr = 0.0;
                for j in 0..2 {
                    for l in 0..2 {
                        di_tr += mat_get(*b, j, l) * t.get(l, j, i);
                        for k in 0..2 {
                            di_tr += c.get(j, l, k) * mat_get(*a, k, i) * mat_get(*a, l, j);
                        }
                    }
                }
                div_f -= di_tr * vec_get(*g, i);
            }
            div_f -= div_g * div_g;
            (2.0 * neg_det_a * b.det(), div_f)
        }
        IdentityId::EuclideanDetDivergence => {
            // div(A q − Δv q); the third-derivative contributions cancel
            let d_lap = Vec2::new(t.c111 + t.c122, t.c112 + t.c222);
            let frob = a.xx * a.xx + 2.0 * a.xy * a.xy + a.yy * a.yy;
            let lhs = 2.0 * neg_det_a;
            let rhs = (d_lap.dot(*q) + frob) - (d_lap.dot(*q) + a.trace() * a.trace());
            (lhs, rhs)
        }
        IdentityId::LaplacianDetDivergence => {
            // div(Dh − Δv·g)
            let d_lap = Vec2::new(t.c111 + t.c122, t.c112 + t.c222);
            // tr(A B A)
            let mut tr_aba = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        tr_aba += mat_get(*a, i, j) * mat_get(*b, j, k) * mat_get(*a, k, i);
                    }
                }
            }
            let div_dh = d_lap.dot(*g) + tr_aba;
            let div_lap_g = d_lap.dot(*g) + a.trace() * div_g;
            (div_dh - div_lap_g, neg_det_a * b.trace())
        }
        IdentityId::SolvedDeterminant => {
            unreachable!("solved-determinant runs on grid fields only")
        }
    }
}

fn aggregate(id: IdentityId, sides: &[(f64, f64)]) -> IdentityReport {
    let mut max_abs = 0.0f64;
    let mut max_side = 0.0f64;
    for &(l, r) in sides {
        max_abs = max_abs.max((l - r).abs());
        max_side = max_side.max(l.abs()).max(r.abs());
    }
    let relative = if max_side > 0.0 {
        max_abs / max_side
    } else {
        0.0
    };
    IdentityReport {
        id,
        n_samples: sides.len(),
        max_abs_residual: max_abs,
        relative_residual: relative,
        refinement_ratio: None,
        masked_fraction: None,
        relative_p90: None,
    }
}

/// Check one identity on closed-form data at the given points.
pub fn check_closed_form(
    id: IdentityId,
    h: &Hamiltonian,
    v: &TestFn,
    points: &[Vec2],
) -> Result<IdentityReport, IdentityError> {
    let mut sides = Vec::with_capacity(points.len());
    for &p in points {
        if !v.valid_at(p) {
            continue;
        }
        let e = closed_form_eval(h, v, p, id.needs_third())?;
        sides.push(identity_sides(id, &e));
    }
    if sides.is_empty() {
        return Err(IdentityError::NoSamples);
    }
    Ok(aggregate(id, &sides))
}

/// Structural identity for the Aronsson operator (closed form).
pub fn check_structure(
    h: &Hamiltonian,
    v: &TestFn,
    points: &[Vec2],
) -> Result<IdentityReport, IdentityError> {
    check_closed_form(IdentityId::Structure, h, v, points)
}

/// Divergence formula for the Hessian determinant (closed form).
pub fn check_det_divergence(
    h: &Hamiltonian,
    v: &TestFn,
    points: &[Vec2],
) -> Result<IdentityReport, IdentityError> {
    check_closed_form(IdentityId::DetDivergence, h, v, points)
}

/// The H = ½|p|² special pair (closed form); H-independent.
pub fn check_euclidean_pair(
    v: &TestFn,
    points: &[Vec2],
) -> Result<(IdentityReport, IdentityReport), IdentityError> {
    let h = Hamiltonian::quad(1.0, 0.0, 1.0).expect("identity matrix");
    Ok((
        check_closed_form(IdentityId::EuclideanStructure, &h, v, points)?,
        check_closed_form(IdentityId::EuclideanDetDivergence, &h, v, points)?,
    ))
}

/// The Laplacian-matched pair for general H (closed form).
pub fn check_laplacian_pair(
    h: &Hamiltonian,
    v: &TestFn,
    points: &[Vec2],
) -> Result<(IdentityReport, IdentityReport), IdentityError> {
    Ok((
        check_closed_form(IdentityId::LaplacianStructure, h, v, points)?,
        check_closed_form(IdentityId::LaplacianDetDivergence, h, v, points)?,
    ))
}

// ---------------------------------------------------------------------------
// Grid mode
// ---------------------------------------------------------------------------

/// Pointwise fields entering the identities, assembled by stencils.
struct GridFields {
    qx: GridFunction,
    qy: GridFunction,
    axx: GridFunction,
    axy: GridFunction,
    ayy: GridFunction,
    gx: GridFunction,
    gy: GridFunction,
    b: Vec<SymMat2>,
}

fn grid_fields(h: &Hamiltonian, v: &GridFunction) -> Result<GridFields, IdentityError> {
    let (qx, qy) = grid::gradient(v);
    let (axx, axy, ayy) = grid::hessian(v);
    let n = v.grid.len();
    let mut gx = GridFunction::zeros(v.grid);
    let mut gy = GridFunction::zeros(v.grid);
    let mut b = Vec::with_capacity(n);
    for k in 0..n {
        let q = Vec2::new(qx.values[k], qy.values[k]);
        let gv = h.grad(q)?;
        gx.values[k] = gv.x;
        gy.values[k] = gv.y;
        b.push(h.hess(q)?);
    }
    Ok(GridFields {
        qx,
        qy,
        axx,
        axy,
        ayy,
        gx,
        gy,
        b,
    })
}

/// Check one identity on a grid field; the outer divergences are taken by
/// stencils on the assembled flux fields, all other quantities pointwise.
pub fn check_grid(
    id: IdentityId,
    h: &Hamiltonian,
    v: &GridFunction,
) -> Result<IdentityReport, IdentityError> {
    if h.smoothness() < Smoothness::C2Plus {
        return Err(IdentityError::SmoothnessRequired(h.smoothness()));
    }
    let f = grid_fields(h, v)?;
    let g2 = v.grid;
    let n = g2.len();
    let at = |k: usize| -> (Vec2, SymMat2, Vec2, SymMat2) {
        (
            Vec2::new(f.qx.values[k], f.qy.values[k]),
            SymMat2::new(f.axx.values[k], f.axy.values[k], f.ayy.values[k]),
            Vec2::new(f.gx.values[k], f.gy.values[k]),
            f.b[k],
        )
    };
    // flux field for the divergence-form identities
    let flux: Option<(GridFunction, GridFunction)> = if id.needs_third() {
        let mut fx = GridFunction::zeros(g2);
        let mut fy = GridFunction::zeros(g2);
        for k in 0..n {
            let (q, a, g, b) = at(k);
            let dh = a.mul_vec(g);
            let div_g = b.xx * a.xx + 2.0 * b.xy * a.xy + b.yy * a.yy;
            let vflux = match id {
                IdentityId::DetDivergence => b.mul_vec(dh) - g * div_g,
                IdentityId::EuclideanDetDivergence => a.mul_vec(q) - q * a.trace(),
                IdentityId::LaplacianDetDivergence => dh - g * a.trace(),
                _ => unreachable!(),
            };
            fx.values[k] = vflux.x;
            fy.values[k] = vflux.y;
        }
        Some((fx, fy))
    } else {
        None
    };
    let div_flux = flux.map(|(fx, fy)| grid::divergence(&fx, &fy));
    let mut sides = Vec::new();
    let mut rels = Vec::new();
    // skip the band where one-sided and centered stencils mix; the
    // composition there is only first-order accurate
    let m = if g2.nx >= 7 && g2.ny >= 7 { 2 } else { 1 };
    for j in m..g2.ny - m {
        for i in m..g2.nx - m {
            let k = g2.idx(i, j);
            let (q, a, g, b) = at(k);
            let e = PointEval {
                q,
                a,
                t: SymTensor3::default(),
                g,
                b,
                c: SymTensor3::default(),
            };
            let (lhs, rhs) = match id {
                IdentityId::DetDivergence => (
                    2.0 * (-a.det()) * b.det(),
                    div_flux.as_ref().expect("flux built").values[k],
                ),
                IdentityId::EuclideanDetDivergence => (
                    2.0 * (-a.det()),
                    div_flux.as_ref().expect("flux built").values[k],
                ),
                IdentityId::LaplacianDetDivergence => (
                    (-a.det()) * b.trace(),
                    div_flux.as_ref().expect("flux built").values[k],
                ),
                _ => identity_sides(id, &e),
            };
            sides.push((lhs, rhs));
            let denom = lhs.abs().max(rhs.abs());
            if denom > 0.0 {
                rels.push((lhs - rhs).abs() / denom);
            }
        }
    }
    if sides.is_empty() {
        return Err(IdentityError::NoSamples);
    }
    let mut rep = aggregate(id, &sides);
    rep.relative_p90 = percentile(&mut rels, 0.9);
    Ok(rep)
}

/// Run a grid check at two resolutions and record the max-residual ratio.
pub fn check_grid_refined(
    id: IdentityId,
    h: &Hamiltonian,
    sample: impl Fn(f64, f64) -> f64 + Sync + Send,
    coarse: crate::grid::Grid2D,
    fine: crate::grid::Grid2D,
) -> Result<IdentityReport, IdentityError> {
    let vc = GridFunction::from_fn(coarse, &sample);
    let vf = GridFunction::from_fn(fine, &sample);
    let rc = check_grid(id, h, &vc)?;
    let rf = check_grid(id, h, &vf)?;
    let mut rep = rf.clone();
    rep.refinement_ratio = Some(rc.max_abs_residual / rf.max_abs_residual);
    rep.max_abs_residual = rc.max_abs_residual;
    rep.relative_residual = rc.relative_residual;
    Ok(rep)
}

fn percentile(values: &mut [f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let pos = ((values.len() - 1) as f64 * q).round() as usize;
    Some(values[pos])
}

/// Identity satisfied by converged exponential-harmonic fields, checked on
/// unmasked interior nodes: nodes with `H(Du) < mask_floor` are excluded
/// and counted (the quotient is defined to vanish where the gradient flux
/// does).
pub fn check_solved_determinant(
    h: &Hamiltonian,
    u: &GridFunction,
    eps: f64,
    mask_floor: f64,
) -> Result<IdentityReport, IdentityError> {
    if h.smoothness() < Smoothness::C2Plus {
        return Err(IdentityError::SmoothnessRequired(h.smoothness()));
    }
    let g2 = u.grid;
    let (qx, qy) = grid::gradient(u);
    let n = g2.len();
    let mut sqrt_h = GridFunction::zeros(g2);
    let mut gx = GridFunction::zeros(g2);
    let mut gy = GridFunction::zeros(g2);
    for k in 0..n {
        let q = Vec2::new(qx.values[k], qy.values[k]);
        let hv = h.eval(q)?.max(0.0);
        sqrt_h.values[k] = hv.sqrt();
        let gv = h.grad(q)?;
        gx.values[k] = gv.x;
        gy.values[k] = gv.y;
    }
    let (dsx, dsy) = grid::gradient(&sqrt_h);
    let div_g = grid::divergence(&gx, &gy);
    let mut sides = Vec::new();
    let mut rels = Vec::new();
    let mut masked = 0usize;
    let mut total = 0usize;
    for j in 1..g2.ny - 1 {
        for i in 1..g2.nx - 1 {
            total += 1;
            let k = g2.idx(i, j);
            let q = Vec2::new(qx.values[k], qy.values[k]);
            let hv = h.eval(q)?;
            if hv < mask_floor {
                masked += 1;
                continue;
            }
            let tau = match h.tau_tilde(q) {
                Ok(t) => t,
                Err(_) => {
                    masked += 1;
                    continue;
                }
            };
            let a = grid::hessian_at(u, i, j);
            let b = h.hess(q)?;
            let ds = Vec2::new(dsx.values[k], dsy.values[k]);
            let lhs = (-a.det()) * b.det();
            let rhs = 4.0 * tau * b.quad_form(ds) + tau * eps * div_g.values[k].powi(2) / hv;
            sides.push((lhs, rhs));
            let denom = lhs.abs().max(rhs.abs());
            if denom > 0.0 {
                rels.push((lhs - rhs).abs() / denom);
            }
        }
    }
    if total == 0 {
        return Err(IdentityError::NoSamples);
    }
    let mut rep = aggregate(IdentityId::SolvedDeterminant, &sides);
    rep.masked_fraction = Some(masked as f64 / total as f64);
    rep.relative_p90 = percentile(&mut rels, 0.9);
    Ok(rep)
}

/// The sign information carried by the solved-field identity: the fraction
/// of interior nodes where the discrete `−det D²u` falls below
/// `-threshold`.
pub fn negative_det_fraction(u: &GridFunction, threshold: f64) -> f64 {
    let g2 = u.grid;
    let mut bad = 0usize;
    let mut total = 0usize;
    for j in 1..g2.ny - 1 {
        for i in 1..g2.nx - 1 {
            total += 1;
            if -grid::hessian_at(u, i, j).det() < -threshold {
                bad += 1;
            }
        }
    }
    bad as f64 / total.max(1) as f64
}
