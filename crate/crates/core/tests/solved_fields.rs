//! Cross-module checks on solved fields: the weak determinant pairing on
//! minimizers, its two-sided bound in the exactly computable saddle case,
//! and the mollification pipeline trend for a kinked Hamiltonian.

use aronsson_core::diagnostics::det_measure;
use aronsson_core::grid::{Grid2D, GridFunction, Rect, TestFunction};
use aronsson_core::hamiltonian::Hamiltonian;
use aronsson_core::math::SymMat2;
use aronsson_core::solver::{self, SolveConfig};

#[test]
fn det_measure_nonnegative_on_solved_fields() {
    let h = Hamiltonian::quad(1.0, 0.0, 1.0).unwrap();
    let g = Grid2D::unit(33);
    let bc = solver::boundary_from_fn(g, solver::aronsson_profile);
    let res = solver::solve_exp_harmonic(&h, g, &bc, &SolveConfig::with_eps(0.1)).unwrap();
    assert!(res.converged);
    // ten nested nonnegative bumps: the pairing stays above a
    // discretization-sized floor
    for k in 0..10 {
        let frac = 0.2 + 0.06 * k as f64;
        let phi = TestFunction::plateau(g, Rect::square(frac)).unwrap();
        let v = det_measure(&res.u, &phi);
        assert!(v >= -5e-3, "bump {k}: pairing {v}");
    }
}

#[test]
fn det_measure_lower_bound_is_tight_for_saddle() {
    // u = x² − y², H = ½|p|²: −det D²u = 4 and 4·(τ/Λ)·|D√H(Du)|² = 4,
    // so the weak lower bound is an equality
    let g = Grid2D::unit(129);
    let u = GridFunction::from_fn(g, |x, y| x * x - y * y);
    let phi = TestFunction::with_support(g, Rect::square(0.4), Rect::square(0.8)).unwrap();
    let measure = det_measure(&u, &phi);
    // |D[H(Du)]^{1/2}|² = |D(√2 r)|² = 2 away from the origin
    let (sx, sy) = {
        let h = Hamiltonian::quad(1.0, 0.0, 1.0).unwrap();
        let (ux, uy) = aronsson_core::grid::gradient(&u);
        let mut s = GridFunction::zeros(g);
        for k in 0..g.len() {
            let q = aronsson_core::math::Vec2::new(ux.values[k], uy.values[k]);
            s.values[k] = h.eval(q).unwrap().sqrt();
        }
        aronsson_core::grid::gradient(&s)
    };
    let mut density = GridFunction::zeros(g);
    for k in 0..g.len() {
        density.values[k] = sx.values[k] * sx.values[k] + sy.values[k] * sy.values[k];
    }
    let bound = 4.0 * (0.5 / 1.0) * aronsson_core::grid::integrate(&density, &phi);
    let rel = (measure - bound).abs() / measure.abs();
    assert!(
        rel < 0.02,
        "measure {measure} vs lower bound {bound} (rel {rel})"
    );
    assert!(measure >= bound - 0.02 * measure.abs());
}

#[test]
fn delta_pipeline_linf_trend_for_kinked_hamiltonian() {
    let h = Hamiltonian::max_quad(SymMat2::diag(1.0, 2.0), SymMat2::diag(2.0, 1.0)).unwrap();
    let g = Grid2D::unit(17);
    let bc = solver::boundary_from_fn(g, |x, y| 0.8 * x - 0.5 * y);
    let cfg = SolveConfig {
        continuation_ladder: vec![0.3],
        ..Default::default()
    };
    let runs =
        solver::delta_pipeline(&h, g, &bc, &[0.2, 0.1, 0.05], &cfg, Rect::square(0.75)).unwrap();
    assert_eq!(runs.len(), 3);
    for r in &runs {
        assert!(r.results.iter().all(|s| s.converged));
    }
    // the window sup of H^δ(Du^δ) settles downward along the ladder
    let tol = 0.05 * runs[0].h_linf_v.abs().max(1e-9);
    for w in runs.windows(2) {
        assert!(
            w[1].h_linf_v <= w[0].h_linf_v + tol,
            "L∞ values not non-increasing within tolerance: {} then {}",
            w[0].h_linf_v,
            w[1].h_linf_v
        );
    }
}
