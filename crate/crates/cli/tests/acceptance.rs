//! Acceptance suite: one test per criterion, each printing a pass line.
//! The expensive ladder solves are shared across criteria through a lazy
//! fixture. Run with `cargo test -p aronsson-lab --test acceptance`.

use aronsson_core::cones;
use aronsson_core::diagnostics::{self, AnnulusKind};
use aronsson_core::grid::{Grid2D, GridFunction, Rect, Region, TestFunction};
use aronsson_core::hamiltonian::{mollify, Hamiltonian, Mollified};
use aronsson_core::identities::{self, IdentityId, TestFn};
use aronsson_core::math::{SymMat2, Vec2};
use aronsson_core::rng::Rng;
use aronsson_core::solver::{self, SolveConfig, SolveResult};
use aronsson_lab::config::ExperimentConfig;
use aronsson_lab::runner;
use std::sync::LazyLock;
use std::time::Instant;

/// Regression baseline for the final Aronsson sup error (65² grid,
/// ε = 0.02, inner box): recorded on the first green run of this suite.
const ARONSSON_FINAL_ERROR_BASELINE: f64 = 1.4837e-2;

struct Fixture {
    ladder65: Vec<SolveResult>,
    ladder129: Vec<SolveResult>,
    exact65: GridFunction,
}

static EUCLID: LazyLock<Hamiltonian> =
    LazyLock::new(|| Hamiltonian::quad(1.0, 0.0, 1.0).expect("spd"));

static FIXTURE: LazyLock<Fixture> = LazyLock::new(|| {
    let cfg = SolveConfig {
        continuation_ladder: vec![0.5, 0.1, 0.02],
        ..Default::default()
    };
    let solve_at = |n: usize| -> (Vec<SolveResult>, GridFunction) {
        let g = Grid2D::unit(n);
        let bc = solver::boundary_from_fn(g, solver::aronsson_profile);
        let runs = solver::eps_continuation(&EUCLID, g, &bc, &cfg).expect("ladder solves");
        let exact = GridFunction::from_fn(g, solver::aronsson_profile);
        (runs, exact)
    };
    let (ladder65, exact65) = solve_at(65);
    let (ladder129, _) = solve_at(129);
    Fixture {
        ladder65,
        ladder129,
        exact65,
    }
});

fn pass(name: &str, detail: String) {
    println!("criterion {name}: PASS ({detail})");
}

#[test]
fn criterion_01_identity_exactness_closed_form() {
    let t0 = Instant::now();
    let hams = [
        Hamiltonian::quad(1.0, 0.0, 1.0).unwrap(),
        Hamiltonian::quad(2.0, 0.5, 8.0).unwrap(),
        Hamiltonian::quartic(),
        Hamiltonian::aniso_quartic(),
    ];
    let fns = [
        TestFn::SaddleXY,
        TestFn::ProductXY,
        TestFn::SinSin,
        TestFn::SinCos,
        TestFn::Aronsson,
        TestFn::Quadratic {
            s: SymMat2::new(1.5, -0.7, 2.0),
            l: Vec2::new(0.3, 0.1),
            c: 0.5,
        },
    ];
    let mut rng = Rng::new(2024);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 100 {
        let h = &hams[rng.index(hams.len())];
        let v = &fns[rng.index(fns.len())];
        let p = Vec2::new(rng.range(-2.0, 2.0), rng.range(-2.0, 2.0));
        if !v.valid_at(p) {
            continue;
        }
        checked += 1;
        for id in IdentityId::all() {
            let rep = identities::check_closed_form(id, h, v, &[p]).unwrap();
            worst = worst.max(rep.relative_residual);
            assert!(
                rep.relative_residual <= 1e-10,
                "{:?} on {} at ({}, {}): {}",
                id,
                v.name(),
                p.x,
                p.y,
                rep.relative_residual
            );
        }
    }
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 5.0, "took {dt:?}");
    pass(
        "01 identity-exactness",
        format!("100 triples x 6 identities, worst rel {worst:.2e}, {dt:?}"),
    );
}

#[test]
fn criterion_02_identity_order_grid_mode() {
    let t0 = Instant::now();
    let h = Hamiltonian::quad(2.0, 0.0, 8.0).unwrap();
    let rep = identities::check_grid_refined(
        IdentityId::DetDivergence,
        &h,
        |x, y| x.sin() * y.sin(),
        Grid2D::unit(65),
        Grid2D::unit(129),
    )
    .unwrap();
    let ratio = rep.refinement_ratio.unwrap();
    assert!(
        (3.5..=4.5).contains(&ratio),
        "max-residual refinement ratio {ratio}"
    );
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 10.0, "took {dt:?}");
    pass("02 identity-order", format!("ratio {ratio:.3}, {dt:?}"));
}

#[test]
fn criterion_03_solver_exact_cases() {
    let t0 = Instant::now();
    for n in [17usize, 33] {
        let g = Grid2D::unit(n);
        let (a, b) = (1.25, -0.5);
        let bc = solver::boundary_from_fn(g, |x, y| a * x + b * y);
        let exact = GridFunction::from_fn(g, |x, y| a * x + b * y);
        for eps in [0.5, 0.1, 0.02] {
            let res =
                solver::solve_exp_harmonic(&EUCLID, g, &bc, &SolveConfig::with_eps(eps)).unwrap();
            assert!(res.converged);
            let err = res.u.sup_dist(&exact);
            assert!(err <= 1e-9, "n={n} eps={eps}: sup {err}");
        }
        let zero = solver::solve_exp_harmonic(
            &EUCLID,
            g,
            &GridFunction::zeros(g),
            &SolveConfig::with_eps(0.3),
        )
        .unwrap();
        assert!(zero.u.values.iter().all(|v| v.abs() < 1e-12));
    }
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 5.0, "took {dt:?}");
    pass("03 solver-exact-cases", format!("{dt:?}"));
}

#[test]
fn criterion_04_aronsson_convergence() {
    let t0 = Instant::now();
    let fx = &*FIXTURE;
    let inner = Region::Rect(Rect::square(0.75));
    let errs: Vec<f64> = fx
        .ladder65
        .iter()
        .map(|r| {
            assert!(r.converged, "eps={} did not converge", r.eps);
            r.u.sup_dist_on(&fx.exact65, &inner)
        })
        .collect();
    assert!(
        errs[0] > errs[1] && errs[1] > errs[2],
        "not strictly decreasing: {errs:?}"
    );
    assert!(
        errs[2] <= ARONSSON_FINAL_ERROR_BASELINE * 1.10,
        "final error {} regressed past baseline {}",
        errs[2],
        ARONSSON_FINAL_ERROR_BASELINE
    );
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 300.0, "took {dt:?}");
    pass(
        "04 aronsson-convergence",
        format!("sup errors {errs:?} vs baseline {ARONSSON_FINAL_ERROR_BASELINE:.3e}, {dt:?}"),
    );
}

#[test]
fn criterion_05_determinant_sign() {
    let fx = &*FIXTURE;
    let h = fx.ladder65[0].u.grid.hx();
    let mut worst = 0.0f64;
    for r in &fx.ladder65 {
        let frac = identities::negative_det_fraction(&r.u, 10.0 * h);
        worst = worst.max(frac);
        assert!(frac < 0.01, "eps={}: fraction {frac}", r.eps);
    }
    pass(
        "05 determinant-sign",
        format!("worst fraction below -10h: {worst:.4}"),
    );
}

#[test]
fn criterion_06_solved_identity_refines() {
    let fx = &*FIXTURE;
    let r65 = &fx.ladder65[1];
    let r129 = &fx.ladder129[1];
    assert_eq!(r65.eps, 0.1);
    let rep65 = identities::check_solved_determinant(&EUCLID, &r65.u, r65.eps, 1e-10).unwrap();
    let rep129 = identities::check_solved_determinant(&EUCLID, &r129.u, r129.eps, 1e-10).unwrap();
    let (p65, p129) = (rep65.relative_p90.unwrap(), rep129.relative_p90.unwrap());
    let factor = p65 / p129;
    assert!(
        factor >= 1.5,
        "p90 relative residual {p65:.3e} -> {p129:.3e}, factor {factor:.2}"
    );
    pass(
        "06 solved-identity-order",
        format!("p90 {p65:.2e} -> {p129:.2e} (factor {factor:.2})"),
    );
}

#[test]
fn criterion_07_auxiliary_function_oracles() {
    let t0 = Instant::now();
    let h = Hamiltonian::quad(2.0, 0.0, 8.0).unwrap();
    let conv = h.lambda_profile(4.0, 32).unwrap();
    assert!(conv.lambda.iter().all(|&v| v == 2.0));
    assert!(conv.big_lambda.iter().all(|&v| v == 8.0));
    let tau = h.tau_profile(4.0, 32).unwrap();
    assert!(tau.tau.iter().all(|&v| (v - 0.5).abs() <= 1e-12));
    let q = Hamiltonian::quartic();
    let qc = q.lambda_profile(4.0, 32).unwrap();
    let qt = q.tau_profile(4.0, 32).unwrap();
    for k in 0..32 {
        let lo = 0.5 * (qc.lambda[k] / qc.big_lambda[k]).powi(2);
        assert!(
            lo <= qt.tau[k] + 1e-12 && qt.tau[k] <= 0.5 + 1e-12,
            "sandwich at R={}: {} <= {} <= 1/2",
            qc.r_samples[k],
            lo,
            qt.tau[k]
        );
    }
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 10.0, "took {dt:?}");
    pass("07 auxiliary-oracles", format!("{dt:?}"));
}

#[test]
fn criterion_08_cone_oracle() {
    let t0 = Instant::now();
    let a_mat = SymMat2::new(2.0, 0.3, 8.0);
    let h = Hamiltonian::quad(2.0, 0.3, 8.0).unwrap();
    let inv = a_mat.adjugate().scale(1.0 / a_mat.det());
    let mut rng = Rng::new(88);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let level = rng.range(0.05, 5.0);
        let x = Vec2::new(rng.range(-3.0, 3.0), rng.range(-3.0, 3.0));
        if x.norm() < 1e-3 {
            continue;
        }
        let exact = (2.0 * level).sqrt() * inv.quad_form(x).sqrt();
        let got = cones::cone_value(&h, level, x).unwrap();
        let rel = (got - exact).abs() / exact;
        worst = worst.max(rel);
        assert!(rel <= 1e-6, "a={level} x=({}, {}): rel {rel}", x.x, x.y);
    }
    // invariants on the table representation
    let t1 = cones::ConeTable::build(&h, 0.7).unwrap();
    let t2 = cones::ConeTable::build(&h, 1.9).unwrap();
    for _ in 0..200 {
        let x = Vec2::new(rng.range(-2.0, 2.0), rng.range(-2.0, 2.0));
        let y = Vec2::new(rng.range(-2.0, 2.0), rng.range(-2.0, 2.0));
        let vx = t1.value(x);
        for t in [0.5, 2.0, 10.0] {
            assert!((t1.value(x * t) - t * vx).abs() <= 1e-9 * (1.0 + t * vx.abs()));
        }
        assert!(vx <= t2.value(x) + 1e-12);
        assert!(t1.value(x + y) <= vx + t1.value(y) + 1e-8 * (1.0 + vx.abs()));
    }
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 10.0, "took {dt:?}");
    pass(
        "08 cone-oracle",
        format!("worst rel {worst:.2e} over 1000 samples, {dt:?}"),
    );
}

#[test]
fn criterion_09_mollification_contracts() {
    let h = Hamiltonian::quad(2.0, 0.0, 8.0).unwrap();
    // sup |η_δ∗H − H| over |p| <= 2 along the ladder
    let sup_gap = |hd: &Hamiltonian| -> f64 {
        let Hamiltonian::Mollified(m) = hd else {
            panic!("expected the mollified variant")
        };
        let m: &Mollified = m;
        let mut worst = 0.0f64;
        for i in -20..=20 {
            for j in -20..=20 {
                let p = Vec2::new(i as f64 / 10.0, j as f64 / 10.0);
                worst = worst.max((m.raw_eval(p).unwrap() - h.eval(p).unwrap()).abs());
            }
        }
        worst
    };
    let deltas = [0.2, 0.1, 0.05];
    let mut gaps = Vec::new();
    let mut cs = Vec::new();
    for &d in &deltas {
        let hd = mollify(&h, d).unwrap();
        let gap = sup_gap(&hd);
        cs.push(gap / (d * d));
        gaps.push(gap);
        // convexity modulus never drops below the global one
        let prof = hd.lambda_profile(4.0, 16).unwrap();
        for &lam in &prof.lambda {
            assert!(lam >= 2.0 - 1e-6, "lambda {lam} under mollification");
        }
    }
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "gaps {gaps:?}");
    let (cmin, cmax) = (
        cs.iter().cloned().fold(f64::INFINITY, f64::min),
        cs.iter().cloned().fold(0.0f64, f64::max),
    );
    assert!(cmax <= 2.0 * cmin, "fitted c unstable: {cs:?}");
    pass(
        "09 mollification",
        format!("gaps {gaps:?}, c in [{cmin:.4}, {cmax:.4}]"),
    );
}

#[test]
fn criterion_10_annulus_divergence() {
    let t0 = Instant::now();
    let rows = diagnostics::log_divergence_experiment(&[0.25, 0.5], 12);
    // log case: exactly constant per-annulus contribution (positive floor)
    // and linear partial sums
    let log_rows: Vec<&diagnostics::AnnulusRow> = rows
        .iter()
        .filter(|r| r.kind == AnnulusKind::Log && (4..=12).contains(&r.k))
        .collect();
    let floor = log_rows
        .iter()
        .map(|r| r.contribution)
        .fold(f64::INFINITY, f64::min);
    assert!(floor > 0.1, "per-annulus floor {floor}");
    let n = log_rows.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in &log_rows {
        let (x, y) = (r.k as f64, r.partial_sum);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    let r_num = n * sxy - sx * sy;
    let r2 = r_num * r_num / ((n * sxx - sx * sx) * (n * syy - sy * sy));
    assert!(r2 > 0.99, "linear fit R² = {r2}");
    // power case: geometric decay of contributions at the exact homogeneity
    // ratio, so the sums are Cauchy
    let mut incs = Vec::new();
    for alpha in [0.25, 0.5] {
        let sums: Vec<&diagnostics::AnnulusRow> = rows
            .iter()
            .filter(|r| r.kind == AnnulusKind::Power(alpha))
            .collect();
        let expect_ratio = 0.5f64.powf(2.0 * alpha / 3.0);
        for w in sums.windows(2) {
            let ratio = w[1].contribution / w[0].contribution;
            assert!(
                (ratio - expect_ratio).abs() < 1e-6,
                "alpha={alpha}: contribution ratio {ratio} vs homogeneity {expect_ratio}"
            );
        }
        let total = sums.last().unwrap().partial_sum;
        let last_inc = sums.last().unwrap().contribution;
        incs.push((alpha, last_inc / total));
    }
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 30.0, "took {dt:?}");
    println!(
        "criterion 10 annulus-divergence: log floor {floor:.3} on k in [4,12], partial sums linear (R² {r2:.6}); power increments decay at the homogeneity ratio 2^(-2α/3), k=12 increment/total = {:.4} (α=0.25) and {:.4} (α=0.5), {dt:?}",
        incs[0].1, incs[1].1
    );
    // the stated 1%-of-total threshold at k = 12: the increments follow
    // c_k = c_0·2^(-2αk/3) exactly, which puts the k=12 increment at 3.5%
    // (α=0.25) and 1.36% (α=0.5) of the partial total for any correct
    // evaluation of these integrals, so this clause records a red result
    // rather than a loosened threshold
    for (alpha, frac) in &incs {
        assert!(
            *frac < 0.01,
            "alpha={alpha}: last increment is {:.4} of the total; \
             2^(-2αk/3) geometry bounds this below by {:.4}, so the 1% \
             threshold is unattainable at k=12",
            frac,
            0.5f64.powf(2.0 * alpha * 12.0 / 3.0) * (1.0 - 0.5f64.powf(2.0 * alpha / 3.0))
                / (1.0 - 0.5f64.powf(2.0 * alpha * 13.0 / 3.0))
        );
    }
    pass("10 annulus-divergence", format!("{dt:?}"));
}

#[test]
fn criterion_11_orthogonality_along_ladder() {
    let fx = &*FIXTURE;
    let g = fx.ladder65[0].u.grid;
    // off-center bump: the boundary profile is odd under the coordinate
    // swap, so a symmetric cutoff pairs to zero identically and the
    // ladder trend would be pure roundoff
    let phi = TestFunction::plateau(g, Rect::new(0.0625, 0.625, -0.4375, 0.25)).unwrap();
    let phi_mass = aronsson_core::grid::integrate_field(&phi.field);
    let mut defects = Vec::new();
    for r in &fx.ladder65 {
        let defect = diagnostics::orthogonality_defect(&r.u, &EUCLID, 1.0, 0.0, &phi).unwrap();
        let eps_side =
            diagnostics::orthogonality_eps_side(&r.u, &EUCLID, r.eps, 1.0, 0.0, &phi).unwrap();
        let tol = 10.0 * r.residual * phi_mass;
        assert!(
            (defect - eps_side).abs() <= tol,
            "eps={}: defect {defect:.3e} vs eps-side {eps_side:.3e} (tol {tol:.3e})",
            r.eps
        );
        defects.push(defect);
    }
    assert!(
        defects[0] > defects[1] && defects[1] > defects[2],
        "defects not decreasing: {defects:?}"
    );
    pass(
        "11 orthogonality",
        format!("defects along ladder {defects:?}"),
    );
}

#[test]
fn criterion_12_comparison_with_cones() {
    let t0 = Instant::now();
    let fx = &*FIXTURE;
    let u = &fx.ladder65[2].u;
    let eps = fx.ladder65[2].eps;
    let slack = cones::comparison_slack(u, &EUCLID, eps).unwrap();
    let rep = cones::comparison_with_cones(u, &EUCLID, 1000, slack, 0xabcde).unwrap();
    assert_eq!(
        rep.violations,
        0,
        "worst excess {:.3e} vs slack {slack:.3e}",
        rep.worst_excess()
    );
    // constructed counterexample: an interior bump must be flagged by
    // every detector run
    let g = Grid2D::unit(65);
    let bump = GridFunction::from_fn(g, |x, y| 3.0 * (-(x * x + y * y) / 0.09).exp());
    let bump_slack = cones::comparison_slack(&bump, &EUCLID, 1e-6).unwrap();
    let mut detected = 0;
    for seed in 0..100u64 {
        let r = cones::comparison_with_cones(&bump, &EUCLID, 500, bump_slack, seed).unwrap();
        if r.violations > 0 {
            detected += 1;
        }
    }
    assert_eq!(detected, 100, "bump detected in {detected}/100 runs");
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 120.0, "took {dt:?}");
    pass(
        "12 comparison-with-cones",
        format!(
            "solved field worst excess {:.3e} <= slack {slack:.3e}; bump 100/100, {dt:?}",
            rep.worst_excess()
        ),
    );
}

#[test]
fn criterion_13_linf_estimate_stability() {
    let fx = &*FIXTURE;
    let v65 = Rect::square(0.75);
    let rep65 = diagnostics::check_linf_estimate(&fx.ladder65, &EUCLID, v65).unwrap();
    let rep129 = diagnostics::check_linf_estimate(&fx.ladder129, &EUCLID, v65).unwrap();
    let (c65, c129) = (rep65.empirical_c.unwrap(), rep129.empirical_c.unwrap());
    assert!(c65.is_finite() && c65 > 0.0, "C65 = {c65}");
    assert!(c129.is_finite() && c129 > 0.0, "C129 = {c129}");
    let ratio = (c65 / c129).max(c129 / c65);
    assert!(ratio <= 2.0, "C unstable across grids: {c65} vs {c129}");
    pass(
        "13 linf-estimate",
        format!("C = {c65:.4} (65²) vs {c129:.4} (129²)"),
    );
}

#[test]
fn criterion_14_determinism() {
    let dir = std::env::temp_dir().join(format!("aronsson-acceptance-{}", std::process::id()));
    let out = dir.join("run");
    let cfg_text = format!(
        "[hamiltonian]\nkind = quad:1,0,1\n\n[domain]\nrect = -1,1,-1,1\n\n[grid]\nsizes = 17\n\n[solve]\neps_ladder = 0.5,0.2\n\n[boundary]\nkind = aronsson\n\n[run]\ndiagnostics = all\nseed = 42\nout = {}\n",
        out.display()
    );
    let cfg = ExperimentConfig::parse(&cfg_text).unwrap();
    let snapshot = |dir: &std::path::Path| -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        files
            .into_iter()
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().to_string(),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect()
    };
    runner::run(&cfg).unwrap();
    let first = snapshot(&out);
    runner::run(&cfg).unwrap();
    let second = snapshot(&out);
    assert_eq!(first.len(), second.len());
    for ((n1, b1), (n2, b2)) in first.iter().zip(&second) {
        assert_eq!(n1, n2);
        assert_eq!(b1, b2, "file {n1} differs between identical runs");
    }
    std::fs::remove_dir_all(&dir).ok();
    pass(
        "14 determinism",
        format!("{} files bit-identical across two runs", first.len()),
    );
}
