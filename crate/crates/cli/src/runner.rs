//! The full experiment pipeline: solve → identities → diagnostics → cones,
//! with every produced file checksummed into a manifest. Runs are
//! deterministic for a fixed config and seed.

use crate::config::{parse_boundary, parse_hamiltonian, ExperimentConfig};
use crate::output::{csv_table, fmt_f64, ArtifactSink};
use crate::CliError;
use aronsson_core::cones;
use aronsson_core::diagnostics::{self, AnnulusKind, LinearFunction};
use aronsson_core::grid::{self, Grid2D, GridFunction, Rect, Region, TestFunction};
use aronsson_core::hamiltonian::Hamiltonian;
use aronsson_core::identities::{self, IdentityId, TestFn};
use aronsson_core::math::Vec2;
use aronsson_core::rng::Rng;
use aronsson_core::solver::{self, SolveConfig, SolveResult};
use serde::Serialize;
use std::path::{Path, PathBuf};

pub struct RunOutcome {
    pub manifest_path: PathBuf,
    pub file_count: usize,
}

pub fn solver_config(cfg: &ExperimentConfig) -> SolveConfig {
    SolveConfig {
        eps: *cfg.eps_ladder.last().expect("validated non-empty"),
        max_iters: cfg.max_iters,
        grad_tol: cfg.grad_tol,
        damping: cfg.damping,
        continuation_ladder: cfg.eps_ladder.clone(),
        log_domain: solver::LogDomain::Auto,
    }
}

#[derive(Serialize)]
struct EpsRow {
    eps: f64,
    converged: bool,
    iters: usize,
    residual: f64,
    grad_sup: f64,
    log_energy: f64,
    sup_diff_prev: Option<f64>,
    sup_err_exact: Option<f64>,
}

#[derive(Serialize)]
struct DeltaRow {
    delta: f64,
    h_linf_v: f64,
}

#[derive(Serialize)]
struct GridMeta {
    n: usize,
    hamiltonian: String,
    boundary: String,
    domain: [f64; 4],
    eps_rows: Vec<EpsRow>,
    delta_rows: Vec<DeltaRow>,
}

fn eps_rows(runs: &[SolveResult], exact: Option<&GridFunction>, inner: &Region) -> Vec<EpsRow> {
    let mut rows = Vec::with_capacity(runs.len());
    for (k, r) in runs.iter().enumerate() {
        rows.push(EpsRow {
            eps: r.eps,
            converged: r.converged,
            iters: r.iters,
            residual: r.residual,
            grad_sup: r.grad_sup,
            log_energy: r.log_energy,
            sup_diff_prev: if k > 0 {
                Some(r.u.sup_dist(&runs[k - 1].u))
            } else {
                None
            },
            sup_err_exact: exact.map(|w| r.u.sup_dist_on(w, inner)),
        });
    }
    rows
}

/// Solve the configured ladder on one grid and persist the artifacts.
/// Returns the ladder results (finest last).
#[allow(clippy::too_many_arguments)]
pub fn solve_grid(
    sink: &mut ArtifactSink,
    tag: &str,
    h: &Hamiltonian,
    grid: Grid2D,
    boundary: &GridFunction,
    boundary_spec: &str,
    scfg: &SolveConfig,
    delta_ladder: &[f64],
    exact: Option<&GridFunction>,
) -> Result<Vec<SolveResult>, CliError> {
    let inner = Region::Rect(grid.rect().scaled(0.75));
    let (runs, delta_rows) = if delta_ladder.is_empty() {
        (solver::eps_continuation(h, grid, boundary, scfg)?, vec![])
    } else {
        let v_rect = grid.rect().scaled(0.75);
        let pipeline = solver::delta_pipeline(h, grid, boundary, delta_ladder, scfg, v_rect)?;
        let rows: Vec<DeltaRow> = pipeline
            .iter()
            .map(|d| DeltaRow {
                delta: d.delta,
                h_linf_v: d.h_linf_v,
            })
            .collect();
        let finest = pipeline.into_iter().last().expect("non-empty delta ladder");
        (finest.results, rows)
    };
    let last = runs.last().expect("non-empty ladder");
    sink.write(&format!("{tag}_u.csv"), &grid::to_csv(&last.u))?;
    let traces: Vec<_> = runs.iter().map(|r| (&r.eps, &r.trace)).collect();
    sink.write_json(&format!("{tag}_trace.json"), &traces)?;
    let res_field = solver::residual_aronsson(h, &last.u, last.eps)?;
    sink.write(&format!("{tag}_residual.csv"), &grid::to_csv(&res_field))?;
    let meta = GridMeta {
        n: grid.nx,
        hamiltonian: h.name(),
        boundary: boundary_spec.to_string(),
        domain: [grid.x_min, grid.x_max, grid.y_min, grid.y_max],
        eps_rows: eps_rows(&runs, exact, &inner),
        delta_rows,
    };
    sink.write_json(&format!("{tag}_meta.json"), &meta)?;
    Ok(runs)
}

/// Closed-form identity suite on random registry triples.
pub fn closed_form_identity_suite(
    h: &Hamiltonian,
    seed: u64,
    n_points: usize,
) -> Result<Vec<identities::IdentityReport>, CliError> {
    let use_h = if h.third(Vec2::ZERO).is_some() {
        h.clone()
    } else {
        Hamiltonian::quad(1.0, 0.0, 1.0).expect("identity matrix")
    };
    let fns = [
        TestFn::SaddleXY,
        TestFn::ProductXY,
        TestFn::SinSin,
        TestFn::SinCos,
        TestFn::Aronsson,
    ];
    let mut rng = Rng::new(seed);
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        points.push(Vec2::new(rng.range(-2.0, 2.0), rng.range(-2.0, 2.0)));
    }
    let mut out = Vec::new();
    for id in IdentityId::all() {
        for v in &fns {
            out.push(identities::check_closed_form(id, &use_h, v, &points)?);
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct IdentitiesArtifact {
    closed_form: Vec<identities::IdentityReport>,
    grid_mode: Vec<identities::IdentityReport>,
    solved_determinant: Vec<(usize, identities::IdentityReport)>,
    skipped: Vec<String>,
}

#[derive(Serialize)]
struct DiagnosticsArtifact {
    reports: Vec<diagnostics::EstimateReport>,
    orthogonality_ladder: Vec<(f64, f64, f64)>,
    annuli: Vec<diagnostics::AnnulusRow>,
}

#[derive(Serialize)]
struct ConesArtifact {
    comparison: cones::ComparisonReport,
    characterization: cones::CharacterizationReport,
    lipschitz_bound: cones::LipschitzBoundReport,
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let h = parse_hamiltonian(&cfg.hamiltonian)?;
    let mut sink = ArtifactSink::new(Path::new(&cfg.out))?;
    let scfg = solver_config(cfg);
    let domain = cfg.domain_rect();

    let mut per_grid: Vec<(usize, Vec<SolveResult>)> = Vec::new();
    for &n in &cfg.grid_sizes {
        let grid = Grid2D::new(n, n, domain)?;
        let bc = parse_boundary(&cfg.boundary, grid)?;
        let exact = if cfg.boundary == "aronsson" {
            Some(GridFunction::from_fn(grid, solver::aronsson_profile))
        } else {
            None
        };
        let tag = format!("grid{n}");
        let runs = solve_grid(
            &mut sink,
            &tag,
            &h,
            grid,
            &bc,
            &cfg.boundary,
            &scfg,
            &cfg.delta_ladder,
            exact.as_ref(),
        )?;
        per_grid.push((n, runs));
    }
    let (_, finest_runs) = per_grid.last().expect("at least one grid");
    let finest = finest_runs.last().expect("non-empty ladder");

    if cfg.wants("identities") {
        let mut artifact = IdentitiesArtifact {
            closed_form: closed_form_identity_suite(&h, cfg.seed, 100)?,
            grid_mode: Vec::new(),
            solved_determinant: Vec::new(),
            skipped: Vec::new(),
        };
        if h.smoothness() == aronsson_core::hamiltonian::Smoothness::C2Plus {
            for id in IdentityId::all() {
                artifact
                    .grid_mode
                    .push(identities::check_grid(id, &h, &finest.u)?);
            }
            for (n, runs) in &per_grid {
                let last = runs.last().expect("non-empty");
                artifact.solved_determinant.push((
                    *n,
                    identities::check_solved_determinant(&h, &last.u, last.eps, 1e-10)?,
                ));
            }
        } else {
            artifact
                .skipped
                .push("grid-mode identities need a C2 Hamiltonian; mollify first".into());
        }
        sink.write_json("identities.json", &artifact)?;
    }

    let mut diag = DiagnosticsArtifact {
        reports: Vec::new(),
        orthogonality_ladder: Vec::new(),
        annuli: Vec::new(),
    };
    let u_rect = domain.scaled(0.9);
    let v_rect = domain.scaled(0.5);
    let grid_f = finest.u.grid;
    if cfg.wants("sobolev-bound") {
        diag.reports.push(diagnostics::check_sobolev_bound(
            &finest.u, &h, 1.0, v_rect, u_rect, 100.0,
        )?);
    }
    if cfg.wants("det-measure") {
        let mut family = Vec::new();
        for frac in [0.3, 0.45, 0.6] {
            family.push(TestFunction::plateau(grid_f, domain.scaled(frac))?);
        }
        let (lo, hi) =
            diagnostics::check_det_measure_bounds(&finest.u, &h, &family, v_rect, u_rect, 100.0)?;
        diag.reports.push(lo);
        diag.reports.push(hi);
    }
    if cfg.wants("orthogonality") {
        let phi = TestFunction::plateau(grid_f, domain.scaled(0.4))?;
        for r in finest_runs {
            let defect = diagnostics::orthogonality_defect(&r.u, &h, 1.0, 0.0, &phi)?;
            let eps_side = diagnostics::orthogonality_eps_side(&r.u, &h, r.eps, 1.0, 0.0, &phi)?;
            diag.orthogonality_ladder.push((r.eps, defect, eps_side));
        }
    }
    if cfg.wants("flatness") {
        let ci = grid_f.nx / 2;
        let cj = grid_f.ny / 2;
        let du = grid::gradient_at(&finest.u, ci, cj);
        let (cx, cy) = (grid_f.x(ci), grid_f.y(cj));
        let f = LinearFunction {
            a: du.x,
            b: du.y,
            c: finest.u.at(ci, cj) - du.x * cx - du.y * cy,
        };
        let half = 0.25 * (domain.x1 - domain.x0).min(domain.y1 - domain.y0) * 0.5;
        diag.reports.push(diagnostics::flatness_check(
            &finest.u,
            &h,
            Rect::centered(cx, cy, half),
            f,
            100.0,
        )?);
    }
    if cfg.wants("linf-estimate") && finest_runs.len() >= 2 {
        diag.reports
            .push(diagnostics::check_linf_estimate(finest_runs, &h, v_rect)?);
    }
    if cfg.wants("log-divergence") {
        diag.annuli = diagnostics::log_divergence_experiment(&[0.25, 0.5, 1.0], 12);
        let rows: Vec<Vec<String>> = diag
            .annuli
            .iter()
            .map(|r| {
                vec![
                    r.k.to_string(),
                    match r.kind {
                        AnnulusKind::Log => "log".to_string(),
                        AnnulusKind::Power(a) => fmt_f64(a),
                    },
                    fmt_f64(r.contribution),
                    fmt_f64(r.partial_sum),
                ]
            })
            .collect();
        sink.write(
            "annuli.csv",
            &csv_table("k,alpha,contribution,partial_sum", &rows),
        )?;
    }
    if !diag.reports.is_empty() || !diag.annuli.is_empty() || !diag.orthogonality_ladder.is_empty()
    {
        sink.write_json("diagnostics.json", &diag)?;
    }

    if cfg.wants("cones") {
        let slack = cones::comparison_slack(&finest.u, &h, finest.eps)?;
        let comparison =
            cones::comparison_with_cones(&finest.u, &h, 1000, slack, cfg.seed ^ 0xc0_4e5)?;
        let level = solver::h_sup_on_cells(&h, &finest.u, None)? * 1.02 + 1e-9;
        let characterization =
            cones::lipschitz_characterization(&finest.u, &h, level, 10_000, cfg.seed ^ 0x11f)?;
        // Lipschitz constant of the boundary data from adjacent node slopes
        let bc = parse_boundary(&cfg.boundary, grid_f)?;
        let l = boundary_lipschitz(&bc);
        let lipschitz_bound = cones::lipschitz_bound_check(&finest.u, &h, l)?;
        let table = cones::ConeTable::build(&h, level)?;
        let rows: Vec<Vec<String>> = table
            .rows()
            .into_iter()
            .map(|(t, r)| vec![fmt_f64(t), fmt_f64(r)])
            .collect();
        sink.write("cone_table.csv", &csv_table("theta,r", &rows))?;
        sink.write_json(
            "cones.json",
            &ConesArtifact {
                comparison,
                characterization,
                lipschitz_bound,
            },
        )?;
    }

    let manifest_path = sink.finish(cfg)?;
    Ok(RunOutcome {
        manifest_path,
        file_count: 1,
    })
}

/// Largest slope between adjacent boundary nodes.
pub fn boundary_lipschitz(bc: &GridFunction) -> f64 {
    let g = bc.grid;
    let mut worst = 0.0f64;
    let mut prev: Option<(Vec2, f64)> = None;
    // walk the ring in order: bottom, right, top, left
    let mut ring: Vec<(usize, usize)> = Vec::new();
    for i in 0..g.nx {
        ring.push((i, 0));
    }
    for j in 1..g.ny {
        ring.push((g.nx - 1, j));
    }
    for i in (0..g.nx - 1).rev() {
        ring.push((i, g.ny - 1));
    }
    for j in (1..g.ny - 1).rev() {
        ring.push((0, j));
    }
    for (i, j) in ring {
        let p = Vec2::new(g.x(i), g.y(j));
        let v = bc.at(i, j);
        if let Some((q, w)) = prev {
            let d = (p - q).norm();
            if d > 0.0 {
                worst = worst.max((v - w).abs() / d);
            }
        }
        prev = Some((p, v));
    }
    worst
}

// ---------------------------------------------------------------------------
// Plot emission
// ---------------------------------------------------------------------------

pub fn emit_plots(prefix: &Path) -> Result<Vec<PathBuf>, CliError> {
    let manifest_path = prefix.join("manifest.json");
    if !manifest_path.exists() {
        return Err(CliError::Io(format!(
            "missing input: {}",
            manifest_path.display()
        )));
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)
            .map_err(|e| CliError::Io(e.to_string()))?;
    let mut produced = Vec::new();

    // ε vs sup-error table from the per-grid metadata
    let mut eps_rows: Vec<Vec<String>> = Vec::new();
    let mut meta_files: Vec<String> = manifest["files"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|f| f["path"].as_str())
        .filter(|p| p.ends_with("_meta.json"))
        .map(|s| s.to_string())
        .collect();
    meta_files.sort();
    if meta_files.is_empty() {
        return Err(CliError::Io(
            "missing inputs: no *_meta.json files listed in the manifest".into(),
        ));
    }
    let mut delta_rows: Vec<Vec<String>> = Vec::new();
    let mut largest_grid: Option<(usize, String)> = None;
    for mf in &meta_files {
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(prefix.join(mf))?)
                .map_err(|e| CliError::Io(e.to_string()))?;
        let n = meta["n"].as_u64().unwrap_or(0) as usize;
        let tag = mf.trim_end_matches("_meta.json").to_string();
        if largest_grid.as_ref().map(|(m, _)| n > *m).unwrap_or(true) {
            largest_grid = Some((n, tag));
        }
        for row in meta["eps_rows"].as_array().into_iter().flatten() {
            eps_rows.push(vec![
                n.to_string(),
                row["eps"].to_string(),
                row["sup_diff_prev"]
                    .as_f64()
                    .map(fmt_f64)
                    .unwrap_or_default(),
                row["sup_err_exact"]
                    .as_f64()
                    .map(fmt_f64)
                    .unwrap_or_default(),
            ]);
        }
        for row in meta["delta_rows"].as_array().into_iter().flatten() {
            delta_rows.push(vec![
                n.to_string(),
                row["delta"].to_string(),
                row["h_linf_v"].as_f64().map(fmt_f64).unwrap_or_default(),
            ]);
        }
    }
    let eps_path = prefix.join("eps_convergence.csv");
    std::fs::write(
        &eps_path,
        csv_table("grid,eps,sup_diff_prev,sup_err_exact", &eps_rows),
    )?;
    produced.push(eps_path);
    if !delta_rows.is_empty() {
        let p = prefix.join("delta_linf.csv");
        std::fs::write(&p, csv_table("grid,delta,h_linf", &delta_rows))?;
        produced.push(p);
    }
    // the annuli table is already CSV when the experiment ran it
    let annuli_src = prefix.join("annuli.csv");
    if annuli_src.exists() {
        produced.push(annuli_src);
    }
    // residual heatmap of the largest grid
    if let Some((_, tag)) = largest_grid {
        let src = prefix.join(format!("{tag}_residual.csv"));
        if src.exists() {
            let dst = prefix.join("residual_heatmap.csv");
            std::fs::copy(&src, &dst)?;
            produced.push(dst);
        }
    }
    Ok(produced)
}
