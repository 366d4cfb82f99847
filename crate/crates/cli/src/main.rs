//! Command-line driver.
//!
//! Subcommands: `solve`, `identities`, `diagnose`, `cones`, `run`,
//! `emit-plots`. `ARONSSON_LAB_THREADS` caps the worker count. Exit codes:
//! 0 ok, 2 validation, 3 numerical failure, 4 I/O.

use aronsson_core::grid::{self, Grid2D, GridFunction, Rect, TestFunction};
use aronsson_core::identities::{self, IdentityId, TestFn};
use aronsson_core::math::Vec2;
use aronsson_core::solver::{self, SolveConfig};
use aronsson_core::{cones, diagnostics};
use aronsson_lab::config::{parse_boundary, parse_hamiltonian, ExperimentConfig};
use aronsson_lab::output::ArtifactSink;
use aronsson_lab::{runner, CliError};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const USAGE: &str = "\
aronsson-lab: grid laboratory for plane L-infinity variational problems

USAGE:
  aronsson-lab solve --hamiltonian <spec> (--eps <v> | --eps-ladder a,b,c)
               --grid N --domain x0,x1,y0,y1 --bc <aronsson|linear:a,b|file.csv>
               --out <prefix> [--max-iters N] [--grad-tol v] [--damping v]
  aronsson-lab identities --check <id|all> --hamiltonian <spec>
               --testfn <name|file.csv> [--grid N] [--refine]
  aronsson-lab diagnose --which <id|all> --solution <prefix>
               --hamiltonian <spec> [--alpha v] [--V x0,x1,y0,y1]
  aronsson-lab cones --hamiltonian <spec> --a <v>
               [--value x,y | --check-solution <prefix> | --mcshane bc.csv --L v]
               [--table out.csv] [--out prefix]
  aronsson-lab run --config <file>
  aronsson-lab emit-plots --prefix <dir>

Hamiltonian specs: quad:a11,a12,a22 | quartic | aniso-quartic |
                   maxquad:a11,a12,a22,b11,b12,b22 | sampled:table.csv
Identity ids:      structure, det-divergence, euclidean-structure,
                   euclidean-det-divergence, laplacian-structure,
                   laplacian-det-divergence, solved-determinant
Diagnostic ids:    sobolev-bound, det-measure-lower, det-measure-upper,
                   orthogonality, flatness, linf-estimate, log-divergence

Environment:       ARONSSON_LAB_THREADS caps the worker count.
";

fn main() {
    configure_threads();
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn configure_threads() {
    if let Ok(v) = std::env::var("ARONSSON_LAB_THREADS") {
        match v.parse::<usize>() {
            Ok(0) | Err(_) => {
                eprintln!("warning: ignoring invalid ARONSSON_LAB_THREADS={v}");
            }
            Ok(1) => aronsson_core::exec::set_parallel(false),
            Ok(n) => aronsson_core::exec::configure_thread_pool(n),
        }
    }
}

struct Flags {
    map: BTreeMap<String, String>,
    bools: Vec<String>,
}

impl Flags {
    fn parse(args: &[String]) -> Result<Flags, CliError> {
        let mut map = BTreeMap::new();
        let mut bools = Vec::new();
        let mut it = args.iter().peekable();
        while let Some(a) = it.next() {
            let Some(name) = a.strip_prefix("--") else {
                return Err(CliError::Validation(format!("unexpected argument `{a}`")));
            };
            match it.peek() {
                Some(v) if !v.starts_with("--") => {
                    map.insert(name.to_string(), it.next().expect("peeked").clone());
                }
                _ => bools.push(name.to_string()),
            }
        }
        Ok(Flags { map, bools })
    }

    fn get(&self, name: &str) -> Option<&str> {
        self.map.get(name).map(|s| s.as_str())
    }

    fn require(&self, name: &str) -> Result<&str, CliError> {
        self.get(name)
            .ok_or_else(|| CliError::Validation(format!("missing --{name}")))
    }

    fn has(&self, name: &str) -> bool {
        self.bools.iter().any(|b| b == name)
    }

    fn f64(&self, name: &str) -> Result<Option<f64>, CliError> {
        self.get(name)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| CliError::Validation(format!("--{name}: {e}")))
            })
            .transpose()
    }

    fn f64_list(&self, name: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.get(name)
            .map(|s| {
                s.split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|e| CliError::Validation(format!("--{name}: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    fn usize(&self, name: &str) -> Result<Option<usize>, CliError> {
        self.get(name)
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|e| CliError::Validation(format!("--{name}: {e}")))
            })
            .transpose()
    }
}

fn dispatch(args: &[String]) -> Result<(), CliError> {
    let Some(cmd) = args.first() else {
        print!("{USAGE}");
        return Ok(());
    };
    let flags = Flags::parse(&args[1..])?;
    match cmd.as_str() {
        "solve" => cmd_solve(&flags),
        "identities" => cmd_identities(&flags),
        "diagnose" => cmd_diagnose(&flags),
        "cones" => cmd_cones(&flags),
        "run" => {
            let cfg = ExperimentConfig::load(Path::new(flags.require("config")?))?;
            let outcome = runner::run(&cfg)?;
            println!("manifest: {}", outcome.manifest_path.display());
            Ok(())
        }
        "emit-plots" => {
            let produced = runner::emit_plots(Path::new(flags.require("prefix")?))?;
            for p in produced {
                println!("{}", p.display());
            }
            Ok(())
        }
        "help" | "--help" | "-h" => {
            print!("{USAGE}");
            Ok(())
        }
        other => Err(CliError::Validation(format!(
            "unknown subcommand `{other}`"
        ))),
    }
}

fn parse_domain(flags: &Flags) -> Result<Rect, CliError> {
    match flags.f64_list("domain")? {
        Some(v) if v.len() == 4 => Ok(Rect::new(v[0], v[1], v[2], v[3])),
        Some(_) => Err(CliError::Validation("--domain needs x0,x1,y0,y1".into())),
        None => Ok(Rect::square(1.0)),
    }
}

fn cmd_solve(flags: &Flags) -> Result<(), CliError> {
    let h = parse_hamiltonian(flags.require("hamiltonian")?)?;
    let n = flags.usize("grid")?.unwrap_or(65);
    let domain = parse_domain(flags)?;
    let grid = Grid2D::new(n, n, domain)?;
    let bc = parse_boundary(flags.require("bc")?, grid)?;
    let ladder = match (flags.f64("eps")?, flags.f64_list("eps-ladder")?) {
        (Some(e), None) => vec![e],
        (None, Some(l)) => l,
        (Some(_), Some(_)) => {
            return Err(CliError::Validation(
                "give either --eps or --eps-ladder, not both".into(),
            ))
        }
        (None, None) => return Err(CliError::Validation("missing --eps or --eps-ladder".into())),
    };
    for w in ladder.windows(2) {
        if w[1] >= w[0] {
            return Err(CliError::Validation(
                "--eps-ladder must be strictly decreasing".into(),
            ));
        }
    }
    let scfg = SolveConfig {
        eps: *ladder.last().expect("non-empty"),
        max_iters: flags.usize("max-iters")?.unwrap_or(400),
        grad_tol: flags.f64("grad-tol")?.unwrap_or(1e-9),
        damping: flags.f64("damping")?.unwrap_or(1.0),
        continuation_ladder: ladder,
        log_domain: solver::LogDomain::Auto,
    };
    let out = PathBuf::from(flags.require("out")?);
    let dir = out.parent().unwrap_or(Path::new("."));
    let stem = out
        .file_name()
        .ok_or_else(|| CliError::Validation("--out needs a file prefix".into()))?
        .to_string_lossy()
        .to_string();
    let mut sink = ArtifactSink::new(dir)?;
    let bc_spec = flags.require("bc")?;
    let runs = runner::solve_grid(&mut sink, &stem, &h, grid, &bc, bc_spec, &scfg, &[], None)?;
    let last = runs.last().expect("non-empty");
    println!(
        "solved eps={} converged={} iters={} residual={:.3e}",
        last.eps, last.converged, last.iters, last.residual
    );
    Ok(())
}

fn cmd_identities(flags: &Flags) -> Result<(), CliError> {
    let h = parse_hamiltonian(flags.require("hamiltonian")?)?;
    let check = flags.require("check")?;
    let ids: Vec<IdentityId> = if check == "all" {
        IdentityId::all().to_vec()
    } else {
        vec![IdentityId::from_name(check)
            .ok_or_else(|| CliError::Validation(format!("unknown identity id `{check}`")))?]
    };
    let testfn_spec = flags.require("testfn")?;
    let mut reports = Vec::new();
    if let Some(v) = TestFn::from_name(testfn_spec) {
        match flags.usize("grid")? {
            None => {
                // closed-form mode on random points
                let mut rng = aronsson_core::rng::Rng::new(12345);
                let pts: Vec<Vec2> = (0..200)
                    .map(|_| Vec2::new(rng.range(-2.0, 2.0), rng.range(-2.0, 2.0)))
                    .collect();
                for id in &ids {
                    reports.push(identities::check_closed_form(*id, &h, &v, &pts)?);
                }
            }
            Some(n) => {
                let coarse = Grid2D::new(n, n, parse_domain(flags)?)?;
                if flags.has("refine") {
                    let fine = Grid2D::new(2 * n - 1, 2 * n - 1, parse_domain(flags)?)?;
                    for id in &ids {
                        reports.push(identities::check_grid_refined(
                            *id,
                            &h,
                            |x, y| v.value(Vec2::new(x, y)),
                            coarse,
                            fine,
                        )?);
                    }
                } else {
                    let field = GridFunction::from_fn(coarse, |x, y| v.value(Vec2::new(x, y)));
                    for id in &ids {
                        reports.push(identities::check_grid(*id, &h, &field)?);
                    }
                }
            }
        }
    } else {
        // a stored field: grid mode on it
        let field = grid::read_csv(Path::new(testfn_spec))?;
        for id in &ids {
            reports.push(identities::check_grid(*id, &h, &field)?);
        }
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&reports).map_err(|e| CliError::Io(e.to_string()))?
    );
    Ok(())
}

fn load_solution(prefix: &str) -> Result<(GridFunction, f64), CliError> {
    let u = grid::read_csv(Path::new(&format!("{prefix}_u.csv")))?;
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(format!("{prefix}_meta.json"))?)
            .map_err(|e| CliError::Io(e.to_string()))?;
    let eps = meta["eps_rows"]
        .as_array()
        .and_then(|rows| rows.last())
        .and_then(|r| r["eps"].as_f64())
        .ok_or_else(|| CliError::Io("meta file lacks eps_rows".into()))?;
    Ok((u, eps))
}

fn cmd_diagnose(flags: &Flags) -> Result<(), CliError> {
    let h = parse_hamiltonian(flags.require("hamiltonian")?)?;
    let which = flags.require("which")?;
    let prefix = flags.require("solution")?;
    let (u, eps) = load_solution(prefix)?;
    let g = u.grid;
    let domain = g.rect();
    let u_rect = domain.scaled(0.9);
    let v_rect = match flags.f64_list("V")? {
        Some(v) if v.len() == 4 => Rect::new(v[0], v[1], v[2], v[3]),
        Some(_) => return Err(CliError::Validation("--V needs x0,x1,y0,y1".into())),
        None => domain.scaled(0.5),
    };
    let alpha = flags.f64("alpha")?.unwrap_or(1.0);
    let wants = |key: &str| which == "all" || which == key;
    let mut reports: Vec<diagnostics::EstimateReport> = Vec::new();
    if wants("sobolev-bound") {
        reports.push(diagnostics::check_sobolev_bound(
            &u, &h, alpha, v_rect, u_rect, 100.0,
        )?);
    }
    if wants("det-measure-lower") || wants("det-measure-upper") {
        let family = vec![
            TestFunction::plateau(g, domain.scaled(0.3))?,
            TestFunction::plateau(g, domain.scaled(0.5))?,
        ];
        let (lo, hi) =
            diagnostics::check_det_measure_bounds(&u, &h, &family, v_rect, u_rect, 100.0)?;
        if wants("det-measure-lower") {
            reports.push(lo);
        }
        if wants("det-measure-upper") {
            reports.push(hi);
        }
    }
    if wants("orthogonality") {
        let phi = TestFunction::plateau(g, domain.scaled(0.4))?;
        let sigma = if alpha < 0.5 {
            diagnostics::DEFAULT_SIGMA
        } else {
            0.0
        };
        let defect = diagnostics::orthogonality_defect(&u, &h, alpha, sigma, &phi)?;
        let eps_side = diagnostics::orthogonality_eps_side(&u, &h, eps, alpha, sigma, &phi)?;
        println!("orthogonality defect {defect:.6e} vs eps-side {eps_side:.6e}");
    }
    if wants("flatness") {
        let (ci, cj) = (g.nx / 2, g.ny / 2);
        let du = grid::gradient_at(&u, ci, cj);
        let f = LinearFunctionAt::tangent(&u, ci, cj, du);
        let half = 0.25 * (domain.x1 - domain.x0).min(domain.y1 - domain.y0) * 0.5;
        reports.push(diagnostics::flatness_check(
            &u,
            &h,
            Rect::centered(g.x(ci), g.y(cj), half),
            f,
            100.0,
        )?);
    }
    if wants("log-divergence") {
        let rows = diagnostics::log_divergence_experiment(&[0.25, 0.5, 1.0], 12);
        let dir = Path::new(prefix).parent().unwrap_or(Path::new("."));
        let csv: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.k.to_string(),
                    match r.kind {
                        diagnostics::AnnulusKind::Log => "log".into(),
                        diagnostics::AnnulusKind::Power(a) => aronsson_lab::output::fmt_f64(a),
                    },
                    aronsson_lab::output::fmt_f64(r.contribution),
                    aronsson_lab::output::fmt_f64(r.partial_sum),
                ]
            })
            .collect();
        std::fs::write(
            dir.join("annuli.csv"),
            aronsson_lab::output::csv_table("k,alpha,contribution,partial_sum", &csv),
        )?;
    }
    if wants("linf-estimate") && which != "all" {
        return Err(CliError::Validation(
            "linf-estimate needs a full ladder; use the `run` pipeline".into(),
        ));
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&reports).map_err(|e| CliError::Io(e.to_string()))?
    );
    Ok(())
}

/// Tangent-plane helper kept local to the binary.
struct LinearFunctionAt;

impl LinearFunctionAt {
    fn tangent(u: &GridFunction, ci: usize, cj: usize, du: Vec2) -> diagnostics::LinearFunction {
        let g = u.grid;
        diagnostics::LinearFunction {
            a: du.x,
            b: du.y,
            c: u.at(ci, cj) - du.x * g.x(ci) - du.y * g.y(cj),
        }
    }
}

fn cmd_cones(flags: &Flags) -> Result<(), CliError> {
    let h = parse_hamiltonian(flags.require("hamiltonian")?)?;
    let level = flags
        .f64("a")?
        .ok_or_else(|| CliError::Validation("missing --a".into()))?;
    if let Some(path) = flags.get("table") {
        let table = cones::ConeTable::build(&h, level)?;
        let rows: Vec<Vec<String>> = table
            .rows()
            .into_iter()
            .map(|(t, r)| {
                vec![
                    aronsson_lab::output::fmt_f64(t),
                    aronsson_lab::output::fmt_f64(r),
                ]
            })
            .collect();
        std::fs::write(path, aronsson_lab::output::csv_table("theta,r", &rows))?;
        println!("wrote {path}");
    }
    if let Some(xy) = flags.f64_list("value")? {
        if xy.len() != 2 {
            return Err(CliError::Validation("--value needs x,y".into()));
        }
        let v = cones::cone_value(&h, level, Vec2::new(xy[0], xy[1]))?;
        println!("{}", aronsson_lab::output::fmt_f64(v));
        return Ok(());
    }
    if let Some(prefix) = flags.get("check-solution") {
        let (u, eps) = load_solution(prefix)?;
        let slack = cones::comparison_slack(&u, &h, eps)?;
        let comparison = cones::comparison_with_cones(&u, &h, 1000, slack, 0xc0_4e5)?;
        let characterization = cones::lipschitz_characterization(&u, &h, level, 10_000, 0x11f)?;
        let out = serde_json::json!({
            "comparison": comparison,
            "characterization": characterization,
        });
        println!(
            "{}",
            serde_json::to_string_pretty(&out).map_err(|e| CliError::Io(e.to_string()))?
        );
        return Ok(());
    }
    if let Some(bc_path) = flags.get("mcshane") {
        let l = flags
            .f64("L")?
            .ok_or_else(|| CliError::Validation("--mcshane needs --L".into()))?;
        let bc = grid::read_csv(Path::new(bc_path))?.boundary_only();
        let v = cones::mcshane_extend(&bc, l)?;
        let out = flags.get("out").unwrap_or("mcshane_u.csv");
        grid::write_csv(&v, Path::new(out))?;
        println!("wrote {out}");
        return Ok(());
    }
    Ok(())
}
