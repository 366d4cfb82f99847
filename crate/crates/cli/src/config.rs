//! Experiment configuration: flat key-value text with section headers, one
//! experiment per file.
//!
//! ```text
//! [hamiltonian]
//! kind = quad:1,0,1
//!
//! [domain]
//! rect = -1,1,-1,1
//!
//! [grid]
//! sizes = 65,129
//!
//! [solve]
//! eps_ladder = 0.5,0.1,0.02
//! delta_ladder =
//! max_iters = 400
//! grad_tol = 1e-9
//! damping = 1.0
//!
//! [boundary]
//! kind = aronsson
//!
//! [run]
//! diagnostics = all
//! seed = 42
//! out = runs/exp1
//! ```

use crate::CliError;
use aronsson_core::grid::{GridFunction, Rect};
use aronsson_core::hamiltonian::{Hamiltonian, SampledTable};
use aronsson_core::math::SymMat2;
use aronsson_core::solver;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub hamiltonian: String,
    pub domain: [f64; 4],
    pub grid_sizes: Vec<usize>,
    pub eps_ladder: Vec<f64>,
    pub delta_ladder: Vec<f64>,
    pub boundary: String,
    pub diagnostics: Vec<String>,
    pub out: String,
    pub seed: u64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub damping: f64,
}

pub const DIAGNOSTIC_KEYS: [&str; 8] = [
    "identities",
    "sobolev-bound",
    "det-measure",
    "orthogonality",
    "flatness",
    "linf-estimate",
    "log-divergence",
    "cones",
];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Validation(format!("config line {}: expected key = value", lineno + 1))
            })?;
            map.insert(format!("{}.{}", section, k.trim()), v.trim().to_string());
        }
        let get = |key: &str| map.get(key).map(|s| s.as_str());
        let require = |key: &str| {
            get(key).ok_or_else(|| CliError::Validation(format!("config is missing `{key}`")))
        };
        let parse_f64_list = |key: &str, s: &str| -> Result<Vec<f64>, CliError> {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| CliError::Validation(format!("{key}: {e}")))
                })
                .collect()
        };
        let cfg = ExperimentConfig {
            hamiltonian: require("hamiltonian.kind")?.to_string(),
            domain: {
                let v = parse_f64_list("domain.rect", require("domain.rect")?)?;
                if v.len() != 4 {
                    return Err(CliError::Validation(
                        "domain.rect needs four values x0,x1,y0,y1".into(),
                    ));
                }
                [v[0], v[1], v[2], v[3]]
            },
            grid_sizes: require("grid.sizes")?
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|e| CliError::Validation(format!("grid.sizes: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?,
            eps_ladder: parse_f64_list("solve.eps_ladder", require("solve.eps_ladder")?)?,
            delta_ladder: parse_f64_list(
                "solve.delta_ladder",
                get("solve.delta_ladder").unwrap_or(""),
            )?,
            boundary: require("boundary.kind")?.to_string(),
            diagnostics: get("run.diagnostics")
                .unwrap_or("all")
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
            out: require("run.out")?.to_string(),
            seed: get("run.seed")
                .unwrap_or("0")
                .parse()
                .map_err(|e| CliError::Validation(format!("run.seed: {e}")))?,
            max_iters: get("solve.max_iters")
                .unwrap_or("400")
                .parse()
                .map_err(|e| CliError::Validation(format!("solve.max_iters: {e}")))?,
            grad_tol: get("solve.grad_tol")
                .unwrap_or("1e-9")
                .parse()
                .map_err(|e| CliError::Validation(format!("solve.grad_tol: {e}")))?,
            damping: get("solve.damping")
                .unwrap_or("1.0")
                .parse()
                .map_err(|e| CliError::Validation(format!("solve.damping: {e}")))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        validate_ladder("solve.eps_ladder", &self.eps_ladder, true)?;
        validate_ladder("solve.delta_ladder", &self.delta_ladder, false)?;
        if self.grid_sizes.is_empty() {
            return Err(CliError::Validation("grid.sizes must be non-empty".into()));
        }
        for &n in &self.grid_sizes {
            if n < 3 || n % 2 == 0 {
                return Err(CliError::Validation(format!(
                    "grid.sizes entries must be odd and >= 3, got {n}"
                )));
            }
        }
        if !(self.domain[1] > self.domain[0] && self.domain[3] > self.domain[2]) {
            return Err(CliError::Validation("domain.rect is empty".into()));
        }
        for d in &self.diagnostics {
            if d != "all" && !DIAGNOSTIC_KEYS.contains(&d.as_str()) {
                return Err(CliError::Validation(format!(
                    "run.diagnostics: unknown selection `{d}` (known: all, {})",
                    DIAGNOSTIC_KEYS.join(", ")
                )));
            }
        }
        parse_hamiltonian(&self.hamiltonian)?;
        Ok(())
    }

    pub fn domain_rect(&self) -> Rect {
        Rect::new(
            self.domain[0],
            self.domain[1],
            self.domain[2],
            self.domain[3],
        )
    }

    pub fn wants(&self, key: &str) -> bool {
        self.diagnostics.iter().any(|d| d == "all" || d == key)
    }
}

fn validate_ladder(name: &str, ladder: &[f64], required: bool) -> Result<(), CliError> {
    if ladder.is_empty() {
        if required {
            return Err(CliError::Validation(format!("{name} must be non-empty")));
        }
        return Ok(());
    }
    for w in ladder.windows(2) {
        if w[1] >= w[0] {
            return Err(CliError::Validation(format!(
                "{name} must be strictly decreasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if ladder.iter().any(|&v| v <= 0.0) {
        return Err(CliError::Validation(format!("{name} must be positive")));
    }
    Ok(())
}

/// Parse a Hamiltonian spec: `quad:a11,a12,a22`, `quartic`,
/// `aniso-quartic`, `maxquad:a11,a12,a22,b11,b12,b22` or
/// `sampled:table.csv`.
pub fn parse_hamiltonian(spec: &str) -> Result<Hamiltonian, CliError> {
    let (head, tail) = match spec.split_once(':') {
        Some((h, t)) => (h.trim(), Some(t.trim())),
        None => (spec.trim(), None),
    };
    let nums = |t: &str| -> Result<Vec<f64>, CliError> {
        t.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::Validation(format!("hamiltonian spec: {e}")))
            })
            .collect()
    };
    match head {
        "quad" => {
            let v =
                nums(tail.ok_or_else(|| CliError::Validation("quad needs a11,a12,a22".into()))?)?;
            if v.len() != 3 {
                return Err(CliError::Validation(
                    "quad needs exactly a11,a12,a22".into(),
                ));
            }
            Ok(Hamiltonian::quad(v[0], v[1], v[2])?)
        }
        "quartic" => Ok(Hamiltonian::quartic()),
        "aniso-quartic" => Ok(Hamiltonian::aniso_quartic()),
        "maxquad" => {
            let v = nums(tail.ok_or_else(|| {
                CliError::Validation("maxquad needs a11,a12,a22,b11,b12,b22".into())
            })?)?;
            if v.len() != 6 {
                return Err(CliError::Validation(
                    "maxquad needs exactly a11,a12,a22,b11,b12,b22".into(),
                ));
            }
            Ok(Hamiltonian::max_quad(
                SymMat2::new(v[0], v[1], v[2]),
                SymMat2::new(v[3], v[4], v[5]),
            )?)
        }
        "sampled" => {
            let path =
                tail.ok_or_else(|| CliError::Validation("sampled needs a csv path".into()))?;
            let table = aronsson_core::grid::read_csv(Path::new(path))?;
            Ok(Hamiltonian::Sampled(SampledTable::new(table)?))
        }
        other => Err(CliError::Validation(format!(
            "unknown hamiltonian kind `{other}` (quad, quartic, aniso-quartic, maxquad, sampled)"
        ))),
    }
}

/// Parse a boundary spec (`aronsson`, `linear:a,b` or a CSV path) into a
/// boundary field on the given grid.
pub fn parse_boundary(
    spec: &str,
    grid: aronsson_core::grid::Grid2D,
) -> Result<GridFunction, CliError> {
    if spec == "aronsson" {
        return Ok(solver::boundary_from_fn(grid, solver::aronsson_profile));
    }
    if let Some(params) = spec.strip_prefix("linear:") {
        let v: Vec<f64> = params
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::Validation(format!("linear bc: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if v.len() != 2 {
            return Err(CliError::Validation("linear bc needs a,b".into()));
        }
        return Ok(solver::boundary_from_fn(grid, move |x, y| {
            v[0] * x + v[1] * y
        }));
    }
    // otherwise a CSV field; interpolate its boundary onto the grid by
    // requiring exact grid agreement
    let field = aronsson_core::grid::read_csv(Path::new(spec))?;
    if field.grid != grid {
        return Err(CliError::Validation(format!(
            "boundary file grid {}x{} does not match the requested grid {}x{}",
            field.grid.nx, field.grid.ny, grid.nx, grid.ny
        )));
    }
    Ok(field.boundary_only())
}
