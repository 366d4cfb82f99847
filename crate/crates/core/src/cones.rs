//! Cone functions (support functions of sublevel sets), the Lipschitz
//! characterization, comparison with cones, McShane extension, and the
//! global Lipschitz bound.
//!
//! The cone at level `a` is `C_a(x) = sup{ ⟨p, x⟩ : H(p) <= a }`: convex,
//! positively 1-homogeneous and subadditive, with the boundary of the
//! sublevel set parametrized by a radius table over angles.

use crate::exec;
use crate::grid::GridFunction;
use crate::hamiltonian::{Hamiltonian, HamiltonianError};
use crate::math::Vec2;
use crate::rng::Rng;
use crate::solver::{h_sup_on_cells, SolveError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConeError {
    #[error("cone level must be nonnegative, got {0}")]
    NegativeLevel(f64),
    #[error("boundary data violates the Lipschitz constant {l} at nodes ({x0}, {y0}) and ({x1}, {y1}): slope {slope}")]
    NotLipschitz {
        l: f64,
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        slope: f64,
    },
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

const TABLE_ANGLES: usize = 512;
const COMPARISON_ANGLES: usize = 64;

/// Boundary radius table of `{H <= a}`: r(θ_k) with H(r·e_θ) = a.
#[derive(Clone, Debug)]
pub struct ConeTable {
    pub level: f64,
    pub radii: Vec<f64>,
}

impl ConeTable {
    pub fn build(h: &Hamiltonian, level: f64) -> Result<Self, ConeError> {
        Self::build_n(h, level, TABLE_ANGLES)
    }

    pub fn build_n(h: &Hamiltonian, level: f64, n: usize) -> Result<Self, ConeError> {
        if level < 0.0 {
            return Err(ConeError::NegativeLevel(level));
        }
        if level == 0.0 {
            return Ok(ConeTable {
                level,
                radii: vec![0.0; n],
            });
        }
        let radii = exec::map_indexed(n, |k| {
            let theta = std::f64::consts::TAU * k as f64 / n as f64;
            h.sublevel_radius(level, theta)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        Ok(ConeTable { level, radii })
    }

    #[inline]
    fn angle(&self, k: usize) -> f64 {
        std::f64::consts::TAU * (k % self.radii.len()) as f64 / self.radii.len() as f64
    }

    #[inline]
    fn boundary_point(&self, k: usize) -> Vec2 {
        Vec2::from_angle(self.angle(k)) * self.radii[k % self.radii.len()]
    }

    /// Cone value from the table with local parabolic refinement of the
    /// best angle: accurate to a few parts in 1e6 of the value, no extra
    /// Hamiltonian evaluations.
    pub fn value(&self, x: Vec2) -> f64 {
        if self.level == 0.0 || (x.x == 0.0 && x.y == 0.0) {
            return 0.0;
        }
        let n = self.radii.len();
        let mut best = f64::NEG_INFINITY;
        let mut kb = 0;
        for k in 0..n {
            let v = self.boundary_point(k).dot(x);
            if v > best {
                best = v;
                kb = k;
            }
        }
        // parabolic vertex through the three best table samples, applied
        // to both the objective and the radius
        let f = |k: isize| -> f64 {
            let k = ((k % n as isize) + n as isize) as usize % n;
            self.boundary_point(k).dot(x)
        };
        let (fm, f0, fp) = (f(kb as isize - 1), f(kb as isize), f(kb as isize + 1));
        let denom = fm - 2.0 * f0 + fp;
        if denom >= 0.0 {
            return best;
        }
        let s = (0.5 * (fm - fp) / denom).clamp(-0.5, 0.5);
        let r = |k: isize| -> f64 {
            let k = ((k % n as isize) + n as isize) as usize % n;
            self.radii[k]
        };
        let (rm, r0, rp) = (r(kb as isize - 1), r(kb as isize), r(kb as isize + 1));
        let r_interp = r0 + 0.5 * s * (rp - rm) + 0.5 * s * s * (rm - 2.0 * r0 + rp);
        let theta = self.angle(kb) + s * std::f64::consts::TAU / n as f64;
        (Vec2::from_angle(theta) * r_interp).dot(x).max(best)
    }

    /// Export as (θ, r) rows.
    pub fn rows(&self) -> Vec<(f64, f64)> {
        (0..self.radii.len())
            .map(|k| (self.angle(k), self.radii[k]))
            .collect()
    }
}

/// Cone value by golden-section maximization of `⟨p(θ), x⟩` over the
/// sublevel boundary, with boundary radii re-solved by bisection at every
/// probe; the high-accuracy path.
pub fn cone_value(h: &Hamiltonian, level: f64, x: Vec2) -> Result<f64, ConeError> {
    if level < 0.0 {
        return Err(ConeError::NegativeLevel(level));
    }
    if level == 0.0 || (x.x == 0.0 && x.y == 0.0) {
        return Ok(0.0);
    }
    let obj = |theta: f64| -> Result<f64, ConeError> {
        let r = h.sublevel_radius(level, theta)?;
        Ok((Vec2::from_angle(theta) * r).dot(x))
    };
    // coarse scan, then golden refinement around the best angle
    let n = 64;
    let mut best = f64::NEG_INFINITY;
    let mut kb = 0;
    for k in 0..n {
        let v = obj(std::f64::consts::TAU * k as f64 / n as f64)?;
        if v > best {
            best = v;
            kb = k;
        }
    }
    let step = std::f64::consts::TAU / n as f64;
    let mut a = step * (kb as f64 - 1.0);
    let mut b = step * (kb as f64 + 1.0);
    let phi = 0.5 * (3.0 - 5.0f64.sqrt());
    let mut x1 = a + phi * (b - a);
    let mut x2 = b - phi * (b - a);
    let mut f1 = obj(x1)?;
    let mut f2 = obj(x2)?;
    for _ in 0..64 {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = a + phi * (b - a);
            f1 = obj(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = b - phi * (b - a);
            f2 = obj(x2)?;
        }
        if b - a < 1e-12 {
            break;
        }
    }
    Ok(best.max(f1).max(f2))
}

// ---------------------------------------------------------------------------
// Lipschitz characterization and bound
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct CharacterizationReport {
    pub level: f64,
    pub n_segments: usize,
    pub seed: u64,
    /// max over sampled pairs of `u(x) − u(y) − C_a(x − y)`; nonpositive
    /// means the characterization holds with slack.
    pub worst_violation: f64,
    pub worst_pair: ((f64, f64), (f64, f64)),
}

/// Sample node pairs (segments lie inside the rectangle automatically) and
/// test `u(x) − u(y) <= C_a(x − y)`.
pub fn lipschitz_characterization(
    u: &GridFunction,
    h: &Hamiltonian,
    level: f64,
    n_segments: usize,
    seed: u64,
) -> Result<CharacterizationReport, ConeError> {
    let table = ConeTable::build(h, level)?;
    let g = u.grid;
    let mut rng = Rng::new(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_pair = ((0.0, 0.0), (0.0, 0.0));
    for _ in 0..n_segments {
        let (i0, j0) = (rng.index(g.nx), rng.index(g.ny));
        let (i1, j1) = (rng.index(g.nx), rng.index(g.ny));
        if i0 == i1 && j0 == j1 {
            continue;
        }
        let p0 = Vec2::new(g.x(i0), g.y(j0));
        let p1 = Vec2::new(g.x(i1), g.y(j1));
        let gap = u.at(i0, j0) - u.at(i1, j1) - table.value(p0 - p1);
        if gap > worst {
            worst = gap;
            worst_pair = ((p0.x, p0.y), (p1.x, p1.y));
        }
    }
    Ok(CharacterizationReport {
        level,
        n_segments,
        seed,
        worst_violation: worst,
        worst_pair,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LipschitzBoundReport {
    /// max over cells of H(D_cell u).
    pub h_sup: f64,
    /// sup of H on the disk of radius L (polar sampling).
    pub disk_sup: f64,
    pub satisfied: bool,
}

/// Check `sup H(Du) <= sup_{|p| <= L} H(p)` for a solved field whose
/// boundary data is L-Lipschitz.
pub fn lipschitz_bound_check(
    u: &GridFunction,
    h: &Hamiltonian,
    l: f64,
) -> Result<LipschitzBoundReport, ConeError> {
    let h_sup = h_sup_on_cells(h, u, None)?;
    // H is convex with H(0)=0, so the sup over the disk sits on the circle
    let mut disk_sup = 0.0f64;
    for k in 0..1024 {
        let theta = std::f64::consts::TAU * k as f64 / 1024.0;
        disk_sup = disk_sup.max(h.eval(Vec2::from_angle(theta) * l)?);
    }
    Ok(LipschitzBoundReport {
        h_sup,
        disk_sup,
        satisfied: h_sup <= disk_sup * (1.0 + 1e-9) + 1e-12,
    })
}

// ---------------------------------------------------------------------------
// Comparison with cones
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub n_trials: usize,
    pub seed: u64,
    pub slack: f64,
    /// worst interior excess of `u − C_a(· − x0)` above its boundary max.
    pub worst_above: f64,
    /// worst interior deficit of `u + C_a(x0 − ·)` below its boundary min.
    pub worst_below: f64,
    pub violations: usize,
}

impl ComparisonReport {
    pub fn worst_excess(&self) -> f64 {
        self.worst_above.max(self.worst_below)
    }
}

/// For random node-aligned subrectangles V, vertices x0 outside V and
/// levels a: check that `max_V (u − C_a(·−x0))` is attained on ∂V within
/// `slack`, and the mirrored statement from below.
pub fn comparison_with_cones(
    u: &GridFunction,
    h: &Hamiltonian,
    n_trials: usize,
    slack: f64,
    seed: u64,
) -> Result<ComparisonReport, ConeError> {
    let g = u.grid;
    let a_scale = h_sup_on_cells(h, u, None)?.max(1e-12);
    let mut rng = Rng::new(seed);
    let mut worst_above = f64::NEG_INFINITY;
    let mut worst_below = f64::NEG_INFINITY;
    let mut violations = 0usize;
    for _ in 0..n_trials {
        // node-aligned subrectangle with at least one interior node
        let i0 = 1 + rng.index(g.nx - 4);
        let i1 = i0 + 2 + rng.index(g.nx - i0 - 2);
        let j0 = 1 + rng.index(g.ny - 4);
        let j1 = j0 + 2 + rng.index(g.ny - j0 - 2);
        // vertex outside V (rejection sampling over all nodes)
        let (vi, vj) = loop {
            let c = (rng.index(g.nx), rng.index(g.ny));
            if c.0 < i0 || c.0 > i1 || c.1 < j0 || c.1 > j1 {
                break c;
            }
        };
        let x0 = Vec2::new(g.x(vi), g.y(vj));
        // log-uniform levels: the nearly flat low-level cones are the
        // sharpest detectors of interior maxima, the steep high-level ones
        // exercise the other regime
        let level = a_scale * (rng.range((0.02f64).ln(), (2.0f64).ln())).exp();
        let table = ConeTable::build_n(h, level, COMPARISON_ANGLES)?;
        let mut interior_max = f64::NEG_INFINITY;
        let mut boundary_max = f64::NEG_INFINITY;
        let mut interior_min = f64::INFINITY;
        let mut boundary_min = f64::INFINITY;
        for j in j0..=j1 {
            for i in i0..=i1 {
                let p = Vec2::new(g.x(i), g.y(j));
                let above = u.at(i, j) - table.value(p - x0);
                let below = u.at(i, j) + table.value(x0 - p);
                let on_boundary = i == i0 || i == i1 || j == j0 || j == j1;
                if on_boundary {
                    boundary_max = boundary_max.max(above);
                    boundary_min = boundary_min.min(below);
                } else {
                    interior_max = interior_max.max(above);
                    interior_min = interior_min.min(below);
                }
            }
        }
        let excess_above = interior_max - boundary_max;
        let excess_below = boundary_min - interior_min;
        worst_above = worst_above.max(excess_above);
        worst_below = worst_below.max(excess_below);
        if excess_above > slack || excess_below > slack {
            violations += 1;
        }
    }
    Ok(ComparisonReport {
        n_trials,
        seed,
        slack,
        worst_above,
        worst_below,
        violations,
    })
}

/// Default comparison slack: twice the node-sampling resolution of the
/// field times its Lipschitz scale, plus a configured margin.
pub fn comparison_slack(u: &GridFunction, h: &Hamiltonian, extra: f64) -> Result<f64, ConeError> {
    let g = u.grid;
    let hmax = h_sup_on_cells(h, u, None)?;
    // |Du| <= sqrt(2 H / λ)
    let lam = match h {
        Hamiltonian::Quad { a } => a.eigenvalues().0,
        _ => h.lambda_profile(hmax.max(1e-9), 4)?.lambda_last(),
    };
    let lip = (2.0 * hmax / lam.max(1e-12)).sqrt();
    Ok(2.0 * g.hx().max(g.hy()) * lip + extra)
}

// ---------------------------------------------------------------------------
// McShane extension
// ---------------------------------------------------------------------------

/// Minimal L-Lipschitz extension of boundary data:
/// `v(x) = min_z [u(z) + L·|x−z|]` over boundary nodes. Errors when the
/// data itself violates the constant.
pub fn mcshane_extend(boundary: &GridFunction, l: f64) -> Result<GridFunction, ConeError> {
    let g = boundary.grid;
    let ring = g.boundary_nodes();
    for (a, &(i0, j0)) in ring.iter().enumerate() {
        let p0 = Vec2::new(g.x(i0), g.y(j0));
        for &(i1, j1) in ring.iter().skip(a + 1) {
            let p1 = Vec2::new(g.x(i1), g.y(j1));
            let dist = (p0 - p1).norm();
            let diff = (boundary.at(i0, j0) - boundary.at(i1, j1)).abs();
            if diff > l * dist + 1e-12 {
                return Err(ConeError::NotLipschitz {
                    l,
                    x0: p0.x,
                    y0: p0.y,
                    x1: p1.x,
                    y1: p1.y,
                    slope: diff / dist,
                });
            }
        }
    }
    let ring_data: Vec<(Vec2, f64)> = ring
        .iter()
        .map(|&(i, j)| (Vec2::new(g.x(i), g.y(j)), boundary.at(i, j)))
        .collect();
    let rows = exec::map_indexed(g.ny, |j| {
        let mut row = Vec::with_capacity(g.nx);
        for i in 0..g.nx {
            let p = Vec2::new(g.x(i), g.y(j));
            let mut best = f64::INFINITY;
            for (z, val) in &ring_data {
                best = best.min(val + l * (p - *z).norm());
            }
            row.push(best);
        }
        row
    });
    let mut values = Vec::with_capacity(g.len());
    for r in rows {
        values.extend(r);
    }
    Ok(GridFunction { grid: g, values })
}

// ---------------------------------------------------------------------------
// Cone approximation under mollification
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct ConeApproxRow {
    pub delta: f64,
    /// smallest ε making
    /// `C_{ã/(1+ε)} <= C^{H^δ}_{ã} <= C_{(1+ε)ã}` over the sampled (ã, x).
    pub eps_min: f64,
}

/// Sandwich check of the mollified cones against the original ones over
/// `ã ∈ [a/2, 2a]` and directions on the unit circle, per rung of the
/// δ-ladder; the reported ε should shrink with δ.
pub fn cone_approx_check(
    h: &Hamiltonian,
    delta_ladder: &[f64],
    a: f64,
    n_levels: usize,
    n_dirs: usize,
) -> Result<Vec<ConeApproxRow>, ConeError> {
    if a <= 0.0 {
        return Err(ConeError::NegativeLevel(a));
    }
    let levels: Vec<f64> = (0..n_levels)
        .map(|k| 0.5 * a + 1.5 * a * k as f64 / (n_levels.max(2) - 1) as f64)
        .collect();
    let dirs: Vec<Vec2> = (0..n_dirs)
        .map(|k| Vec2::from_angle(std::f64::consts::TAU * k as f64 / n_dirs as f64))
        .collect();
    let mut out = Vec::with_capacity(delta_ladder.len());
    for &delta in delta_ladder {
        let hd = crate::hamiltonian::mollify(h, delta)?;
        let mut vals = Vec::with_capacity(levels.len());
        for &lv in &levels {
            let t = ConeTable::build(&hd, lv)?;
            vals.push(dirs.iter().map(|&x| t.value(x)).collect::<Vec<_>>());
        }
        let sandwich_holds = |eps: f64| -> Result<bool, ConeError> {
            for (li, &lv) in levels.iter().enumerate() {
                let lo = ConeTable::build(h, lv / (1.0 + eps))?;
                let hi = ConeTable::build(h, lv * (1.0 + eps))?;
                for (di, &x) in dirs.iter().enumerate() {
                    let v = vals[li][di];
                    let tol = 1e-9 * (1.0 + v.abs());
                    if !(lo.value(x) - tol <= v && v <= hi.value(x) + tol) {
                        return Ok(false);
                    }
                }
            }
            Ok(true)
        };
        // bisection over ε (the predicate is monotone)
        let mut hi = 1e-4;
        while !sandwich_holds(hi)? {
            hi *= 2.0;
            if hi > 16.0 {
                break;
            }
        }
        let mut lo = 0.0;
        if sandwich_holds(0.0)? {
            hi = 0.0;
        } else {
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if sandwich_holds(mid)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo < 1e-10 * (1.0 + hi) {
                    break;
                }
            }
        }
        out.push(ConeApproxRow { delta, eps_min: hi });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::math::SymMat2;
    use crate::solver;
    use proptest::prelude::*;

    fn ellipse_oracle(a_mat: SymMat2, level: f64, x: Vec2) -> f64 {
        // support function of {½⟨Ap,p⟩ <= a}: sqrt(2a)·sqrt(⟨A⁻¹x, x⟩)
        let inv = a_mat.adjugate().scale(1.0 / a_mat.det());
        (2.0 * level).sqrt() * inv.quad_form(x).sqrt()
    }

    #[test]
    fn cone_matches_ellipse_support_function() {
        let a_mat = SymMat2::new(2.0, 0.0, 8.0);
        let h = Hamiltonian::quad(2.0, 0.0, 8.0).unwrap();
        let mut rng = crate::rng::Rng::new(3);
        for _ in 0..200 {
            let level = rng.range(0.1, 4.0);
            let x = Vec2::new(rng.range(-2.0, 2.0), rng.range(-2.0, 2.0));
            if x.norm() < 1e-3 {
                continue;
            }
            let exact = ellipse_oracle(a_mat, level, x);
            let v = cone_value(&h, level, x).unwrap();
            assert!(
                (v - exact).abs() <= 1e-6 * exact.abs().max(1e-9),
                "{v} vs {exact}"
            );
        }
    }

    #[test]
    fn cone_value_at_origin_and_level_zero() {
        let h = Hamiltonian::quartic();
        assert_eq!(cone_value(&h, 1.0, Vec2::ZERO).unwrap(), 0.0);
        assert_eq!(cone_value(&h, 0.0, Vec2::new(1.0, 2.0)).unwrap(), 0.0);
    }

    #[test]
    fn cone_brute_force_oracle_for_quartic() {
        // dense maximization over the sublevel set as the independent check
        let h = Hamiltonian::quartic();
        let level = 0.9;
        let x = Vec2::new(0.8, -0.45);
        let mut brute = 0.0f64;
        let n = 1500;
        for k in 0..n {
            let theta = std::f64::consts::TAU * k as f64 / n as f64;
            let r = h.sublevel_radius(level, theta).unwrap();
            brute = brute.max((Vec2::from_angle(theta) * r).dot(x));
        }
        let v = cone_value(&h, level, x).unwrap();
        assert!((v - brute).abs() <= 1e-6 * brute, "{v} vs {brute}");
        // the table path agrees to its interpolation accuracy
        let t = ConeTable::build(&h, level).unwrap();
        assert!((t.value(x) - brute).abs() <= 1e-5 * brute);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn cone_invariants(seed in 0u64..500) {
            let h = Hamiltonian::quad(2.0, 0.5, 3.0).unwrap();
            let mut rng = crate::rng::Rng::new(seed);
            let a1 = rng.range(0.2, 1.0);
            let a2 = a1 + rng.range(0.0, 2.0);
            let t1 = ConeTable::build(&h, a1).unwrap();
            let t2 = ConeTable::build(&h, a2).unwrap();
            for _ in 0..30 {
                let x = Vec2::new(rng.range(-2.0, 2.0), rng.range(-2.0, 2.0));
                let y = Vec2::new(rng.range(-2.0, 2.0), rng.range(-2.0, 2.0));
                let vx = t1.value(x);
                // positive homogeneity
                for t in [0.5, 2.0, 10.0] {
                    prop_assert!((t1.value(x * t) - t * vx).abs() <= 1e-9 * (1.0 + t * vx.abs()));
                }
                // monotonicity in the level
                prop_assert!(vx <= t2.value(x) + 1e-12);
                // subadditivity
                prop_assert!(t1.value(x + y) <= vx + t1.value(y) + 1e-8 * (1.0 + vx.abs()));
            }
        }
    }

    #[test]
    fn characterization_accepts_linear_at_its_level() {
        let g = Grid2D::unit(21);
        let h = Hamiltonian::quad(1.0, 0.0, 1.0).unwrap();
        let (a, b) = (0.6, -0.8);
        let u = GridFunction::from_fn(g, |x, y| a * x + b * y);
        let level = 0.5 * (a * a + b * b);
        let rep = lipschitz_characterization(&u, &h, level, 10_000, 7).unwrap();
        assert!(rep.worst_violation <= 1e-9, "{}", rep.worst_violation);
        // scaled-down data passes with strict margin
        let u2 = GridFunction::from_fn(g, |x, y| 0.5 * (a * x + b * y));
        let rep2 = lipschitz_characterization(&u2, &h, level, 10_000, 7).unwrap();
        assert!(rep2.worst_violation < -1e-3);
    }

    #[test]
    fn characterization_accepts_aronsson_profile() {
        let g = Grid2D::unit(33);
        let h = Hamiltonian::quad(1.0, 0.0, 1.0).unwrap();
        let u = GridFunction::from_fn(g, solver::aronsson_profile);
        // level: max of H(Dw) over the closed square is (8/9)·2
        let rep = lipschitz_characterization(&u, &h, 16.0 / 9.0, 10_000, 11).unwrap();
        assert!(
            rep.worst_violation <= 1e-4,
            "violation {}",
            rep.worst_violation
        );
    }

    #[test]
    fn comparison_accepts_linear() {
        // node-sampled maxima miss the continuum boundary maximum by
        // O(h·Lip), hence the designed slack
        let g = Grid2D::unit(21);
        let h = Hamiltonian::quad(1.0, 0.0, 1.0).unwrap();
        let u = GridFunction::from_fn(g, |x, y| 0.7 * x - 0.2 * y);
        let slack = comparison_slack(&u, &h, 1e-9).unwrap();
        let rep = comparison_with_cones(&u, &h, 300, slack, 13).unwrap();
        assert_eq!(rep.violations, 0, "worst {}", rep.worst_excess());
    }

    #[test]
    fn comparison_detects_interior_bump() {
        let g = Grid2D::unit(65);
        let h = Hamiltonian::quad(1.0, 0.0, 1.0).unwrap();
        let u = GridFunction::from_fn(g, |x, y| (-(x * x + y * y) / 0.09).exp());
        let slack = comparison_slack(&u, &h, 1e-6).unwrap();
        let rep = comparison_with_cones(&u, &h, 2000, slack, 29).unwrap();
        assert!(rep.violations > 0, "bump went undetected (slack {slack})");
        assert!(rep.worst_excess() > slack);
    }

    #[test]
    fn mcshane_constant_data() {
        // the minimal-cone envelope of constant data is the tent
        // c + L·dist(x, boundary nodes)
        let g = Grid2D::unit(17);
        let l = 2.0;
        let bc = solver::boundary_from_fn(g, |_, _| 3.5);
        let v = mcshane_extend(&bc, l).unwrap();
        for j in 0..g.ny {
            for i in 0..g.nx {
                let p = Vec2::new(g.x(i), g.y(j));
                let mut dist = f64::INFINITY;
                for &(bi, bj) in &g.boundary_nodes() {
                    dist = dist.min((p - Vec2::new(g.x(bi), g.y(bj))).norm());
                }
                assert!((v.at(i, j) - (3.5 + l * dist)).abs() < 1e-12);
            }
        }
        // boundary agreement and the Lipschitz constant
        for (i, j) in g.boundary_nodes() {
            assert_eq!(v.at(i, j), 3.5);
        }
    }

    #[test]
    fn mcshane_linear_data() {
        let g = Grid2D::unit(17);
        let (a, b) = (0.8, 0.6); // |DF| = 1
        let bc = solver::boundary_from_fn(g, |x, y| a * x + b * y);
        let v = mcshane_extend(&bc, 1.0).unwrap();
        let exact = GridFunction::from_fn(g, |x, y| a * x + b * y);
        // agrees on the boundary; the envelope dominates the linear and
        // exceeds it only by the node-sampling gap along the minimizing ray
        for (i, j) in g.boundary_nodes() {
            assert!((v.at(i, j) - exact.at(i, j)).abs() < 1e-12);
        }
        for k in 0..v.values.len() {
            assert!(v.values[k] >= exact.values[k] - 1e-12);
            assert!(v.values[k] <= exact.values[k] + 2.0 * g.hx());
        }
    }

    #[test]
    fn mcshane_two_point_envelope() {
        let g = Grid2D::unit(17);
        let mut bc = GridFunction::zeros(g);
        let l = 3.0;
        for (i, j) in g.boundary_nodes() {
            let p = Vec2::new(g.x(i), g.y(j));
            let c1 = 1.0 + l * (p - Vec2::new(-1.0, -1.0)).norm();
            let c2 = -2.0 + l * (p - Vec2::new(1.0, 1.0)).norm();
            bc.set(i, j, c1.min(c2));
        }
        let v = mcshane_extend(&bc, l).unwrap();
        // probe five interior nodes against the hand-computed envelope
        for (i, j) in [(4, 4), (8, 8), (12, 4), (4, 12), (8, 3)] {
            let p = Vec2::new(g.x(i), g.y(j));
            let mut expect = f64::INFINITY;
            for &(bi, bj) in &g.boundary_nodes() {
                let z = Vec2::new(g.x(bi), g.y(bj));
                expect = expect.min(bc.at(bi, bj) + l * (p - z).norm());
            }
            assert!((v.at(i, j) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn mcshane_rejects_non_lipschitz_data() {
        let g = Grid2D::unit(17);
        let bc = solver::boundary_from_fn(g, |x, y| 5.0 * x + y);
        assert!(matches!(
            mcshane_extend(&bc, 1.0),
            Err(ConeError::NotLipschitz { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn mcshane_output_is_lipschitz(seed in 0u64..100) {
            let g = Grid2D::unit(11);
            let l = 1.5;
            let mut rng = crate::rng::Rng::new(seed);
            let (cx, cy) = (rng.range(-0.5, 0.5), rng.range(-0.5, 0.5));
            let bc = solver::boundary_from_fn(g, |x, y| {
                l * ((x - cx).powi(2) + (y - cy).powi(2)).sqrt()
            });
            let v = mcshane_extend(&bc, l).unwrap();
            let mut r2 = crate::rng::Rng::new(seed ^ 0xabcd);
            for _ in 0..200 {
                let (i0, j0) = (r2.index(g.nx), r2.index(g.ny));
                let (i1, j1) = (r2.index(g.nx), r2.index(g.ny));
                let p0 = Vec2::new(g.x(i0), g.y(j0));
                let p1 = Vec2::new(g.x(i1), g.y(j1));
                prop_assert!(
                    (v.at(i0, j0) - v.at(i1, j1)).abs() <= l * (p0 - p1).norm() + 1e-12
                );
            }
        }
    }

    #[test]
    fn lipschitz_bound_equality_for_linear() {
        let g = Grid2D::unit(17);
        let h = Hamiltonian::quad(1.0, 0.0, 1.0).unwrap();
        let (a, b) = (0.6, 0.8); // |DF| = 1
        let u = GridFunction::from_fn(g, |x, y| a * x + b * y);
        let rep = lipschitz_bound_check(&u, &h, 1.0).unwrap();
        assert!(rep.satisfied);
        assert!((rep.h_sup - rep.disk_sup).abs() < 1e-9);
    }

    #[test]
    fn lipschitz_bound_detects_excess() {
        let g = Grid2D::unit(17);
        let h = Hamiltonian::quad(1.0, 0.0, 1.0).unwrap();
        let u = GridFunction::from_fn(g, |x, y| 2.0 * x + y);
        let rep = lipschitz_bound_check(&u, &h, 1.0).unwrap();
        assert!(!rep.satisfied);
    }

    #[test]
    fn cone_sandwich_tightens_with_delta() {
        let h = Hamiltonian::max_quad(SymMat2::diag(1.0, 2.0), SymMat2::diag(2.0, 1.0)).unwrap();
        let rows = cone_approx_check(&h, &[0.4, 0.2, 0.1], 1.0, 5, 16).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[2].eps_min <= rows[0].eps_min + 1e-9);
        // smooth quadratic: mollification changes nothing, ε stays ~0
        let hq = Hamiltonian::quad(1.0, 0.0, 1.0).unwrap();
        let rows_q = cone_approx_check(&hq, &[0.2, 0.1], 1.0, 3, 8).unwrap();
        for r in rows_q {
            assert!(r.eps_min < 1e-6, "{}", r.eps_min);
        }
    }
}
