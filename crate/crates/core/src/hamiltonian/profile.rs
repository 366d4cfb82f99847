//! Convexity/concavity moduli and the sublevel quotient profile.
//!
//! Sublevel sets of a convex coercive H with H(0) = 0 are star-shaped about
//! the origin, so dense polar sampling covers them: 256 directions, 128
//! radial points per direction, boundary radii by bisection to 1e-10.

use super::{mollify, Hamiltonian, HamiltonianError, Smoothness};
use crate::exec;
use crate::math::Vec2;
use crate::rng::Rng;

const N_DIRECTIONS: usize = 256;
const N_RADIAL: usize = 128;
const RADIUS_TOL: f64 = 1e-10;
const TAU_LADDER_LEN: u32 = 6;
const TAU_LADDER_EPS: f64 = 1e-3;

/// λ_H(R) (best strong-convexity modulus) and Λ_H(R) (best concavity
/// modulus) sampled on an increasing grid of sublevel heights.
#[derive(Clone, Debug)]
pub struct ConvexityProfile {
    pub r_samples: Vec<f64>,
    pub lambda: Vec<f64>,
    pub big_lambda: Vec<f64>,
}

impl ConvexityProfile {
    /// Value at the last sample, standing in for the R → ∞ limit when the
    /// profile is constant (quadratics, strongified tails).
    pub fn lambda_last(&self) -> f64 {
        *self.lambda.last().expect("non-empty profile")
    }

    pub fn big_lambda_last(&self) -> f64 {
        *self.big_lambda.last().expect("non-empty profile")
    }

    /// Profile value at height `r` (first sample with r_sample >= r, or the
    /// last one).
    pub fn lambda_at(&self, r: f64) -> f64 {
        self.value_at(&self.lambda, r)
    }

    pub fn big_lambda_at(&self, r: f64) -> f64 {
        self.value_at(&self.big_lambda, r)
    }

    fn value_at(&self, col: &[f64], r: f64) -> f64 {
        for (k, &rs) in self.r_samples.iter().enumerate() {
            if rs >= r {
                return col[k];
            }
        }
        *col.last().expect("non-empty profile")
    }
}

/// Sublevel infimum of the pointwise quotient; ≤ ½ by the origin value.
#[derive(Clone, Debug)]
pub struct TauProfile {
    pub r_samples: Vec<f64>,
    pub tau: Vec<f64>,
    /// Present when the value was bracketed along a mollification ladder
    /// (C⁰/C¹ kinds); the reported `tau` is then the last rung, not a
    /// certified limit.
    pub delta_ladder: Option<TauDeltaLadder>,
}

#[derive(Clone, Debug)]
pub struct TauDeltaLadder {
    pub deltas: Vec<f64>,
    /// `values[j][m]` = τ of the δ_j-mollification at height r_samples[m].
    pub values: Vec<Vec<f64>>,
    /// Set when some height fails to be monotone along the ladder.
    pub nonmonotone: bool,
}

impl TauProfile {
    pub fn tau_at(&self, r: f64) -> f64 {
        for (k, &rs) in self.r_samples.iter().enumerate() {
            if rs >= r {
                return self.tau[k];
            }
        }
        *self.tau.last().expect("non-empty profile")
    }
}

pub fn sublevel_radius(h: &Hamiltonian, level: f64, theta: f64) -> Result<f64, HamiltonianError> {
    if level <= 0.0 {
        return Ok(0.0);
    }
    let e = Vec2::from_angle(theta);
    if let Hamiltonian::Quad { a } = h {
        // H(r e) = r²·⟨Ae,e⟩/2
        return Ok((2.0 * level / a.quad_form(e)).sqrt());
    }
    let mut hi = 1.0;
    let mut tries = 0;
    while h.eval(e * hi)? <= level {
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(HamiltonianError::NotCoercive { theta });
        }
    }
    let mut lo = 0.0;
    while hi - lo > RADIUS_TOL * (1.0 + hi) {
        let mid = 0.5 * (lo + hi);
        if h.eval(e * mid)? <= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn sublevel_radius_max(h: &Hamiltonian, level: f64) -> Result<f64, HamiltonianError> {
    let mut worst = 0.0f64;
    for k in 0..N_DIRECTIONS {
        let theta = std::f64::consts::TAU * k as f64 / N_DIRECTIONS as f64;
        worst = worst.max(sublevel_radius(h, level, theta)?);
    }
    Ok(worst)
}

fn r_grid(r_max: f64, n_samples: usize) -> Vec<f64> {
    (1..=n_samples)
        .map(|m| r_max * m as f64 / n_samples as f64)
        .collect()
}

/// One polar sample: the Hamiltonian height and the quantities whose
/// sublevel extrema build the profiles.
struct Sample {
    h: f64,
    eig_lo: f64,
    eig_hi: f64,
    tau: f64,
}

fn scan_samples(h: &Hamiltonian, r_max: f64) -> Result<Vec<Sample>, HamiltonianError> {
    let per_dir = exec::map_indexed(N_DIRECTIONS, |k| -> Result<Vec<Sample>, HamiltonianError> {
        let theta = std::f64::consts::TAU * k as f64 / N_DIRECTIONS as f64;
        let rb = sublevel_radius(h, r_max, theta)?;
        let e = Vec2::from_angle(theta);
        let mut out = Vec::with_capacity(N_RADIAL);
        for t in 1..=N_RADIAL {
            let p = e * (rb * t as f64 / N_RADIAL as f64);
            let mut hv = h.eval(p)?;
            // the boundary sample solves H = r_max up to bisection
            // tolerance; snap it onto the level so it lands in its bucket
            if (hv - r_max).abs() <= 1e-9 * (1.0 + r_max) {
                hv = r_max;
            }
            let hs = h.hess(p)?;
            let (lo, hi) = hs.eigenvalues();
            let tau = match h.tau_tilde(p) {
                Ok(v) => v,
                Err(HamiltonianError::SmoothnessRequired { .. }) => f64::NAN,
                Err(e) => return Err(e),
            };
            out.push(Sample {
                h: hv,
                eig_lo: lo,
                eig_hi: hi,
                tau,
            });
        }
        Ok(out)
    });
    let mut samples = Vec::with_capacity(N_DIRECTIONS * N_RADIAL + 1);
    // the origin belongs to every sublevel set
    let h0 = h.hess(Vec2::ZERO)?;
    let (lo0, hi0) = h0.eigenvalues();
    samples.push(Sample {
        h: 0.0,
        eig_lo: lo0,
        eig_hi: hi0,
        tau: 0.5,
    });
    for dir in per_dir {
        samples.extend(dir?);
    }
    samples.sort_by(|a, b| a.h.total_cmp(&b.h));
    Ok(samples)
}

/// Prefix extrema over the H-sorted samples evaluated at each height of the
/// R grid; nestedness of sublevel sets makes the columns monotone by
/// construction.
fn prefix_profile(
    samples: &[Sample],
    rs: &[f64],
    pick: impl Fn(&Sample) -> f64,
    min_side: bool,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(rs.len());
    let mut k = 0usize;
    let mut acc = if min_side {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    for &r in rs {
        while k < samples.len() && samples[k].h <= r {
            let v = pick(&samples[k]);
            if !v.is_nan() {
                acc = if min_side { acc.min(v) } else { acc.max(v) };
            }
            k += 1;
        }
        out.push(acc);
    }
    out
}

pub fn lambda_profile(
    h: &Hamiltonian,
    r_max: f64,
    n_samples: usize,
) -> Result<ConvexityProfile, HamiltonianError> {
    let proper = r_max > 0.0 && n_samples > 0;
    if !proper {
        return Err(HamiltonianError::InvalidParameter(
            "profile needs r_max > 0 and at least one sample".into(),
        ));
    }
    let rs = r_grid(r_max, n_samples);
    if let Hamiltonian::Quad { a } = h {
        let (lo, hi) = a.eigenvalues();
        return Ok(ConvexityProfile {
            r_samples: rs.clone(),
            lambda: vec![lo; rs.len()],
            big_lambda: vec![hi; rs.len()],
        });
    }
    let samples = scan_samples(h, r_max)?;
    for s in &samples {
        if s.eig_lo < -1e-8 * (1.0 + s.eig_hi.abs()) {
            return Err(HamiltonianError::ShapeViolation {
                px: f64::NAN,
                py: f64::NAN,
                msg: format!("negative Hessian eigenvalue {} detected", s.eig_lo),
            });
        }
    }
    let lambda = prefix_profile(&samples, &rs, |s| s.eig_lo, true);
    let big_lambda = prefix_profile(&samples, &rs, |s| s.eig_hi, false);
    Ok(ConvexityProfile {
        r_samples: rs,
        lambda,
        big_lambda,
    })
}

pub fn tau_profile(
    h: &Hamiltonian,
    r_max: f64,
    n_samples: usize,
) -> Result<TauProfile, HamiltonianError> {
    let proper = r_max > 0.0 && n_samples > 0;
    if !proper {
        return Err(HamiltonianError::InvalidParameter(
            "profile needs r_max > 0 and at least one sample".into(),
        ));
    }
    let rs = r_grid(r_max, n_samples);
    if let Hamiltonian::Quad { .. } = h {
        return Ok(TauProfile {
            r_samples: rs.clone(),
            tau: vec![0.5; rs.len()],
            delta_ladder: None,
        });
    }
    if h.smoothness() >= Smoothness::C2Plus {
        let samples = scan_samples(h, r_max)?;
        let tau = prefix_profile(&samples, &rs, |s| s.tau, true);
        return Ok(TauProfile {
            r_samples: rs,
            tau,
            delta_ladder: None,
        });
    }
    // C0/C1: evaluate the profile of the mollified Hamiltonians along a
    // decreasing ladder and report the last rung
    let deltas: Vec<f64> = (1..=TAU_LADDER_LEN)
        .map(|j| 0.5f64.powi(j as i32))
        .collect();
    let mut values = Vec::with_capacity(deltas.len());
    for &d in &deltas {
        let hd = mollify(h, d)?;
        let prof = tau_profile(&hd, r_max + TAU_LADDER_EPS, n_samples)?;
        values.push(prof.tau);
    }
    let mut nonmonotone = false;
    for m in 0..n_samples {
        for j in 2..values.len() {
            let prev = values[j - 1][m];
            let cur = values[j][m];
            if (cur - prev).abs() > 0.25 * (values[j][m] - values[1][m]).abs() + 5e-3
                && (cur > prev) != (values[1][m] < values[0][m])
            {
                nonmonotone = true;
            }
        }
    }
    let tau = values.last().expect("nonempty ladder").clone();
    Ok(TauProfile {
        r_samples: rs,
        tau,
        delta_ladder: Some(TauDeltaLadder {
            deltas,
            values,
            nonmonotone,
        }),
    })
}

pub fn validate(
    h: &Hamiltonian,
    r_max: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<(), HamiltonianError> {
    let h0 = h.eval(Vec2::ZERO)?;
    if h0.abs() > 1e-12 {
        return Err(HamiltonianError::ShapeViolation {
            px: 0.0,
            py: 0.0,
            msg: format!("value at the origin is {h0}, expected 0"),
        });
    }
    // modulus to test against: branch minimum for the kinked kind, scanned
    // profile otherwise, with headroom for sampling error
    let lambda = match h {
        Hamiltonian::Quad { a } => a.eigenvalues().0,
        Hamiltonian::MaxQuad { a, b } => a.eigenvalues().0.min(b.eigenvalues().0),
        Hamiltonian::Sampled(_) => 0.0,
        _ => lambda_profile(h, r_max, 4)?.lambda_last(),
    };
    let lambda = 0.9 * lambda;
    let mut rng = Rng::new(seed);
    let draw = |rng: &mut Rng| -> Result<Vec2, HamiltonianError> {
        let theta = rng.range(0.0, std::f64::consts::TAU);
        let rb = sublevel_radius(h, r_max, theta)?;
        Ok(Vec2::from_angle(theta) * (rb * rng.uniform()))
    };
    let g =
        |p: Vec2| -> Result<f64, HamiltonianError> { Ok(h.eval(p)? - 0.5 * lambda * p.norm_sq()) };
    for _ in 0..n_pairs {
        let p = draw(&mut rng)?;
        let q = draw(&mut rng)?;
        if h.eval(p)? < -1e-12 || h.eval(q)? < -1e-12 {
            return Err(HamiltonianError::ShapeViolation {
                px: p.x,
                py: p.y,
                msg: "negative value".into(),
            });
        }
        let mid = (p + q) * 0.5;
        let lhs = g(mid)?;
        let rhs = 0.5 * (g(p)? + g(q)?);
        let scale = 1.0 + lhs.abs().max(rhs.abs());
        if lhs > rhs + 1e-9 * scale {
            return Err(HamiltonianError::ShapeViolation {
                px: mid.x,
                py: mid.y,
                msg: format!("midpoint convexity violated by {}", lhs - rhs),
            });
        }
    }
    Ok(())
}
