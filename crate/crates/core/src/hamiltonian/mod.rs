//! Convex Hamiltonians H(p) with convexity/concavity profiles, the
//! pointwise quotient controlling the admissible Sobolev exponents,
//! mollification, and strong convexification.
//!
//! Every variant satisfies the normalization H(0) = min H = 0 and is
//! immutable after construction, so values can be shared freely across
//! parallel workers.

mod mollify;
mod profile;
mod sampled;

pub use mollify::{mollify, strongify, Mollified, Strongified};
pub use profile::{ConvexityProfile, TauDeltaLadder, TauProfile};
pub use sampled::SampledTable;

use crate::math::{SymMat2, SymTensor3, Vec2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HamiltonianError {
    #[error("point ({0}, {1}) is outside the sampled table hull")]
    OutOfDomain(f64, f64),
    #[error("operation needs {needed:?} smoothness but the Hamiltonian is {got:?}")]
    SmoothnessRequired { needed: Smoothness, got: Smoothness },
    #[error("Hessian numerically singular at ({px}, {py}): condition number {cond:e}")]
    SingularHessian { px: f64, py: f64, cond: f64 },
    #[error("convexity violated near ({px}, {py}): {msg}")]
    ShapeViolation { px: f64, py: f64, msg: String },
    #[error("sublevel set is unbounded along direction {theta} (not coercive)")]
    NotCoercive { theta: f64 },
    #[error(
        "minimizer search for the mollified Hamiltonian left |p| <= {bound} (found ({px}, {py}))"
    )]
    ShiftOutOfRange { px: f64, py: f64, bound: f64 },
    #[error("strong convexification failed: {0}")]
    Construction(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Smoothness {
    C0,
    C1,
    C2Plus,
}

/// How `grad`/`hess` values are produced for a given variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DerivativeMode {
    /// Closed-form derivatives.
    Exact,
    /// Exact on each smooth branch; undefined on the kink set.
    BranchwiseExact,
    /// Central finite differences with step `1e-4 * (1 + |p|)`.
    FiniteDifference,
    /// Derivatives of the mollifier transferred under the convolution.
    Quadrature,
}

/// Convex energy density on the plane.
#[derive(Clone, Debug)]
pub enum Hamiltonian {
    /// ½⟨Ap, p⟩ with A symmetric positive definite.
    Quad { a: SymMat2 },
    /// ¼|p|⁴ + ½|p|².
    Quartic,
    /// ¼(p₁⁴ + 4p₂⁴) + ½(p₁² + 2p₂²).
    AnisoQuartic,
    /// max(½⟨Ap,p⟩, ½⟨Bp,p⟩): convex with a C⁰ kink along the branch
    /// crossing set.
    MaxQuad { a: SymMat2, b: SymMat2 },
    /// Tabulated values on a uniform p-grid; bilinear evaluation,
    /// finite-difference derivatives.
    Sampled(SampledTable),
    /// Smooth approximation by compactly supported convolution, shifted so
    /// the minimum is 0 at the origin.
    Mollified(Box<Mollified>),
    /// Equal to the inner Hamiltonian on a prescribed sublevel set and
    /// globally strongly convex/concave outside it.
    Strongified(Box<Strongified>),
}

pub const FD_STEP_BASE: f64 = 1e-4;

#[inline]
pub(crate) fn fd_step(p: Vec2) -> f64 {
    FD_STEP_BASE * (1.0 + p.norm())
}

impl Hamiltonian {
    pub fn quad(a11: f64, a12: f64, a22: f64) -> Result<Self, HamiltonianError> {
        let a = SymMat2::new(a11, a12, a22);
        let (lo, hi) = a.eigenvalues();
        if !(lo > 0.0 && hi.is_finite()) {
            return Err(HamiltonianError::InvalidParameter(format!(
                "quadratic matrix must be positive definite, eigenvalues ({lo}, {hi})"
            )));
        }
        Ok(Hamiltonian::Quad { a })
    }

    pub fn quartic() -> Self {
        Hamiltonian::Quartic
    }

    pub fn aniso_quartic() -> Self {
        Hamiltonian::AnisoQuartic
    }

    pub fn max_quad(a: SymMat2, b: SymMat2) -> Result<Self, HamiltonianError> {
        for m in [a, b] {
            let (lo, _) = m.eigenvalues();
            if lo <= 0.0 {
                return Err(HamiltonianError::InvalidParameter(
                    "max-quad branches must be positive definite".into(),
                ));
            }
        }
        Ok(Hamiltonian::MaxQuad { a, b })
    }

    pub fn name(&self) -> String {
        match self {
            Hamiltonian::Quad { a } => format!("quad({},{},{})", a.xx, a.xy, a.yy),
            Hamiltonian::Quartic => "quartic".into(),
            Hamiltonian::AnisoQuartic => "aniso-quartic".into(),
            Hamiltonian::MaxQuad { .. } => "maxquad".into(),
            Hamiltonian::Sampled(_) => "sampled".into(),
            Hamiltonian::Mollified(m) => {
                format!("mollified(delta={}, {})", m.delta, m.inner.name())
            }
            Hamiltonian::Strongified(s) => format!("strongified({})", s.inner.name()),
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        match self {
            Hamiltonian::Quad { .. } | Hamiltonian::Quartic | Hamiltonian::AnisoQuartic => {
                Smoothness::C2Plus
            }
            Hamiltonian::MaxQuad { .. } => Smoothness::C0,
            Hamiltonian::Sampled(_) => Smoothness::C0,
            Hamiltonian::Mollified(_) => Smoothness::C2Plus,
            Hamiltonian::Strongified(s) => s.inner.smoothness(),
        }
    }

    pub fn derivative_mode(&self) -> DerivativeMode {
        match self {
            Hamiltonian::Quad { .. } | Hamiltonian::Quartic | Hamiltonian::AnisoQuartic => {
                DerivativeMode::Exact
            }
            Hamiltonian::MaxQuad { .. } => DerivativeMode::BranchwiseExact,
            Hamiltonian::Sampled(_) => DerivativeMode::FiniteDifference,
            Hamiltonian::Mollified(_) => DerivativeMode::Quadrature,
            Hamiltonian::Strongified(s) => s.inner.derivative_mode(),
        }
    }

    /// H(p). Nonnegative with H(0) = 0 for every variant.
    pub fn eval(&self, p: Vec2) -> Result<f64, HamiltonianError> {
        match self {
            Hamiltonian::Quad { a } => Ok(0.5 * a.quad_form(p)),
            Hamiltonian::Quartic => {
                let s = p.norm_sq();
                Ok(0.25 * s * s + 0.5 * s)
            }
            Hamiltonian::AnisoQuartic => {
                let (x2, y2) = (p.x * p.x, p.y * p.y);
                Ok(0.25 * (x2 * x2 + 4.0 * y2 * y2) + 0.5 * (x2 + 2.0 * y2))
            }
            Hamiltonian::MaxQuad { a, b } => Ok((0.5 * a.quad_form(p)).max(0.5 * b.quad_form(p))),
            Hamiltonian::Sampled(t) => t.eval(p),
            Hamiltonian::Mollified(m) => m.eval(p),
            Hamiltonian::Strongified(s) => s.eval(p),
        }
    }

    /// D_p H. Exact for closed forms; branch gradient for the C⁰ kink;
    /// finite differences for sampled tables.
    pub fn grad(&self, p: Vec2) -> Result<Vec2, HamiltonianError> {
        match self {
            Hamiltonian::Quad { a } => Ok(a.mul_vec(p)),
            Hamiltonian::Quartic => Ok(p * (p.norm_sq() + 1.0)),
            Hamiltonian::AnisoQuartic => Ok(Vec2::new(
                p.x * p.x * p.x + p.x,
                4.0 * p.y * p.y * p.y + 2.0 * p.y,
            )),
            Hamiltonian::MaxQuad { a, b } => {
                let m = if 0.5 * a.quad_form(p) >= 0.5 * b.quad_form(p) {
                    a
                } else {
                    b
                };
                Ok(m.mul_vec(p))
            }
            Hamiltonian::Sampled(_) => self.grad_fd(p),
            Hamiltonian::Mollified(m) => m.grad(p),
            Hamiltonian::Strongified(s) => s.grad(p),
        }
    }

    /// D²_pp H.
    pub fn hess(&self, p: Vec2) -> Result<SymMat2, HamiltonianError> {
        match self {
            Hamiltonian::Quad { a } => Ok(*a),
            Hamiltonian::Quartic => {
                let s = p.norm_sq();
                Ok(SymMat2::diag(s + 1.0, s + 1.0) + SymMat2::outer(p).scale(2.0))
            }
            Hamiltonian::AnisoQuartic => {
                Ok(SymMat2::diag(3.0 * p.x * p.x + 1.0, 12.0 * p.y * p.y + 2.0))
            }
            Hamiltonian::MaxQuad { a, b } => {
                if 0.5 * a.quad_form(p) >= 0.5 * b.quad_form(p) {
                    Ok(*a)
                } else {
                    Ok(*b)
                }
            }
            Hamiltonian::Sampled(_) => self.hess_fd(p),
            Hamiltonian::Mollified(m) => m.hess(p),
            Hamiltonian::Strongified(s) => s.hess(p),
        }
    }

    /// Third derivatives, available for the closed-form registry kinds
    /// used by the identity checks.
    pub fn third(&self, p: Vec2) -> Option<SymTensor3> {
        match self {
            Hamiltonian::Quad { .. } => Some(SymTensor3::default()),
            Hamiltonian::Quartic => Some(SymTensor3 {
                c111: 6.0 * p.x,
                c112: 2.0 * p.y,
                c122: 2.0 * p.x,
                c222: 6.0 * p.y,
            }),
            Hamiltonian::AnisoQuartic => Some(SymTensor3 {
                c111: 6.0 * p.x,
                c112: 0.0,
                c122: 0.0,
                c222: 24.0 * p.y,
            }),
            _ => None,
        }
    }

    fn grad_fd(&self, p: Vec2) -> Result<Vec2, HamiltonianError> {
        let h = fd_step(p);
        let fxp = self.eval(Vec2::new(p.x + h, p.y))?;
        let fxm = self.eval(Vec2::new(p.x - h, p.y))?;
        let fyp = self.eval(Vec2::new(p.x, p.y + h))?;
        let fym = self.eval(Vec2::new(p.x, p.y - h))?;
        Ok(Vec2::new((fxp - fxm) / (2.0 * h), (fyp - fym) / (2.0 * h)))
    }

    fn hess_fd(&self, p: Vec2) -> Result<SymMat2, HamiltonianError> {
        let h = fd_step(p);
        let f0 = self.eval(p)?;
        let fxp = self.eval(Vec2::new(p.x + h, p.y))?;
        let fxm = self.eval(Vec2::new(p.x - h, p.y))?;
        let fyp = self.eval(Vec2::new(p.x, p.y + h))?;
        let fym = self.eval(Vec2::new(p.x, p.y - h))?;
        let fpp = self.eval(Vec2::new(p.x + h, p.y + h))?;
        let fpm = self.eval(Vec2::new(p.x + h, p.y - h))?;
        let fmp = self.eval(Vec2::new(p.x - h, p.y + h))?;
        let fmm = self.eval(Vec2::new(p.x - h, p.y - h))?;
        let h2 = h * h;
        Ok(SymMat2::new(
            (fxp - 2.0 * f0 + fxm) / h2,
            (fpp - fpm - fmp + fmm) / (4.0 * h2),
            (fyp - 2.0 * f0 + fym) / h2,
        ))
    }

    /// Pointwise quotient `H(p) / ⟨[D²H(p)]⁻¹ D H(p), D H(p)⟩`, set to ½ at
    /// p = 0 where it extends continuously. Can exceed ½ away from the
    /// origin; its sublevel infimum never does.
    pub fn tau_tilde(&self, p: Vec2) -> Result<f64, HamiltonianError> {
        if self.smoothness() < Smoothness::C2Plus {
            return Err(HamiltonianError::SmoothnessRequired {
                needed: Smoothness::C2Plus,
                got: self.smoothness(),
            });
        }
        if p.norm() == 0.0 {
            return Ok(0.5);
        }
        if let Hamiltonian::Quad { .. } = self {
            return Ok(0.5);
        }
        let b = self.hess(p)?;
        let cond = b.condition();
        if !cond.is_finite() || cond > 1e14 {
            return Err(HamiltonianError::SingularHessian {
                px: p.x,
                py: p.y,
                cond,
            });
        }
        let g = self.grad(p)?;
        let inv_g = b.solve(g).ok_or(HamiltonianError::SingularHessian {
            px: p.x,
            py: p.y,
            cond,
        })?;
        let denom = inv_g.dot(g);
        let h = self.eval(p)?;
        if denom <= 0.0 {
            // gradient vanishes away from the minimum only if convexity fails
            if h <= 1e-14 {
                return Ok(0.5);
            }
            return Err(HamiltonianError::ShapeViolation {
                px: p.x,
                py: p.y,
                msg: format!("nonpositive curvature quotient denominator {denom}"),
            });
        }
        Ok(h / denom)
    }

    /// Convexity/concavity moduli on sublevel sets up to `r_max`.
    pub fn lambda_profile(
        &self,
        r_max: f64,
        n_samples: usize,
    ) -> Result<ConvexityProfile, HamiltonianError> {
        profile::lambda_profile(self, r_max, n_samples)
    }

    /// Sublevel-set infimum of [`Hamiltonian::tau_tilde`]; for C⁰/C¹ kinds
    /// the value is bracketed along a mollification ladder and flagged.
    pub fn tau_profile(
        &self,
        r_max: f64,
        n_samples: usize,
    ) -> Result<TauProfile, HamiltonianError> {
        profile::tau_profile(self, r_max, n_samples)
    }

    /// Radius at which `H(r·e_θ) = level`, found by bisection with a
    /// doubling bracket.
    pub fn sublevel_radius(&self, level: f64, theta: f64) -> Result<f64, HamiltonianError> {
        profile::sublevel_radius(self, level, theta)
    }

    /// Largest sublevel radius over a dense set of directions.
    pub fn sublevel_radius_max(&self, level: f64) -> Result<f64, HamiltonianError> {
        profile::sublevel_radius_max(self, level)
    }

    /// Probabilistic shape validation: H(0) = 0, H >= 0, and midpoint
    /// convexity of `H - λ/2|p|²` on the sublevel set `{H <= r_max}` for
    /// the reported λ.
    pub fn validate(&self, r_max: f64, n_pairs: usize, seed: u64) -> Result<(), HamiltonianError> {
        profile::validate(self, r_max, n_pairs, seed)
    }
}
