//! Compactly supported mollification and strong convexification.
//!
//! The mollifier is the classical bump `η(ξ) = c·exp(-1/(1-|ξ|²))` on the
//! unit disk, discretized by a 32×32 tensor Gauss–Legendre rule on
//! `[-1,1]²` and normalized so the discrete mass is exactly 1. Derivatives
//! of a convolution are obtained either by convolving the inner
//! derivatives (when they exist a.e.) or by transferring the derivative
//! onto the mollifier, which stays correct across C⁰ kinks.

use super::{Hamiltonian, HamiltonianError, Smoothness};
use crate::math::{SymMat2, Vec2};
use std::sync::OnceLock;

const GL_POINTS: usize = 32;
const SHIFT_GRAD_TOL: f64 = 1e-10;
const SHIFT_RANGE_FACTOR: f64 = 16.0;

struct QuadNode {
    xi: Vec2,
    w0: f64,
    w1: Vec2,
    w2: SymMat2,
}

struct MollifierQuad {
    nodes: Vec<QuadNode>,
}

fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // evaluate P_n and P_n' by recurrence
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((x, w));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn bump(xi: Vec2) -> f64 {
    let s = xi.norm_sq();
    if s >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s)).exp()
    }
}

fn bump_grad(xi: Vec2) -> Vec2 {
    let s = xi.norm_sq();
    if s >= 1.0 {
        return Vec2::ZERO;
    }
    let e = (-1.0 / (1.0 - s)).exp();
    let gprime = -1.0 / ((1.0 - s) * (1.0 - s));
    xi * (2.0 * e * gprime)
}

fn bump_hess(xi: Vec2) -> SymMat2 {
    let s = xi.norm_sq();
    if s >= 1.0 {
        return SymMat2::default();
    }
    let e = (-1.0 / (1.0 - s)).exp();
    let om = 1.0 - s;
    let g1 = -1.0 / (om * om);
    let g2 = -2.0 / (om * om * om);
    // D²η = η [ 4 ξξᵀ (g1² + g2) + 2 g1 I ]
    SymMat2::outer(xi).scale(4.0 * e * (g1 * g1 + g2)) + SymMat2::diag(2.0 * e * g1, 2.0 * e * g1)
}

fn mollifier() -> &'static MollifierQuad {
    static QUAD: OnceLock<MollifierQuad> = OnceLock::new();
    QUAD.get_or_init(|| {
        let gl = gauss_legendre(GL_POINTS);
        let mut raw = Vec::with_capacity(GL_POINTS * GL_POINTS);
        let mut mass = 0.0;
        for &(x, wx) in &gl {
            for &(y, wy) in &gl {
                let xi = Vec2::new(x, y);
                let w = wx * wy;
                let b = bump(xi);
                mass += w * b;
                raw.push((xi, w));
            }
        }
        let c = 1.0 / mass;
        let mut nodes: Vec<QuadNode> = raw
            .into_iter()
            .map(|(xi, w)| QuadNode {
                xi,
                w0: c * w * bump(xi),
                w1: bump_grad(xi) * (c * w),
                w2: bump_hess(xi).scale(c * w),
            })
            .collect();
        // calibrate the derivative weights so constants are annihilated
        // exactly; otherwise the defect is amplified by the value scale of
        // whatever is being convolved
        let s1 = nodes.iter().fold(Vec2::ZERO, |acc, n| acc + n.w1);
        let s2 = nodes.iter().fold(SymMat2::default(), |acc, n| acc + n.w2);
        for n in &mut nodes {
            n.w1 = n.w1 - s1 * n.w0;
            n.w2 = n.w2 + s2.scale(-n.w0);
        }
        MollifierQuad { nodes }
    })
}

/// `η_δ ∗ H` shifted so the minimum sits at the origin with value 0.
#[derive(Clone, Debug)]
pub struct Mollified {
    pub inner: Hamiltonian,
    pub delta: f64,
    /// Minimizer of the raw convolution (the shift applied to arguments).
    pub shift: Vec2,
    /// Raw convolution value at the minimizer (subtracted from values).
    pub offset: f64,
}

impl Mollified {
    fn conv0(inner: &Hamiltonian, delta: f64, q: Vec2) -> Result<f64, HamiltonianError> {
        let m = mollifier();
        let mut s = 0.0;
        for n in &m.nodes {
            if n.w0 == 0.0 {
                continue;
            }
            s += n.w0 * inner.eval(q - n.xi * delta)?;
        }
        Ok(s)
    }

    fn conv_grad(inner: &Hamiltonian, delta: f64, q: Vec2) -> Result<Vec2, HamiltonianError> {
        let m = mollifier();
        let mut s = Vec2::ZERO;
        if inner.smoothness() >= Smoothness::C1 || matches!(inner, Hamiltonian::MaxQuad { .. }) {
            // a.e. derivative of a Lipschitz function convolves directly
            for n in &m.nodes {
                if n.w0 == 0.0 {
                    continue;
                }
                s = s + inner.grad(q - n.xi * delta)? * n.w0;
            }
        } else {
            for n in &m.nodes {
                if n.w1 == Vec2::ZERO {
                    continue;
                }
                s = s + n.w1 * (inner.eval(q - n.xi * delta)? / delta);
            }
        }
        Ok(s)
    }

    fn conv_hess(inner: &Hamiltonian, delta: f64, q: Vec2) -> Result<SymMat2, HamiltonianError> {
        let m = mollifier();
        let mut s = SymMat2::default();
        if inner.smoothness() >= Smoothness::C2Plus {
            for n in &m.nodes {
                if n.w0 == 0.0 {
                    continue;
                }
                s = s + inner.hess(q - n.xi * delta)?.scale(n.w0);
            }
        } else {
            // second derivative transferred to the mollifier: captures the
            // curvature concentrated on kink sets
            let d2 = delta * delta;
            for n in &m.nodes {
                s = s + n.w2.scale(inner.eval(q - n.xi * delta)? / d2);
            }
        }
        Ok(s)
    }

    pub fn eval(&self, p: Vec2) -> Result<f64, HamiltonianError> {
        Ok(Self::conv0(&self.inner, self.delta, p + self.shift)? - self.offset)
    }

    pub fn grad(&self, p: Vec2) -> Result<Vec2, HamiltonianError> {
        Self::conv_grad(&self.inner, self.delta, p + self.shift)
    }

    pub fn hess(&self, p: Vec2) -> Result<SymMat2, HamiltonianError> {
        Self::conv_hess(&self.inner, self.delta, p + self.shift)
    }

    /// Raw (unshifted) convolution, exposed for direct quadrature checks.
    pub fn raw_eval(&self, q: Vec2) -> Result<f64, HamiltonianError> {
        Self::conv0(&self.inner, self.delta, q)
    }
}

/// Build the smooth approximation of `h` at width `delta`, shifted so that
/// the value at the origin is exactly 0.
pub fn mollify(h: &Hamiltonian, delta: f64) -> Result<Hamiltonian, HamiltonianError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(HamiltonianError::InvalidParameter(format!(
            "mollification width must lie in (0, 1], got {delta}"
        )));
    }
    let shift = locate_minimizer(h, delta)?;
    let bound = SHIFT_RANGE_FACTOR * delta;
    if shift.norm() > bound {
        return Err(HamiltonianError::ShiftOutOfRange {
            px: shift.x,
            py: shift.y,
            bound,
        });
    }
    let offset = Mollified::conv0(h, delta, shift)?;
    Ok(Hamiltonian::Mollified(Box::new(Mollified {
        inner: h.clone(),
        delta,
        shift,
        offset,
    })))
}

/// Coordinate descent with golden-section line search from the origin; the
/// raw convolution is strictly convex so the minimizer is unique.
fn locate_minimizer(h: &Hamiltonian, delta: f64) -> Result<Vec2, HamiltonianError> {
    let f = |q: Vec2| Mollified::conv0(h, delta, q);
    let mut q = Vec2::ZERO;
    for _ in 0..200 {
        let g = Mollified::conv_grad(h, delta, q)?;
        if g.norm() <= SHIFT_GRAD_TOL {
            return Ok(q);
        }
        for axis in 0..2 {
            let dir = if axis == 0 {
                Vec2::new(1.0, 0.0)
            } else {
                Vec2::new(0.0, 1.0)
            };
            let line = |t: f64| f(q + dir * t);
            let t = golden_min(line, -2.0 * delta, 2.0 * delta)?;
            q = q + dir * t;
        }
    }
    let g = Mollified::conv_grad(h, delta, q)?;
    if g.norm() <= 1e3 * SHIFT_GRAD_TOL {
        Ok(q)
    } else {
        Err(HamiltonianError::ShiftOutOfRange {
            px: q.x,
            py: q.y,
            bound: SHIFT_RANGE_FACTOR * delta,
        })
    }
}

fn golden_min(
    f: impl Fn(f64) -> Result<f64, HamiltonianError>,
    mut a: f64,
    mut b: f64,
) -> Result<f64, HamiltonianError> {
    // expand the bracket while the minimum sits on an endpoint
    for _ in 0..60 {
        let fa = f(a)?;
        let fb = f(b)?;
        let fm = f(0.5 * (a + b))?;
        if fm <= fa && fm <= fb {
            break;
        }
        if fa < fb {
            a = 2.0 * a - 0.5 * (a + b);
        } else {
            b = 2.0 * b - 0.5 * (a + b);
        }
    }
    let phi = 0.5 * (3.0 - 5.0f64.sqrt());
    let mut x1 = a + phi * (b - a);
    let mut x2 = b - phi * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..80 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = a + phi * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = b - phi * (b - a);
            f2 = f(x2)?;
        }
        if (b - a).abs() < 1e-14 {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

// ---------------------------------------------------------------------------
// Strong convexification
// ---------------------------------------------------------------------------

/// 9th-order smoothstep (four vanishing derivatives at both ends).
#[inline]
fn smoothstep4(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let t4 = t * t * t * t;
        t4 * t * (126.0 + t * (-420.0 + t * (540.0 + t * (-315.0 + t * 70.0))))
    }
}

#[inline]
fn smoothstep4_d1(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        0.0
    } else {
        let a = t * (1.0 - t);
        630.0 * a * a * a * a
    }
}

#[inline]
fn smoothstep4_d2(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        0.0
    } else {
        let a = t * (1.0 - t);
        2520.0 * a * a * a * (1.0 - 2.0 * t)
    }
}

/// `H·η + k·(φ̃ ∗ η̃)`: keeps H untouched on its `{H <= R+1}` sublevel set
/// and replaces the behaviour at infinity by a stiff quadratic, making the
/// convexity/concavity moduli finite globally.
#[derive(Clone, Debug)]
pub struct Strongified {
    pub inner: Hamiltonian,
    pub level: f64,
    /// Radius of a ball containing `{H <= level + 1}`; all construction
    /// radii are multiples of it.
    pub rho: f64,
    /// Stiffness of the quadratic tail.
    pub k: f64,
}

impl Strongified {
    /// Cutoff: 1 on |p| <= 4ρ, 0 beyond 8ρ.
    fn eta(&self, p: Vec2) -> f64 {
        1.0 - smoothstep4((p.norm() - 4.0 * self.rho) / (4.0 * self.rho))
    }

    fn eta_grad(&self, p: Vec2) -> Vec2 {
        let r = p.norm();
        if r <= 4.0 * self.rho || r >= 8.0 * self.rho || r == 0.0 {
            return Vec2::ZERO;
        }
        let t = (r - 4.0 * self.rho) / (4.0 * self.rho);
        p * (-smoothstep4_d1(t) / (4.0 * self.rho) / r)
    }

    fn eta_hess(&self, p: Vec2) -> SymMat2 {
        let r = p.norm();
        if r <= 4.0 * self.rho || r >= 8.0 * self.rho || r == 0.0 {
            return SymMat2::default();
        }
        let w = 4.0 * self.rho;
        let t = (r - w) / w;
        let s1 = smoothstep4_d1(t) / w;
        let s2 = smoothstep4_d2(t) / (w * w);
        let rr = SymMat2::outer(p).scale(1.0 / (r * r));
        let tangential = SymMat2::diag(1.0 / r, 1.0 / r) + rr.scale(-1.0 / r);
        rr.scale(-s2) + tangential.scale(-s1)
    }

    /// Quadratic tail vanishing on |q| <= 2ρ.
    fn phi_tail(&self, q: Vec2) -> f64 {
        (q.norm_sq() - 4.0 * self.rho * self.rho).max(0.0)
    }

    fn psi(&self, p: Vec2) -> f64 {
        if p.norm() <= self.rho {
            return 0.0;
        }
        let m = mollifier();
        let mut s = 0.0;
        for n in &m.nodes {
            if n.w0 == 0.0 {
                continue;
            }
            s += n.w0 * self.phi_tail(p - n.xi * self.rho);
        }
        s
    }

    fn psi_grad(&self, p: Vec2) -> Vec2 {
        if p.norm() <= self.rho {
            return Vec2::ZERO;
        }
        let m = mollifier();
        let mut s = Vec2::ZERO;
        for n in &m.nodes {
            s = s + n.w1 * (self.phi_tail(p - n.xi * self.rho) / self.rho);
        }
        s
    }

    fn psi_hess(&self, p: Vec2) -> SymMat2 {
        if p.norm() <= self.rho {
            return SymMat2::default();
        }
        let m = mollifier();
        let r2 = self.rho * self.rho;
        let mut s = SymMat2::default();
        for n in &m.nodes {
            s = s + n.w2.scale(self.phi_tail(p - n.xi * self.rho) / r2);
        }
        s
    }

    pub fn eval(&self, p: Vec2) -> Result<f64, HamiltonianError> {
        let eta = self.eta(p);
        let base = if eta == 0.0 {
            0.0
        } else {
            self.inner.eval(p)? * eta
        };
        Ok(base + self.k * self.psi(p))
    }

    pub fn grad(&self, p: Vec2) -> Result<Vec2, HamiltonianError> {
        let eta = self.eta(p);
        let mut out = self.psi_grad(p) * self.k;
        if eta != 0.0 {
            out = out + self.inner.grad(p)? * eta + self.eta_grad(p) * self.inner.eval(p)?;
        }
        Ok(out)
    }

    pub fn hess(&self, p: Vec2) -> Result<SymMat2, HamiltonianError> {
        let eta = self.eta(p);
        let mut out = self.psi_hess(p).scale(self.k);
        if eta != 0.0 {
            let hv = self.inner.eval(p)?;
            let g = self.inner.grad(p)?;
            let eg = self.eta_grad(p);
            let cross = SymMat2::new(2.0 * g.x * eg.x, g.x * eg.y + g.y * eg.x, 2.0 * g.y * eg.y);
            out = out + self.inner.hess(p)?.scale(eta) + cross + self.eta_hess(p).scale(hv);
        }
        Ok(out)
    }

    fn eta_part_hess_norm(&self, p: Vec2) -> Result<f64, HamiltonianError> {
        let eta = self.eta(p);
        let m = if eta == 0.0 {
            self.eta_hess(p).scale(0.0)
        } else {
            let hv = self.inner.eval(p)?;
            let g = self.inner.grad(p)?;
            let eg = self.eta_grad(p);
            let cross = SymMat2::new(2.0 * g.x * eg.x, g.x * eg.y + g.y * eg.x, 2.0 * g.y * eg.y);
            self.inner.hess(p)?.scale(eta) + cross + self.eta_hess(p).scale(hv)
        };
        let (lo, hi) = m.eigenvalues();
        Ok(lo.abs().max(hi.abs()))
    }
}

/// Replace `h` outside `{h <= level + 1}` by a stiff quadratic tail while
/// keeping it bitwise unchanged on that sublevel set.
pub fn strongify(h: &Hamiltonian, level: f64) -> Result<Hamiltonian, HamiltonianError> {
    if level < 1.0 {
        return Err(HamiltonianError::InvalidParameter(format!(
            "strongification level must be >= 1, got {level}"
        )));
    }
    let rho = h.sublevel_radius_max(level + 1.0)? * (1.0 + 1e-9) + 1e-12;
    let mut s = Strongified {
        inner: h.clone(),
        level,
        rho,
        k: 1.0,
    };
    // stiffness from the largest Hessian of H·η on the cutoff collar
    let mut m = 0.0f64;
    for ia in 0..64 {
        let theta = std::f64::consts::TAU * ia as f64 / 64.0;
        let e = Vec2::from_angle(theta);
        for ir in 0..=32 {
            let r = 4.0 * rho + (8.0 - 4.0) * rho * ir as f64 / 32.0;
            m = m.max(s.eta_part_hess_norm(e * r)?);
        }
    }
    s.k = 1.0 + 8.0 * m;
    // agreement check on the protected sublevel set
    for ia in 0..32 {
        let theta = std::f64::consts::TAU * ia as f64 / 32.0;
        let rb = h.sublevel_radius(level + 1.0, theta)?;
        for fr in [0.25, 0.5, 0.75, 0.999] {
            let p = Vec2::from_angle(theta) * (rb * fr);
            let a = s.eval(p)?;
            let b = h.eval(p)?;
            if (a - b).abs() > 1e-12 * (1.0 + b.abs()) {
                return Err(HamiltonianError::Construction(format!(
                    "tail construction leaked into the protected set at ({}, {})",
                    p.x, p.y
                )));
            }
        }
    }
    Ok(Hamiltonian::Strongified(Box::new(s)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mollifier_mass_is_one() {
        let m = mollifier();
        let mass: f64 = m.nodes.iter().map(|n| n.w0).sum();
        assert!((mass - 1.0).abs() < 1e-14);
        // odd moments vanish by symmetry
        let mx: f64 = m.nodes.iter().map(|n| n.w0 * n.xi.x).sum();
        assert!(mx.abs() < 1e-15);
    }

    #[test]
    fn mollified_quadratic_is_exact_after_shift() {
        // for quadratic H the convolution is H + const, so the shifted
        // version reproduces H
        let h = Hamiltonian::quad(2.0, 0.3, 1.0).unwrap();
        let hd = mollify(&h, 0.1).unwrap();
        for p in [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, -0.5),
            Vec2::new(-2.0, 1.5),
        ] {
            let a = hd.eval(p).unwrap();
            let b = h.eval(p).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert_eq!(hd.eval(Vec2::ZERO).unwrap(), 0.0);
    }

    #[test]
    fn raw_convolution_matches_second_moment_formula() {
        // η_δ ∗ H = H + ½δ²·tr(A)·m₂ for quadratic H
        let h = Hamiltonian::quad(2.0, 0.0, 8.0).unwrap();
        let delta = 0.2;
        let hd = mollify(&h, delta).unwrap();
        let m = mollifier();
        let m2: f64 = m.nodes.iter().map(|n| n.w0 * n.xi.x * n.xi.x).sum();
        if let Hamiltonian::Mollified(md) = &hd {
            for p in [Vec2::new(0.7, -0.3), Vec2::new(-1.0, 2.0)] {
                let raw = md.raw_eval(p).unwrap();
                let expect = h.eval(p).unwrap() + 0.5 * delta * delta * 10.0 * m2;
                assert!((raw - expect).abs() < 1e-12, "{raw} vs {expect}");
            }
        } else {
            panic!("expected mollified variant");
        }
    }

    #[test]
    fn mollified_maxquad_is_smooth_and_convex() {
        let h = Hamiltonian::max_quad(SymMat2::diag(1.0, 3.0), SymMat2::diag(3.0, 1.0)).unwrap();
        let hd = mollify(&h, 0.05).unwrap();
        assert_eq!(hd.smoothness(), Smoothness::C2Plus);
        assert_eq!(hd.eval(Vec2::ZERO).unwrap(), 0.0);
        // Hessian positive definite on the kink diagonal
        let p = Vec2::new(0.5, 0.5);
        let (lo, _) = hd.hess(p).unwrap().eigenvalues();
        assert!(lo > 0.9, "kink curvature missing: {lo}");
        // uniform convergence on a compact set as delta drops
        let sup_err = |delta: f64| {
            let hd = mollify(&h, delta).unwrap();
            let mut worst = 0.0f64;
            for i in -8..=8 {
                for j in -8..=8 {
                    let p = Vec2::new(i as f64 / 4.0, j as f64 / 4.0);
                    worst = worst.max((hd.eval(p).unwrap() - h.eval(p).unwrap()).abs());
                }
            }
            worst
        };
        let (e1, e2, e3) = (sup_err(0.2), sup_err(0.1), sup_err(0.05));
        assert!(e1 > e2 && e2 > e3, "{e1} {e2} {e3}");
    }

    #[test]
    fn strongified_agrees_inside_and_bounds_tail() {
        let h = Hamiltonian::quartic();
        let hs = strongify(&h, 1.0).unwrap();
        // exact agreement on {H <= 2}
        for ia in 0..16 {
            let theta = std::f64::consts::TAU * ia as f64 / 16.0;
            let rb = h.sublevel_radius(2.0, theta).unwrap();
            let p = Vec2::from_angle(theta) * (rb * 0.9);
            assert_eq!(hs.eval(p).unwrap(), h.eval(p).unwrap());
        }
        assert_eq!(hs.eval(Vec2::ZERO).unwrap(), 0.0);
        // far away the Hessian is bounded (quartic's is not)
        let far = Vec2::new(100.0, 7.0);
        let (lo, hi) = hs.hess(far).unwrap().eigenvalues();
        assert!(lo > 0.0, "tail lost convexity: {lo}");
        assert!(hi < 1e6, "tail Hessian unbounded: {hi}");
        let (_, hi_h) = h.hess(far).unwrap().eigenvalues();
        assert!(hi < hi_h, "tail should be flatter than the quartic");
    }

    #[test]
    fn strongified_quadratic_keeps_strong_shape() {
        let h = Hamiltonian::quad(2.0, 0.0, 8.0).unwrap();
        let hs = strongify(&h, 1.0).unwrap();
        for p in [Vec2::new(0.1, 0.2), Vec2::new(0.5, -0.1)] {
            assert_eq!(hs.eval(p).unwrap(), h.eval(p).unwrap());
        }
        let (lo, hi) = hs.hess(Vec2::new(30.0, -40.0)).unwrap().eigenvalues();
        assert!(lo > 0.0 && hi.is_finite());
    }
}
