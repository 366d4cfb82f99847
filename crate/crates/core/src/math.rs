//! Small fixed-size linear algebra for points and symmetric 2×2 matrices.

use std::ops::{Add, Mul, Neg, Sub};

/// Point/vector in the plane.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    #[inline]
    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    /// Unit vector at angle `theta` from the positive x-axis.
    #[inline]
    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    #[inline]
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SymMat2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SymMat2 {
    pub const IDENTITY: SymMat2 = SymMat2 {
        xx: 1.0,
        xy: 0.0,
        yy: 1.0,
    };

    #[inline]
    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        SymMat2 { xx, xy, yy }
    }

    #[inline]
    pub fn diag(a: f64, b: f64) -> Self {
        SymMat2::new(a, 0.0, b)
    }

    /// Rank-one outer product v vᵀ.
    #[inline]
    pub fn outer(v: Vec2) -> Self {
        SymMat2::new(v.x * v.x, v.x * v.y, v.y * v.y)
    }

    #[inline]
    pub fn mul_vec(self, v: Vec2) -> Vec2 {
        Vec2::new(self.xx * v.x + self.xy * v.y, self.xy * v.x + self.yy * v.y)
    }

    #[inline]
    pub fn det(self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    #[inline]
    pub fn trace(self) -> f64 {
        self.xx + self.yy
    }

    /// Adjugate (cofactor transpose): `A·adj(A) = det(A)·I`.
    #[inline]
    pub fn adjugate(self) -> SymMat2 {
        SymMat2::new(self.yy, -self.xy, self.xx)
    }

    /// Eigenvalues ordered `(min, max)`.
    #[inline]
    pub fn eigenvalues(self) -> (f64, f64) {
        let mean = 0.5 * (self.xx + self.yy);
        let disc = (0.5 * (self.xx - self.yy)).hypot(self.xy);
        (mean - disc, mean + disc)
    }

    /// Condition number |λ|max/|λ|min; infinite for singular matrices.
    pub fn condition(self) -> f64 {
        let (lo, hi) = self.eigenvalues();
        let (lo, hi) = (lo.abs(), hi.abs());
        let big = lo.max(hi);
        let small = lo.min(hi);
        if small == 0.0 {
            f64::INFINITY
        } else {
            big / small
        }
    }

    /// Solve `A z = rhs`; `None` when the determinant vanishes.
    pub fn solve(self, rhs: Vec2) -> Option<Vec2> {
        let d = self.det();
        if d == 0.0 {
            return None;
        }
        Some(self.adjugate().mul_vec(rhs) * (1.0 / d))
    }

    /// Quadratic form ⟨A v, v⟩.
    #[inline]
    pub fn quad_form(self, v: Vec2) -> f64 {
        self.mul_vec(v).dot(v)
    }

    #[inline]
    pub fn scale(self, s: f64) -> SymMat2 {
        SymMat2::new(self.xx * s, self.xy * s, self.yy * s)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }
}

impl Add for SymMat2 {
    type Output = SymMat2;
    #[inline]
    fn add(self, o: SymMat2) -> SymMat2 {
        SymMat2::new(self.xx + o.xx, self.xy + o.xy, self.yy + o.yy)
    }
}

/// Fully symmetric third-order tensor in two variables; `cijk` holds the
/// value for any permutation of the indices (i,j,k).
#[derive(Clone, Copy, Debug, Default)]
pub struct SymTensor3 {
    pub c111: f64,
    pub c112: f64,
    pub c122: f64,
    pub c222: f64,
}

impl SymTensor3 {
    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        match i + j + k {
            0 => self.c111,
            1 => self.c112,
            2 => self.c122,
            3 => self.c222,
            _ => unreachable!(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_diag() {
        let (lo, hi) = SymMat2::diag(2.0, 8.0).eigenvalues();
        assert_eq!(lo, 2.0);
        assert_eq!(hi, 8.0);
    }

    #[test]
    fn adjugate_identity() {
        let a = SymMat2::new(3.0, 1.0, 2.0);
        let adj = a.adjugate();
        // A · adj(A) = det(A) I
        let v = Vec2::new(0.7, -1.3);
        let lhs = a.mul_vec(adj.mul_vec(v));
        let rhs = v * a.det();
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn solve_roundtrip() {
        let a = SymMat2::new(4.0, 1.0, 3.0);
        let rhs = Vec2::new(1.0, 2.0);
        let z = a.solve(rhs).unwrap();
        assert!((a.mul_vec(z) - rhs).norm() < 1e-12);
    }
}
