//! Closed-form test functions with hand-coded derivatives up to third
//! order, so identity checks never inherit finite-difference error.

use crate::math::{SymMat2, SymTensor3, Vec2};

#[derive(Clone, Debug)]
pub enum TestFn {
    /// a·x + b·y + c
    Linear { a: f64, b: f64, c: f64 },
    /// ½⟨Sx, x⟩ + ⟨l, x⟩ + c
    Quadratic { s: SymMat2, l: Vec2, c: f64 },
    /// x² − y²
    SaddleXY,
    /// x·y
    ProductXY,
    /// |x|^{4/3} − |y|^{4/3}; derivatives valid off the coordinate axes
    Aronsson,
    /// sin x · sin y
    SinSin,
    /// sin x · cos y
    SinCos,
}

impl TestFn {
    pub fn name(&self) -> &'static str {
        match self {
            TestFn::Linear { .. } => "linear",
            TestFn::Quadratic { .. } => "quadratic",
            TestFn::SaddleXY => "saddle",
            TestFn::ProductXY => "xy",
            TestFn::Aronsson => "aronsson",
            TestFn::SinSin => "sinsin",
            TestFn::SinCos => "sincos",
        }
    }

    /// Whether derivatives are defined at `x` (the Aronsson profile has
    /// cube-root singularities on the axes).
    pub fn valid_at(&self, x: Vec2) -> bool {
        match self {
            TestFn::Aronsson => x.x.abs() > 1e-6 && x.y.abs() > 1e-6,
            _ => true,
        }
    }

    pub fn value(&self, p: Vec2) -> f64 {
        match self {
            TestFn::Linear { a, b, c } => a * p.x + b * p.y + c,
            TestFn::Quadratic { s, l, c } => 0.5 * s.quad_form(p) + l.dot(p) + c,
            TestFn::SaddleXY => p.x * p.x - p.y * p.y,
            TestFn::ProductXY => p.x * p.y,
            TestFn::Aronsson => p.x.abs().powf(4.0 / 3.0) - p.y.abs().powf(4.0 / 3.0),
            TestFn::SinSin => p.x.sin() * p.y.sin(),
            TestFn::SinCos => p.x.sin() * p.y.cos(),
        }
    }

    pub fn grad(&self, p: Vec2) -> Vec2 {
        match self {
            TestFn::Linear { a, b, .. } => Vec2::new(*a, *b),
            TestFn::Quadratic { s, l, .. } => s.mul_vec(p) + *l,
            TestFn::SaddleXY => Vec2::new(2.0 * p.x, -2.0 * p.y),
            TestFn::ProductXY => Vec2::new(p.y, p.x),
            TestFn::Aronsson => Vec2::new(
                (4.0 / 3.0) * p.x.signum() * p.x.abs().powf(1.0 / 3.0),
                -(4.0 / 3.0) * p.y.signum() * p.y.abs().powf(1.0 / 3.0),
            ),
            TestFn::SinSin => Vec2::new(p.x.cos() * p.y.sin(), p.x.sin() * p.y.cos()),
            TestFn::SinCos => Vec2::new(p.x.cos() * p.y.cos(), -p.x.sin() * p.y.sin()),
        }
    }

    pub fn hess(&self, p: Vec2) -> SymMat2 {
        match self {
            TestFn::Linear { .. } => SymMat2::default(),
            TestFn::Quadratic { s, .. } => *s,
            TestFn::SaddleXY => SymMat2::diag(2.0, -2.0),
            TestFn::ProductXY => SymMat2::new(0.0, 1.0, 0.0),
            TestFn::Aronsson => SymMat2::diag(
                (4.0 / 9.0) * p.x.abs().powf(-2.0 / 3.0),
                -(4.0 / 9.0) * p.y.abs().powf(-2.0 / 3.0),
            ),
            TestFn::SinSin => SymMat2::new(
                -p.x.sin() * p.y.sin(),
                p.x.cos() * p.y.cos(),
                -p.x.sin() * p.y.sin(),
            ),
            TestFn::SinCos => SymMat2::new(
                -p.x.sin() * p.y.cos(),
                -p.x.cos() * p.y.sin(),
                -p.x.sin() * p.y.cos(),
            ),
        }
    }

    pub fn third(&self, p: Vec2) -> SymTensor3 {
        match self {
            TestFn::Linear { .. }
            | TestFn::Quadratic { .. }
            | TestFn::SaddleXY
            | TestFn::ProductXY => SymTensor3::default(),
            TestFn::Aronsson => SymTensor3 {
                c111: -(8.0 / 27.0) * p.x.signum() * p.x.abs().powf(-5.0 / 3.0),
                c112: 0.0,
                c122: 0.0,
                c222: (8.0 / 27.0) * p.y.signum() * p.y.abs().powf(-5.0 / 3.0),
            },
            TestFn::SinSin => SymTensor3 {
                c111: -p.x.cos() * p.y.sin(),
                c112: -p.x.sin() * p.y.cos(),
                c122: -p.x.cos() * p.y.sin(),
                c222: -p.x.sin() * p.y.cos(),
            },
            TestFn::SinCos => SymTensor3 {
                c111: -p.x.cos() * p.y.cos(),
                c112: p.x.sin() * p.y.sin(),
                c122: -p.x.cos() * p.y.cos(),
                c222: p.x.sin() * p.y.sin(),
            },
        }
    }

    /// Parse a registry name, e.g. `linear:1,-2,0` or `sinsin`.
    pub fn from_name(spec: &str) -> Option<TestFn> {
        let (head, tail) = match spec.split_once(':') {
            Some((h, t)) => (h, Some(t)),
            None => (spec, None),
        };
        let nums = |t: Option<&str>| -> Option<Vec<f64>> {
            t.map(|s| {
                s.split(',')
                    .map(|x| x.trim().parse().ok())
                    .collect::<Option<Vec<_>>>()
            })
            .unwrap_or(Some(vec![]))
        };
        match head {
            "linear" => {
                let v = nums(tail)?;
                if v.len() == 3 {
                    Some(TestFn::Linear {
                        a: v[0],
                        b: v[1],
                        c: v[2],
                    })
                } else if v.len() == 2 {
                    Some(TestFn::Linear {
                        a: v[0],
                        b: v[1],
                        c: 0.0,
                    })
                } else {
                    None
                }
            }
            "quadratic" => {
                let v = nums(tail)?;
                if v.len() == 3 {
                    Some(TestFn::Quadratic {
                        s: SymMat2::new(v[0], v[1], v[2]),
                        l: Vec2::ZERO,
                        c: 0.0,
                    })
                } else {
                    None
                }
            }
            "saddle" => Some(TestFn::SaddleXY),
            "xy" => Some(TestFn::ProductXY),
            "aronsson" => Some(TestFn::Aronsson),
            "sinsin" => Some(TestFn::SinSin),
            "sincos" => Some(TestFn::SinCos),
            _ => None,
        }
    }
}
