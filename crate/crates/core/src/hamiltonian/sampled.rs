//! Hamiltonians given by a table of values on a uniform p-grid.

use super::HamiltonianError;
use crate::grid::GridFunction;
use crate::math::Vec2;

/// Bilinear interpolation of tabulated values; evaluation outside the table
/// rectangle is an out-of-domain error. The table is renormalized at
/// construction so that the origin value is exactly 0.
#[derive(Clone, Debug)]
pub struct SampledTable {
    table: GridFunction,
}

impl SampledTable {
    pub fn new(mut table: GridFunction) -> Result<Self, HamiltonianError> {
        let g = table.grid;
        if !(g.x_min < 0.0 && g.x_max > 0.0 && g.y_min < 0.0 && g.y_max > 0.0) {
            return Err(HamiltonianError::InvalidParameter(
                "sampled table must contain the origin in its interior".into(),
            ));
        }
        let at_origin = Self::bilinear(&table, Vec2::ZERO);
        for v in &mut table.values {
            *v -= at_origin;
        }
        Ok(SampledTable { table })
    }

    pub fn hull(&self) -> crate::grid::Rect {
        self.table.grid.rect()
    }

    fn bilinear(f: &GridFunction, p: Vec2) -> f64 {
        let g = f.grid;
        let fx = (p.x - g.x_min) / g.hx();
        let fy = (p.y - g.y_min) / g.hy();
        let i = (fx.floor() as usize).min(g.nx - 2);
        let j = (fy.floor() as usize).min(g.ny - 2);
        let tx = fx - i as f64;
        let ty = fy - j as f64;
        let v00 = f.at(i, j);
        let v10 = f.at(i + 1, j);
        let v01 = f.at(i, j + 1);
        let v11 = f.at(i + 1, j + 1);
        v00 * (1.0 - tx) * (1.0 - ty)
            + v10 * tx * (1.0 - ty)
            + v01 * (1.0 - tx) * ty
            + v11 * tx * ty
    }

    pub fn eval(&self, p: Vec2) -> Result<f64, HamiltonianError> {
        let r = self.hull();
        if !r.contains(p.x, p.y) {
            return Err(HamiltonianError::OutOfDomain(p.x, p.y));
        }
        Ok(Self::bilinear(&self.table, p))
    }
}
