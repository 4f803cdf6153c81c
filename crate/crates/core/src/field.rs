//! Coefficient vectors on a finite element space and their evaluation.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{eval_basis, BasisKind, DerivLevel, FemSpace};

/// Point value of a field with optional derivatives.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PointValue {
    pub v: f64,
    pub dx: f64,
    pub dt: f64,
    pub dxx: f64,
}

/// Anything that can be sampled on `Q_T`.
pub trait SpaceTimeFunction {
    fn value(&self, x: f64, t: f64) -> f64;
}

impl<F: Fn(f64, f64) -> f64> SpaceTimeFunction for F {
    fn value(&self, x: f64, t: f64) -> f64 {
        self(x, t)
    }
}

/// Full DOF vector on a space; masked DOFs hold exactly zero.
#[derive(Debug, Clone)]
pub struct Field {
    pub space: Arc<FemSpace>,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(space: Arc<FemSpace>) -> Field {
        let n = space.n_dofs();
        Field { space, values: vec![0.0; n] }
    }

    /// Expands a vector over free DOFs.
    pub fn from_free(space: Arc<FemSpace>, free: &[f64]) -> Result<Field> {
        if free.len() != space.n_free() {
            return Err(Error::LayoutMismatch(format!(
                "expected {} free values, got {}",
                space.n_free(),
                free.len()
            )));
        }
        let mut values = vec![0.0; space.n_dofs()];
        for (k, &d) in space.free_dofs().iter().enumerate() {
            values[d] = free[k];
        }
        Ok(Field { space, values })
    }

    pub fn to_free(&self) -> Vec<f64> {
        self.space.free_dofs().iter().map(|&d| self.values[d]).collect()
    }

    /// Nodal (Q1) or cell-average-free (P0 at centres) interpolant.
    pub fn interpolate(space: Arc<FemSpace>, f: impl Fn(f64, f64) -> f64) -> Field {
        let g = space.grid;
        let mut values = vec![0.0; space.n_dofs()];
        match space.kind {
            BasisKind::Q1 => {
                for (node, v) in values.iter_mut().enumerate() {
                    let (i, j) = g.node_coords(node);
                    *v = f(g.node_x(i), g.node_t(j));
                }
            }
            BasisKind::P0 => {
                for (cell, v) in values.iter_mut().enumerate() {
                    let b = g.cell_bounds(cell);
                    *v = f(0.5 * (b.x0 + b.x1), 0.5 * (b.t0 + b.t1));
                }
            }
            BasisKind::HermiteC1 => {
                // Derivative DOFs by central differences; prefer `interpolate_hermite`.
                let e = 1e-6;
                for node in 0..g.n_nodes() {
                    let (i, j) = g.node_coords(node);
                    let (x, t) = (g.node_x(i), g.node_t(j));
                    values[4 * node] = f(x, t);
                    values[4 * node + 1] = (f(x + e, t) - f(x - e, t)) / (2.0 * e);
                    values[4 * node + 2] = (f(x, t + e) - f(x, t - e)) / (2.0 * e);
                    values[4 * node + 3] =
                        (f(x + e, t + e) - f(x - e, t + e) - f(x + e, t - e) + f(x - e, t - e)) / (4.0 * e * e);
                }
            }
        }
        let mut out = Field { space, values };
        out.apply_mask();
        out
    }

    /// Hermite interpolant from the value, `f_x`, `f_t` and `f_xt`.
    pub fn interpolate_hermite(
        space: Arc<FemSpace>,
        f: impl Fn(f64, f64) -> f64,
        fx: impl Fn(f64, f64) -> f64,
        ft: impl Fn(f64, f64) -> f64,
        fxt: impl Fn(f64, f64) -> f64,
    ) -> Result<Field> {
        if space.kind != BasisKind::HermiteC1 {
            return Err(Error::UnsupportedSpace("Hermite interpolation needs a Hermite space".into()));
        }
        let g = space.grid;
        let mut values = vec![0.0; space.n_dofs()];
        for node in 0..g.n_nodes() {
            let (i, j) = g.node_coords(node);
            let (x, t) = (g.node_x(i), g.node_t(j));
            values[4 * node] = f(x, t);
            values[4 * node + 1] = fx(x, t);
            values[4 * node + 2] = ft(x, t);
            values[4 * node + 3] = fxt(x, t);
        }
        let mut out = Field { space, values };
        out.apply_mask();
        Ok(out)
    }

    pub fn apply_mask(&mut self) {
        for d in 0..self.values.len() {
            if self.space.is_masked(d) {
                self.values[d] = 0.0;
            }
        }
    }

    /// Evaluation on a given cell at local coordinates.
    pub fn eval_local(&self, cell: usize, local: (f64, f64), level: DerivLevel) -> Result<PointValue> {
        let e = eval_basis(&self.space, cell, local, level)?;
        let dofs = self.space.cell_dofs(cell);
        let mut p = PointValue::default();
        for (k, &d) in dofs.iter().enumerate() {
            let c = self.values[d];
            p.v += c * e.value[k];
            if !e.dx.is_empty() {
                p.dx += c * e.dx[k];
                p.dt += c * e.dt[k];
            }
            if !e.dxx.is_empty() {
                p.dxx += c * e.dxx[k];
            }
        }
        Ok(p)
    }

    pub fn eval(&self, x: f64, t: f64, level: DerivLevel) -> Result<PointValue> {
        let (cell, s, tau) = self
            .space
            .grid
            .locate(x, t)
            .ok_or_else(|| Error::InvalidParameter(format!("point ({x}, {t}) outside the grid")))?;
        self.eval_local(cell, (s, tau), level)
    }
}

impl SpaceTimeFunction for Field {
    fn value(&self, x: f64, t: f64) -> f64 {
        self.eval(x, t, DerivLevel::Value).map(|p| p.v).unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, quadrature_points, Constraints};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn hermite_reproduces_bicubics(c in proptest::collection::vec(-2.0f64..2.0, 16)) {
            let g = build_grid(-0.5, 1.0, 0.8, 3, 4).unwrap();
            let sp = FemSpace::new(BasisKind::HermiteC1, g, Constraints::NONE);
            let c2 = c.clone();
            let poly = move |x: f64, t: f64, dx: usize, dt: usize| {
                let mut s = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        if a < dx || b < dt { continue; }
                        let fa: f64 = (0..dx).map(|k| (a - k) as f64).product();
                        let fb: f64 = (0..dt).map(|k| (b - k) as f64).product();
                        s += c2[4 * a + b] * fa * fb * x.powi((a - dx) as i32) * t.powi((b - dt) as i32);
                    }
                }
                s
            };
            let f = Field::interpolate_hermite(
                sp,
                |x, t| poly(x, t, 0, 0),
                |x, t| poly(x, t, 1, 0),
                |x, t| poly(x, t, 0, 1),
                |x, t| poly(x, t, 1, 1),
            ).unwrap();
            let q = quadrature_points(&g, 3).unwrap();
            for p in q.points() {
                let v = f.eval(p.x, p.t, DerivLevel::Second).unwrap();
                prop_assert!((v.v - poly(p.x, p.t, 0, 0)).abs() < 1e-11);
                prop_assert!((v.dx - poly(p.x, p.t, 1, 0)).abs() < 1e-10);
                prop_assert!((v.dt - poly(p.x, p.t, 0, 1)).abs() < 1e-10);
                prop_assert!((v.dxx - poly(p.x, p.t, 2, 0)).abs() < 1e-9);
            }
        }

        #[test]
        fn masked_dofs_stay_zero(v in proptest::collection::vec(-1.0f64..1.0, 1..200)) {
            let g = build_grid(0.0, 1.0, 1.0, 3, 3).unwrap();
            let sp = FemSpace::new(BasisKind::HermiteC1, g, Constraints::LATERAL_TERMINAL);
            let free: Vec<f64> = (0..sp.n_free()).map(|k| v[k % v.len()]).collect();
            let f = Field::from_free(sp.clone(), &free).unwrap();
            for d in 0..sp.n_dofs() {
                if sp.is_masked(d) { prop_assert_eq!(f.values[d], 0.0); }
            }
            // zero trace on the lateral boundary and at t = T
            for k in 0..=10 {
                let s = k as f64 / 10.0;
                prop_assert!(f.eval(0.0, 0.1 + 0.8 * s, DerivLevel::Value).unwrap().v.abs() < 1e-14);
                prop_assert!(f.eval(1.0, 0.1 + 0.8 * s, DerivLevel::Value).unwrap().v.abs() < 1e-14);
                prop_assert!(f.eval(s, 1.0, DerivLevel::Value).unwrap().v.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn q1_is_continuous_across_cells() {
        let g = build_grid(0.0, 1.0, 1.0, 2, 2).unwrap();
        let sp = FemSpace::new(BasisKind::Q1, g, Constraints::NONE);
        let f = Field::interpolate(sp, |x, t| 1.0 + 2.0 * x - t + 3.0 * x * t);
        let a = f.eval_local(0, (1.0, 0.3), DerivLevel::Value).unwrap().v;
        let b = f.eval_local(1, (0.0, 0.3), DerivLevel::Value).unwrap().v;
        assert!((a - b).abs() < 1e-15);
        assert!((a - 2.075).abs() < 1e-14);
    }
}
