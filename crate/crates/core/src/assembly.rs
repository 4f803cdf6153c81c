//! Cell-loop helpers shared by the formulation assemblers.

use crate::error::Result;
use crate::grid::FemSpace;
use crate::linalg::TripletBuilder;
use crate::problem::Problem;

/// Coefficients, inverse weights and data at one quadrature point.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PointData {
    pub w: f64,
    pub c: f64,
    pub c_x: f64,
    pub d: f64,
    /// `rho^{-1}`
    pub inv: f64,
    /// `rho_0^{-1}`
    pub inv0: f64,
    /// `rho_1^{-1}`
    pub inv1: f64,
    /// Observed value when the point lies in `q_T`.
    pub obs: Option<f64>,
}

impl PointData {
    /// `(1, 1, 1)` for the inverse weights when `unit` is set.
    pub fn unweighted(mut self) -> PointData {
        self.inv = 1.0;
        self.inv0 = 1.0;
        self.inv1 = 1.0;
        self
    }
}

pub(crate) fn point_data(pb: &Problem, cell: usize) -> Vec<PointData> {
    let nq = pb.quad.per_cell();
    let in_omega = pb.in_omega(cell);
    pb.quad
        .cell_points(cell)
        .iter()
        .enumerate()
        .map(|(q, p)| {
            let g = cell * nq + q;
            PointData {
                w: p.w,
                c: pb.coeffs.c(p.x),
                c_x: pb.coeffs.c_x(p.x),
                d: pb.coeffs.d(p.x, p.t),
                inv: pb.samples.multiplier[g],
                inv0: pb.samples.observation[g],
                inv1: pb.samples.flux[g],
                obs: if in_omega { pb.observed(cell, q) } else { None },
            }
        })
        .collect()
}

/// Global (block-offset) free index of every local DOF of `cell`.
pub(crate) fn local_map(space: &FemSpace, cell: usize, offset: usize) -> Vec<Option<usize>> {
    space.cell_dofs(cell).iter().map(|&d| space.free_index(d).map(|k| k + offset)).collect()
}

/// Dense local matrix accumulated over the quadrature points of one cell.
#[derive(Debug, Clone)]
pub(crate) struct LocalMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl LocalMatrix {
    pub fn new(rows: usize, cols: usize) -> LocalMatrix {
        LocalMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// `M += s u v^T`.
    pub fn rank1(&mut self, s: f64, u: &[f64], v: &[f64]) {
        if s == 0.0 {
            return;
        }
        for (i, ui) in u.iter().enumerate() {
            let a = s * ui;
            if a == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, vj) in row.iter_mut().zip(v) {
                *r += a * vj;
            }
        }
    }

    /// Symmetric scatter: only the upper triangle is read and mirrored, so the
    /// global matrix is bitwise symmetric.
    pub fn scatter_sym(&self, tb: &mut TripletBuilder, map: &[Option<usize>]) {
        for i in 0..self.rows {
            let Some(gi) = map[i] else { continue };
            for j in i..self.cols {
                let Some(gj) = map[j] else { continue };
                tb.push_sym(gi, gj, self.data[i * self.cols + j]);
            }
        }
    }

    pub fn scatter(&self, tb: &mut TripletBuilder, rmap: &[Option<usize>], cmap: &[Option<usize>]) {
        for (i, gi) in rmap.iter().enumerate() {
            let Some(gi) = gi else { continue };
            for (j, gj) in cmap.iter().enumerate() {
                let Some(gj) = gj else { continue };
                tb.push(*gi, *gj, self.data[i * self.cols + j]);
            }
        }
    }
}

pub(crate) fn scatter_vec(out: &mut [f64], map: &[Option<usize>], local: &[f64]) {
    for (g, v) in map.iter().zip(local) {
        if let Some(g) = g {
            out[*g] += v;
        }
    }
}

/// Runs `f` on every cell in order.
pub(crate) fn for_cells(pb: &Problem, mut f: impl FnMut(usize, &[PointData]) -> Result<()>) -> Result<()> {
    for cell in 0..pb.grid.n_cells() {
        let pts = point_data(pb, cell);
        f(cell, &pts)?;
    }
    Ok(())
}
