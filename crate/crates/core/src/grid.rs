//! Uniform space-time grids, Gauss quadrature and the finite element spaces
//! built on them.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Uniform tensor grid of `Q_T = (x_min, x_max) x (0, t_final)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub t_final: f64,
    pub nx: usize,
    pub nt: usize,
}

/// Axis-aligned bounds of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellBounds {
    pub x0: f64,
    pub x1: f64,
    pub t0: f64,
    pub t1: f64,
}

impl SpaceTimeGrid {
    pub fn hx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn ht(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.nt
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.nt + 1)
    }

    /// Cells are numbered time-major: `c = j * nx + i`.
    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_coords(&self, node: usize) -> (usize, usize) {
        (node % (self.nx + 1), node / (self.nx + 1))
    }

    pub fn node_x(&self, i: usize) -> f64 {
        if i == self.nx {
            self.x_max
        } else {
            self.x_min + i as f64 * self.hx()
        }
    }

    pub fn node_t(&self, j: usize) -> f64 {
        if j == self.nt {
            self.t_final
        } else {
            j as f64 * self.ht()
        }
    }

    pub fn cell_bounds(&self, cell: usize) -> CellBounds {
        let (i, j) = self.cell_coords(cell);
        CellBounds {
            x0: self.node_x(i),
            x1: self.node_x(i + 1),
            t0: self.node_t(j),
            t1: self.node_t(j + 1),
        }
    }

    /// Cell containing `(x, t)` and the local coordinates in `[0, 1]^2`.
    /// Points on shared edges go to the cell with the larger index.
    pub fn locate(&self, x: f64, t: f64) -> Option<(usize, f64, f64)> {
        let tol = 1e-12 * (1.0 + self.x_max.abs().max(self.x_min.abs()));
        if x < self.x_min - tol || x > self.x_max + tol || t < -tol || t > self.t_final + tol {
            return None;
        }
        let fx = ((x - self.x_min) / self.hx()).max(0.0);
        let ft = (t / self.ht()).max(0.0);
        let i = (fx.floor() as usize).min(self.nx - 1);
        let j = (ft.floor() as usize).min(self.nt - 1);
        Some((self.cell_index(i, j), (fx - i as f64).clamp(0.0, 1.0), (ft - j as f64).clamp(0.0, 1.0)))
    }

    /// The grid refined by integer factors in each direction.
    pub fn refined(&self, fx: usize, ft: usize) -> SpaceTimeGrid {
        SpaceTimeGrid { nx: self.nx * fx, nt: self.nt * ft, ..*self }
    }

    pub fn same_layout(&self, other: &SpaceTimeGrid) -> bool {
        self.nx == other.nx
            && self.nt == other.nt
            && self.x_min == other.x_min
            && self.x_max == other.x_max
            && self.t_final == other.t_final
    }
}

pub fn build_grid(x_min: f64, x_max: f64, t_final: f64, nx: usize, nt: usize) -> Result<SpaceTimeGrid> {
    if !(x_min.is_finite() && x_max.is_finite() && t_final.is_finite()) {
        return Err(Error::InvalidExtent("non-finite bounds".into()));
    }
    if x_min >= x_max {
        return Err(Error::InvalidExtent(format!("x_min = {x_min} must be below x_max = {x_max}")));
    }
    if t_final <= 0.0 {
        return Err(Error::InvalidExtent(format!("final time {t_final} must be positive")));
    }
    if nx < 1 || nt < 1 {
        return Err(Error::InvalidExtent(format!("need at least one cell per axis, got {nx} x {nt}")));
    }
    Ok(SpaceTimeGrid { x_min, x_max, t_final, nx, nt })
}

/// Gauss-Legendre abscissae and weights mapped to `[0, 1]`.
pub fn gauss_legendre(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (xi, w): (&[f64], &[f64]) = match order {
        2 => (&[-0.577_350_269_189_625_8, 0.577_350_269_189_625_8], &[1.0, 1.0]),
        3 => (
            &[-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4],
            &[5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0],
        ),
        4 => (
            &[-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6],
            &[0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9],
        ),
        _ => return Err(Error::UnsupportedOrder(order)),
    };
    Ok((xi.iter().map(|v| 0.5 * (1.0 + v)).collect(), w.iter().map(|v| 0.5 * v).collect()))
}

/// One quadrature point in physical coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub x: f64,
    pub t: f64,
    pub w: f64,
}

/// Tensor Gauss rule replicated on every cell of a grid.
#[derive(Debug, Clone)]
pub struct QuadratureSet {
    pub grid: SpaceTimeGrid,
    pub order: usize,
    /// Local coordinates `(s, tau)` of the reference points.
    pub local: Vec<(f64, f64)>,
    /// Reference weights on the unit square (sum to 1).
    pub local_weights: Vec<f64>,
    points: Vec<QuadPoint>,
}

impl QuadratureSet {
    pub fn per_cell(&self) -> usize {
        self.local.len()
    }

    pub fn cell_points(&self, cell: usize) -> &[QuadPoint] {
        let n = self.per_cell();
        &self.points[cell * n..(cell + 1) * n]
    }

    pub fn points(&self) -> &[QuadPoint] {
        &self.points
    }

    /// Integral of `f(x, t)` over the whole grid.
    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.points.iter().map(|q| q.w * f(q.x, q.t)).sum()
    }

    pub fn same_layout(&self, other: &QuadratureSet) -> bool {
        self.order == other.order && self.grid.same_layout(&other.grid)
    }
}

pub fn quadrature_points(grid: &SpaceTimeGrid, order: usize) -> Result<QuadratureSet> {
    let (s, w) = gauss_legendre(order)?;
    let mut local = Vec::with_capacity(order * order);
    let mut local_weights = Vec::with_capacity(order * order);
    for (bt, wt) in s.iter().zip(&w) {
        for (bx, wx) in s.iter().zip(&w) {
            local.push((*bx, *bt));
            local_weights.push(wx * wt);
        }
    }
    let mut points = Vec::with_capacity(grid.n_cells() * local.len());
    for cell in 0..grid.n_cells() {
        let b = grid.cell_bounds(cell);
        let area = (b.x1 - b.x0) * (b.t1 - b.t0);
        for ((sx, st), lw) in local.iter().zip(&local_weights) {
            points.push(QuadPoint {
                x: b.x0 + sx * (b.x1 - b.x0),
                t: b.t0 + st * (b.t1 - b.t0),
                w: lw * area,
            });
        }
    }
    Ok(QuadratureSet { grid: *grid, order, local, local_weights, points })
}

/// Finite element families on the space-time grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisKind {
    /// Tensor cubic Hermite, C^1; node DOFs `(v, v_x, v_t, v_xt)`.
    HermiteC1,
    /// Bilinear nodal.
    Q1,
    /// Piecewise constant per cell.
    P0,
}

impl BasisKind {
    pub fn local_count(self) -> usize {
        match self {
            BasisKind::HermiteC1 => 16,
            BasisKind::Q1 => 4,
            BasisKind::P0 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BasisKind::HermiteC1 => "hermite",
            BasisKind::Q1 => "q1",
            BasisKind::P0 => "p0",
        }
    }
}

/// Homogeneous constraints imposed by masking DOFs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Constraints {
    /// Zero trace on `x = x_min` and `x = x_max`.
    pub lateral: bool,
    /// Zero trace on `t = T`.
    pub terminal: bool,
}

impl Constraints {
    pub const NONE: Constraints = Constraints { lateral: false, terminal: false };
    pub const LATERAL: Constraints = Constraints { lateral: true, terminal: false };
    pub const LATERAL_TERMINAL: Constraints = Constraints { lateral: true, terminal: true };
}

/// A finite element space with its DOF numbering and constraint mask.
#[derive(Debug, Clone)]
pub struct FemSpace {
    pub kind: BasisKind,
    pub grid: SpaceTimeGrid,
    pub constraints: Constraints,
    n_dofs: usize,
    cell_dofs: Vec<usize>,
    free_index: Vec<Option<usize>>,
    free_dofs: Vec<usize>,
}

/// Which derivatives to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DerivLevel {
    Value,
    First,
    Second,
}

/// Basis values and physical derivatives at one point, ordered by local DOF.
#[derive(Debug, Clone, Default)]
pub struct BasisEval {
    pub value: Vec<f64>,
    pub dx: Vec<f64>,
    pub dt: Vec<f64>,
    pub dxx: Vec<f64>,
}

impl FemSpace {
    pub fn new(kind: BasisKind, grid: SpaceTimeGrid, constraints: Constraints) -> Arc<FemSpace> {
        let (nx, nt) = (grid.nx, grid.nt);
        let n_dofs = match kind {
            BasisKind::HermiteC1 => 4 * grid.n_nodes(),
            BasisKind::Q1 => grid.n_nodes(),
            BasisKind::P0 => grid.n_cells(),
        };
        let nl = kind.local_count();
        let mut cell_dofs = Vec::with_capacity(grid.n_cells() * nl);
        for cell in 0..grid.n_cells() {
            let (i, j) = grid.cell_coords(cell);
            match kind {
                BasisKind::P0 => cell_dofs.push(cell),
                BasisKind::Q1 | BasisKind::HermiteC1 => {
                    for ln in 0..4 {
                        let node = grid.node_index(i + (ln & 1), j + (ln >> 1));
                        if kind == BasisKind::Q1 {
                            cell_dofs.push(node);
                        } else {
                            for ty in 0..4 {
                                cell_dofs.push(4 * node + ty);
                            }
                        }
                    }
                }
            }
        }
        let mut masked = vec![false; n_dofs];
        if kind != BasisKind::P0 {
            for node in 0..grid.n_nodes() {
                let (i, j) = grid.node_coords(node);
                let on_side = i == 0 || i == nx;
                let on_top = j == nt;
                match kind {
                    BasisKind::Q1 => {
                        if (constraints.lateral && on_side) || (constraints.terminal && on_top) {
                            masked[node] = true;
                        }
                    }
                    BasisKind::HermiteC1 => {
                        // v = 0 along x = const kills v and v_t; along t = T kills v and v_x.
                        if constraints.lateral && on_side {
                            masked[4 * node] = true;
                            masked[4 * node + 2] = true;
                        }
                        if constraints.terminal && on_top {
                            masked[4 * node] = true;
                            masked[4 * node + 1] = true;
                        }
                    }
                    BasisKind::P0 => {}
                }
            }
        }
        let mut free_index = vec![None; n_dofs];
        let mut free_dofs = Vec::new();
        for (d, m) in masked.iter().enumerate() {
            if !m {
                free_index[d] = Some(free_dofs.len());
                free_dofs.push(d);
            }
        }
        Arc::new(FemSpace { kind, grid, constraints, n_dofs, cell_dofs, free_index, free_dofs })
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn local_count(&self) -> usize {
        self.kind.local_count()
    }

    /// Global DOFs of a cell in local basis order.
    pub fn cell_dofs(&self, cell: usize) -> &[usize] {
        let nl = self.local_count();
        &self.cell_dofs[cell * nl..(cell + 1) * nl]
    }

    pub fn free_index(&self, dof: usize) -> Option<usize> {
        self.free_index[dof]
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    pub fn is_masked(&self, dof: usize) -> bool {
        self.free_index[dof].is_none()
    }

    /// Ordering key that groups DOFs by time level: node row `j` maps to `2j`,
    /// cell slab `j` to `2j + 1`.
    pub fn time_key(&self, dof: usize) -> usize {
        match self.kind {
            BasisKind::HermiteC1 => 2 * self.grid.node_coords(dof / 4).1,
            BasisKind::Q1 => 2 * self.grid.node_coords(dof).1,
            BasisKind::P0 => 2 * self.grid.cell_coords(dof).1 + 1,
        }
    }

    /// Node of a nodal DOF (None for P0).
    pub fn dof_node(&self, dof: usize) -> Option<usize> {
        match self.kind {
            BasisKind::HermiteC1 => Some(dof / 4),
            BasisKind::Q1 => Some(dof),
            BasisKind::P0 => None,
        }
    }

    pub fn same_layout(&self, other: &FemSpace) -> bool {
        self.kind == other.kind && self.constraints == other.constraints && self.grid.same_layout(&other.grid)
    }
}

fn hermite_1d(s: f64, h: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let s2 = s * s;
    let s3 = s2 * s;
    let v = [1.0 - 3.0 * s2 + 2.0 * s3, h * (s - 2.0 * s2 + s3), 3.0 * s2 - 2.0 * s3, h * (s3 - s2)];
    let d = [(6.0 * s2 - 6.0 * s) / h, 1.0 - 4.0 * s + 3.0 * s2, (6.0 * s - 6.0 * s2) / h, 3.0 * s2 - 2.0 * s];
    let dd = [
        (12.0 * s - 6.0) / (h * h),
        (6.0 * s - 4.0) / h,
        (6.0 - 12.0 * s) / (h * h),
        (6.0 * s - 2.0) / h,
    ];
    (v, d, dd)
}

/// Evaluates the local basis of `space` on `cell` at local coordinates `(s, tau)`.
pub fn eval_basis(space: &FemSpace, cell: usize, local: (f64, f64), level: DerivLevel) -> Result<BasisEval> {
    let b = space.grid.cell_bounds(cell);
    eval_reference(space.kind, b.x1 - b.x0, b.t1 - b.t0, local, level)
}

/// Basis evaluation on a cell of size `hx x ht`.
pub fn eval_reference(kind: BasisKind, hx: f64, ht: f64, (s, tau): (f64, f64), level: DerivLevel) -> Result<BasisEval> {
    match kind {
        BasisKind::P0 => {
            if level != DerivLevel::Value {
                return Err(Error::UnsupportedDerivative("P0 provides values only".into()));
            }
            Ok(BasisEval { value: vec![1.0], ..Default::default() })
        }
        BasisKind::Q1 => {
            if level == DerivLevel::Second {
                return Err(Error::UnsupportedDerivative("Q1 has no second x-derivative".into()));
            }
            let lx = [1.0 - s, s];
            let lt = [1.0 - tau, tau];
            let dlx = [-1.0 / hx, 1.0 / hx];
            let dlt = [-1.0 / ht, 1.0 / ht];
            let mut e = BasisEval::default();
            for ln in 0..4 {
                let (a, c) = (ln & 1, ln >> 1);
                e.value.push(lx[a] * lt[c]);
                if level == DerivLevel::First {
                    e.dx.push(dlx[a] * lt[c]);
                    e.dt.push(lx[a] * dlt[c]);
                }
            }
            Ok(e)
        }
        BasisKind::HermiteC1 => {
            let (vx, dx, ddx) = hermite_1d(s, hx);
            let (vt, dt, _) = hermite_1d(tau, ht);
            let mut e = BasisEval::default();
            for ln in 0..4 {
                let (a, c) = (ln & 1, ln >> 1);
                for ty in 0..4 {
                    let ix = 2 * a + (ty & 1);
                    let it = 2 * c + (ty >> 1);
                    e.value.push(vx[ix] * vt[it]);
                    if level >= DerivLevel::First {
                        e.dx.push(dx[ix] * vt[it]);
                        e.dt.push(vx[ix] * dt[it]);
                    }
                    if level == DerivLevel::Second {
                        e.dxx.push(ddx[ix] * vt[it]);
                    }
                }
            }
            Ok(e)
        }
    }
}

/// Basis evaluations at every reference quadrature point. On a uniform grid the
/// table is shared by all cells.
#[derive(Debug, Clone)]
pub struct BasisTable {
    pub kind: BasisKind,
    pub points: Vec<BasisEval>,
}

impl BasisTable {
    pub fn new(space: &FemSpace, quad: &QuadratureSet, level: DerivLevel) -> Result<BasisTable> {
        let (hx, ht) = (space.grid.hx(), space.grid.ht());
        let points = quad
            .local
            .iter()
            .map(|&p| eval_reference(space.kind, hx, ht, p, level))
            .collect::<Result<Vec<_>>>()?;
        Ok(BasisTable { kind: space.kind, points })
    }
}
