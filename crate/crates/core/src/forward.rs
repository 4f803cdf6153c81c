//! Time-stepping solvers for the direct problem, used to generate ground truth
//! and to check the energy estimate.

use crate::coefficients::Coefficients;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{gauss_legendre, BasisKind, Constraints, FemSpace, SpaceTimeGrid};

/// Symmetric tridiagonal matrix stored by diagonals.
#[derive(Debug, Clone)]
struct Tridiag {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl Tridiag {
    fn zeros(n: usize) -> Tridiag {
        Tridiag { diag: vec![0.0; n], off: vec![0.0; n.saturating_sub(1)] }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = self.diag[i] * x[i];
            if i > 0 {
                y[i] += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                y[i] += self.off[i] * x[i + 1];
            }
        }
        y
    }

    fn combine(a: &Tridiag, sa: f64, b: &Tridiag, sb: f64) -> Tridiag {
        Tridiag {
            diag: a.diag.iter().zip(&b.diag).map(|(x, y)| sa * x + sb * y).collect(),
            off: a.off.iter().zip(&b.off).map(|(x, y)| sa * x + sb * y).collect(),
        }
    }

    /// Thomas algorithm; `None` on a vanishing pivot.
    fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = self.diag.len();
        if n == 0 {
            return Some(Vec::new());
        }
        let scale = self.diag.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut piv = self.diag[0];
        if piv.abs() <= 1e-14 * scale {
            return None;
        }
        c[0] = if n > 1 { self.off[0] / piv } else { 0.0 };
        d[0] = rhs[0] / piv;
        for i in 1..n {
            piv = self.diag[i] - self.off[i - 1] * c[i - 1];
            if piv.abs() <= 1e-14 * scale || !piv.is_finite() {
                return None;
            }
            c[i] = if i + 1 < n { self.off[i] / piv } else { 0.0 };
            d[i] = (rhs[i] - self.off[i - 1] * d[i - 1]) / piv;
        }
        for i in (0..n - 1).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        Some(d)
    }
}

/// P1 operators on the interior nodes of a 1D mesh.
struct SpatialOps {
    nx: usize,
    h: f64,
    x_min: f64,
    gx: Vec<f64>,
    gw: Vec<f64>,
}

impl SpatialOps {
    fn new(grid: &SpaceTimeGrid) -> Result<SpatialOps> {
        let (gx, gw) = gauss_legendre(3)?;
        Ok(SpatialOps { nx: grid.nx, h: grid.hx(), x_min: grid.x_min, gx, gw })
    }

    fn n(&self) -> usize {
        self.nx - 1
    }

    /// Iterates Gauss points of element `k`: `(x, w, [phi_left, phi_right])`.
    fn element_points(&self, k: usize) -> impl Iterator<Item = (f64, f64, [f64; 2])> + '_ {
        let x0 = self.x_min + k as f64 * self.h;
        self.gx.iter().zip(&self.gw).map(move |(s, w)| (x0 + s * self.h, w * self.h, [1.0 - s, *s]))
    }

    /// Adds an element matrix on element `k` into a tridiagonal over interior nodes.
    fn scatter(&self, m: &mut Tridiag, k: usize, loc: [[f64; 2]; 2]) {
        for a in 0..2 {
            for b in 0..2 {
                let (na, nb) = (k + a, k + b);
                if na == 0 || nb == 0 || na == self.nx || nb == self.nx {
                    continue;
                }
                let (ia, ib) = (na - 1, nb - 1);
                if ia == ib {
                    m.diag[ia] += loc[a][b];
                } else if a < b {
                    m.off[ia] += loc[a][b];
                }
            }
        }
    }

    fn mass(&self) -> Tridiag {
        let mut m = Tridiag::zeros(self.n());
        for k in 0..self.nx {
            let mut loc = [[0.0; 2]; 2];
            for (_, w, phi) in self.element_points(k) {
                for a in 0..2 {
                    for b in 0..2 {
                        loc[a][b] += w * phi[a] * phi[b];
                    }
                }
            }
            self.scatter(&mut m, k, loc);
        }
        m
    }

    fn weighted_mass(&self, f: impl Fn(f64) -> f64) -> Tridiag {
        let mut m = Tridiag::zeros(self.n());
        for k in 0..self.nx {
            let mut loc = [[0.0; 2]; 2];
            for (x, w, phi) in self.element_points(k) {
                let v = f(x);
                for a in 0..2 {
                    for b in 0..2 {
                        loc[a][b] += w * v * phi[a] * phi[b];
                    }
                }
            }
            self.scatter(&mut m, k, loc);
        }
        m
    }

    /// `int c w_i' w_j'` with Gauss quadrature on each element.
    fn stiffness(&self, c: impl Fn(f64) -> f64) -> Tridiag {
        let mut m = Tridiag::zeros(self.n());
        let dphi = [-1.0 / self.h, 1.0 / self.h];
        for k in 0..self.nx {
            let cint: f64 = self.element_points(k).map(|(x, w, _)| w * c(x)).sum();
            let mut loc = [[0.0; 2]; 2];
            for a in 0..2 {
                for b in 0..2 {
                    loc[a][b] = cint * dphi[a] * dphi[b];
                }
            }
            self.scatter(&mut m, k, loc);
        }
        m
    }

    /// `(g, w_i) + (G, w_i')` over interior nodes.
    fn load(&self, g: impl Fn(f64) -> f64, big_g: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut v = vec![0.0; self.n()];
        let dphi = [-1.0 / self.h, 1.0 / self.h];
        for k in 0..self.nx {
            for (x, w, phi) in self.element_points(k) {
                let (gv, gg) = (g(x), big_g(x));
                for a in 0..2 {
                    let node = k + a;
                    if node == 0 || node == self.nx {
                        continue;
                    }
                    v[node - 1] += w * (gv * phi[a] + gg * dphi[a]);
                }
            }
        }
        v
    }
}

fn state_field(grid: &SpaceTimeGrid, states: &[Vec<f64>]) -> Field {
    let space = FemSpace::new(BasisKind::Q1, *grid, Constraints::LATERAL);
    let mut f = Field::zeros(space);
    for (j, st) in states.iter().enumerate() {
        for (i, v) in st.iter().enumerate() {
            f.values[grid.node_index(i + 1, j)] = *v;
        }
    }
    f
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidParameter(format!("theta = {theta} must lie in [0, 1]")));
    }
    Ok(())
}

/// Runs the theta-scheme for `M Y' + S(t) Y = g(t)`.
fn theta_march(
    grid: &SpaceTimeGrid,
    theta: f64,
    mass: &Tridiag,
    y0: Vec<f64>,
    op: impl Fn(f64) -> Tridiag,
    load: impl Fn(f64) -> Vec<f64>,
) -> Result<Vec<Vec<f64>>> {
    let dt = grid.ht();
    let mut states = Vec::with_capacity(grid.nt + 1);
    states.push(y0);
    let (mut s_old, mut g_old) = (op(0.0), load(0.0));
    for n in 0..grid.nt {
        let t_new = grid.node_t(n + 1);
        let (s_new, g_new) = (op(t_new), load(t_new));
        let lhs = Tridiag::combine(mass, 1.0, &s_new, theta * dt);
        let rhs_m = Tridiag::combine(mass, 1.0, &s_old, -(1.0 - theta) * dt);
        let mut rhs = rhs_m.apply(&states[n]);
        for i in 0..rhs.len() {
            rhs[i] += dt * (theta * g_new[i] + (1.0 - theta) * g_old[i]);
        }
        let next = lhs.solve(&rhs).ok_or(Error::SingularStep { step: n + 1 })?;
        states.push(next);
        s_old = s_new;
        g_old = g_new;
    }
    Ok(states)
}

/// Conforming P1 solver with the theta-scheme (`theta = 0.5` is Crank-Nicolson).
/// Returns the Q1 space-time interpolant of the nodal trajectory.
pub fn solve_forward(grid: &SpaceTimeGrid, coeffs: &Coefficients, theta: f64) -> Result<Field> {
    check_theta(theta)?;
    coeffs.validate(grid.nx)?;
    let ops = SpatialOps::new(grid)?;
    let mass = ops.mass();
    let stiff = ops.stiffness(|x| coeffs.c(x));
    let y0: Vec<f64> = (1..grid.nx).map(|i| coeffs.y0(grid.node_x(i))).collect();
    let states = theta_march(
        grid,
        theta,
        &mass,
        y0,
        |t| Tridiag::combine(&stiff, 1.0, &ops.weighted_mass(|x| coeffs.d(x, t)), 1.0),
        |t| ops.load(|x| coeffs.f(x, t), |x| coeffs.flux_source(x, t)),
    )?;
    Ok(state_field(grid, &states))
}

/// Output of the mixed solver.
#[derive(Debug, Clone)]
pub struct MixedSolution {
    /// Q1 space-time interpolant of the state.
    pub y: Field,
    /// P0 flux, averaged over each time slab.
    pub p: Field,
    /// Flux per element at every time level, `(nt + 1) x nx`, time-major.
    pub p_levels: Vec<f64>,
}

/// Mixed Galerkin solver: `y` in P1, `p = c y_x - F` in P0. The flux is
/// eliminated through `P = B_m^{-1}(E^T Y - F)`, and the reduced system is
/// advanced with the theta-scheme.
pub fn solve_forward_mixed(grid: &SpaceTimeGrid, coeffs: &Coefficients, theta: f64) -> Result<MixedSolution> {
    check_theta(theta)?;
    coeffs.validate(grid.nx)?;
    let ops = SpatialOps::new(grid)?;
    let nx = grid.nx;
    // B_m = diag(int_e c^-1), E_{ik} = int_{e_k} w_i'.
    let bm: Vec<f64> = (0..nx).map(|k| ops.element_points(k).map(|(x, w, _)| w / coeffs.c(x)).sum()).collect();
    if bm.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
        return Err(Error::SingularBm);
    }
    // E B_m^-1 E^T on interior nodes.
    let mut schur = Tridiag::zeros(ops.n());
    for (k, b) in bm.iter().enumerate() {
        ops.scatter(&mut schur, k, [[1.0 / b, -1.0 / b], [-1.0 / b, 1.0 / b]]);
    }
    let flux_rhs = |t: f64| -> Vec<f64> {
        (0..nx).map(|k| ops.element_points(k).map(|(x, w, _)| w * coeffs.flux_source(x, t) / coeffs.c(x)).sum()).collect()
    };
    let mass = ops.mass();
    let y0: Vec<f64> = (1..nx).map(|i| coeffs.y0(grid.node_x(i))).collect();
    let states = theta_march(
        grid,
        theta,
        &mass,
        y0,
        |t| Tridiag::combine(&schur, 1.0, &ops.weighted_mass(|x| coeffs.d(x, t)), 1.0),
        |t| {
            let mut g = ops.load(|x| coeffs.f(x, t), |_| 0.0);
            let fm = flux_rhs(t);
            // + E B_m^-1 F_m
            for k in 0..nx {
                let v = fm[k] / bm[k];
                if k >= 1 {
                    g[k - 1] -= v;
                }
                if k + 1 < nx {
                    g[k] += v;
                }
            }
            g
        },
    )?;
    let mut p_levels = Vec::with_capacity((grid.nt + 1) * nx);
    for (j, st) in states.iter().enumerate() {
        let fm = flux_rhs(grid.node_t(j));
        let node = |i: usize| if i == 0 || i == nx { 0.0 } else { st[i - 1] };
        for k in 0..nx {
            p_levels.push((node(k + 1) - node(k) - fm[k]) / bm[k]);
        }
    }
    let p_space = FemSpace::new(BasisKind::P0, *grid, Constraints::NONE);
    let mut p = Field::zeros(p_space);
    for j in 0..grid.nt {
        for k in 0..nx {
            p.values[grid.cell_index(k, j)] = 0.5 * (p_levels[j * nx + k] + p_levels[(j + 1) * nx + k]);
        }
    }
    Ok(MixedSolution { y: state_field(grid, &states), p, p_levels })
}

/// Terms of the energy estimate and the empirical constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub dt_y_h_minus1: f64,
    pub y_h1: f64,
    pub p_l2: f64,
    pub y0_l2: f64,
    pub f_l2: f64,
    pub flux_source_l2: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`; `None` when the data vanish.
    pub constant: Option<f64>,
}

/// Evaluates both sides of
/// `||y'||_{L2(H^-1)} + ||y||_{L2(H^1_0)} + ||p||_{L2} <= C (||y0|| + ||f|| + ||F||)`.
/// The `H^-1` norm uses the inverse of the unit stiffness applied to the lumped-mass functional.
pub fn verify_energy_estimate(sol: &MixedSolution, coeffs: &Coefficients) -> Result<EnergyReport> {
    let grid = sol.y.space.grid;
    let (nx, nt, h, dt) = (grid.nx, grid.nt, grid.hx(), grid.ht());
    let ops = SpatialOps::new(&grid)?;
    let k0 = ops.stiffness(|_| 1.0);
    let level = |j: usize| -> Vec<f64> { (1..nx).map(|i| sol.y.values[grid.node_index(i, j)]).collect() };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (mut dty2, mut h1, mut p2) = (0.0, 0.0, 0.0);
    for j in 0..nt {
        let (a, b) = (level(j), level(j + 1));
        let g: Vec<f64> = a.iter().zip(&b).map(|(x, y)| h * (y - x) / dt).collect();
        if !g.is_empty() {
            let z = k0.solve(&g).ok_or(Error::SingularStep { step: j })?;
            dty2 += dt * dot(&g, &z);
        }
        let (ka, kb) = (k0.apply(&a), k0.apply(&b));
        h1 += dt * (dot(&a, &ka) + dot(&a, &kb) + dot(&b, &kb)) / 3.0;
        for k in 0..nx {
            let (pa, pb) = (sol.p_levels[j * nx + k], sol.p_levels[(j + 1) * nx + k]);
            p2 += h * dt * (pa * pa + pa * pb + pb * pb) / 3.0;
        }
    }
    let (gs, gw) = gauss_legendre(4)?;
    let mut y02 = 0.0;
    let (mut f2, mut ff2) = (0.0, 0.0);
    for k in 0..nx {
        for (sx, wx) in gs.iter().zip(&gw) {
            let x = grid.x_min + (k as f64 + sx) * h;
            y02 += wx * h * coeffs.y0(x).powi(2);
            for j in 0..nt {
                for (st, wt) in gs.iter().zip(&gw) {
                    let t = (j as f64 + st) * dt;
                    let w = wx * wt * h * dt;
                    f2 += w * coeffs.f(x, t).powi(2);
                    ff2 += w * coeffs.flux_source(x, t).powi(2);
                }
            }
        }
    }
    let (dty, y_h1, p_l2) = (dty2.sqrt(), h1.max(0.0).sqrt(), p2.sqrt());
    let (y0_l2, f_l2, flux_source_l2) = (y02.sqrt(), f2.sqrt(), ff2.sqrt());
    let lhs = dty + y_h1 + p_l2;
    let rhs = y0_l2 + f_l2 + flux_source_l2;
    Ok(EnergyReport {
        dt_y_h_minus1: dty,
        y_h1,
        p_l2,
        y0_l2,
        f_l2,
        flux_source_l2,
        lhs,
        rhs,
        constant: if rhs > 0.0 { Some(lhs / rhs) } else { None },
    })
}

/// Q1 field on a fresh space; convenience for building truths from closures.
pub fn nodal_field(grid: &SpaceTimeGrid, f: impl Fn(f64, f64) -> f64) -> Field {
    Field::interpolate(FemSpace::new(BasisKind::Q1, *grid, Constraints::LATERAL), f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::Profile;
    use crate::grid::build_grid;

    #[test]
    fn zero_data_gives_zero() {
        let g = build_grid(0.0, 1.0, 0.5, 8, 8).unwrap();
        let mut c = Coefficients::heat(0.0, 1.0);
        c.y0 = Profile::Zero;
        assert!(solve_forward(&g, &c, 0.5).unwrap().values.iter().all(|v| *v == 0.0));
        let m = solve_forward_mixed(&g, &c, 0.5).unwrap();
        assert!(m.y.values.iter().all(|v| *v == 0.0) && m.p.values.iter().all(|v| *v == 0.0));
        let e = verify_energy_estimate(&m, &c).unwrap();
        assert_eq!(e.constant, None);
        assert_eq!(e.lhs, 0.0);
    }

    #[test]
    fn mixed_matches_standard_for_constant_c() {
        let g = build_grid(0.0, 1.0, 0.5, 12, 10).unwrap();
        let mut c = Coefficients::heat(0.0, 1.0);
        c.c = Profile::Constant(0.8);
        c.d = Profile::Constant(0.3);
        let a = solve_forward(&g, &c, 0.5).unwrap();
        let b = solve_forward_mixed(&g, &c, 0.5).unwrap();
        for (x, y) in a.values.iter().zip(&b.y.values) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let g = build_grid(0.0, 1.0, 0.5, 8, 8).unwrap();
        let mut c = Coefficients::heat(0.0, 1.0);
        assert!(matches!(solve_forward(&g, &c, 1.5), Err(Error::InvalidParameter(_))));
        c.c = Profile::Constant(-1.0);
        assert!(matches!(solve_forward_mixed(&g, &c, 0.5), Err(Error::InvalidCoefficients(_))));
    }

    #[test]
    fn flux_source_shifts_flux() {
        // y0 = 0, f = 0, F = const: y stays 0 and p = -F.
        let g = build_grid(0.0, 1.0, 0.5, 8, 4).unwrap();
        let mut c = Coefficients::heat(0.0, 1.0);
        c.y0 = Profile::Zero;
        c.flux_source = Profile::Constant(2.0);
        let m = solve_forward_mixed(&g, &c, 0.5).unwrap();
        assert!(m.y.values.iter().all(|v| v.abs() < 1e-12));
        assert!(m.p.values.iter().all(|v| (v + 2.0).abs() < 1e-12));
    }
}
