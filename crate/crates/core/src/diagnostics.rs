//! Weighted norms, empirical stability constants, discrete inf-sup estimates
//! and multiplier consistency.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::firstorder;
use crate::grid::{BasisTable, DerivLevel};
use crate::linalg::{dot, inverse_iteration, norm2, CsrMatrix, LdlFactor, LdlOptions};
use crate::problem::{Formulation, Params, Problem};
use crate::saddle::{ReconstructionReport, SaddleSystem};
use crate::secondorder;
use crate::weights::{Member, WeightFamily};

/// Size below which generalized eigenproblems are solved densely.
pub const DENSE_LIMIT: usize = 500;

const RATIO_FLOOR: f64 = 1e-14;

/// Labelled weighted norms of a state and the empirical constant of the
/// Carleman-based global estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct NormReport {
    /// `||w_0^{-1} y||_{L2(Q_T)}` with the reference observation member.
    pub weighted_state: f64,
    /// `||w_1^{-1} y_x||_{L2(Q_T)}`.
    pub weighted_gradient: f64,
    /// `||w_1^{-1} p||_{L2(Q_T)}` (first order).
    pub weighted_flux: Option<f64>,
    /// `||rho_0^{-1} y||_{L2(q_T)}`.
    pub observed: f64,
    /// `||rho^{-1} L y||` or `||rho^{-1} I(y, p)||`.
    pub equation: f64,
    /// `||rho_1^{-1} J(y, p)||` (first order).
    pub flux_equation: Option<f64>,
    /// `||y||_Y` or `||(y, p)||_U`.
    pub global: f64,
    /// Left side over right side of the global estimate, when the right side exceeds 1e-14.
    pub c_emp: Option<f64>,
}

impl NormReport {
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![
            ("weighted_state", self.weighted_state),
            ("weighted_gradient", self.weighted_gradient),
            ("observed", self.observed),
            ("equation", self.equation),
            ("global", self.global),
        ];
        if let Some(f) = self.weighted_flux {
            v.push(("weighted_flux", f));
        }
        if let Some(f) = self.flux_equation {
            v.push(("flux_equation", f));
        }
        if let Some(c) = self.c_emp {
            v.push(("c_emp", c));
        }
        v
    }
}

/// `||w^{-1} (y - truth)||_{L2(Q_T)}` over the cells in `cells`.
pub fn weighted_error_on(
    pb: &Problem,
    y: &Field,
    truth: &dyn Fn(f64, f64) -> f64,
    family: &WeightFamily,
    member: Member,
    cells: impl Iterator<Item = usize>,
) -> Result<f64> {
    let tab = BasisTable::new(&y.space, &pb.quad, DerivLevel::Value)?;
    let mut s = 0.0;
    for cell in cells {
        let dofs = y.space.cell_dofs(cell);
        for (q, p) in pb.quad.cell_points(cell).iter().enumerate() {
            let v: f64 = dofs.iter().zip(&tab.points[q].value).map(|(&d, b)| y.values[d] * b).sum();
            let w = family.inverse(member, p.x, p.t)?;
            s += p.w * (w * (v - truth(p.x, p.t))).powi(2);
        }
    }
    Ok(s.sqrt())
}

/// `||w^{-1} (y - truth)||_{L2(Q_T)}`.
pub fn weighted_error(
    pb: &Problem,
    y: &Field,
    truth: &dyn Fn(f64, f64) -> f64,
    family: &WeightFamily,
    member: Member,
) -> Result<f64> {
    weighted_error_on(pb, y, truth, family, member, 0..pb.grid.n_cells())
}

/// Evaluates the norms of the applicable global estimate. `carleman` provides
/// the reference members (`rho_{c,0}`, `rho_{c,1}` or `rho_{p,0}`, `rho_{p,1}`);
/// the norms of `Y` and `U` use the weights of `pb` and the `eta` of `params`.
pub fn weighted_norms(
    pb: &Problem,
    params: &Params,
    y: &Field,
    p: Option<&Field>,
    carleman: &WeightFamily,
) -> Result<NormReport> {
    let ty = BasisTable::new(&y.space, &pb.quad, DerivLevel::First)?;
    let tp = match p {
        Some(f) => Some(BasisTable::new(&f.space, &pb.quad, DerivLevel::Value)?),
        None => None,
    };
    let (mut s0, mut s1, mut sf) = (0.0, 0.0, 0.0);
    for cell in 0..pb.grid.n_cells() {
        let dofs = y.space.cell_dofs(cell);
        for (q, pt) in pb.quad.cell_points(cell).iter().enumerate() {
            let e = &ty.points[q];
            let (mut v, mut vx) = (0.0, 0.0);
            for (k, &d) in dofs.iter().enumerate() {
                v += y.values[d] * e.value[k];
                vx += y.values[d] * e.dx[k];
            }
            let w0 = carleman.inverse(Member::Observation, pt.x, pt.t)?;
            let w1 = carleman.inverse(Member::Flux, pt.x, pt.t)?;
            s0 += pt.w * (w0 * v).powi(2);
            s1 += pt.w * (w1 * vx).powi(2);
            if let (Some(pf), Some(tp)) = (p, &tp) {
                let pv: f64 =
                    pf.space.cell_dofs(cell).iter().zip(&tp.points[q].value).map(|(&d, b)| pf.values[d] * b).sum();
                sf += pt.w * (w1 * pv).powi(2);
            }
        }
    }
    let (weighted_state, weighted_gradient) = (s0.sqrt(), s1.sqrt());
    let ratio = |num: f64, den: f64| if den > RATIO_FLOOR { Some(num / den) } else { None };
    match p {
        None => {
            let r = secondorder::state_residuals(pb, y)?;
            let global = (r.observed.powi(2) + params.eta * r.equation.powi(2)).sqrt();
            Ok(NormReport {
                weighted_state,
                weighted_gradient,
                weighted_flux: None,
                observed: r.observed,
                equation: r.equation,
                flux_equation: None,
                global,
                c_emp: ratio(weighted_state, global),
            })
        }
        Some(pf) => {
            let r = firstorder::state_residuals(pb, y, pf)?;
            let fl = r.flux.unwrap_or(0.0);
            let global = (r.observed.powi(2) + params.eta * fl * fl + params.eta2 * r.equation.powi(2)).sqrt();
            let wf = sf.sqrt();
            Ok(NormReport {
                weighted_state,
                weighted_gradient,
                weighted_flux: Some(wf),
                observed: r.observed,
                equation: r.equation,
                flux_equation: Some(fl),
                global,
                c_emp: ratio(weighted_state + wf, global),
            })
        }
    }
}

/// Smallest `mu` with `a x = mu g x` for SPD `g` and symmetric positive
/// semi-definite `a`, by a dense reduction.
pub fn dense_generalized_min(a: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64> {
    let chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NonConvergedEigen("Gram matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NonConvergedEigen("Gram factor is singular".into()))?;
    let m = &linv * a * linv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let ev = SymmetricEigen::try_new(m, 1e-14, 10_000)
        .ok_or_else(|| Error::NonConvergedEigen("dense eigen solver did not converge".into()))?;
    Ok(ev.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

fn spd_factor(m: &CsrMatrix) -> Result<LdlFactor> {
    LdlFactor::new(m, &vec![1; m.nrows], None, LdlOptions { static_reg: 0.0, ..LdlOptions::default() })
}

/// Discrete inf-sup constant: the smallest generalized singular value of `B`
/// with respect to the primal Gram `g_y` and the multiplier Gram `g_m`, i.e.
/// `delta^2 = min eig(B g_y^{-1} B^T, g_m)`.
pub fn infsup_from_matrices(b: &CsrMatrix, g_y: &CsrMatrix, g_m: &CsrMatrix) -> Result<f64> {
    let (m, n) = (b.nrows, b.ncols);
    if g_y.nrows != n || g_m.nrows != m {
        return Err(Error::LayoutMismatch("Gram matrices do not match B".into()));
    }
    if m == 0 {
        return Err(Error::NonConvergedEigen("no multipliers".into()));
    }
    let mu = if m <= DENSE_LIMIT {
        let f = spd_factor(g_y)?;
        let mut s = DMatrix::zeros(m, m);
        for k in 0..m {
            let mut col = vec![0.0; n];
            for (j, v) in b.row(k) {
                col[j] = v;
            }
            let z = f.solve(&col)?.0;
            let bz = b.matvec(&z);
            for i in 0..m {
                s[(i, k)] = bz[i];
            }
        }
        dense_generalized_min(&s, &g_m.to_dense())?
    } else {
        // S^{-1} via the quasi-definite system [[G_Y, B^T], [B, 0]].
        let k = CsrMatrix::saddle(g_y, b, None);
        let mut signs = vec![1i8; n];
        signs.extend(std::iter::repeat_n(-1i8, m));
        let f = LdlFactor::new(&k, &signs, None, LdlOptions::default())?;
        let gm = g_m.clone();
        let apply_inv = |v: &[f64]| -> Result<Vec<f64>> {
            let mut rhs = vec![0.0; n];
            rhs.extend(gm.matvec(v));
            let x = f.solve(&rhs)?.0;
            Ok(x[n..].iter().map(|w| -w).collect())
        };
        generalized_inverse_iteration(apply_inv, &gm, m)?
    };
    if !(mu.is_finite()) {
        return Err(Error::NonConvergedEigen("inf-sup estimate is not finite".into()));
    }
    Ok(mu.max(0.0).sqrt())
}

/// Inverse iteration for `a x = mu g x` given `v -> a^{-1} g v`.
fn generalized_inverse_iteration(
    apply_inv: impl Fn(&[f64]) -> Result<Vec<f64>>,
    g: &CsrMatrix,
    n: usize,
) -> Result<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.3 * (i as f64 * 0.618_034).sin()).collect();
    let mut mu_old = f64::INFINITY;
    for _ in 0..1000 {
        let gv_norm = dot(&v, &g.matvec(&v)).sqrt();
        v.iter_mut().for_each(|x| *x /= gv_norm);
        let w = apply_inv(&v)?;
        // Rayleigh quotient: mu = v^T g v / v^T g w
        let gw = g.matvec(&w);
        let denom = dot(&v, &gw);
        if !(denom > 0.0) {
            return Err(Error::NonConvergedEigen("inverse iteration lost positivity".into()));
        }
        let mu = 1.0 / denom;
        v = w;
        if (mu - mu_old).abs() <= 1e-12 * mu.abs() {
            return Ok(mu);
        }
        mu_old = mu;
    }
    Err(Error::NonConvergedEigen("inverse iteration did not converge in 1000 steps".into()))
}

/// Discrete inf-sup constant of an assembled system with respect to its primal
/// norm and the `L2` norm of the multipliers.
pub fn estimate_infsup(sys: &SaddleSystem) -> Result<f64> {
    infsup_from_matrices(&sys.b, &sys.primal_gram, &sys.multiplier_gram)
}

/// Smallest eigenvalue of `a` relative to `g` (both sparse SPD).
pub fn generalized_min_eigen(a: &CsrMatrix, g: &CsrMatrix) -> Result<f64> {
    let n = a.nrows;
    if n <= DENSE_LIMIT {
        return dense_generalized_min(&a.to_dense(), &g.to_dense());
    }
    let f = spd_factor(a)?;
    generalized_inverse_iteration(|v| Ok(f.solve(&g.matvec(v))?.0), g, n)
}

/// Smallest eigenvalue of an SPD matrix.
pub fn min_eigen(a: &CsrMatrix) -> Result<f64> {
    let n = a.nrows;
    if n <= DENSE_LIMIT {
        return dense_generalized_min(&a.to_dense(), &DMatrix::identity(n, n));
    }
    let f = spd_factor(a)?;
    inverse_iteration(|v| f.solve(v).map(|r| r.0), n, 1000, 1e-10)
}

/// Euclidean norm of the residual of the first optimality equation
/// `A y + B^T lambda - l_1`, i.e. the weak form of
/// `L*(rho^{-1} lambda) = -rho_0^{-2} (y - y_obs) 1_omega` (plus the augmentation
/// term) tested on the primal space.
pub fn multiplier_consistency(sys: &SaddleSystem, y: &[f64], lambda: &[f64]) -> Result<f64> {
    if y.len() != sys.n_primal() || lambda.len() != sys.n_multiplier() {
        return Err(Error::LayoutMismatch("solution vectors do not match the system".into()));
    }
    let ay = sys.a.matvec(y);
    let bl = sys.b.matvec_t(lambda);
    let r: Vec<f64> = ay.iter().zip(&bl).zip(&sys.l1).map(|((a, b), l)| a + b - l).collect();
    Ok(norm2(&r))
}

/// Both sides of the stabilized estimate
/// `theta1 ||y||^2 + theta2 ||lambda||^2 <= ((1 - alpha)^2 / theta1 + alpha^2 / theta2) ||rho_0^{-1} y_obs||^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaEstimate {
    pub theta1: f64,
    /// Measured coercivity constant of `C` in the stabilized multiplier norm.
    pub theta2: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl AlphaEstimate {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + 1e-10)
    }
}

pub fn alpha_estimate(sys: &SaddleSystem, rep: &ReconstructionReport) -> Result<AlphaEstimate> {
    let (c, g) = match (&sys.c, &sys.stabilized_gram) {
        (Some(c), Some(g)) => (c, g),
        _ => return Err(Error::UnsupportedSpace("not a stabilized formulation".into())),
    };
    let p = &sys.params;
    let (theta1, alpha) = match sys.formulation {
        Formulation::MfAlpha => (secondorder::theta1(p), p.alpha),
        Formulation::Mf4Alpha => (firstorder::theta1(p), p.alpha),
        _ => return Err(Error::UnsupportedSpace("not a stabilized formulation".into())),
    };
    let theta2 = generalized_min_eigen(c, g)?;
    let y = &rep.primal_solution;
    let l = &rep.multiplier_solution;
    let ny2 = dot(y, &sys.primal_gram.matvec(y));
    let nl2 = dot(l, &g.matvec(l));
    let d2 = rep.data_norm * rep.data_norm;
    Ok(AlphaEstimate {
        theta1,
        theta2,
        lhs: theta1 * ny2 + theta2 * nl2,
        rhs: ((1.0 - alpha).powi(2) / theta1 + alpha * alpha / theta2) * d2,
    })
}

/// `2 sqrt(rho_*^{-2} |rho|_inf^2 + eta) ||rho_0^{-1} y_obs||`, the bound on
/// `||lambda||` of the second-order formulation, with `|rho|_inf` taken over
/// the quadrature points.
pub fn multiplier_bound(pb: &Problem, params: &Params, data_norm: f64) -> f64 {
    let rho_sup = pb.samples.multiplier.iter().fold(0.0f64, |m, v| m.max(1.0 / v));
    let rs = pb.weights.rho_star;
    2.0 * (rho_sup * rho_sup / (rs * rs) + params.eta).sqrt() * data_norm
}

/// First-order analogue with an empirical continuity constant `c_omega_t`.
pub fn multiplier_bound_first_order(pb: &Problem, params: &Params, c_omega_t: f64, data_norm: f64) -> f64 {
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, w| m.max(1.0 / w));
    let (rho, rho1) = (sup(&pb.samples.multiplier), sup(&pb.samples.flux));
    let k = c_omega_t / pb.weights.rho_star.powi(2);
    2.0 * (k * rho1 * rho1 + params.eta).max(k * rho * rho + params.eta2).sqrt() * data_norm
}
