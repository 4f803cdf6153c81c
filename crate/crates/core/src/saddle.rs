//! Assembled saddle-point systems, the direct solver and reconstruction reports.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{BasisKind, FemSpace};
use crate::linalg::{spd_condition_estimate, CsrMatrix, LdlFactor, LdlOptions};
use crate::problem::{Formulation, Params, Problem};
use crate::weights::Member;
use crate::{firstorder, secondorder};

/// A contiguous group of unknowns living on one space.
#[derive(Debug, Clone)]
pub struct Block {
    pub name: &'static str,
    pub space: Arc<FemSpace>,
    pub offset: usize,
    /// For multipliers carried as `phi = w^{-1} lambda`: the weight `w`.
    pub scale: Option<Member>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.space.n_free()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

pub(crate) fn blocks(specs: Vec<(&'static str, Arc<FemSpace>, Option<Member>)>) -> Vec<Block> {
    let mut off = 0;
    specs
        .into_iter()
        .map(|(name, space, scale)| {
            let b = Block { name, space, offset: off, scale };
            off += b.len();
            b
        })
        .collect()
}

/// `[[A, B^T], [B, -C]] (u, lambda) = (l1, l2)` together with the Gram matrices
/// of the norms used by the diagnostics.
#[derive(Debug, Clone)]
pub struct SaddleSystem {
    pub formulation: Formulation,
    pub params: Params,
    pub problem: Arc<Problem>,
    pub primal: Vec<Block>,
    pub multipliers: Vec<Block>,
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub c: Option<CsrMatrix>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    /// Gram matrix of the primal norm (`Y` or `U`).
    pub primal_gram: CsrMatrix,
    /// `L2` Gram matrix of the multipliers in the original variables.
    pub multiplier_gram: CsrMatrix,
    /// Gram matrix of the multiplier norm of the stabilized forms.
    pub stabilized_gram: Option<CsrMatrix>,
    /// Renormalization factors `D` with `u~ = D u`, when applied.
    pub primal_scaling: Option<Vec<f64>>,
}

impl SaddleSystem {
    pub fn n_primal(&self) -> usize {
        self.a.nrows
    }

    pub fn n_multiplier(&self) -> usize {
        self.b.nrows
    }

    pub fn matrix(&self) -> CsrMatrix {
        CsrMatrix::saddle(&self.a, &self.b, self.c.as_ref())
    }

    pub fn rhs(&self) -> Vec<f64> {
        let mut r = self.l1.clone();
        r.extend_from_slice(&self.l2);
        r
    }

    pub fn signs(&self) -> Vec<i8> {
        let mut s = vec![1i8; self.n_primal()];
        s.extend(std::iter::repeat_n(-1i8, self.n_multiplier()));
        s
    }

    fn keys(blocks: &[Block]) -> Vec<usize> {
        blocks.iter().flat_map(|b| b.space.free_dofs().iter().map(|&d| b.space.time_key(d))).collect()
    }

    /// Elimination order grouping unknowns by time level.
    pub fn ordering(&self) -> Vec<usize> {
        let mut keys = Self::keys(&self.primal);
        keys.extend(Self::keys(&self.multipliers));
        let mut idx: Vec<usize> = (0..keys.len()).collect();
        idx.sort_by_key(|&i| keys[i]);
        idx
    }

    pub fn primal_ordering(&self) -> Vec<usize> {
        let keys = Self::keys(&self.primal);
        let mut idx: Vec<usize> = (0..keys.len()).collect();
        idx.sort_by_key(|&i| keys[i]);
        idx
    }

    pub fn multiplier_ordering(&self) -> Vec<usize> {
        let keys = Self::keys(&self.multipliers);
        let mut idx: Vec<usize> = (0..keys.len()).collect();
        idx.sort_by_key(|&i| keys[i]);
        idx
    }
}

/// Multiplier field and the weight relating it to `lambda`.
#[derive(Debug, Clone)]
pub struct MultiplierField {
    pub field: Field,
    /// `lambda = w * field` when set.
    pub scale: Option<Member>,
}

impl MultiplierField {
    /// `lambda` at a point of `cell`.
    pub fn value(&self, problem: &Problem, cell: usize, local: (f64, f64), x: f64, t: f64) -> Result<f64> {
        let v = self.field.eval_local(cell, local, crate::grid::DerivLevel::Value)?.v;
        Ok(match self.scale {
            Some(m) => v / problem.weights.inverse(m, x, t)?,
            None => v,
        })
    }
}

/// Direct or dual solver statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverStats {
    pub method: &'static str,
    pub n_primal: usize,
    pub n_multiplier: usize,
    pub factor_nnz: usize,
    pub dynamic_pivots: usize,
    /// Refinement steps (direct) or CG iterations (dual).
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub retries: usize,
    pub condition_before: Option<f64>,
    pub condition_after: Option<f64>,
}

/// Result of a reconstruction.
#[derive(Debug, Clone)]
pub struct ReconstructionReport {
    pub formulation: Formulation,
    pub params: Params,
    pub y: Field,
    pub p: Option<Field>,
    pub lambda: MultiplierField,
    pub mu: Option<MultiplierField>,
    /// Primal unknowns over free DOFs (original variables).
    pub primal_solution: Vec<f64>,
    pub multiplier_solution: Vec<f64>,
    /// `J(y) = 1/2 ||rho_0^{-1}(y - y_obs)||^2_{q_T}`.
    pub cost: f64,
    /// `||rho_0^{-1}(y - y_obs)||_{q_T}`.
    pub misfit: f64,
    /// `||rho_0^{-1} y||_{q_T}`.
    pub observed_norm: f64,
    /// `||rho_0^{-1} y_obs||_{q_T}`.
    pub data_norm: f64,
    /// `||rho^{-1} L y||` or `||rho^{-1} I(y, p)||`.
    pub equation_residual: f64,
    /// `||rho_1^{-1}(c y_x - p)||` for first-order formulations.
    pub flux_residual: Option<f64>,
    /// `||lambda||_{L2}` or `||(lambda, mu)||_{L2}`.
    pub multiplier_norm: f64,
    /// `||y||_Y` or `||(y, p)||_U`.
    pub state_norm: f64,
    pub stats: SolverStats,
}

/// Solver controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub ldl: LdlOptions,
    /// Rescale nodal primal unknowns by `rho_0^{-1}` before factorizing.
    pub renormalize: bool,
    /// Report condition estimates of the primal block before and after rescaling.
    pub estimate_condition: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { ldl: LdlOptions::default(), renormalize: false, estimate_condition: false }
    }
}

/// Factors and solves the full system.
pub fn solve_saddle(sys: &SaddleSystem, opts: &SolveOptions) -> Result<ReconstructionReport> {
    let (work, renorm) = if opts.renormalize && sys.primal_scaling.is_none() {
        let (s, r) = apply_renormalization(sys, opts.estimate_condition)?;
        (s, Some(r))
    } else {
        (sys.clone(), None)
    };
    let k = work.matrix();
    let order = work.ordering();
    let (f, x, info, retries) = factor_and_solve(&k, &work.signs(), &order, &work.rhs(), opts.ldl)?;
    let np = work.n_primal();
    let mut u = x[..np].to_vec();
    if let Some(d) = &work.primal_scaling {
        for (ui, di) in u.iter_mut().zip(d) {
            *ui /= di;
        }
    }
    let (cb, ca) = match renorm {
        Some(r) => (r.condition_before, r.condition_after),
        None if opts.estimate_condition => (Some(primal_condition(&work)?), None),
        None => (None, None),
    };
    let stats = SolverStats {
        method: "direct",
        n_primal: np,
        n_multiplier: work.n_multiplier(),
        factor_nnz: f.factor_nnz(),
        dynamic_pivots: f.dynamic_pivots,
        iterations: info.refinement_steps,
        residual: info.scaled_residual,
        converged: info.scaled_residual < 1e-8,
        retries,
        condition_before: cb,
        condition_after: ca,
    };
    build_report(sys, u, x[np..].to_vec(), stats)
}

/// Factors and solves, escalating the static shift when the factorization
/// breaks down (singular saddle systems, e.g. `r = 0` with an unobserved
/// kernel). Refinement against the unshifted matrix acts as a proximal-point
/// iteration, so consistent singular systems still converge.
fn factor_and_solve(
    k: &CsrMatrix,
    signs: &[i8],
    order: &[usize],
    rhs: &[f64],
    ldl: LdlOptions,
) -> Result<(LdlFactor, Vec<f64>, crate::linalg::SolveInfo, usize)> {
    let mut opts = ldl;
    let mut retries = 0;
    loop {
        let attempt = LdlFactor::new(k, signs, Some(order), opts).and_then(|f| {
            let (x, info) = f.solve(rhs)?;
            Ok((f, x, info))
        });
        match attempt {
            Ok((f, x, info)) => return Ok((f, x, info, retries)),
            Err(Error::FactorizationFailure(msg)) => {
                if opts.static_reg >= MAX_STATIC_REG {
                    return Err(Error::FactorizationFailure(msg));
                }
                log::warn!("factorization failed ({msg}); raising the static shift to {:e}", opts.static_reg * 100.0);
                opts.static_reg = (opts.static_reg.max(1e-12) * 100.0).min(MAX_STATIC_REG);
                retries += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

const MAX_STATIC_REG: f64 = 1e-8;

/// Assembles the report from solution vectors in the original variables.
pub fn build_report(sys: &SaddleSystem, u: Vec<f64>, m: Vec<f64>, stats: SolverStats) -> Result<ReconstructionReport> {
    let fields: Vec<Field> =
        sys.primal.iter().map(|b| Field::from_free(b.space.clone(), &u[b.range()])).collect::<Result<_>>()?;
    let mults: Vec<MultiplierField> = sys
        .multipliers
        .iter()
        .map(|b| Ok(MultiplierField { field: Field::from_free(b.space.clone(), &m[b.range()])?, scale: b.scale }))
        .collect::<Result<_>>()?;
    let res = if sys.formulation.is_first_order() {
        firstorder::state_residuals(&sys.problem, &fields[0], &fields[1])?
    } else {
        secondorder::state_residuals(&sys.problem, &fields[0])?
    };
    let gm = sys.multiplier_gram.matvec(&m);
    let multiplier_norm = crate::linalg::dot(&m, &gm).max(0.0).sqrt();
    let p = &sys.params;
    let state_norm = match res.flux {
        Some(fl) => (res.observed * res.observed + p.eta * fl * fl + p.eta2 * res.equation * res.equation).sqrt(),
        None => (res.observed * res.observed + p.eta * res.equation * res.equation).sqrt(),
    };
    let mut fields = fields.into_iter();
    let mut mults = mults.into_iter();
    let y = fields.next().ok_or_else(|| Error::LayoutMismatch("missing state block".into()))?;
    let lambda = mults.next().unwrap_or_else(|| MultiplierField {
        field: Field::zeros(FemSpace::new(BasisKind::P0, sys.problem.grid, Default::default())),
        scale: None,
    });
    Ok(ReconstructionReport {
        formulation: sys.formulation,
        params: sys.params,
        y,
        p: fields.next(),
        lambda,
        mu: mults.next(),
        primal_solution: u,
        multiplier_solution: m,
        cost: 0.5 * res.misfit * res.misfit,
        misfit: res.misfit,
        observed_norm: res.observed,
        data_norm: res.data,
        equation_residual: res.equation,
        flux_residual: res.flux,
        multiplier_norm,
        state_norm,
        stats,
    })
}

/// Weighted norms of a state evaluated by quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateResiduals {
    pub misfit: f64,
    pub observed: f64,
    pub data: f64,
    pub equation: f64,
    pub flux: Option<f64>,
}

/// Rescaling of the nodal primal unknowns and its effect on conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct Renormalization {
    /// `D_ii`: root mean square of `rho^{-1}` over the support of the node of
    /// each primal unknown.
    pub factors: Vec<f64>,
    pub condition_before: Option<f64>,
    pub condition_after: Option<f64>,
}

fn primal_condition(sys: &SaddleSystem) -> Result<f64> {
    Ok(spd_condition_estimate(&sys.a, Some(&sys.primal_ordering()))?.condition)
}

/// Root mean square of `rho^{-1}` over the cells touching each grid node.
fn nodal_inverse_weights(pb: &Problem) -> Vec<f64> {
    let g = pb.grid;
    let nq = pb.quad.per_cell();
    let mut acc = vec![(0.0, 0.0); g.n_nodes()];
    for cell in 0..g.n_cells() {
        let (ci, cj) = g.cell_coords(cell);
        let (mut s2, mut area) = (0.0, 0.0);
        for (q, p) in pb.quad.cell_points(cell).iter().enumerate() {
            let v = pb.samples.multiplier[cell * nq + q];
            s2 += p.w * v * v;
            area += p.w;
        }
        for (a, b) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let e = &mut acc[g.node_index(ci + a, cj + b)];
            e.0 += s2;
            e.1 += area;
        }
    }
    acc.into_iter().map(|(s2, area)| (s2 / area).sqrt()).collect()
}

/// Change of variable `y = D^{-1} y~`, removing the exponential growth of the
/// weight from the unknowns. `D` is `rho^{-1}` averaged in the mean-square
/// sense over the support of each node, so that a weight varying by orders of
/// magnitude within one cell is represented by its effective size; derivative
/// DOFs share the factor of their node.
pub fn apply_renormalization(sys: &SaddleSystem, estimate: bool) -> Result<(SaddleSystem, Renormalization)> {
    let pb = &sys.problem;
    let nodal = nodal_inverse_weights(pb);
    let mut d = Vec::with_capacity(sys.n_primal());
    for b in &sys.primal {
        for &dof in b.space.free_dofs() {
            let node = b
                .space
                .dof_node(dof)
                .ok_or_else(|| Error::UnsupportedSpace("renormalization needs a nodal primal basis".into()))?;
            d.push(nodal[node].max(1e-300));
        }
    }
    let dinv: Vec<f64> = d.iter().map(|v| 1.0 / v).collect();
    let ones = vec![1.0; sys.n_multiplier()];
    let mut out = sys.clone();
    out.a = sys.a.scaled(&dinv, &dinv);
    out.b = sys.b.scaled(&ones, &dinv);
    out.l1 = sys.l1.iter().zip(&dinv).map(|(v, s)| v * s).collect();
    out.primal_gram = sys.primal_gram.scaled(&dinv, &dinv);
    out.primal_scaling = Some(d.clone());
    let (cb, ca) = if estimate { (Some(primal_condition(sys)?), Some(primal_condition(&out)?)) } else { (None, None) };
    Ok((out, Renormalization { factors: d, condition_before: cb, condition_after: ca }))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::coefficients::Coefficients;
    use crate::grid::{build_grid, quadrature_points};
    use crate::observe::make_observation;
    use crate::problem::MultiplierSpace;
    use crate::secondorder::{assemble_mf, assemble_mf_alpha, assemble_qr, SecondOrderSpaces};
    use crate::weights::{build_beta, WeightFamily};

    pub(crate) fn eigen_problem(n: usize, carleman: bool, sigma: f64) -> Arc<Problem> {
        let grid = build_grid(0.0, 1.0, 0.5, n, n).unwrap();
        let quad = quadrature_points(&grid, 3).unwrap();
        let coeffs = Coefficients::heat(0.0, 1.0);
        let cf = coeffs.closed_form().unwrap();
        let obs = make_observation(&|x: f64, t: f64| cf.y(x, t), (0.25, 0.5), &quad, sigma, 7).unwrap();
        let w = if carleman {
            WeightFamily::carleman_c(build_beta(0.0, 1.0, (0.25, 0.5), 1.0, 1.0, 0.5).unwrap(), 0.5)
                .with_cap(5f64.exp())
        } else {
            WeightFamily::unit(0.5)
        };
        Problem::new(coeffs, w, obs).unwrap()
    }

    /// Relative `L2(Q_T)` error weighted by `rho_0^{-1}`.
    fn rel_l2(y: &Field, f: impl Fn(f64, f64) -> f64, pb: &Problem) -> f64 {
        let (mut e, mut n) = (0.0, 0.0);
        for cell in 0..pb.grid.n_cells() {
            for (q, p) in pb.quad.cell_points(cell).iter().enumerate() {
                let v = y.eval_local(cell, pb.quad.local[q], crate::grid::DerivLevel::Value).unwrap().v;
                let w = pb.weights.inverse(Member::Observation, p.x, p.t).unwrap().powi(2);
                e += p.w * w * (v - f(p.x, p.t)).powi(2);
                n += p.w * w * f(p.x, p.t).powi(2);
            }
        }
        (e / n).sqrt()
    }

    #[test]
    fn mf_recovers_eigenmode() {
        for (n, carleman) in [(8, false), (8, true), (16, true)] {
            let pb = eigen_problem(n, carleman, 0.0);
            let cf = pb.coeffs.closed_form().unwrap();
            let sys = assemble_mf(&pb, &SecondOrderSpaces::default(), &Params::default()).unwrap();
            assert!(sys.matrix().is_symmetric(0.0));
            let rep = solve_saddle(&sys, &SolveOptions::default()).unwrap();
            let err = rel_l2(&rep.y, |x, t| cf.y(x, t), &pb);
            eprintln!("carleman={carleman} err={err:e} misfit={:e} lam={:e} res={:e}", rep.misfit, rep.multiplier_norm, rep.stats.residual);
            assert!(err < 0.02);
            assert!(rep.observed_norm <= rep.data_norm * (1.0 + 1e-10));
        }
    }

    #[test]
    fn alpha_and_qr_run() {
        let pb = eigen_problem(6, false, 0.0);
        let cf = pb.coeffs.closed_form().unwrap();
        let sp = SecondOrderSpaces { multiplier: MultiplierSpace::Hermite, ..Default::default() };
        let mf = solve_saddle(&assemble_mf(&pb, &sp, &Params::default()).unwrap(), &SolveOptions::default()).unwrap();
        let al = solve_saddle(&assemble_mf_alpha(&pb, &sp, &Params::default()).unwrap(), &SolveOptions::default()).unwrap();
        let qr = solve_saddle(&assemble_qr(&pb, BasisKind::HermiteC1, &Params { eps: 1e-6, ..Default::default() }).unwrap(), &SolveOptions::default()).unwrap();
        for (n, r) in [("mf", &mf), ("alpha", &al), ("qr", &qr)] {
            eprintln!("{n} err={:e} misfit={:e}", rel_l2(&r.y, |x, t| cf.y(x, t), &pb), r.misfit);
        }
    }
}
