//! First-order formulations in the pair `(y, p)` with `I(y, p) = y_t - p_x + d y`
//! and `J(y, p) = c y_x - p`.

use std::sync::Arc;

use crate::assembly::{for_cells, local_map, scatter_vec, LocalMatrix, PointData};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{BasisEval, BasisKind, BasisTable, Constraints, DerivLevel, FemSpace};
use crate::linalg::TripletBuilder;
use crate::problem::{Formulation, MultiplierSpace, Params, Problem};
use crate::saddle::{blocks, SaddleSystem, StateResiduals};
use crate::weights::Member;

/// State and flux on continuous bilinear spaces.
#[derive(Debug, Clone)]
pub struct PairField {
    /// Zero on the lateral boundary.
    pub y: Field,
    pub p: Field,
}

impl PairField {
    pub fn new(y: Field, p: Field) -> Result<PairField> {
        if y.space.kind != BasisKind::Q1 || p.space.kind != BasisKind::Q1 {
            return Err(Error::UnsupportedSpace("the pair lives on Q1 x Q1".into()));
        }
        if !y.space.grid.same_layout(&p.space.grid) {
            return Err(Error::LayoutMismatch("y and p on different grids".into()));
        }
        Ok(PairField { y, p })
    }
}

pub(crate) fn pair_spaces(pb: &Problem) -> (Arc<FemSpace>, Arc<FemSpace>) {
    (FemSpace::new(BasisKind::Q1, pb.grid, Constraints::LATERAL), FemSpace::new(BasisKind::Q1, pb.grid, Constraints::NONE))
}

/// Values of `(I, J)` at every quadrature point, in quadrature order.
pub fn apply_ij(pb: &Problem, pair: &PairField) -> Result<Vec<(f64, f64)>> {
    let ty = BasisTable::new(&pair.y.space, &pb.quad, DerivLevel::First)?;
    let tp = BasisTable::new(&pair.p.space, &pb.quad, DerivLevel::First)?;
    let mut out = Vec::with_capacity(pb.quad.points().len());
    for_cells(pb, |cell, pts| {
        let yd = pair.y.space.cell_dofs(cell);
        let pd = pair.p.space.cell_dofs(cell);
        for (q, pt) in pts.iter().enumerate() {
            let (ey, ep) = (&ty.points[q], &tp.points[q]);
            let (mut i, mut j) = (0.0, 0.0);
            for k in 0..4 {
                let yv = pair.y.values[yd[k]];
                let pv = pair.p.values[pd[k]];
                i += yv * (ey.dt[k] + pt.d * ey.value[k]) - pv * ep.dx[k];
                j += yv * pt.c * ey.dx[k] - pv * ep.value[k];
            }
            out.push((i, j));
        }
        Ok(())
    })?;
    Ok(out)
}

/// Primal features over the concatenated local basis `(y_0..y_3, p_0..p_3)`.
struct PrimalFeatures {
    y: Vec<f64>,
    i: Vec<f64>,
    j: Vec<f64>,
}

fn primal_features(ey: &BasisEval, ep: &BasisEval, pt: &PointData) -> PrimalFeatures {
    let mut f = PrimalFeatures { y: vec![0.0; 8], i: vec![0.0; 8], j: vec![0.0; 8] };
    for k in 0..4 {
        f.y[k] = ey.value[k];
        f.i[k] = ey.dt[k] + pt.d * ey.value[k];
        f.j[k] = pt.c * ey.dx[k];
        f.i[4 + k] = -ep.dx[k];
        f.j[4 + k] = -ep.value[k];
    }
    f
}

/// First-order mixed formulation with augmentation `(r1, r2)`; multipliers
/// `(lambda, mu)` on P0 x P0, or `(phi, sigma) = (rho^{-1} lambda, rho_1^{-1} mu)` on Q1 x Q1.
pub fn assemble_mf4(pb: &Arc<Problem>, multiplier: MultiplierSpace, params: &Params) -> Result<SaddleSystem> {
    params.validate(Formulation::Mf4)?;
    if multiplier == MultiplierSpace::Hermite {
        return Err(Error::UnsupportedSpace("first-order multipliers are P0 x P0 or Q1 x Q1".into()));
    }
    assemble(pb, Formulation::Mf4, multiplier, params)
}

/// Stabilized first-order formulation with `(alpha1, alpha2)`; multipliers
/// `(phi, sigma)` on Q1 x Q1 with `phi` zero on the lateral boundary and at `t = T`.
pub fn assemble_mf4_alpha(pb: &Arc<Problem>, multiplier: MultiplierSpace, params: &Params) -> Result<SaddleSystem> {
    params.validate(Formulation::Mf4Alpha)?;
    if multiplier != MultiplierSpace::Q1 {
        return Err(Error::UnsupportedSpace(format!(
            "the stabilized first-order formulation needs I* on the multiplier; {} cannot provide it",
            multiplier.name()
        )));
    }
    if !(params.r > 0.0 && params.r2 > 0.0) {
        return Err(Error::InvalidParameter("the stabilized first-order formulation needs r1, r2 > 0".into()));
    }
    assemble(pb, Formulation::Mf4Alpha, multiplier, params)
}

fn assemble(pb: &Arc<Problem>, form: Formulation, mkind: MultiplierSpace, params: &Params) -> Result<SaddleSystem> {
    let (ys, ps) = pair_spaces(pb);
    let (ls, ms, scale) = match mkind {
        MultiplierSpace::P0 => {
            let s = FemSpace::new(BasisKind::P0, pb.grid, Constraints::NONE);
            (s.clone(), s, [None, None])
        }
        _ => (
            FemSpace::new(BasisKind::Q1, pb.grid, Constraints::LATERAL_TERMINAL),
            FemSpace::new(BasisKind::Q1, pb.grid, Constraints::NONE),
            [Some(Member::Multiplier), Some(Member::Flux)],
        ),
    };
    let phi = scale[0].is_some();
    let ty = BasisTable::new(&ys, &pb.quad, DerivLevel::First)?;
    let tp = BasisTable::new(&ps, &pb.quad, DerivLevel::First)?;
    let lvl = if phi { DerivLevel::First } else { DerivLevel::Value };
    let tl = BasisTable::new(&ls, &pb.quad, lvl)?;
    let (a1, a2) = if form == Formulation::Mf4Alpha { (params.alpha, params.alpha2) } else { (0.0, 0.0) };
    let stab = a1 > 0.0;
    let (r1, r2, e1, e2) = (params.r, params.r2, params.eta, params.eta2);

    let (ny, npp) = (ys.n_free(), ps.n_free());
    let np = ny + npp;
    let (nl, nmu) = (ls.n_free(), ms.n_free());
    let nm = nl + nmu;
    let kl = ls.local_count();

    let mut ta = TripletBuilder::new(np, np);
    let mut tg = TripletBuilder::new(np, np);
    let mut tb = TripletBuilder::new(nm, np);
    let mut tc = TripletBuilder::new(nm, nm);
    let mut tmg = TripletBuilder::new(nm, nm);
    let mut tsg = TripletBuilder::new(nm, nm);
    let mut l1 = vec![0.0; np];
    let mut l2 = vec![0.0; nm];

    for_cells(pb, |cell, pts| {
        let mut pmap = local_map(&ys, cell, 0);
        pmap.extend(local_map(&ps, cell, ny));
        let mut mmap = local_map(&ls, cell, 0);
        mmap.extend(local_map(&ms, cell, nl));
        let mut a = LocalMatrix::new(8, 8);
        let mut g = LocalMatrix::new(8, 8);
        let mut b = LocalMatrix::new(2 * kl, 8);
        let mut c = LocalMatrix::new(2 * kl, 2 * kl);
        let mut mg = LocalMatrix::new(2 * kl, 2 * kl);
        let mut sg = LocalMatrix::new(2 * kl, 2 * kl);
        let mut f1 = vec![0.0; 8];
        let mut f2 = vec![0.0; 2 * kl];
        for (q, pt) in pts.iter().enumerate() {
            let f = primal_features(&ty.points[q], &tp.points[q], pt);
            let wo = if pt.obs.is_some() { pt.w * pt.inv0 * pt.inv0 } else { 0.0 };
            let wi = pt.w * pt.inv * pt.inv;
            let wj = pt.w * pt.inv1 * pt.inv1;
            a.rank1((1.0 - a1) * wo, &f.y, &f.y);
            a.rank1(r1 * wj, &f.j, &f.j);
            a.rank1(r2 * wi, &f.i, &f.i);
            g.rank1(wo, &f.y, &f.y);
            g.rank1(e1 * wj, &f.j, &f.j);
            g.rank1(e2 * wi, &f.i, &f.i);
            if let Some(v) = pt.obs {
                for (o, yk) in f1.iter_mut().zip(&f.y) {
                    *o += (1.0 - a1) * wo * v * yk;
                }
            }
            // multiplier features over (lambda locals, mu locals)
            let em = &tl.points[q];
            let mut lam = vec![0.0; 2 * kl];
            let mut mu = vec![0.0; 2 * kl];
            lam[..kl].copy_from_slice(&em.value);
            mu[kl..].copy_from_slice(&em.value);
            if phi {
                b.rank1(pt.w, &lam, &f.i);
                b.rank1(pt.w, &mu, &f.j);
                mg.rank1(pt.w / (pt.inv * pt.inv), &lam, &lam);
                mg.rank1(pt.w / (pt.inv1 * pt.inv1), &mu, &mu);
            } else {
                b.rank1(pt.w * pt.inv, &lam, &f.i);
                b.rank1(pt.w * pt.inv1, &mu, &f.j);
                mg.rank1(pt.w, &lam, &lam);
                mg.rank1(pt.w, &mu, &mu);
            }
            if stab {
                // I*(phi, sigma) = -phi_t - sigma_x + d phi, J(phi, sigma) = c phi_x - sigma
                let mut istar = vec![0.0; 2 * kl];
                let mut jm = vec![0.0; 2 * kl];
                let mut dphi = vec![0.0; 2 * kl];
                for k in 0..kl {
                    istar[k] = -em.dt[k] + pt.d * em.value[k];
                    istar[kl + k] = -em.dx[k];
                    jm[k] = pt.c * em.dx[k];
                    jm[kl + k] = -em.value[k];
                    dphi[k] = em.dx[k];
                }
                let rho0_sq = 1.0 / (pt.inv0 * pt.inv0);
                if let Some(v) = pt.obs {
                    b.rank1(-a1 * pt.w, &istar, &f.y);
                    for (o, s) in f2.iter_mut().zip(&istar) {
                        *o -= a1 * pt.w * v * s;
                    }
                }
                c.rank1(a1 * pt.w * rho0_sq, &istar, &istar);
                c.rank1(a2 * pt.w, &jm, &jm);
                sg.rank1(pt.w, &mu, &mu);
                sg.rank1(wi, &dphi, &dphi);
                sg.rank1(pt.w * rho0_sq, &istar, &istar);
            }
        }
        a.scatter_sym(&mut ta, &pmap);
        g.scatter_sym(&mut tg, &pmap);
        b.scatter(&mut tb, &mmap, &pmap);
        mg.scatter_sym(&mut tmg, &mmap);
        if stab {
            c.scatter_sym(&mut tc, &mmap);
            sg.scatter_sym(&mut tsg, &mmap);
        }
        scatter_vec(&mut l1, &pmap, &f1);
        scatter_vec(&mut l2, &mmap, &f2);
        Ok(())
    })?;

    let names = if phi { ["phi", "sigma"] } else { ["lambda", "mu"] };
    Ok(SaddleSystem {
        formulation: form,
        params: *params,
        problem: pb.clone(),
        primal: blocks(vec![("y", ys, None), ("p", ps, None)]),
        multipliers: blocks(vec![(names[0], ls, scale[0]), (names[1], ms, scale[1])]),
        a: ta.build(),
        b: tb.build(),
        c: if stab { Some(tc.build()) } else { None },
        l1,
        l2,
        primal_gram: tg.build(),
        multiplier_gram: tmg.build(),
        stabilized_gram: if stab { Some(tsg.build()) } else { None },
        primal_scaling: None,
    })
}

/// `theta_1 = min(1 - alpha1, r1 / eta1, r2 / eta2)`.
pub fn theta1(params: &Params) -> f64 {
    (1.0 - params.alpha).min(params.r / params.eta).min(params.r2 / params.eta2)
}

/// Continuous inf-sup constant
/// `(max(C rho_*^{-2} |rho_1|^2 + eta1, C rho_*^{-2} |rho|^2 + eta2))^{-1/2}`.
pub fn infsup_constant(c_omega_t: f64, rho_star: f64, rho1_sup: f64, rho_sup: f64, eta1: f64, eta2: f64) -> f64 {
    let k = c_omega_t / (rho_star * rho_star);
    (k * rho1_sup * rho1_sup + eta1).max(k * rho_sup * rho_sup + eta2).powf(-0.5)
}

/// Weighted norms of a first-order state.
pub fn state_residuals(pb: &Problem, y: &Field, p: &Field) -> Result<StateResiduals> {
    let pair = PairField::new(y.clone(), p.clone())?;
    let ij = apply_ij(pb, &pair)?;
    let ty = BasisTable::new(&y.space, &pb.quad, DerivLevel::Value)?;
    let nq = pb.quad.per_cell();
    let (mut mis, mut obs, mut dat, mut eq, mut fl) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for_cells(pb, |cell, pts| {
        let dofs = y.space.cell_dofs(cell);
        for (q, pt) in pts.iter().enumerate() {
            let (i, j) = ij[cell * nq + q];
            eq += pt.w * (pt.inv * i).powi(2);
            fl += pt.w * (pt.inv1 * j).powi(2);
            if let Some(o) = pt.obs {
                let v: f64 = dofs.iter().zip(&ty.points[q].value).map(|(&d, b)| y.values[d] * b).sum();
                mis += pt.w * (pt.inv0 * (v - o)).powi(2);
                obs += pt.w * (pt.inv0 * v).powi(2);
                dat += pt.w * (pt.inv0 * o).powi(2);
            }
        }
        Ok(())
    })?;
    Ok(StateResiduals {
        misfit: mis.sqrt(),
        observed: obs.sqrt(),
        data: dat.sqrt(),
        equation: eq.sqrt(),
        flux: Some(fl.sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::Coefficients;
    use crate::grid::{build_grid, quadrature_points};
    use crate::linalg::CsrMatrix;
    use crate::observe::make_observation;
    use crate::saddle::tests::eigen_problem;
    use crate::saddle::{solve_saddle, SolveOptions};
    use crate::weights::WeightFamily;
    use std::f64::consts::PI;

    fn diff(a: &CsrMatrix, b: &CsrMatrix) -> f64 {
        a.add(1.0, b, -1.0).max_abs()
    }

    fn ij_norms(pb: &Problem, pair: &PairField) -> (f64, f64) {
        let ij = apply_ij(pb, pair).unwrap();
        let (mut i2, mut j2) = (0.0, 0.0);
        for ((i, j), q) in ij.iter().zip(pb.quad.points()) {
            i2 += q.w * i * i;
            j2 += q.w * j * j;
        }
        (i2.sqrt(), j2.sqrt())
    }

    #[test]
    fn dof_partition_on_four_by_four() {
        let pb = eigen_problem(4, false, 0.0);
        let sys = assemble_mf4(&pb, MultiplierSpace::P0, &Params::default()).unwrap();
        assert_eq!(sys.n_primal(), 2 * 25 - 10);
        assert_eq!(sys.n_multiplier(), 2 * 16);
    }

    #[test]
    fn systems_are_symmetric() {
        let pb = eigen_problem(4, true, 0.0);
        let p = Params::default();
        for sys in [
            assemble_mf4(&pb, MultiplierSpace::P0, &p).unwrap(),
            assemble_mf4(&pb, MultiplierSpace::Q1, &p).unwrap(),
            assemble_mf4_alpha(&pb, MultiplierSpace::Q1, &p).unwrap(),
        ] {
            assert!(sys.matrix().is_symmetric(0.0));
        }
    }

    #[test]
    fn zero_observation_gives_zero() {
        let grid = build_grid(0.0, 1.0, 0.5, 4, 4).unwrap();
        let quad = quadrature_points(&grid, 3).unwrap();
        let obs = make_observation(&|_: f64, _: f64| 0.0, (0.25, 0.5), &quad, 0.0, 1).unwrap();
        let pb = Problem::new(Coefficients::heat(0.0, 1.0), WeightFamily::unit(0.5), obs).unwrap();
        let sys = assemble_mf4(&pb, MultiplierSpace::P0, &Params::default()).unwrap();
        let rep = solve_saddle(&sys, &SolveOptions::default()).unwrap();
        assert!(rep.primal_solution.iter().chain(&rep.multiplier_solution).all(|v| *v == 0.0));
    }

    #[test]
    fn theta1_and_continuous_infsup() {
        let p = Params { alpha: 0.5, r: 3.0, eta: 3.0, r2: 0.5, eta2: 0.5, ..Params::default() };
        assert_eq!(theta1(&p), 0.5);
        assert!((infsup_constant(1.0, 1.0, 1.0, 1.0, 1.0, 1.0) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn space_checks() {
        let pb = eigen_problem(4, false, 0.0);
        let p = Params::default();
        assert!(matches!(assemble_mf4(&pb, MultiplierSpace::Hermite, &p), Err(Error::UnsupportedSpace(_))));
        assert!(matches!(assemble_mf4_alpha(&pb, MultiplierSpace::P0, &p), Err(Error::UnsupportedSpace(_))));
        let zero = Params { r: 0.0, ..p };
        assert!(assemble_mf4_alpha(&pb, MultiplierSpace::Q1, &zero).is_err());
        let (ys, _) = pair_spaces(&pb);
        let h = FemSpace::new(BasisKind::HermiteC1, pb.grid, Constraints::NONE);
        assert!(matches!(PairField::new(Field::zeros(ys), Field::zeros(h)), Err(Error::UnsupportedSpace(_))));
    }

    #[test]
    fn interpolated_eigenmode_pair_is_consistent() {
        // (y, p) = (e^{-pi^2 t} sin(pi x), pi e^{-pi^2 t} cos(pi x)) with c = 1, d = 0
        let norms: Vec<(f64, f64)> = [4, 8, 16]
            .iter()
            .map(|&n| {
                let pb = eigen_problem(n, false, 0.0);
                let (ys, ps) = pair_spaces(&pb);
                let y = Field::interpolate(ys, |x, t| (-PI * PI * t).exp() * (PI * x).sin());
                let p = Field::interpolate(ps, |x, t| PI * (-PI * PI * t).exp() * (PI * x).cos());
                ij_norms(&pb, &PairField::new(y, p).unwrap())
            })
            .collect();
        for w in norms.windows(2) {
            assert!((w[0].0 / w[1].0).log2() > 0.9, "{norms:?}");
            assert!((w[0].1 / w[1].1).log2() > 0.9, "{norms:?}");
        }
    }

    #[test]
    fn flux_of_a_linear_profile_is_exact() {
        // y = t x is linear in x, so p = y_x = t lies in Q1 and J vanishes exactly
        let pb = eigen_problem(4, false, 0.0);
        let free = FemSpace::new(BasisKind::Q1, pb.grid, Constraints::NONE);
        let y = Field::interpolate(free.clone(), |x, t| t * x);
        let p = Field::interpolate(free, |_, t| t);
        let ij = apply_ij(&pb, &PairField::new(y, p).unwrap()).unwrap();
        assert!(ij.iter().all(|(_, j)| j.abs() < 1e-14));
        // I = y_t - p_x = x
        for ((i, _), q) in ij.iter().zip(pb.quad.points()) {
            assert!((i - q.x).abs() < 1e-13);
        }
    }

    #[test]
    fn alpha_blocks_converge_linearly() {
        // with c = 1 the multiplier change (rho phi, rho_1 c^{-1} sigma) is the Q1 parameterization of mf4
        let pb = eigen_problem(4, true, 0.0);
        let base = assemble_mf4(&pb, MultiplierSpace::Q1, &Params::default()).unwrap();
        let gaps: Vec<(f64, f64)> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&a| {
                let p = Params { alpha: a, alpha2: a, ..Params::default() };
                let s = assemble_mf4_alpha(&pb, MultiplierSpace::Q1, &p).unwrap();
                (diff(&s.a, &base.a), diff(&s.b, &base.b))
            })
            .collect();
        for w in gaps.windows(2) {
            assert!((w[1].0 / w[0].0 - 0.1).abs() < 1e-6);
            assert!((w[1].1 / w[0].1 - 0.1).abs() < 1e-6);
        }
    }
}
