//! Second-order formulations in `y` on the C1 Hermite space: the mixed
//! formulation, its stabilized variant and the quasi-reversibility baseline.

use std::sync::Arc;

use crate::assembly::{for_cells, local_map, scatter_vec, LocalMatrix, PointData};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{BasisEval, BasisKind, BasisTable, Constraints, DerivLevel, FemSpace};
use crate::linalg::{CsrMatrix, TripletBuilder};
use crate::problem::{Formulation, MultiplierSpace, Params, Problem};
use crate::saddle::{blocks, SaddleSystem, StateResiduals};
use crate::weights::Member;

/// Primal and multiplier spaces of a second-order formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecondOrderSpaces {
    pub primal: BasisKind,
    pub multiplier: MultiplierSpace,
}

impl Default for SecondOrderSpaces {
    fn default() -> Self {
        SecondOrderSpaces { primal: BasisKind::HermiteC1, multiplier: MultiplierSpace::P0 }
    }
}

pub(crate) fn state_space(pb: &Problem) -> Arc<FemSpace> {
    FemSpace::new(BasisKind::HermiteC1, pb.grid, Constraints::LATERAL)
}

/// The multiplier space and, for the `phi` parameterization, its weight.
pub(crate) fn multiplier_space(pb: &Problem, kind: MultiplierSpace) -> (Arc<FemSpace>, Option<Member>) {
    match kind {
        MultiplierSpace::P0 => (FemSpace::new(BasisKind::P0, pb.grid, Constraints::NONE), None),
        MultiplierSpace::Q1 => {
            (FemSpace::new(BasisKind::Q1, pb.grid, Constraints::LATERAL_TERMINAL), Some(Member::Multiplier))
        }
        MultiplierSpace::Hermite => {
            (FemSpace::new(BasisKind::HermiteC1, pb.grid, Constraints::LATERAL_TERMINAL), Some(Member::Multiplier))
        }
    }
}

pub(crate) fn level_for(kind: BasisKind) -> DerivLevel {
    match kind {
        BasisKind::P0 => DerivLevel::Value,
        BasisKind::Q1 => DerivLevel::First,
        BasisKind::HermiteC1 => DerivLevel::Second,
    }
}

/// `L phi = phi_t - (c phi_x)_x + d phi` for every local basis function.
pub(crate) fn apply_l(e: &BasisEval, p: &PointData) -> Vec<f64> {
    (0..e.value.len()).map(|k| e.dt[k] - p.c * e.dxx[k] - p.c_x * e.dx[k] + p.d * e.value[k]).collect()
}

/// `L* phi = -phi_t - (c phi_x)_x + d phi`.
pub(crate) fn apply_lstar(e: &BasisEval, p: &PointData) -> Vec<f64> {
    (0..e.value.len()).map(|k| -e.dt[k] - p.c * e.dxx[k] - p.c_x * e.dx[k] + p.d * e.value[k]).collect()
}

fn check_primal(kind: BasisKind) -> Result<()> {
    if kind != BasisKind::HermiteC1 {
        return Err(Error::UnsupportedSpace(format!(
            "{} primal space has no second x-derivative; L y needs the Hermite space",
            kind.name()
        )));
    }
    Ok(())
}

/// Mixed formulation with augmentation `r`.
pub fn assemble_mf(pb: &Arc<Problem>, spaces: &SecondOrderSpaces, params: &Params) -> Result<SaddleSystem> {
    params.validate(Formulation::Mf)?;
    check_primal(spaces.primal)?;
    assemble(pb, Formulation::Mf, spaces.multiplier, params)
}

/// Stabilized mixed formulation; the multiplier `phi = rho^{-1} lambda` lives
/// in the masked Hermite space so that `L* phi` is square integrable.
pub fn assemble_mf_alpha(pb: &Arc<Problem>, spaces: &SecondOrderSpaces, params: &Params) -> Result<SaddleSystem> {
    params.validate(Formulation::MfAlpha)?;
    check_primal(spaces.primal)?;
    if spaces.multiplier != MultiplierSpace::Hermite {
        return Err(Error::UnsupportedSpace(format!(
            "the stabilized formulation needs L* on the multiplier; {} cannot provide it",
            spaces.multiplier.name()
        )));
    }
    assemble(pb, Formulation::MfAlpha, spaces.multiplier, params)
}

fn assemble(pb: &Arc<Problem>, form: Formulation, mkind: MultiplierSpace, params: &Params) -> Result<SaddleSystem> {
    let ys = state_space(pb);
    let (ms, scale) = multiplier_space(pb, mkind);
    let ty = BasisTable::new(&ys, &pb.quad, DerivLevel::Second)?;
    let tm = BasisTable::new(&ms, &pb.quad, level_for(ms.kind))?;
    let alpha = if form == Formulation::MfAlpha { params.alpha } else { 0.0 };
    let (r, eta) = (params.r, params.eta);
    let (np, nm) = (ys.n_free(), ms.n_free());
    let (ny, nl) = (ys.local_count(), ms.local_count());

    let mut ta = TripletBuilder::new(np, np);
    let mut tg = TripletBuilder::new(np, np);
    let mut tb = TripletBuilder::new(nm, np);
    let mut tc = TripletBuilder::new(nm, nm);
    let mut tmg = TripletBuilder::new(nm, nm);
    let mut tsg = TripletBuilder::new(nm, nm);
    let mut l1 = vec![0.0; np];
    let mut l2 = vec![0.0; nm];

    for_cells(pb, |cell, pts| {
        let ymap = local_map(&ys, cell, 0);
        let mmap = local_map(&ms, cell, 0);
        let mut a = LocalMatrix::new(ny, ny);
        let mut g = LocalMatrix::new(ny, ny);
        let mut b = LocalMatrix::new(nl, ny);
        let mut c = LocalMatrix::new(nl, nl);
        let mut mg = LocalMatrix::new(nl, nl);
        let mut sg = LocalMatrix::new(nl, nl);
        let mut f1 = vec![0.0; ny];
        let mut f2 = vec![0.0; nl];
        for (q, p) in pts.iter().enumerate() {
            let ey = &ty.points[q];
            let em = &tm.points[q];
            let y = &ey.value;
            let ly = apply_l(ey, p);
            let w2 = p.w * p.inv * p.inv;
            let wo = if p.obs.is_some() { p.w * p.inv0 * p.inv0 } else { 0.0 };
            a.rank1((1.0 - alpha) * wo, y, y);
            a.rank1(r * w2, &ly, &ly);
            g.rank1(wo, y, y);
            g.rank1(eta * w2, &ly, &ly);
            if let Some(v) = p.obs {
                for (f, yk) in f1.iter_mut().zip(y) {
                    *f += (1.0 - alpha) * wo * v * yk;
                }
            }
            let psi = &em.value;
            match scale {
                None => {
                    b.rank1(p.w * p.inv, psi, &ly);
                    mg.rank1(p.w, psi, psi);
                }
                Some(_) => {
                    b.rank1(p.w, psi, &ly);
                    mg.rank1(p.w / (p.inv * p.inv), psi, psi);
                }
            }
            if alpha > 0.0 {
                let ls = apply_lstar(em, p);
                let rho0_sq = 1.0 / (p.inv0 * p.inv0);
                if let Some(v) = p.obs {
                    b.rank1(-alpha * p.w, &ls, y);
                    for (f, l) in f2.iter_mut().zip(&ls) {
                        *f -= alpha * p.w * v * l;
                    }
                }
                c.rank1(alpha * p.w * rho0_sq, &ls, &ls);
                sg.rank1(p.w, psi, psi);
                sg.rank1(p.w * rho0_sq, &ls, &ls);
            }
        }
        a.scatter_sym(&mut ta, &ymap);
        g.scatter_sym(&mut tg, &ymap);
        b.scatter(&mut tb, &mmap, &ymap);
        mg.scatter_sym(&mut tmg, &mmap);
        if alpha > 0.0 {
            c.scatter_sym(&mut tc, &mmap);
            sg.scatter_sym(&mut tsg, &mmap);
        }
        scatter_vec(&mut l1, &ymap, &f1);
        scatter_vec(&mut l2, &mmap, &f2);
        Ok(())
    })?;

    let stab = alpha > 0.0;
    Ok(SaddleSystem {
        formulation: form,
        params: *params,
        problem: pb.clone(),
        primal: blocks(vec![("y", ys, None)]),
        multipliers: blocks(vec![(if scale.is_some() { "phi" } else { "lambda" }, ms, scale)]),
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

/// Quasi-reversibility: `(G_L + a) + eps (a + eta G_L)` with
/// `G_L = (rho^{-1} L y, rho^{-1} L y')` and `a = (rho_0^{-1} y, rho_0^{-1} y')_{q_T}`.
/// With `qr_unweighted` all weights are one. Returned as a system without multipliers.
pub fn assemble_qr(pb: &Arc<Problem>, primal: BasisKind, params: &Params) -> Result<SaddleSystem> {
    params.validate(Formulation::Qr)?;
    check_primal(primal)?;
    let ys = state_space(pb);
    let ty = BasisTable::new(&ys, &pb.quad, DerivLevel::Second)?;
    let np = ys.n_free();
    let ny = ys.local_count();
    let (eps, eta) = (params.eps, params.eta);
    let mut ta = TripletBuilder::new(np, np);
    let mut tg = TripletBuilder::new(np, np);
    let mut l1 = vec![0.0; np];
    for_cells(pb, |cell, pts| {
        let ymap = local_map(&ys, cell, 0);
        let mut a = LocalMatrix::new(ny, ny);
        let mut g = LocalMatrix::new(ny, ny);
        let mut f1 = vec![0.0; ny];
        for (q, p) in pts.iter().enumerate() {
            let p = if params.qr_unweighted { p.unweighted() } else { *p };
            let e = &ty.points[q];
            let ly = apply_l(e, &p);
            let w2 = p.w * p.inv * p.inv;
            let wo = if p.obs.is_some() { p.w * p.inv0 * p.inv0 } else { 0.0 };
            a.rank1(wo * (1.0 + eps), &e.value, &e.value);
            a.rank1(w2 * (1.0 + eps * eta), &ly, &ly);
            g.rank1(wo, &e.value, &e.value);
            g.rank1(eta * w2, &ly, &ly);
            if let Some(v) = p.obs {
                for (f, yk) in f1.iter_mut().zip(&e.value) {
                    *f += wo * v * yk;
                }
            }
        }
        a.scatter_sym(&mut ta, &ymap);
        g.scatter_sym(&mut tg, &ymap);
        scatter_vec(&mut l1, &ymap, &f1);
        Ok(())
    })?;
    Ok(SaddleSystem {
        formulation: Formulation::Qr,
        params: *params,
        problem: pb.clone(),
        primal: blocks(vec![("y", ys, None)]),
        multipliers: Vec::new(),
        a: ta.build(),
        b: CsrMatrix::zeros(0, np),
        c: None,
        l1,
        l2: Vec::new(),
        primal_gram: tg.build(),
        multiplier_gram: CsrMatrix::zeros(0, 0),
        stabilized_gram: None,
        primal_scaling: None,
    })
}

/// `theta_1 = min(1 - alpha, r / eta)`.
pub fn theta1(params: &Params) -> f64 {
    (1.0 - params.alpha).min(params.r / params.eta)
}

/// Weighted norms of a second-order state.
pub fn state_residuals(pb: &Problem, y: &Field) -> Result<StateResiduals> {
    let ty = BasisTable::new(&y.space, &pb.quad, DerivLevel::Second)?;
    let (mut mis, mut obs, mut dat, mut eq) = (0.0, 0.0, 0.0, 0.0);
    for_cells(pb, |cell, pts| {
        let dofs = y.space.cell_dofs(cell);
        for (q, p) in pts.iter().enumerate() {
            let e = &ty.points[q];
            let ly = apply_l(e, p);
            let (mut v, mut l) = (0.0, 0.0);
            for (k, &d) in dofs.iter().enumerate() {
                v += y.values[d] * e.value[k];
                l += y.values[d] * ly[k];
            }
            eq += p.w * (p.inv * l).powi(2);
            if let Some(o) = p.obs {
                mis += p.w * (p.inv0 * (v - o)).powi(2);
                obs += p.w * (p.inv0 * v).powi(2);
                dat += p.w * (p.inv0 * o).powi(2);
            }
        }
        Ok(())
    })?;
    Ok(StateResiduals { misfit: mis.sqrt(), observed: obs.sqrt(), data: dat.sqrt(), equation: eq.sqrt(), flux: None })
}
