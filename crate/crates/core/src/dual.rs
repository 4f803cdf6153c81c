//! Dual operators `T_r` and conjugate-gradient minimization of the dual functional.

use crate::error::{Error, Result};
use crate::linalg::{dot, pcg, CgResult, CsrMatrix, LdlFactor, LdlOptions};
use crate::saddle::{build_report, ReconstructionReport, SaddleSystem, SolverStats};

/// `T_r = M^{-1} B A_r^{-1} B^T` on the multiplier space, with `M` the `L2`
/// Gram matrix of the multipliers.
#[derive(Debug)]
pub struct DualOperator {
    pub system: SaddleSystem,
    a_factor: LdlFactor,
    m_factor: LdlFactor,
    /// `r`, or `min(r1, r2)` for the first-order formulations.
    pub r: f64,
}

fn spd_options() -> LdlOptions {
    LdlOptions { static_reg: 0.0, ..LdlOptions::default() }
}

impl DualOperator {
    /// Factorizes `A_r` and the multiplier mass matrix once.
    pub fn new(system: &SaddleSystem) -> Result<DualOperator> {
        if system.c.is_some() {
            return Err(Error::UnsupportedSpace("the dual solver handles the unstabilized formulations".into()));
        }
        if system.n_multiplier() == 0 {
            return Err(Error::UnsupportedSpace("the system has no multipliers".into()));
        }
        let p = &system.params;
        let r = if system.formulation.is_first_order() { p.r.min(p.r2) } else { p.r };
        if !(r > 0.0) {
            return Err(Error::SingularAr);
        }
        let np = system.n_primal();
        let a_factor = LdlFactor::new(&system.a, &vec![1; np], Some(&system.primal_ordering()), spd_options())
            .map_err(|_| Error::SingularAr)?;
        if a_factor.dynamic_pivots > 0 {
            return Err(Error::SingularAr);
        }
        let nm = system.n_multiplier();
        let m_factor =
            LdlFactor::new(&system.multiplier_gram, &vec![1; nm], Some(&system.multiplier_ordering()), spd_options())?;
        Ok(DualOperator { system: system.clone(), a_factor, m_factor, r })
    }

    pub fn dim(&self) -> usize {
        self.system.n_multiplier()
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.system.multiplier_gram
    }

    fn solve_a(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.a_factor.solve(rhs)?.0)
    }

    fn solve_m(&self, rhs: &[f64]) -> Vec<f64> {
        self.m_factor.solve(rhs).map(|r| r.0).unwrap_or_else(|_| rhs.to_vec())
    }

    /// `S lambda = B A_r^{-1} B^T lambda`.
    pub fn apply_schur(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        let y = self.solve_a(&self.system.b.matvec_t(lambda))?;
        Ok(self.system.b.matvec(&y))
    }

    /// `T_r lambda`, expressed in multiplier coordinates.
    pub fn apply_tr(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        if lambda.len() != self.dim() {
            return Err(Error::LayoutMismatch(format!("expected {} multipliers, got {}", self.dim(), lambda.len())));
        }
        Ok(self.solve_m(&self.apply_schur(lambda)?))
    }

    /// `T_r (lambda, mu)` for the first-order formulations.
    pub fn apply_tr_mixed(&self, lambda: &[f64], mu: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut v = lambda.to_vec();
        v.extend_from_slice(mu);
        let out = self.apply_tr(&v)?;
        let (a, b) = out.split_at(lambda.len());
        Ok((a.to_vec(), b.to_vec()))
    }

    /// `<u, v>_M`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        dot(u, &self.mass().matvec(v))
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }

    /// `y_0` with `a_r(y_0, y') = l(y')`.
    pub fn y0(&self) -> Result<Vec<f64>> {
        self.solve_a(&self.system.l1)
    }
}

/// Dual solution with its iteration history.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub report: ReconstructionReport,
    pub cg: CgResult,
}

/// Minimizes `J(lambda) = 1/2 <T_r lambda, lambda> - b(y_0, lambda)` by CG
/// preconditioned with the multiplier mass matrix, then recovers
/// `y = y_0 - A_r^{-1} B^T lambda`.
pub fn minimize_dual(op: &DualOperator, tol: f64, max_iter: usize) -> Result<DualSolution> {
    let y0 = op.y0()?;
    let rhs = op.system.b.matvec(&y0);
    let cg = pcg(|v| op.apply_schur(v), |r| op.solve_m(r), &rhs, tol, max_iter)?;
    if !cg.converged {
        return Err(Error::MaxIterationsExceeded {
            iterations: cg.iterations,
            residual: cg.residuals.last().copied().unwrap_or(f64::NAN),
        });
    }
    let corr = op.solve_a(&op.system.b.matvec_t(&cg.x))?;
    let y: Vec<f64> = y0.iter().zip(&corr).map(|(a, b)| a - b).collect();
    let stats = SolverStats {
        method: "dual",
        n_primal: op.system.n_primal(),
        n_multiplier: op.dim(),
        factor_nnz: op.a_factor.factor_nnz(),
        dynamic_pivots: op.a_factor.dynamic_pivots,
        iterations: cg.iterations,
        residual: cg.residuals.last().copied().unwrap_or(0.0),
        converged: true,
        retries: 0,
        condition_before: None,
        condition_after: None,
    };
    let report = build_report(&op.system, y, cg.x.clone(), stats)?;
    Ok(DualSolution { report, cg })
}

/// Default CG controls: `tol = 1e-10`, `max_iter = 4 x` the multiplier dimension.
pub fn default_controls(op: &DualOperator) -> (f64, usize) {
    (1e-10, 4 * op.dim().max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::firstorder::assemble_mf4;
    use crate::linalg::norm2;
    use crate::problem::{MultiplierSpace, Params};
    use crate::saddle::tests::eigen_problem;
    use crate::saddle::{solve_saddle, SolveOptions};
    use crate::secondorder::{assemble_mf, assemble_mf_alpha, SecondOrderSpaces};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm2(&d) / norm2(b)
    }

    #[test]
    fn zero_maps_to_zero() {
        let pb = eigen_problem(4, false, 0.0);
        let sys = assemble_mf(&pb, &SecondOrderSpaces::default(), &Params::default()).unwrap();
        let op = DualOperator::new(&sys).unwrap();
        assert!(op.apply_tr(&vec![0.0; op.dim()]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn certificates_second_and_first_order() {
        let pb = eigen_problem(4, false, 0.0);
        let p = Params { r: 0.5, r2: 2.0, ..Params::default() };
        let systems = [
            assemble_mf(&pb, &SecondOrderSpaces::default(), &p).unwrap(),
            assemble_mf4(&pb, MultiplierSpace::P0, &p).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for sys in &systems {
            let op = DualOperator::new(sys).unwrap();
            for _ in 0..20 {
                let (u, v) = (random(op.dim(), &mut rng), random(op.dim(), &mut rng));
                let (tu, tv) = (op.apply_tr(&u).unwrap(), op.apply_tr(&v).unwrap());
                let (a, b) = (op.inner(&tu, &v), op.inner(&u, &tv));
                assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()));
                assert!(op.inner(&tu, &u) > 0.0);
                assert!(op.norm(&tu) <= op.norm(&u) / op.r * (1.0 + 1e-10));
            }
        }
    }

    #[test]
    fn cg_matches_direct() {
        let pb = eigen_problem(6, false, 1e-2);
        let sys = assemble_mf(&pb, &SecondOrderSpaces::default(), &Params::default()).unwrap();
        let direct = solve_saddle(&sys, &SolveOptions::default()).unwrap();
        let op = DualOperator::new(&sys).unwrap();
        let (tol, maxit) = default_controls(&op);
        let dual = minimize_dual(&op, tol, maxit).unwrap();
        assert!(rel(&dual.report.primal_solution, &direct.primal_solution) < 1e-6);
        assert!(dual.cg.iterations as f64 <= 1.2 * op.dim() as f64);
    }

    #[test]
    fn rejects_r_zero_and_stabilized() {
        let pb = eigen_problem(4, false, 0.0);
        let sys = assemble_mf(&pb, &SecondOrderSpaces::default(), &Params { r: 0.0, ..Params::default() }).unwrap();
        assert!(matches!(DualOperator::new(&sys), Err(Error::SingularAr)));
        let sp = SecondOrderSpaces { multiplier: MultiplierSpace::Hermite, ..Default::default() };
        let sys = assemble_mf_alpha(&pb, &sp, &Params::default()).unwrap();
        assert!(matches!(DualOperator::new(&sys), Err(Error::UnsupportedSpace(_))));
    }

    #[test]
    fn mixed_split() {
        let pb = eigen_problem(4, false, 0.0);
        let sys = assemble_mf4(&pb, MultiplierSpace::P0, &Params::default()).unwrap();
        let op = DualOperator::new(&sys).unwrap();
        let n = sys.multipliers[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random(op.dim(), &mut rng);
        let (a, b) = op.apply_tr_mixed(&v[..n], &v[n..]).unwrap();
        let full = op.apply_tr(&v).unwrap();
        assert_eq!([a, b].concat(), full);
    }
}
