use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::ldl::{LdlFactor, LdlOptions};
use crate::linalg::sparse::{dot, norm2, CsrMatrix};

fn start_vector(n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.754_877_666).sin()).collect();
    let s = norm2(&v);
    v.into_iter().map(|x| x / s).collect()
}

/// Largest eigenvalue of a symmetric positive semi-definite operator.
pub fn power_iteration(apply: impl Fn(&[f64]) -> Vec<f64>, n: usize, max_iter: usize, tol: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut v = start_vector(n);
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = apply(&v);
        let new = dot(&v, &w);
        let s = norm2(&w);
        if s == 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|x| x / s).collect();
        if (new - lambda).abs() <= tol * new.abs() {
            return new;
        }
        lambda = new;
    }
    lambda
}

/// Smallest eigenvalue of an SPD operator by inverse iteration.
pub fn inverse_iteration(
    apply_inv: impl Fn(&[f64]) -> Result<Vec<f64>>,
    n: usize,
    max_iter: usize,
    tol: f64,
) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    let mut v = start_vector(n);
    let mut mu = 0.0;
    for _ in 0..max_iter {
        let w = apply_inv(&v)?;
        let new = dot(&v, &w);
        let s = norm2(&w);
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::NonConvergedEigen("inverse iteration broke down".into()));
        }
        v = w.into_iter().map(|x| x / s).collect();
        if (new - mu).abs() <= tol * new.abs() {
            return Ok(1.0 / new);
        }
        mu = new;
    }
    if mu > 0.0 {
        Ok(1.0 / mu)
    } else {
        Err(Error::NonConvergedEigen("inverse iteration did not converge".into()))
    }
}

/// Extreme eigenvalues and their ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionEstimate {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub condition: f64,
}

/// Spectral condition estimate of a sparse SPD matrix: power iteration for the
/// top and inverse iteration through a sparse factorization for the bottom.
pub fn spd_condition_estimate(a: &CsrMatrix, order: Option<&[usize]>) -> Result<ConditionEstimate> {
    let n = a.nrows;
    let lambda_max = power_iteration(|v| a.matvec(v), n, 2000, 1e-10);
    let f = LdlFactor::new(a, &vec![1; n], order, LdlOptions { static_reg: 0.0, ..LdlOptions::default() })?;
    let lambda_min = inverse_iteration(|v| f.solve(v).map(|r| r.0), n, 500, 1e-8)?;
    Ok(ConditionEstimate { lambda_max, lambda_min, condition: lambda_max / lambda_min })
}

/// Conjugate gradient history.
#[derive(Debug, Clone)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Preconditioned residual norm relative to the right-hand side, per iteration.
    pub residuals: Vec<f64>,
    /// `1/2 x^T S x - b^T x` after each iteration.
    pub functional: Vec<f64>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl CgResult {
    /// Ritz values of the Lanczos matrix built from the CG coefficients.
    pub fn ritz_values(&self) -> Vec<f64> {
        let k = self.alphas.len();
        if k == 0 {
            return Vec::new();
        }
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = 1.0 / self.alphas[i] + if i > 0 { self.betas[i - 1] / self.alphas[i - 1] } else { 0.0 };
            if i + 1 < k {
                let off = self.betas[i].sqrt() / self.alphas[i];
                t[(i, i + 1)] = off;
                t[(i + 1, i)] = off;
            }
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(t).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }
}

/// Preconditioned CG for `S x = b`; stops when `sqrt(r^T P r) <= tol sqrt(b^T P b)`.
pub fn pcg(
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgResult> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut rz = dot(&r, &z);
    let bnorm = rz.max(0.0).sqrt();
    let mut out = CgResult {
        x: Vec::new(),
        iterations: 0,
        converged: false,
        residuals: Vec::new(),
        functional: Vec::new(),
        alphas: Vec::new(),
        betas: Vec::new(),
    };
    if bnorm == 0.0 {
        out.x = x;
        out.converged = true;
        return Ok(out);
    }
    let mut p = z.clone();
    for it in 0..max_iter {
        let sp = apply(&p)?;
        let psp = dot(&p, &sp);
        if !(psp > 0.0) {
            return Err(Error::FactorizationFailure(format!("operator is not positive definite (p^T S p = {psp:e})")));
        }
        let alpha = rz / psp;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * sp[i];
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        out.alphas.push(alpha);
        out.betas.push(beta);
        let rel = rz_new.max(0.0).sqrt() / bnorm;
        out.residuals.push(rel);
        out.functional.push(-0.5 * x.iter().zip(b.iter().zip(&r)).map(|(xi, (bi, ri))| xi * (bi + ri)).sum::<f64>());
        out.iterations = it + 1;
        if rel <= tol {
            out.converged = true;
            break;
        }
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
    }
    out.betas.pop();
    out.x = x;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sparse::TripletBuilder;

    fn laplacian(n: usize) -> CsrMatrix {
        let mut t = TripletBuilder::new(n, n);
        for i in 0..n {
            t.push(i, i, 2.0);
            if i + 1 < n {
                t.push_sym(i, i + 1, -1.0);
            }
        }
        t.build()
    }

    #[test]
    fn laplacian_spectrum() {
        let n = 20;
        let a = laplacian(n);
        let c = spd_condition_estimate(&a, None).unwrap();
        let h = std::f64::consts::PI / (n as f64 + 1.0);
        let lmin = 2.0 - 2.0 * h.cos();
        let lmax = 2.0 + 2.0 * h.cos();
        assert!((c.lambda_min - lmin).abs() < 1e-8 * lmin);
        assert!((c.lambda_max - lmax).abs() < 1e-6 * lmax);
    }

    #[test]
    fn cg_solves_and_decreases_functional() {
        let n = 30;
        let a = laplacian(n);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let res = pcg(|v| Ok(a.matvec(v)), |r| r.to_vec(), &b, 1e-12, 200).unwrap();
        assert!(res.converged && res.iterations <= n + 2);
        let ax = a.matvec(&res.x);
        assert!(ax.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-9));
        for w in res.functional.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let ritz = res.ritz_values();
        assert!(ritz[0] > 0.0 && *ritz.last().unwrap() < 4.0 + 1e-8);
        let zero = pcg(|v| Ok(a.matvec(v)), |r| r.to_vec(), &vec![0.0; n], 1e-12, 10).unwrap();
        assert_eq!(zero.iterations, 0);
    }
}
