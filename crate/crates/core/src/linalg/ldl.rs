//! Sparse `L D L^T` factorization for symmetric quasi-definite matrices.
//!
//! The matrix is equilibrated (symmetric Ruiz scaling), a signed static shift
//! `+delta` on primal rows and `-delta` on dual rows makes it quasi-definite,
//! and an up-looking factorization over the elimination tree computes the
//! factors without pivoting. Solves apply iterative refinement against the
//! unshifted matrix.

use crate::error::{Error, Result};
use crate::linalg::sparse::{norm_inf, CsrMatrix};

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdlOptions {
    /// Static shift applied to the equilibrated matrix.
    pub static_reg: f64,
    /// Pivots with `sign * d < pivot_tol` are replaced by `sign * dynamic_reg`.
    pub pivot_tol: f64,
    pub dynamic_reg: f64,
    pub refine_steps: usize,
    /// Stop refinement when the scaled residual drops below this value.
    pub refine_tol: f64,
    pub ruiz_iters: usize,
}

impl Default for LdlOptions {
    fn default() -> Self {
        LdlOptions {
            static_reg: 1e-10,
            pivot_tol: 1e-12,
            dynamic_reg: 1e-7,
            refine_steps: 40,
            refine_tol: 1e-14,
            ruiz_iters: 25,
        }
    }
}

/// Result of one refined solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveInfo {
    pub refinement_steps: usize,
    /// `||D (b - K x)||_inf / ||D b||_inf` on the equilibrated system.
    pub scaled_residual: f64,
}

#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    scaling: Vec<f64>,
    matrix: CsrMatrix,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    dinv: Vec<f64>,
    pub dynamic_pivots: usize,
    pub options: LdlOptions,
}

/// Symmetric Ruiz equilibration: returns `s` with `diag(s) K diag(s)` having
/// row maxima close to one.
pub fn ruiz_scaling(k: &CsrMatrix, iters: usize) -> Vec<f64> {
    let n = k.nrows;
    let mut s = vec![1.0; n];
    for _ in 0..iters {
        let mut rmax = vec![0.0f64; n];
        for i in 0..n {
            for (j, v) in k.row(i) {
                rmax[i] = rmax[i].max((s[i] * v * s[j]).abs());
            }
        }
        let mut worst: f64 = 0.0;
        for i in 0..n {
            if rmax[i] > 0.0 && rmax[i].is_finite() {
                s[i] /= rmax[i].sqrt();
                worst = worst.max((1.0 - rmax[i]).abs());
            }
        }
        if worst < 1e-3 {
            break;
        }
    }
    s
}

impl LdlFactor {
    /// Factors the full symmetric matrix `k`. `signs[i]` is `+1` for primal and
    /// `-1` for dual rows; `order[new] = old` is the elimination order.
    pub fn new(k: &CsrMatrix, signs: &[i8], order: Option<&[usize]>, options: LdlOptions) -> Result<LdlFactor> {
        let n = k.nrows;
        if k.ncols != n || signs.len() != n {
            return Err(Error::FactorizationFailure("matrix must be square with one sign per row".into()));
        }
        if k.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::FactorizationFailure("matrix has non-finite entries".into()));
        }
        let perm: Vec<usize> = match order {
            Some(o) => {
                if o.len() != n {
                    return Err(Error::FactorizationFailure("ordering has the wrong length".into()));
                }
                o.to_vec()
            }
            None => (0..n).collect(),
        };
        let mut iperm = vec![NONE; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || iperm[old] != NONE {
                return Err(Error::FactorizationFailure("ordering is not a permutation".into()));
            }
            iperm[old] = new;
        }
        let scaling = ruiz_scaling(k, options.ruiz_iters);
        // Upper triangle of the permuted, scaled, shifted matrix in CSC form.
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut sign_new = vec![0i8; n];
        for old_r in 0..n {
            let pr = iperm[old_r];
            sign_new[pr] = signs[old_r];
            for (old_c, v) in k.row(old_r) {
                let pc = iperm[old_c];
                if pr <= pc {
                    cols[pc].push((pr, scaling[old_r] * v * scaling[old_c]));
                }
            }
        }
        let mut ap = vec![0usize; n + 1];
        let mut ai = Vec::new();
        let mut ax = Vec::new();
        for (j, col) in cols.iter_mut().enumerate() {
            col.sort_by_key(|e| e.0);
            let mut has_diag = false;
            for &(i, v) in col.iter() {
                let v = if i == j {
                    has_diag = true;
                    v + sign_new[j] as f64 * options.static_reg
                } else {
                    v
                };
                ai.push(i);
                ax.push(v);
            }
            if !has_diag {
                ai.push(j);
                ax.push(sign_new[j] as f64 * options.static_reg);
            }
            ap[j + 1] = ai.len();
        }

        // Elimination tree and column counts.
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for p in ap[j]..ap[j + 1] {
                let mut i = ai[p];
                if i > j {
                    return Err(Error::FactorizationFailure("input is not upper triangular".into()));
                }
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let total = lp[n];
        let mut li = vec![0usize; total];
        let mut lx = vec![0.0f64; total];
        let mut d = vec![0.0f64; n];
        let mut dinv = vec![0.0f64; n];

        // Numeric factorization, row by row.
        let mut y_vals = vec![0.0f64; n];
        let mut y_marked = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = lp[..n].to_vec();
        let mut dynamic_pivots = 0;
        for k in 0..n {
            let mut nnz_y = 0;
            for p in ap[k]..ap[k + 1] {
                let b = ai[p];
                if b == k {
                    d[k] = ax[p];
                    continue;
                }
                y_vals[b] = ax[p];
                if y_marked[b] {
                    continue;
                }
                y_marked[b] = true;
                elim[0] = b;
                let mut ne = 1;
                let mut next = etree[b];
                while next != NONE && next < k {
                    if y_marked[next] {
                        break;
                    }
                    y_marked[next] = true;
                    elim[ne] = next;
                    ne += 1;
                    next = etree[next];
                }
                while ne > 0 {
                    ne -= 1;
                    y_idx[nnz_y] = elim[ne];
                    nnz_y += 1;
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let tmp = next_space[c];
                let yc = y_vals[c];
                for j in lp[c]..tmp {
                    y_vals[li[j]] -= lx[j] * yc;
                }
                li[tmp] = k;
                lx[tmp] = yc * dinv[c];
                d[k] -= yc * lx[tmp];
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_marked[c] = false;
            }
            let s = sign_new[k] as f64;
            if !(s * d[k] >= options.pivot_tol) {
                if !d[k].is_finite() {
                    return Err(Error::FactorizationFailure(format!("non-finite pivot at column {k}")));
                }
                d[k] = s * options.dynamic_reg;
                dynamic_pivots += 1;
            }
            dinv[k] = 1.0 / d[k];
        }
        Ok(LdlFactor {
            n,
            perm,
            scaling,
            matrix: k.clone(),
            lp,
            li,
            lx,
            dinv,
            dynamic_pivots,
            options,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.lx.len()
    }

    /// Applies the inverse of the shifted, equilibrated factorization in place
    /// (permuted coordinates).
    fn apply_factor(&self, x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                for j in self.lp[i]..self.lp[i + 1] {
                    x[self.li[j]] -= self.lx[j] * xi;
                }
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                s -= self.lx[j] * x[self.li[j]];
            }
            x[i] = s;
        }
    }

    /// `x = D K~^{-1} D r` for the regularized system.
    fn approx_solve(&self, r: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            w[new] = self.scaling[old] * r[old];
        }
        self.apply_factor(&mut w);
        let mut x = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = self.scaling[old] * w[new];
        }
        x
    }

    fn scaled_residual(&self, b: &[f64], x: &[f64]) -> (Vec<f64>, f64) {
        let kx = self.matrix.matvec(x);
        let r: Vec<f64> = b.iter().zip(&kx).map(|(bi, ki)| bi - ki).collect();
        let sr: Vec<f64> = r.iter().zip(&self.scaling).map(|(v, s)| v * s).collect();
        (r, norm_inf(&sr))
    }

    /// Solves `K x = b` with iterative refinement.
    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, SolveInfo)> {
        if b.len() != self.n {
            return Err(Error::FactorizationFailure("right-hand side has the wrong length".into()));
        }
        let sb: Vec<f64> = b.iter().zip(&self.scaling).map(|(v, s)| v * s).collect();
        let bnorm = norm_inf(&sb);
        if bnorm == 0.0 {
            return Ok((vec![0.0; self.n], SolveInfo { refinement_steps: 0, scaled_residual: 0.0 }));
        }
        let mut x = self.approx_solve(b);
        let (mut r, mut res) = self.scaled_residual(b, &x);
        let mut steps = 0;
        while steps < self.options.refine_steps && res > self.options.refine_tol * bnorm {
            let dx = self.approx_solve(&r);
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
            let (r_new, res_new) = self.scaled_residual(b, &trial);
            steps += 1;
            if !res_new.is_finite() {
                return Err(Error::FactorizationFailure("refinement produced non-finite values".into()));
            }
            if res_new >= res {
                // Proximal steps on singular systems may stall in the residual
                // while still converging; accept small increases only.
                if res_new > 2.0 * res {
                    break;
                }
            }
            x = trial;
            r = r_new;
            res = res_new;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::FactorizationFailure("solution has non-finite values".into()));
        }
        Ok((x, SolveInfo { refinement_steps: steps, scaled_residual: res / bnorm }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sparse::TripletBuilder;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_qd(np: usize, nm: usize, seed: u64, c_block: bool) -> (CsrMatrix, Vec<i8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = np + nm;
        let mut t = TripletBuilder::new(n, n);
        // A = G G^T + shift
        let g: Vec<f64> = (0..np * np).map(|_| rng.random_range(-1.0..1.0)).collect();
        for i in 0..np {
            for j in i..np {
                let mut v: f64 = (0..np).map(|k| g[i * np + k] * g[j * np + k]).sum();
                if i == j {
                    v += 0.1;
                }
                t.push_sym(i, j, v);
            }
        }
        for i in 0..nm {
            for j in 0..np {
                if rng.random_bool(0.5) {
                    t.push_sym(np + i, j, rng.random_range(-1.0..1.0));
                }
            }
            if c_block {
                t.push(np + i, np + i, -rng.random_range(0.1..1.0));
            }
        }
        let signs = (0..n).map(|i| if i < np { 1 } else { -1 }).collect();
        (t.build(), signs)
    }

    proptest! {
        #[test]
        fn matches_dense_solve(np in 2usize..12, nm in 1usize..5, seed in 0u64..1000, c in proptest::bool::ANY) {
            prop_assume!(nm <= np);
            let (k, signs) = random_qd(np, nm, seed, c);
            let dense = k.to_dense();
            let b: Vec<f64> = (0..np + nm).map(|i| (i as f64 * 0.7).sin()).collect();
            let lu = dense.clone().lu();
            let Some(xd) = lu.solve(&DVector::from_vec(b.clone())) else { return Ok(()); };
            // skip nearly singular draws
            let sv = dense.clone().singular_values();
            prop_assume!(sv.min() > 1e-6 * sv.max());
            let f = LdlFactor::new(&k, &signs, None, LdlOptions::default()).unwrap();
            let (x, _) = f.solve(&b).unwrap();
            let scale = xd.amax().max(1.0);
            for i in 0..np + nm {
                prop_assert!((x[i] - xd[i]).abs() < 1e-9 * scale, "i={} {} vs {}", i, x[i], xd[i]);
            }
        }
    }

    #[test]
    fn ordering_does_not_change_solution() {
        let (k, signs) = random_qd(8, 3, 5, false);
        let b: Vec<f64> = (0..11).map(|i| i as f64 - 4.0).collect();
        let a = LdlFactor::new(&k, &signs, None, LdlOptions::default()).unwrap().solve(&b).unwrap().0;
        let order: Vec<usize> = (0..11).rev().collect();
        let c = LdlFactor::new(&k, &signs, Some(&order), LdlOptions::default()).unwrap().solve(&b).unwrap().0;
        for (x, y) in a.iter().zip(&c) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn consistent_singular_system() {
        // A = diag(1, 0), B = [0 1]: solvable, y2 free in A but fixed by B.
        let mut t = TripletBuilder::new(3, 3);
        t.push(0, 0, 1.0);
        t.push_sym(2, 1, 1.0);
        let k = t.build();
        let f = LdlFactor::new(&k, &[1, 1, -1], None, LdlOptions::default()).unwrap();
        let (x, info) = f.solve(&[2.0, 3.0, 0.5]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12 && (x[2] - 3.0).abs() < 1e-12);
        assert!(info.scaled_residual < 1e-13);
    }

    #[test]
    fn badly_scaled_spd() {
        let n = 6;
        let mut t = TripletBuilder::new(n, n);
        for i in 0..n {
            let s = 10f64.powi(-(6 * i as i32));
            t.push(i, i, 2.0 * s * s);
            if i + 1 < n {
                let s2 = 10f64.powi(-(6 * (i + 1) as i32));
                t.push_sym(i, i + 1, -0.5 * s * s2);
            }
        }
        let k = t.build();
        let xs: Vec<f64> = (0..n).map(|i| 10f64.powi(6 * i as i32) * (1.0 + i as f64)).collect();
        let b = k.matvec(&xs);
        let f = LdlFactor::new(&k, &vec![1; n], None, LdlOptions::default()).unwrap();
        let (x, _) = f.solve(&b).unwrap();
        for i in 0..n {
            assert!((x[i] / xs[i] - 1.0).abs() < 1e-10);
        }
    }
}
