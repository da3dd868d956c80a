//! Sparse and small dense linear algebra kernels shared by the offline and
//! online stages.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::sampling::rng_stream;
use rand_distr::{Distribution, StandardNormal};

/// `y = A x`.
pub fn csr_matvec(a: &CsrMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let offs = a.row_offsets();
    let cols = a.col_indices();
    let vals = a.values();
    for (r, yr) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for p in offs[r]..offs[r + 1] {
            acc += vals[p] * x[cols[p]];
        }
        *yr = acc;
    }
}

pub fn csr_to_dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
    nalgebra_sparse::convert::serial::convert_csr_dense(a)
}

/// Reverse Cuthill–McKee ordering of a structurally symmetric matrix;
/// `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix<f64>) -> Vec<usize> {
    let n = a.nrows();
    let offs = a.row_offsets();
    let cols = a.col_indices();
    let degree: Vec<usize> = (0..n).map(|r| offs[r + 1] - offs[r]).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    let mut nbrs = Vec::new();
    while order.len() < n {
        let start = (0..n).filter(|&v| !visited[v]).min_by_key(|&v| degree[v]).unwrap();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(cols[offs[v]..offs[v + 1]].iter().copied().filter(|&u| !visited[u]));
            nbrs.sort_unstable_by_key(|&u| (degree[u], u));
            for &u in &nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Sparse Cholesky factorization of an SPD matrix under an RCM ordering.
pub struct SparseCholesky {
    perm: Vec<usize>,
    factor: CscCholesky<f64>,
}

impl SparseCholesky {
    pub fn factor(a: &CsrMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut coo = CooMatrix::new(n, n);
        for (r, row) in a.row_iter().enumerate() {
            for (&c, &v) in row.col_indices().iter().zip(row.values()) {
                coo.push(inv[r], inv[c], v);
            }
        }
        let csc = CscMatrix::from(&coo);
        let factor = CscCholesky::factor(&csc).map_err(|_| Error::NotPositiveDefinite)?;
        Ok(Self { perm, factor })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let pb = DMatrix::from_iterator(n, 1, self.perm.iter().map(|&old| b[old]));
        let px = self.factor.solve(&pb);
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = px[(new, 0)];
        }
        x
    }
}

/// Outcome of an iterative solve.
#[derive(Clone, Debug)]
pub struct IterativeSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients, stopping at
/// `‖b − Ax‖ ≤ tol·‖b‖` (true residual, recomputed at convergence).
pub fn pcg(a: &CsrMatrix<f64>, b: &[f64], tol: f64, max_iter: usize) -> Result<IterativeSolution> {
    let n = a.nrows();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            context: "conjugate gradient right-hand side",
            expected: n,
            actual: b.len(),
        });
    }
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(IterativeSolution {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut inv_diag = vec![0.0; n];
    for (r, row) in a.row_iter().enumerate() {
        let d = row
            .col_indices()
            .iter()
            .zip(row.values())
            .find(|(&c, _)| c == r)
            .map(|(_, &v)| v)
            .unwrap_or(0.0);
        if !(d > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        inv_diag[r] = 1.0 / d;
    }

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let target = tol * bnorm;
    let mut iterations = 0;
    // Iterate slightly past the recurrence residual to absorb drift.
    let inner = 0.5 * target;

    while iterations < max_iter {
        csr_matvec(a, &p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        if norm(&r) <= inner {
            let true_res = residual_norm(a, &x, b);
            if true_res <= target {
                return Ok(IterativeSolution {
                    x,
                    iterations,
                    relative_residual: true_res / bnorm,
                });
            }
            // Restart from the true residual.
            csr_matvec(a, &x, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
                z[i] = r[i] * inv_diag[i];
            }
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverNonConvergence {
        residual: residual_norm(a, &x, b) / bnorm,
        iterations,
    })
}

pub fn residual_norm(a: &CsrMatrix<f64>, x: &[f64], b: &[f64]) -> f64 {
    let mut ax = vec![0.0; b.len()];
    csr_matvec(a, x, &mut ax);
    ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Largest eigenvalue of a symmetric positive semidefinite operator by
/// Lanczos with full reorthogonalization; stops when successive estimates
/// agree to `tol` relative.
pub fn largest_eigenvalue<F>(n: usize, mut apply: F, tol: f64, max_steps: usize, seed: u64) -> f64
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut rng = rng_stream(seed, 3);
    let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let s = 1.0 / norm(&v);
    v.iter_mut().for_each(|x| *x *= s);

    let steps = max_steps.min(n).max(1);
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let mut prev = f64::NAN;
    for j in 0..steps {
        apply(&basis[j], &mut w);
        let alpha = dot(&basis[j], &w);
        alphas.push(alpha);
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
        }
        let beta = norm(&w);
        let m = alphas.len();
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alphas[i];
            if i + 1 < m {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let est = SymmetricEigen::new(t).eigenvalues.max();
        if (est - prev).abs() <= tol * est.abs() || beta <= 1e-14 * est.abs() || j + 1 == steps {
            return est;
        }
        prev = est;
        betas.push(beta);
        basis.push(w.iter().map(|x| x / beta).collect());
    }
    prev
}

/// Extreme eigenvalues `(λ_min, λ_max)` of a sparse SPD matrix: dense for
/// `n ≤ dense_limit`, otherwise Lanczos on `A` and on `A⁻¹` (via a sparse
/// Cholesky factorization) to relative tolerance `tol`.
pub fn extreme_eigenvalues(a: &CsrMatrix<f64>, tol: f64, dense_limit: usize) -> Result<(f64, f64)> {
    let n = a.nrows();
    if n <= dense_limit {
        let ev = SymmetricEigen::new(csr_to_dense(a)).eigenvalues;
        return Ok((ev.min(), ev.max()));
    }
    let lmax = largest_eigenvalue(n, |x, y| csr_matvec(a, x, y), tol, 300, 0x1a2b);
    let chol = SparseCholesky::factor(a)?;
    let inv_max = largest_eigenvalue(n, |x, y| y.copy_from_slice(&chol.solve(x)), tol, 300, 0x3c4d);
    if !(inv_max > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok((1.0 / inv_max, lmax))
}

/// Condition number of a small dense SPD matrix.
pub fn dense_condition_number(a: &DMatrix<f64>) -> f64 {
    let ev = SymmetricEigen::new(a.clone()).eigenvalues;
    let (lo, hi) = (ev.min(), ev.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Lower-triangular Cholesky factor of a symmetric matrix, without pivoting.
/// A pivot at or below `rel_tol · max_i a_ii` is reported as singular.
#[derive(Clone, Debug)]
pub struct DenseCholesky {
    l: DMatrix<f64>,
}

impl DenseCholesky {
    pub fn factor(a: &DMatrix<f64>, rel_tol: f64) -> Result<Self> {
        let n = a.nrows();
        let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
        let floor = rel_tol * max_diag;
        let mut l = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for p in 0..j {
                d -= l[(j, p)] * l[(j, p)];
            }
            if !(d > floor) {
                return Err(Error::SketchSingular { index: j, pivot: d });
            }
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for p in 0..j {
                    s -= l[(i, p)] * l[(j, p)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.l.nrows();
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for p in 0..i {
                s -= self.l[(i, p)] * y[p];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for p in i + 1..n {
                s -= self.l[(p, i)] * y[p];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }
}
