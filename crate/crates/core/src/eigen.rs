//! Smallest eigenpairs of a sparse SPD matrix.
//!
//! Small problems go through a dense symmetric eigensolver. Larger ones
//! build a block Krylov space of `A⁻¹` (one sparse Cholesky factorization,
//! then repeated solves), keep it fully reorthogonalized, and extract Ritz
//! pairs of `A` itself from it. The block size copes with the exactly
//! repeated eigenvalues that symmetric meshes produce.

use log::debug;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use nalgebra_sparse::CsrMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{csr_to_dense, SparseCholesky};
use crate::sampling::rng_stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EigenMethod {
    /// Dense below `dense_limit`, Krylov above.
    Auto,
    Dense,
    Krylov,
}

#[derive(Clone, Debug)]
pub struct EigenOptions {
    pub method: EigenMethod,
    /// Required residual `‖Aψ − λψ‖` for every returned unit vector.
    pub tol: f64,
    pub block_size: usize,
    /// Cap on the Krylov dimension; `None` picks one from `ρ`.
    pub max_dim: Option<usize>,
    pub dense_limit: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            method: EigenMethod::Auto,
            tol: 1e-8,
            block_size: 8,
            max_dim: None,
            dense_limit: 600,
            seed: 0x5eed_e16e,
        }
    }
}

/// Orthonormal eigenvectors (columns, ascending eigenvalue) and values.
#[derive(Clone, Debug)]
pub struct Eigenpairs {
    pub vectors: DMatrix<f64>,
    pub values: Vec<f64>,
    pub max_residual: f64,
}

/// The `ρ` smallest eigenpairs with default options.
pub fn smallest_eigenpairs(a: &CsrMatrix<f64>, rho: usize) -> Result<Eigenpairs> {
    smallest_eigenpairs_with(a, rho, &EigenOptions::default())
}

pub fn smallest_eigenpairs_with(a: &CsrMatrix<f64>, rho: usize, opts: &EigenOptions) -> Result<Eigenpairs> {
    let n = a.nrows();
    if rho == 0 || rho > n {
        return Err(Error::InvalidArgument(format!("basis size {rho} must lie in 1..={n}")));
    }
    let dense = match opts.method {
        EigenMethod::Dense => true,
        EigenMethod::Krylov => false,
        EigenMethod::Auto => n <= opts.dense_limit,
    };
    let mut pairs = if dense {
        dense_pairs(a, rho)
    } else {
        krylov_pairs(a, rho, opts)?
    };
    fix_signs(&mut pairs.vectors);
    if !(pairs.max_residual <= opts.tol) {
        return Err(Error::EigenNonConvergence {
            max_residual: pairs.max_residual,
            iterations: 0,
        });
    }
    Ok(pairs)
}

fn dense_pairs(a: &CsrMatrix<f64>, rho: usize) -> Eigenpairs {
    let eig = SymmetricEigen::new(csr_to_dense(a));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let order = &order[..rho];
    let vectors = eig.eigenvectors.select_columns(order);
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let max_residual = residuals(a, &vectors, &values).into_iter().fold(0.0, f64::max);
    Eigenpairs {
        vectors,
        values,
        max_residual,
    }
}

fn krylov_pairs(a: &CsrMatrix<f64>, rho: usize, opts: &EigenOptions) -> Result<Eigenpairs> {
    let n = a.nrows();
    let b = opts.block_size.max(1).min(n);
    let max_dim = opts.max_dim.unwrap_or((10 * rho + 20 * b).max(rho + 4 * b)).min(n);
    let chol = SparseCholesky::factor(a)?;
    let mut rng = rng_stream(opts.seed, 11);

    let mut q = DMatrix::<f64>::zeros(n, max_dim);
    let mut aq = DMatrix::<f64>::zeros(n, max_dim);
    let mut m = 0;
    let mut block: Vec<DVector<f64>> = (0..b)
        .map(|_| DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)))
        .collect();
    let mut last = Eigenpairs {
        vectors: DMatrix::zeros(n, 0),
        values: Vec::new(),
        max_residual: f64::INFINITY,
    };
    let mut steps = 0;

    while m < max_dim {
        steps += 1;
        let start = m;
        for mut w in block.drain(..) {
            if m == max_dim {
                break;
            }
            // Two passes of classical Gram–Schmidt; a vector that collapses
            // has found an invariant direction and is replaced by noise.
            let mut tries = 0;
            loop {
                let before = w.norm();
                for _ in 0..2 {
                    let basis = q.columns(0, m);
                    let coeffs = basis.tr_mul(&w);
                    w -= basis * coeffs;
                }
                let after = w.norm();
                if after > 1e-8 * before && after > 0.0 {
                    w /= after;
                    break;
                }
                tries += 1;
                if tries > 5 {
                    return Err(Error::EigenNonConvergence {
                        max_residual: f64::INFINITY,
                        iterations: steps,
                    });
                }
                w = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            }
            let col = a * &DMatrix::from_column_slice(n, 1, w.as_slice());
            q.set_column(m, &w);
            aq.set_column(m, &col.column(0));
            m += 1;
        }

        if m >= rho + b || m == max_dim {
            last = rayleigh_ritz(&q, &aq, m, rho);
            debug!(
                "krylov dim {m}: max residual {:.3e} (tol {:.1e})",
                last.max_residual, opts.tol
            );
            if last.max_residual <= opts.tol {
                return Ok(last);
            }
        }
        block = (start..m)
            .rev()
            .take(b)
            .map(|j| DVector::from_vec(chol.solve(q.column(j).as_slice())))
            .collect();
    }
    Err(Error::EigenNonConvergence {
        max_residual: last.max_residual,
        iterations: steps,
    })
}

fn rayleigh_ritz(q: &DMatrix<f64>, aq: &DMatrix<f64>, m: usize, rho: usize) -> Eigenpairs {
    let qm = q.columns(0, m);
    let aqm = aq.columns(0, m);
    let h = qm.tr_mul(&aqm);
    let h = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let s = eig.eigenvectors.select_columns(&order[..rho]);
    let values: Vec<f64> = order[..rho].iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = qm * &s;
    let mut res = aqm * &s;
    let mut max_residual: f64 = 0.0;
    for (j, &lam) in values.iter().enumerate() {
        let mut col = res.column_mut(j);
        col.axpy(-lam, &vectors.column(j), 1.0);
        max_residual = max_residual.max(col.norm());
    }
    Eigenpairs {
        vectors,
        values,
        max_residual,
    }
}

/// `‖Aψ_j − λ_j ψ_j‖` for every column.
pub fn residuals(a: &CsrMatrix<f64>, vectors: &DMatrix<f64>, values: &[f64]) -> Vec<f64> {
    let av = a * vectors;
    values
        .iter()
        .enumerate()
        .map(|(j, &lam)| (av.column(j) - vectors.column(j) * lam).norm())
        .collect()
}

/// Makes the largest-magnitude entry of each column positive, so results
/// do not depend on the solver's arbitrary sign choice.
fn fix_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_stiffness, scaling_vector};
    use crate::mesh::gradient_operator;
    use crate::meshgen::{disk, unit_square};

    fn laplacian_of(mesh: &crate::mesh::Mesh) -> CsrMatrix<f64> {
        let d = gradient_operator(mesh).unwrap();
        let field = scaling_vector(mesh.volumes(), &vec![1.0; mesh.num_elements()]).unwrap();
        assemble_stiffness(&d, &field).unwrap()
    }

    /// Largest principal angle sine between two orthonormal column spans.
    fn subspace_gap(u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
        let proj = u - v * (v.transpose() * u);
        proj.singular_values().max()
    }

    #[test]
    fn krylov_matches_dense_on_symmetric_disk() {
        // The hexagonal disk has exactly repeated eigenvalues.
        let mesh = disk(10, 1.0).unwrap();
        let a = laplacian_of(&mesh);
        let rho = 12;
        let dense = smallest_eigenpairs_with(
            &a,
            rho,
            &EigenOptions {
                method: EigenMethod::Dense,
                ..Default::default()
            },
        )
        .unwrap();
        let krylov = smallest_eigenpairs_with(
            &a,
            rho,
            &EigenOptions {
                method: EigenMethod::Krylov,
                ..Default::default()
            },
        )
        .unwrap();
        for (x, y) in dense.values.iter().zip(&krylov.values) {
            assert!((x - y).abs() < 1e-10 * y.abs().max(1.0), "{x} vs {y}");
        }
        // Compare spans, cutting between the 12th and 13th eigenvalue only if
        // they are separated (they are for this mesh).
        assert!(subspace_gap(&dense.vectors, &krylov.vectors) < 1e-6);
        assert!(krylov.max_residual <= 1e-8);
    }

    #[test]
    fn eigen_examples() {
        let mesh = unit_square(8).unwrap();
        let a = laplacian_of(&mesh);
        let n = a.nrows();
        let full = smallest_eigenpairs(&a, n).unwrap();
        let gram = full.vectors.transpose() * &full.vectors;
        assert!((gram - DMatrix::identity(n, n)).amax() < 1e-10);
        assert!(full.values.windows(2).all(|w| w[0] <= w[1]));

        let opts = EigenOptions {
            method: EigenMethod::Krylov,
            ..Default::default()
        };
        let p = smallest_eigenpairs_with(&a, 6, &opts).unwrap();
        let d = p.vectors.transpose() * (&a * &p.vectors);
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { p.values[i] } else { 0.0 };
                assert!((d[(i, j)] - want).abs() < 1e-8);
            }
        }
        assert!(smallest_eigenpairs(&a, 0).is_err());
        assert!(smallest_eigenpairs(&a, n + 1).is_err());
    }
}
