//! Offline stage: Laplacian eigenbasis, leverage scores of the reduced
//! gradient operator and the row-sampling distribution.
//!
//! Basis columns are stored in ascending eigenvalue order, so column 0 is
//! the smoothest mode. Writing the full eigendecomposition in descending
//! order instead, the same basis is its last `ρ` columns.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use crate::assembly::{assemble_load, reduced_load, StiffnessAssembler};
use crate::eigen::{smallest_eigenpairs_with, EigenOptions};
use crate::error::{Error, Result};
use crate::mesh::{GradientOperator, Mesh};

/// `Δ = Dᵀ diag(|Ω| ⊗ 1_d) D` over interior columns.
pub fn laplacian(d: &GradientOperator) -> CsrMatrix<f64> {
    StiffnessAssembler::new(d)
        .assemble(d.volumes())
        .expect("volumes have one entry per element")
}

/// The `ρ` smallest eigenpairs of `Δ`: orthonormal `Ψ` (n × ρ) and the
/// ascending eigenvalues.
pub fn compute_basis(delta: &CsrMatrix<f64>, rho: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    compute_basis_with(delta, rho, &EigenOptions::default())
}

pub fn compute_basis_with(delta: &CsrMatrix<f64>, rho: usize, opts: &EigenOptions) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let pairs = smallest_eigenpairs_with(delta, rho, opts)?;
    Ok((pairs.vectors, pairs.values))
}

/// `X = Z D Ψ` with `Z = diag(√z ⊗ 1_d)`, a dense `kd × ρ` matrix.
pub fn reduced_rows(d: &GradientOperator, psi: &DMatrix<f64>, z: &[f64]) -> Result<DMatrix<f64>> {
    if psi.nrows() != d.num_interior() {
        return Err(Error::DimensionMismatch {
            context: "basis rows",
            expected: d.num_interior(),
            actual: psi.nrows(),
        });
    }
    if z.len() != d.num_elements() {
        return Err(Error::DimensionMismatch {
            context: "scaling vector",
            expected: d.num_elements(),
            actual: z.len(),
        });
    }
    let mut x = d.interior() * psi;
    let dim = d.dim();
    for (r, mut row) in x.row_iter_mut().enumerate() {
        row *= z[r / dim].sqrt();
    }
    Ok(x)
}

/// Leverage scores with the orthonormal factor kept for cross-leverage
/// queries.
#[derive(Clone, Debug)]
pub struct LeverageProfile {
    pub scores: Vec<f64>,
    u: DMatrix<f64>,
}

impl LeverageProfile {
    /// `ℓ_ij = (U Uᵀ)_ij`.
    pub fn cross(&self, i: usize, j: usize) -> f64 {
        self.u.row(i).dot(&self.u.row(j))
    }

    /// The full `m × m` projector; only sensible for small `m`.
    pub fn cross_matrix(&self) -> DMatrix<f64> {
        &self.u * self.u.transpose()
    }

    pub fn orthonormal_factor(&self) -> &DMatrix<f64> {
        &self.u
    }
}

/// Thin QR of `X`, with the numerical rank read off the singular values of
/// `R`.
pub fn leverage_profile(x: &DMatrix<f64>) -> Result<LeverageProfile> {
    let (m, rho) = x.shape();
    if rho == 0 || m < rho {
        return Err(Error::InvalidArgument(format!(
            "leverage scores need a tall matrix, got {m} x {rho}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let qr = x.clone().qr();
    let sv = qr.r().singular_values();
    let smax = sv.max();
    let cutoff = smax * m.max(rho) as f64 * f64::EPSILON;
    let rank = sv.iter().filter(|&&s| s > cutoff).count();
    if rank < rho {
        return Err(Error::RankDeficient { rank, expected: rho });
    }
    let u = qr.q();
    let scores = u.row_iter().map(|r| r.norm_squared()).collect();
    Ok(LeverageProfile { scores, u })
}

/// `ℓ_i(X) = ‖U_(i)‖²`.
pub fn leverage_scores(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(leverage_profile(x)?.scores)
}

/// `q = ℓ/ρ`, renormalized by its computed sum.
pub fn sampling_distribution(leverage: &[f64], rho: usize) -> Result<Vec<f64>> {
    if let Some(i) = leverage.iter().position(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::InvalidDistribution(format!(
            "leverage score {i} is {}",
            leverage[i]
        )));
    }
    let total: f64 = leverage.iter().sum();
    if (total - rho as f64).abs() > 1e-6 * rho as f64 {
        return Err(Error::InvalidDistribution(format!(
            "leverage scores sum to {total}, expected {rho}"
        )));
    }
    let q: Vec<f64> = leverage.iter().map(|l| l / rho as f64).collect();
    let s: f64 = q.iter().sum();
    Ok(q.into_iter().map(|x| x / s).collect())
}

/// Largest `β ≤ 1` with `q_i ≥ β ℓ_i / ρ` for every row, i.e. how well `q`
/// covers the exact scores `ℓ` of a particular query.
pub fn sampling_quality(q: &[f64], leverage: &[f64], rho: usize) -> Result<f64> {
    if q.len() != leverage.len() {
        return Err(Error::DimensionMismatch {
            context: "sampling quality",
            expected: leverage.len(),
            actual: q.len(),
        });
    }
    let beta = q
        .iter()
        .zip(leverage)
        .filter(|&(_, &l)| l > 0.0)
        .map(|(&qi, &l)| rho as f64 * qi / l)
        .fold(1.0, f64::min);
    Ok(beta)
}

/// [`sampling_quality`] of `bundle.q` for coefficient `p`. Computes the
/// query's exact leverage scores, so it is only meant for small meshes.
pub fn query_sampling_quality(bundle: &OfflineBundle, d: &GradientOperator, p: &[f64]) -> Result<f64> {
    crate::assembly::check_admissible(p)?;
    if p.len() != d.num_elements() {
        return Err(Error::DimensionMismatch {
            context: "parameter vector",
            expected: d.num_elements(),
            actual: p.len(),
        });
    }
    let z: Vec<f64> = d.volumes().iter().zip(p).map(|(v, p)| v * p).collect();
    let l = leverage_scores(&reduced_rows(d, &bundle.psi, &z)?)?;
    sampling_quality(&bundle.q, &l, bundle.rho())
}

/// Closed-form leverage scores after scaling row `i` of `X` by `√γ`:
/// returns `ℓ_i` of the scaled matrix and the full updated score vector.
pub fn reweighted_leverage(x: &DMatrix<f64>, i: usize, gamma: f64) -> Result<(f64, Vec<f64>)> {
    if i >= x.nrows() {
        return Err(Error::InvalidArgument(format!("row {i} out of range")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("weight {gamma} must be positive")));
    }
    let profile = leverage_profile(x)?;
    let li = profile.scores[i];
    let denom = 1.0 - (1.0 - gamma) * li;
    let updated: Vec<f64> = (0..x.nrows())
        .map(|j| {
            if j == i {
                gamma * li / denom
            } else {
                let lij = profile.cross(i, j);
                profile.scores[j] + (1.0 - gamma) * lij * lij / denom
            }
        })
        .collect();
    Ok((updated[i], updated))
}

/// Everything the online stage needs, computed once per mesh and forcing.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineBundle {
    /// `n × ρ`, orthonormal columns, ascending eigenvalue order.
    pub psi: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Leverage scores of `Z_Δ D Ψ`, length `kd`.
    pub leverage: Vec<f64>,
    /// Sampling distribution, length `kd`.
    pub q: Vec<f64>,
    /// `Ψᵀ b`.
    pub reduced_load: DVector<f64>,
    pub fingerprint: [u8; 32],
}

impl OfflineBundle {
    pub fn n(&self) -> usize {
        self.psi.nrows()
    }

    pub fn rho(&self) -> usize {
        self.psi.ncols()
    }

    pub fn kd(&self) -> usize {
        self.q.len()
    }

    /// Same basis and load, different sampling distribution (for example
    /// the exact leverage scores of one particular query).
    pub fn with_distribution(&self, q: Vec<f64>) -> Result<Self> {
        if q.len() != self.kd() {
            return Err(Error::DimensionMismatch {
                context: "sampling distribution",
                expected: self.kd(),
                actual: q.len(),
            });
        }
        Ok(Self { q, ..self.clone() })
    }

    /// Checks the structural invariants a loaded or hand-built bundle must
    /// satisfy.
    pub fn validate(&self) -> Result<()> {
        let (n, rho) = self.psi.shape();
        let bad = |msg: String| Err(Error::BundleFormat(msg));
        if rho == 0 || rho > n {
            return bad(format!("basis size {rho} invalid for n = {n}"));
        }
        if self.eigenvalues.len() != rho || self.reduced_load.len() != rho {
            return bad("eigenvalue or reduced-load length differs from basis size".into());
        }
        if self.leverage.len() != self.q.len() {
            return bad("leverage and distribution lengths differ".into());
        }
        let gram = self.psi.tr_mul(&self.psi);
        if (gram - DMatrix::identity(rho, rho)).amax() > 1e-10 {
            return bad("basis columns are not orthonormal".into());
        }
        if self.eigenvalues.windows(2).any(|w| w[0] > w[1]) {
            return bad("eigenvalues are not ascending".into());
        }
        if self.leverage.iter().any(|&l| !(-1e-12..=1.0 + 1e-12).contains(&l)) {
            return bad("leverage score outside [0, 1]".into());
        }
        let lsum: f64 = self.leverage.iter().sum();
        if (lsum - rho as f64).abs() > 1e-8 * (rho as f64).max(1.0) {
            return bad(format!("leverage scores sum to {lsum}, expected {rho}"));
        }
        if self.q.iter().any(|&x| !(x >= 0.0)) {
            return bad("negative sampling probability".into());
        }
        let qsum: f64 = self.q.iter().sum();
        if (qsum - 1.0).abs() > 1e-12 {
            return bad(format!("sampling probabilities sum to {qsum}"));
        }
        Ok(())
    }
}

/// Laplacian, basis, leverage scores of `Z_Δ D Ψ`, distribution and
/// reduced load.
pub fn build_offline_bundle(mesh: &Mesh, d: &GradientOperator, rho: usize, f: &[f64]) -> Result<OfflineBundle> {
    build_offline_bundle_with(mesh, d, rho, f, &EigenOptions::default())
}

pub fn build_offline_bundle_with(
    mesh: &Mesh,
    d: &GradientOperator,
    rho: usize,
    f: &[f64],
    opts: &EigenOptions,
) -> Result<OfflineBundle> {
    let n = d.num_interior();
    if rho == 0 || rho > n {
        return Err(Error::InvalidArgument(format!("basis size {rho} must lie in 1..={n}")));
    }
    let delta = laplacian(d);
    let (psi, eigenvalues) = compute_basis_with(&delta, rho, opts)?;
    let x = reduced_rows(d, &psi, d.volumes())?;
    let leverage = leverage_scores(&x)?;
    let q = sampling_distribution(&leverage, rho)?;
    let load = assemble_load(mesh, f)?;
    let reduced_load = reduced_load(&psi, &load.b)?;
    Ok(OfflineBundle {
        psi,
        eigenvalues,
        leverage,
        q,
        reduced_load,
        fingerprint: *mesh.fingerprint(),
    })
}
