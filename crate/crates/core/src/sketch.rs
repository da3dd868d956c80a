//! Online stage: sample rows of `X = Z D Ψ`, form the deduplicated weighted
//! sketch `X̂ = M Ẑ D_(J) Ψ`, and solve `Ĝ r = Ψᵀb` with `Ĝ = X̂ᵀX̂`.

use std::time::Instant;

use log::debug;
use nalgebra::{DMatrix, DMatrixView, DVector, Dyn};

use crate::assembly::check_admissible;
use crate::error::{Error, Result};
use crate::linalg::DenseCholesky;
use crate::mesh::GradientOperator;
use crate::reduction::OfflineBundle;
use crate::sampling::{draw_with, rng_stream, tabulate_bounded, AliasTable, SampleTab};

/// Retries after a singular sketch before giving up.
pub const MAX_RETRIES: usize = 3;

/// Default leverage-quality factor used when planning `c`.
pub const DEFAULT_BETA: f64 = 0.5;

/// Relative pivot floor for the sketch factorization, per unit of `ρ`.
const PIVOT_TOL_PER_RHO: f64 = 64.0 * f64::EPSILON;

#[derive(Clone, Debug)]
pub struct SketchSystem {
    /// Sampled row indices `J`, strictly increasing.
    pub rows: Vec<usize>,
    /// `M_jj = √(m_j / (c q_j))`.
    pub weights: Vec<f64>,
    /// `Ẑ_jj = √z` of the element owning each sampled row.
    pub z_hat: Vec<f64>,
    /// `X̂ᵀ`, stored `ρ × c'` so each sampled row is contiguous.
    pub x_hat_t: DMatrix<f64>,
    /// `Ĝ = X̂ᵀX̂`.
    pub gram: DMatrix<f64>,
}

impl SketchSystem {
    pub fn x_hat(&self) -> DMatrix<f64> {
        self.x_hat_t.transpose()
    }
}

/// Builds the sketch from `Ψᵀ` (`ρ × n`), the query scaling `z` and the
/// tabulated draws.
pub fn build_sketch_transposed(
    d: &GradientOperator,
    psi_t: &DMatrix<f64>,
    z: &[f64],
    tab: &SampleTab,
    q: &[f64],
) -> Result<SketchSystem> {
    let rho = psi_t.nrows();
    if psi_t.ncols() != d.num_interior() {
        return Err(Error::DimensionMismatch {
            context: "basis rows",
            expected: d.num_interior(),
            actual: psi_t.ncols(),
        });
    }
    if z.len() != d.num_elements() {
        return Err(Error::DimensionMismatch {
            context: "scaling vector",
            expected: d.num_elements(),
            actual: z.len(),
        });
    }
    if q.len() != d.num_rows() {
        return Err(Error::DimensionMismatch {
            context: "sampling distribution",
            expected: d.num_rows(),
            actual: q.len(),
        });
    }
    if let Some(i) = z.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Inadmissible { index: i, value: z[i] });
    }
    if tab.total == 0 || tab.rows.len() != tab.counts.len() {
        return Err(Error::InvalidArgument("empty or inconsistent sample table".into()));
    }

    let cp = tab.rows.len();
    let c = tab.total as f64;
    let mut weights = Vec::with_capacity(cp);
    let mut z_hat = Vec::with_capacity(cp);
    let mut data: Vec<f64> = Vec::with_capacity(rho * cp);
    let psi = psi_t.as_slice();
    for (&row, &m) in tab.rows.iter().zip(&tab.counts) {
        if row >= q.len() || !(q[row] > 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "sampled row {row} has no probability mass"
            )));
        }
        let w = (m as f64 / (c * q[row])).sqrt();
        let zh = z[d.element_of_row(row)].sqrt();
        weights.push(w);
        z_hat.push(zh);
        let scale = w * zh;
        let (cols, vals) = d.row(row);
        let start = data.len();
        match cols.split_first() {
            None => data.resize(start + rho, 0.0),
            Some((&c0, rest)) => {
                let a = scale * vals[0];
                data.extend(psi[c0 * rho..(c0 + 1) * rho].iter().map(|&p| a * p));
                let out = &mut data[start..];
                for (&col, &v) in rest.iter().zip(&vals[1..]) {
                    let a = scale * v;
                    for (o, &p) in out.iter_mut().zip(&psi[col * rho..(col + 1) * rho]) {
                        *o += a * p;
                    }
                }
            }
        }
    }
    let x_hat_t = DMatrix::from_vec(rho, cp, data);
    // `X̂ᵀ X̂` through a strided view of the same buffer; materializing the
    // transpose costs more than the product itself.
    let x_hat = DMatrixView::from_slice_with_strides_generic(x_hat_t.as_slice(), Dyn(cp), Dyn(rho), Dyn(rho), Dyn(1));
    let mut gram = DMatrix::zeros(rho, rho);
    gram.gemm(1.0, &x_hat_t, &x_hat, 0.0);
    let gram = (&gram + gram.transpose()) * 0.5;
    Ok(SketchSystem {
        rows: tab.rows.clone(),
        weights,
        z_hat,
        x_hat_t,
        gram,
    })
}

/// Convenience form taking `Ψ` (`n × ρ`) directly.
pub fn build_sketch(
    d: &GradientOperator,
    psi: &DMatrix<f64>,
    z: &[f64],
    tab: &SampleTab,
    q: &[f64],
) -> Result<SketchSystem> {
    build_sketch_transposed(d, &psi.transpose(), z, tab, q)
}

/// Cholesky solve of `Ĝ r = rhs`; a pivot at or below the relative floor
/// raises [`Error::SketchSingular`].
pub fn solve_reduced(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if gram.nrows() != rhs.len() || !gram.is_square() {
        return Err(Error::DimensionMismatch {
            context: "reduced system",
            expected: gram.nrows(),
            actual: rhs.len(),
        });
    }
    let tol = PIVOT_TOL_PER_RHO * gram.nrows() as f64;
    Ok(DenseCholesky::factor(gram, tol)?.solve(rhs))
}

/// `c = ⌈15ρ ln(15ρ) / (β ε²)⌉`.
pub fn plan_sample_size(rho: usize, eps: f64, beta: f64) -> Result<usize> {
    if rho == 0 {
        return Err(Error::InvalidArgument("basis size must be positive".into()));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("accuracy {eps} must lie in (0, 1)")));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!("beta {beta} must lie in (0, 1]")));
    }
    let r = 15.0 * rho as f64;
    Ok((r * r.ln() / (beta * eps * eps)).ceil() as usize)
}

/// Accuracy implied by a given sample size, the inverse of
/// [`plan_sample_size`].
pub fn implied_epsilon(rho: usize, c: usize, beta: f64) -> f64 {
    let r = 15.0 * rho as f64;
    (r * r.ln() / (beta * c as f64)).sqrt()
}

#[derive(Clone, Debug)]
pub struct QueryResult {
    pub r_hat: DVector<f64>,
    pub u_hat: DVector<f64>,
    /// The sketch `Ĝ` that produced `r̂`.
    pub gram: DMatrix<f64>,
    pub c: usize,
    pub c_prime: usize,
    /// Seconds spent from sampling through the lift.
    pub elapsed: f64,
    pub retries: usize,
}

/// Per-bundle online solver: holds `Ψᵀ` and the alias table so each query
/// only pays for sampling, the sketch and a `ρ × ρ` solve.
pub struct SketchSolver<'a> {
    bundle: &'a OfflineBundle,
    d: &'a GradientOperator,
    psi_t: DMatrix<f64>,
    table: AliasTable,
}

impl<'a> SketchSolver<'a> {
    pub fn new(bundle: &'a OfflineBundle, d: &'a GradientOperator) -> Result<Self> {
        if d.num_interior() != bundle.n() {
            return Err(Error::DimensionMismatch {
                context: "bundle basis rows",
                expected: d.num_interior(),
                actual: bundle.n(),
            });
        }
        if d.num_rows() != bundle.kd() {
            return Err(Error::DimensionMismatch {
                context: "bundle distribution",
                expected: d.num_rows(),
                actual: bundle.kd(),
            });
        }
        Ok(Self {
            bundle,
            d,
            psi_t: bundle.psi.transpose(),
            table: AliasTable::new(&bundle.q)?,
        })
    }

    pub fn bundle(&self) -> &OfflineBundle {
        self.bundle
    }

    pub fn gradient(&self) -> &GradientOperator {
        self.d
    }

    /// One sketched solve for the coefficients `p`. Attempt `a` draws from
    /// stream `a` of `seed`; up to [`MAX_RETRIES`] singular sketches are
    /// redrawn before the error is returned.
    pub fn query(&self, p: &[f64], c: usize, seed: u64) -> Result<QueryResult> {
        let start = Instant::now();
        if p.len() != self.d.num_elements() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: self.d.num_elements(),
                actual: p.len(),
            });
        }
        if c == 0 {
            return Err(Error::InvalidArgument("sample size must be positive".into()));
        }
        check_admissible(p)?;
        let z: Vec<f64> = self.d.volumes().iter().zip(p).map(|(v, p)| v * p).collect();

        let mut attempt = 0;
        loop {
            let mut rng = rng_stream(seed, attempt as u64);
            let draws = draw_with(&self.table, c, &mut rng);
            let mut tab = tabulate_bounded(&draws, self.table.len());
            tab.seed = seed;
            let sketch = build_sketch_transposed(self.d, &self.psi_t, &z, &tab, &self.bundle.q)?;
            match solve_reduced(&sketch.gram, &self.bundle.reduced_load) {
                Ok(r_hat) => {
                    let u_hat = &self.bundle.psi * &r_hat;
                    return Ok(QueryResult {
                        r_hat,
                        u_hat,
                        gram: sketch.gram,
                        c,
                        c_prime: tab.distinct(),
                        elapsed: start.elapsed().as_secs_f64(),
                        retries: attempt,
                    });
                }
                Err(e @ Error::SketchSingular { .. }) => {
                    debug!("singular sketch on attempt {attempt} (seed {seed}): {e}");
                    if attempt == MAX_RETRIES {
                        return Err(e);
                    }
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Builds a solver and answers a single query.
pub fn query(bundle: &OfflineBundle, d: &GradientOperator, p: &[f64], c: usize, seed: u64) -> Result<QueryResult> {
    SketchSolver::new(bundle, d)?.query(p, c, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::gradient_operator;
    use crate::meshgen::unit_square;
    use crate::reduction::{build_offline_bundle, reduced_rows};
    use crate::sampling::{rng_stream, tabulate};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn plan_examples() {
        // 750 ln 750 · 100 = 496 505.49…
        assert_eq!(plan_sample_size(50, 0.1, 1.0).unwrap(), 496_506);
        assert_eq!(plan_sample_size(50, 0.1, 0.5).unwrap(), 993_011);
        let floor = (750.0 * 750f64.ln()).ceil() as usize;
        assert!(plan_sample_size(50, 1.0 - 1e-12, 1.0).unwrap() - floor <= 1);
        let c1 = plan_sample_size(20, 0.1, 1.0).unwrap() as f64;
        let c2 = plan_sample_size(20, 0.2, 1.0).unwrap() as f64;
        assert!((c1 / c2 - 4.0).abs() < 1e-4);
        assert!(plan_sample_size(5, 0.0, 1.0).is_err());
        assert!(plan_sample_size(5, 0.5, 1.5).is_err());
        assert!((implied_epsilon(50, 496_506, 1.0) - 0.1).abs() < 1e-6);
    }

    #[test]
    fn solve_reduced_examples() {
        let g = DMatrix::<f64>::identity(3, 3);
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(solve_reduced(&g, &b).unwrap(), b);
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let r = solve_reduced(&g, &DVector::from_vec(vec![2.0, 8.0])).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-15 && (r[1] - 2.0).abs() < 1e-15);

        let mut rng = rng_stream(12, 0);
        let a = DMatrix::from_fn(8, 8, |_, _| StandardNormal.sample(&mut rng));
        let g = a.transpose() * &a + DMatrix::identity(8, 8);
        let rhs = DVector::from_fn(8, |_, _| StandardNormal.sample(&mut rng));
        let r = solve_reduced(&g, &rhs).unwrap();
        let oracle = g.clone().try_inverse().unwrap() * &rhs;
        assert!((&r - oracle).norm() < 1e-10 * r.norm());
        assert!((&g * &r - &rhs).norm() <= 1e-10 * rhs.norm());

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            solve_reduced(&singular, &DVector::from_vec(vec![1.0, 1.0])),
            Err(Error::SketchSingular { index: 1, .. })
        ));
    }

    #[test]
    fn full_sample_reproduces_exact_gram() {
        let mesh = unit_square(4).unwrap();
        let d = gradient_operator(&mesh).unwrap();
        let bundle = build_offline_bundle(&mesh, &d, 9, &vec![1.0; mesh.num_elements()]).unwrap();
        let kd = d.num_rows();
        let q = vec![1.0 / kd as f64; kd];
        // Every row exactly three times: all weights collapse to one.
        let draws: Vec<usize> = (0..kd).flat_map(|r| [r, r, r]).collect();
        let tab = tabulate(&draws);
        let z: Vec<f64> = d.volumes().iter().map(|v| 3.0 * v).collect();
        let sk = build_sketch(&d, &bundle.psi, &z, &tab, &q).unwrap();
        let x = reduced_rows(&d, &bundle.psi, &z).unwrap();
        let g = x.transpose() * &x;
        assert!((&sk.gram - &g).amax() < 1e-12 * g.amax());
        assert!(sk.weights.iter().all(|&w| (w - 1.0).abs() < 1e-14));
    }

    #[test]
    fn queries_are_deterministic_and_consistent() {
        let mesh = unit_square(6).unwrap();
        let d = gradient_operator(&mesh).unwrap();
        let bundle = build_offline_bundle(&mesh, &d, 6, &vec![1.0; mesh.num_elements()]).unwrap();
        let solver = SketchSolver::new(&bundle, &d).unwrap();
        let p = vec![2.0; mesh.num_elements()];
        let a = solver.query(&p, 400, 17).unwrap();
        let b = solver.query(&p, 400, 17).unwrap();
        assert_eq!(a.r_hat, b.r_hat);
        assert_eq!(a.c_prime, b.c_prime);
        assert!((&bundle.psi * &a.r_hat - &a.u_hat).amax() < 1e-13);
        assert!(a.c_prime <= 400.min(d.num_rows()));
        assert!(matches!(
            solver.query(&vec![0.0; p.len()], 10, 1),
            Err(Error::Inadmissible { .. })
        ));
    }

    #[test]
    fn too_few_samples_fail_after_retries() {
        let mesh = unit_square(6).unwrap();
        let d = gradient_operator(&mesh).unwrap();
        let bundle = build_offline_bundle(&mesh, &d, 6, &vec![1.0; mesh.num_elements()]).unwrap();
        let p = vec![1.0; mesh.num_elements()];
        assert!(matches!(
            query(&bundle, &d, &p, 2, 3),
            Err(Error::SketchSingular { .. })
        ));
    }
}
