//! Reference solves, error metrics, a priori bounds and the benchmark loop.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use crate::assembly::StiffnessAssembler;
use crate::error::{Error, Result};
use crate::fields::FieldSpec;
use crate::linalg::{dense_condition_number, extreme_eigenvalues, norm, pcg, residual_norm, SparseCholesky};
use crate::mesh::{GradientOperator, Mesh};
use crate::parallel::Execution;
use crate::reduction::OfflineBundle;
use crate::sketch::{implied_epsilon, SketchSolver, DEFAULT_BETA, MAX_RETRIES};

/// Relative residual demanded of every reference solve.
pub const REFERENCE_TOL: f64 = 1e-10;

/// Relative tolerance for the extreme-eigenvalue iterations behind `κ`.
pub const KAPPA_TOL: f64 = 1e-6;

/// `u = A⁻¹ b` with `‖Au − b‖ ≤ 1e−10 ‖b‖`: preconditioned CG, falling back
/// to a sparse Cholesky factorization if CG stalls.
pub fn reference_solve(a: &CsrMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let max_iter = (20 * n).max(1000);
    match pcg(a, b, REFERENCE_TOL, max_iter) {
        Ok(sol) => Ok(sol.x),
        Err(Error::SolverNonConvergence { .. }) => {
            let u = SparseCholesky::factor(a)?.solve(b);
            let res = residual_norm(a, &u, b) / bnorm;
            if res > REFERENCE_TOL {
                return Err(Error::SolverNonConvergence {
                    residual: res,
                    iterations: max_iter,
                });
            }
            Ok(u)
        }
        Err(e) => Err(e),
    }
}

/// `‖u − ΨΨᵀu‖ / ‖u‖`, zero for `u = 0`.
pub fn projection_error(psi: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    let un = u.norm();
    if un == 0.0 {
        return 0.0;
    }
    (u - psi * psi.tr_mul(u)).norm() / un
}

/// `G = ΨᵀAΨ`.
pub fn exact_gram(a: &CsrMatrix<f64>, psi: &DMatrix<f64>) -> DMatrix<f64> {
    let g = psi.tr_mul(&(a * psi));
    (&g + g.transpose()) * 0.5
}

/// Spectral norm of `Ĝ⁻¹G − I`; infinite when `Ĝ` is not positive definite.
pub fn sketch_deviation(g: &DMatrix<f64>, g_hat: &DMatrix<f64>) -> f64 {
    let Some(chol) = g_hat.clone().cholesky() else {
        return f64::INFINITY;
    };
    let mut m = chol.solve(g);
    for i in 0..m.nrows() {
        m[(i, i)] -= 1.0;
    }
    if m.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    m.singular_values().max()
}

/// The three a priori error bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    /// `√κ(G) ε / (1 − ε)`.
    pub sketch: f64,
    /// `(1 + √κ(A)) ε_P`.
    pub projection: f64,
    /// `(1 + ε_P √κ(A)) √κ(G) ε / (1 − ε) + (1 + √κ(A)) ε_P`.
    pub total: f64,
}

/// Evaluates the bounds; `ε ≥ 1` makes the sketching terms infinite.
pub fn theorem_bounds(kappa_g: f64, kappa_a: f64, eps: f64, proj_err: f64) -> Bounds {
    let ratio = if eps < 1.0 { eps / (1.0 - eps) } else { f64::INFINITY };
    let sg = kappa_g.sqrt();
    let sa = kappa_a.sqrt();
    let sketch = sg * ratio;
    let projection = (1.0 + sa) * proj_err;
    let total = (1.0 + proj_err * sa) * sketch + projection;
    Bounds {
        sketch,
        projection,
        total,
    }
}

/// Condition number of a sparse SPD matrix, dense up to `dense_limit`.
pub fn condition_number(a: &CsrMatrix<f64>, dense_limit: usize) -> Result<f64> {
    let (lo, hi) = extreme_eigenvalues(a, KAPPA_TOL, dense_limit)?;
    if !(lo > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(hi / lo)
}

/// One benchmark row.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub rho: usize,
    pub c: usize,
    pub elapsed_s: f64,
    /// `c' / kd`.
    pub dedup_ratio: f64,
    pub proj_err: f64,
    pub sketch_dev: f64,
    pub reg_err: f64,
    pub total_err: f64,
    pub kappa_a: f64,
    pub kappa_g: f64,
    pub bound41: f64,
    pub bound42: f64,
    pub bound43: f64,
    pub retries: usize,
    /// The query failed with a singular sketch after all retries.
    pub singular: bool,
}

/// A fixed mesh, its gradient operator, bundle and full load vector.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub mesh: &'a Mesh,
    pub d: &'a GradientOperator,
    pub bundle: &'a OfflineBundle,
    /// Interior load vector `b`, consistent with `bundle.reduced_load`.
    pub load: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub runs: usize,
    pub c: usize,
    /// Accuracy used in the bounds; `None` infers it from `c` and `beta`.
    pub eps: Option<f64>,
    pub beta: f64,
    pub seed: u64,
    pub execution: Execution,
    /// Largest `n` for which `κ(A)` is computed densely.
    pub dense_limit: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            runs: 100,
            c: 10_000,
            eps: None,
            beta: DEFAULT_BETA,
            seed: 0,
            execution: Execution::default(),
            dense_limit: 500,
        }
    }
}

/// Evaluates the full row for one parameter vector. Reuses the caller's
/// solver and assembler so that repeated calls share their setup.
pub fn evaluate_query(
    problem: &Problem<'_>,
    solver: &SketchSolver<'_>,
    assembler: &StiffnessAssembler,
    p: &[f64],
    cfg: &BenchmarkConfig,
    seed: u64,
) -> Result<ErrorReport> {
    let bundle = problem.bundle;
    let psi = &bundle.psi;
    let rho = bundle.rho();
    let z: Vec<f64> = problem.d.volumes().iter().zip(p).map(|(v, p)| v * p).collect();
    crate::assembly::check_admissible(p)?;
    let a = assembler.assemble(&z)?;
    let u_opt = DVector::from_vec(reference_solve(&a, problem.load)?);
    let g = exact_gram(&a, psi);
    let u_reg = psi
        * g.clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?
            .solve(&bundle.reduced_load);
    let proj_err = projection_error(psi, &u_opt);
    let kappa_a = condition_number(&a, cfg.dense_limit)?;
    let kappa_g = dense_condition_number(&g);
    let eps = cfg.eps.unwrap_or_else(|| implied_epsilon(rho, cfg.c, cfg.beta));
    let bounds = theorem_bounds(kappa_g, kappa_a, eps, proj_err);

    let base = ErrorReport {
        rho,
        c: cfg.c,
        elapsed_s: 0.0,
        dedup_ratio: f64::NAN,
        proj_err,
        sketch_dev: f64::INFINITY,
        reg_err: f64::NAN,
        total_err: f64::NAN,
        kappa_a,
        kappa_g,
        bound41: bounds.sketch,
        bound42: bounds.projection,
        bound43: bounds.total,
        retries: MAX_RETRIES,
        singular: true,
    };
    let result = match solver.query(p, cfg.c, seed) {
        Ok(r) => r,
        Err(Error::SketchSingular { .. }) => return Ok(base),
        Err(e) => return Err(e),
    };
    let rel = |x: &DVector<f64>, y: &DVector<f64>| {
        let yn = y.norm();
        if yn == 0.0 {
            x.norm()
        } else {
            (x - y).norm() / yn
        }
    };
    Ok(ErrorReport {
        elapsed_s: result.elapsed,
        dedup_ratio: result.c_prime as f64 / bundle.kd() as f64,
        sketch_dev: sketch_deviation(&g, &result.gram),
        reg_err: rel(&result.u_hat, &u_reg),
        total_err: rel(&result.u_hat, &u_opt),
        retries: result.retries,
        singular: false,
        ..base
    })
}

/// Per-run rows and the mean over non-singular runs.
#[derive(Clone, Debug)]
pub struct BenchmarkReport {
    pub rows: Vec<ErrorReport>,
    pub mean: ErrorReport,
    pub singular_runs: usize,
}

/// Runs `cfg.runs` independent queries: run `i` draws its field and its
/// samples from seed `cfg.seed ^ i`.
pub fn run_benchmark(problem: &Problem<'_>, field: &FieldSpec, cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if cfg.runs == 0 {
        return Err(Error::InvalidArgument("run count must be positive".into()));
    }
    if problem.load.len() != problem.bundle.n() {
        return Err(Error::DimensionMismatch {
            context: "load vector",
            expected: problem.bundle.n(),
            actual: problem.load.len(),
        });
    }
    let solver = SketchSolver::new(problem.bundle, problem.d)?;
    let assembler = StiffnessAssembler::new(problem.d);
    let sampler = field.sampler(problem.mesh)?;
    let rows = cfg.execution.map(cfg.runs, |i| {
        let seed = cfg.seed ^ i as u64;
        let p = sampler.sample(seed)?;
        evaluate_query(problem, &solver, &assembler, &p, cfg, seed)
    });
    let rows: Vec<ErrorReport> = rows.into_iter().collect::<Result<_>>()?;
    let singular_runs = rows.iter().filter(|r| r.singular).count();
    let mean = mean_row(&rows);
    Ok(BenchmarkReport {
        rows,
        mean,
        singular_runs,
    })
}

/// Column means over the non-singular rows.
pub fn mean_row(rows: &[ErrorReport]) -> ErrorReport {
    let ok: Vec<&ErrorReport> = rows.iter().filter(|r| !r.singular).collect();
    let m = ok.len() as f64;
    let avg = |f: fn(&ErrorReport) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / m
        }
    };
    let first = rows.first();
    ErrorReport {
        rho: first.map_or(0, |r| r.rho),
        c: first.map_or(0, |r| r.c),
        elapsed_s: avg(|r| r.elapsed_s),
        dedup_ratio: avg(|r| r.dedup_ratio),
        proj_err: avg(|r| r.proj_err),
        sketch_dev: avg(|r| r.sketch_dev),
        reg_err: avg(|r| r.reg_err),
        total_err: avg(|r| r.total_err),
        kappa_a: avg(|r| r.kappa_a),
        kappa_g: avg(|r| r.kappa_g),
        bound41: avg(|r| r.bound41),
        bound42: avg(|r| r.bound42),
        bound43: avg(|r| r.bound43),
        retries: if ok.is_empty() {
            0
        } else {
            (ok.iter().map(|r| r.retries).sum::<usize>() as f64 / m).round() as usize
        },
        singular: ok.is_empty(),
    }
}

pub const CSV_HEADER: &str =
    "rho,c,time_s,dedup_ratio,proj_err,sketch_dev,reg_err,total_err,kappa_A,kappa_G,bound41,bound42,bound43,retries";

/// Formats like C's `%g`: 6 significant digits, trailing zeros removed,
/// scientific notation outside `[1e−4, 1e6)`.
pub fn format_g(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn csv_fields(r: &ErrorReport) -> [String; 13] {
    [
        r.c.to_string(),
        format_g(r.elapsed_s),
        format_g(r.dedup_ratio),
        format_g(r.proj_err),
        format_g(r.sketch_dev),
        format_g(r.reg_err),
        format_g(r.total_err),
        format_g(r.kappa_a),
        format_g(r.kappa_g),
        format_g(r.bound41),
        format_g(r.bound42),
        format_g(r.bound43),
        r.retries.to_string(),
    ]
}

/// Header, one line per run, then the `MEAN` line.
pub fn write_csv<W: Write>(mut w: W, report: &BenchmarkReport) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in &report.rows {
        writeln!(w, "{},{}", r.rho, csv_fields(r).join(","))?;
    }
    writeln!(w, "MEAN,{}", csv_fields(&report.mean).join(","))
}

/// The `MEAN` row as a short aligned table.
pub fn summary_table(report: &BenchmarkReport) -> String {
    let m = &report.mean;
    format!(
        "{:>5} {:>9} {:>10} {:>8} {:>10} {:>10} {:>10} {:>10}\n{:>5} {:>9} {:>10} {:>8} {:>10} {:>10} {:>10} {:>10}\n",
        "rho",
        "c",
        "time [s]",
        "c'/kd",
        "proj err",
        "||G^-1G-I||",
        "reg err",
        "total err",
        m.rho,
        m.c,
        format_g(m.elapsed_s),
        format_g(m.dedup_ratio),
        format_g(m.proj_err),
        format_g(m.sketch_dev),
        format_g(m.reg_err),
        format_g(m.total_err),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_load, scaling_vector};
    use crate::mesh::gradient_operator;
    use crate::meshgen::unit_square;
    use crate::reduction::build_offline_bundle;
    use crate::sampling::rng_stream;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn format_g_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (123456.0, "123456"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (1.234567891, "1.23457"),
            (-2.5, "-2.5"),
            (999999.5, "1e+06"),
            (0.1, "0.1"),
            (f64::INFINITY, "inf"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g(x), want, "{x}");
        }
    }

    #[test]
    fn deviation_examples() {
        let mut rng = rng_stream(21, 0);
        let a = DMatrix::from_fn(6, 6, |_, _| StandardNormal.sample(&mut rng));
        let g = a.transpose() * &a + DMatrix::identity(6, 6);
        assert!(sketch_deviation(&g, &g) < 1e-12);
        assert!((sketch_deviation(&g, &(&g * 2.0)) - 0.5).abs() < 1e-12);
        let b = DMatrix::from_fn(6, 6, |_, _| StandardNormal.sample(&mut rng));
        let gh = b.transpose() * &b + DMatrix::identity(6, 6);
        // Oracle: the explicit inverse and a singular value decomposition.
        let m = gh.clone().try_inverse().unwrap() * &g - DMatrix::identity(6, 6);
        assert!((sketch_deviation(&g, &gh) - m.singular_values().max()).abs() < 1e-10);
        assert!(sketch_deviation(&g, &DMatrix::zeros(6, 6)).is_infinite());
    }

    #[test]
    fn bound_examples() {
        let b = theorem_bounds(1.0, 4.0, 0.1, 0.0);
        assert!((b.sketch - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(b.total, b.sketch);
        assert_eq!(b.projection, 0.0);
        assert!(theorem_bounds(1.0, 1.0, 1.5, 0.1).sketch.is_infinite());
    }

    #[test]
    fn projection_examples() {
        let psi = DMatrix::<f64>::identity(4, 2);
        assert_eq!(projection_error(&psi, &DVector::from_vec(vec![1., 2., 0., 0.])), 0.0);
        assert_eq!(projection_error(&psi, &DVector::from_vec(vec![0., 0., 3., 0.])), 1.0);
        assert_eq!(projection_error(&psi, &DVector::zeros(4)), 0.0);
    }

    #[test]
    fn reference_solve_examples() {
        let mesh = unit_square(10).unwrap();
        let d = gradient_operator(&mesh).unwrap();
        let field = scaling_vector(mesh.volumes(), &vec![3.0; mesh.num_elements()]).unwrap();
        let a = crate::assembly::assemble_stiffness(&d, &field).unwrap();
        let b = assemble_load(&mesh, &vec![1.0; mesh.num_elements()]).unwrap().b;
        let u = reference_solve(&a, &b).unwrap();
        assert!(residual_norm(&a, &u, &b) <= 1e-10 * norm(&b));
        let eye = CsrMatrix::identity(5);
        assert_eq!(
            reference_solve(&eye, &[1., 2., 3., 4., 5.]).unwrap(),
            vec![1., 2., 3., 4., 5.]
        );
    }

    #[test]
    fn benchmark_rows_are_consistent() {
        let mesh = unit_square(8).unwrap();
        let d = gradient_operator(&mesh).unwrap();
        let f = vec![1.0; mesh.num_elements()];
        let bundle = build_offline_bundle(&mesh, &d, 8, &f).unwrap();
        let load = assemble_load(&mesh, &f).unwrap().b;
        let problem = Problem {
            mesh: &mesh,
            d: &d,
            bundle: &bundle,
            load: &load,
        };
        let cfg = BenchmarkConfig {
            runs: 6,
            c: 2000,
            seed: 9,
            ..Default::default()
        };
        let report = run_benchmark(&problem, &FieldSpec::Uniform { lo: 0.1, hi: 100.0 }, &cfg).unwrap();
        assert_eq!(report.rows.len(), 6);
        for r in &report.rows {
            assert!(!r.singular);
            assert!(r.reg_err <= r.sketch_dev);
            assert!(r.dedup_ratio > 0.0 && r.dedup_ratio <= 1.0);
        }
        let seq = run_benchmark(
            &problem,
            &FieldSpec::Uniform { lo: 0.1, hi: 100.0 },
            &BenchmarkConfig {
                execution: Execution::Sequential,
                ..cfg
            },
        )
        .unwrap();
        for (a, b) in report.rows.iter().zip(&seq.rows) {
            assert_eq!(a.total_err, b.total_err);
        }
        let mut out = Vec::new();
        write_csv(&mut out, &report).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 8);
        assert!(text.lines().last().unwrap().starts_with("MEAN,2000,"));
    }
}
