//! Independent oracle checks on small built-in meshes, run by
//! `sketchfem verify`. Each check recomputes a quantity by a different route
//! (brute force, dense algebra, closed forms or Monte Carlo) and compares.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::assembly::{assemble_load, assemble_stiffness, reduced_load, scaling_vector, vertex_loads};
use crate::diagnostics::{
    exact_gram, projection_error, reference_solve, sketch_deviation, theorem_bounds, BenchmarkConfig, Problem,
};
use crate::eigen::{smallest_eigenpairs_with, EigenMethod, EigenOptions};
use crate::error::Result;
use crate::fields::{centroid_covariance, matern_covariance, uniform_field, FieldSpec, KarhunenLoeve};
use crate::linalg::{csr_to_dense, dense_condition_number};
use crate::mesh::{gradient_operator, Mesh};
use crate::meshgen::{disk, jitter, square, unit_square};
use crate::reduction::{
    build_offline_bundle, laplacian, leverage_scores, reduced_rows, reweighted_leverage, sampling_distribution,
};
use crate::sampling::{draw_samples, rng_stream, tabulate, tabulate_bounded, AliasTable};
use crate::sketch::{build_sketch, plan_sample_size, solve_reduced, SketchSolver};

/// Outcome of one oracle check.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Outcome = std::result::Result<String, String>;

fn ok<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

type CheckFn = fn() -> Outcome;

const CHECKS: &[(&str, CheckFn)] = &[
    ("mesh: boundary by brute-force facet count", check_boundary),
    ("mesh: volumes and gradients", check_gradients),
    ("assembly: element-loop oracle", check_element_loop),
    ("assembly: 5-point stencil", check_stencil),
    ("assembly: load vector", check_load),
    ("assembly: disk Poisson convergence", check_disk_poisson),
    ("reduction: Laplacian eigenvalue convergence", check_laplacian_eigen),
    ("reduction: Krylov vs dense eigenspace", check_eigenspace),
    ("reduction: leverage vs Gram inverse", check_leverage),
    ("reduction: reweighted leverage", check_reweighting),
    ("sketch: alias table frequencies", check_alias),
    ("sketch: chi-square goodness of fit", check_chi_square),
    ("sketch: tabulation vs hash count", check_tabulate),
    ("sketch: three sketch forms agree", check_three_forms),
    ("sketch: reduced solve vs inverse", check_reduced_solve),
    ("sketch: query converges to reference", check_query_convergence),
    ("sketch: sample-size formula", check_plan),
    ("fields: uniform mean", check_uniform),
    ("fields: Matern closed forms", check_matern),
    ("fields: KL covariance", check_kl_covariance),
    ("diagnostics: projection error", check_projection),
    ("diagnostics: sketch deviation", check_deviation),
    ("diagnostics: bounds dominate errors", check_bounds),
    ("diagnostics: triangle inequality and trend", check_benchmark_trend),
];

/// Runs every check, in a fixed order.
pub fn run_all() -> Vec<Check> {
    CHECKS
        .iter()
        .map(|(name, f)| {
            let out = f();
            Check {
                name,
                passed: out.is_ok(),
                detail: out.unwrap_or_else(|e| e),
            }
        })
        .collect()
}

/// Number of available checks.
pub fn check_count() -> usize {
    CHECKS.len()
}

// ---------------------------------------------------------------- oracles

/// Boundary vertices by comparing every facet against every other one.
pub fn brute_force_boundary(mesh: &Mesh) -> Vec<bool> {
    let dim = mesh.dim();
    let mut facets: Vec<Vec<usize>> = Vec::new();
    for cell in mesh.elements() {
        for skip in 0..=dim {
            let mut f: Vec<usize> = cell
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, &v)| v)
                .collect();
            f.sort_unstable();
            facets.push(f);
        }
    }
    let mut boundary = vec![false; mesh.num_vertices()];
    for (i, f) in facets.iter().enumerate() {
        let shared = facets.iter().enumerate().any(|(j, g)| i != j && f == g);
        if !shared {
            for &v in f {
                boundary[v] = true;
            }
        }
    }
    boundary
}

/// `(1/c) Σ_j q_{i_j}⁻¹ X_(i_j)ᵀ X_(i_j)` over the raw draws.
pub fn naive_sketch(x: &DMatrix<f64>, draws: &[usize], q: &[f64]) -> DMatrix<f64> {
    let rho = x.ncols();
    let c = draws.len() as f64;
    let mut g = DMatrix::zeros(rho, rho);
    for &i in draws {
        let row = x.row(i);
        g += row.transpose() * row / (c * q[i]);
    }
    g
}

/// `Xᵀ S Sᵀ X` with `S = R W` built explicitly: `R` selects row `i_j` in
/// column `j`, `W_jj = 1/√(c q_{i_j})`.
pub fn s_form_sketch(x: &DMatrix<f64>, draws: &[usize], q: &[f64]) -> DMatrix<f64> {
    let (m, c) = (x.nrows(), draws.len());
    let mut r = DMatrix::zeros(m, c);
    let mut w = DMatrix::zeros(c, c);
    for (j, &i) in draws.iter().enumerate() {
        r[(i, j)] = 1.0;
        w[(j, j)] = 1.0 / (c as f64 * q[i]).sqrt();
    }
    let s = r * w;
    let stx = s.transpose() * x;
    stx.transpose() * stx
}

/// Relative L² error of the P1 solution of `−Δu = 1` on the unit disk
/// against `u(r) = (1 − r²)/4`, using the edge-midpoint rule per triangle.
pub fn disk_poisson_error(rings: usize) -> Result<f64> {
    let mesh = disk(rings, 1.0)?;
    let d = gradient_operator(&mesh)?;
    let ones = vec![1.0; mesh.num_elements()];
    let a = assemble_stiffness(&d, &scaling_vector(mesh.volumes(), &ones)?)?;
    let b = assemble_load(&mesh, &ones)?.b;
    let u = reference_solve(&a, &b)?;
    let mut nodal = vec![0.0; mesh.num_vertices()];
    for (col, &v) in mesh.interior_ids().iter().enumerate() {
        nodal[v] = u[col];
    }
    let exact = |x: &[f64]| (1.0 - x[0] * x[0] - x[1] * x[1]) / 4.0;
    let (mut err2, mut norm2) = (0.0, 0.0);
    for (e, cell) in mesh.elements().enumerate() {
        let w = mesh.volumes()[e] / 3.0;
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            let (p, q) = (mesh.vertex(cell[i]), mesh.vertex(cell[j]));
            let mid = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
            let uh = (nodal[cell[i]] + nodal[cell[j]]) / 2.0;
            let ue = exact(&mid);
            err2 += w * (uh - ue).powi(2);
            norm2 += w * ue * ue;
        }
    }
    Ok((err2 / norm2).sqrt())
}

fn random_matrix(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_stream(seed, 0);
    DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng))
}

fn gram_inverse_leverage(x: &DMatrix<f64>) -> Vec<f64> {
    let ginv = (x.transpose() * x).try_inverse().expect("full rank");
    x.row_iter().map(|r| (r * &ginv * r.transpose())[(0, 0)]).collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", ")
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ----------------------------------------------------------------- checks

fn check_boundary() -> Outcome {
    let mesh = ok(unit_square(4))?;
    let brute = brute_force_boundary(&mesh);
    let interior = brute.iter().filter(|&&b| !b).count();
    ensure(interior == 9, || format!("{interior} interior vertices, expected 9"))?;
    for (v, &b) in brute.iter().enumerate() {
        ensure(b == mesh.is_boundary(v), || format!("vertex {v} misclassified"))?;
    }
    let jittered = ok(jitter(&ok(square(5, -1.0, 1.0))?, 0.2, 4))?;
    let brute = brute_force_boundary(&jittered);
    ensure(
        (0..jittered.num_vertices()).all(|v| brute[v] == jittered.is_boundary(v)),
        || "jittered mesh misclassified".into(),
    )?;
    Ok("n = 9 on the 4x4 square".into())
}

fn check_gradients() -> Outcome {
    let tri = ok(Mesh::new(2, vec![0., 0., 2., 0., 0., 2.], vec![0, 1, 2]))?;
    ensure((tri.volumes()[0] - 2.0).abs() < 1e-15, || {
        format!("volume {}", tri.volumes()[0])
    })?;
    let reference = ok(Mesh::new(2, vec![0., 0., 1., 0., 0., 1.], vec![0, 1, 2]))?;
    let g = csr_to_dense(ok(gradient_operator(&reference))?.full());
    let want = DMatrix::from_row_slice(2, 3, &[-1., 1., 0., -1., 0., 1.]);
    ensure((&g - &want).amax() < 1e-14, || format!("reference gradients {g}"))?;
    let g2 = csr_to_dense(ok(gradient_operator(&tri))?.full());
    ensure((&g2 * 2.0 - &want).amax() < 1e-14, || {
        "scaled gradients not halved".into()
    })?;

    // Affine reproduction on a jittered mesh.
    let mesh = ok(jitter(&ok(square(6, -1.0, 1.0))?, 0.25, 9))?;
    let full = csr_to_dense(ok(gradient_operator(&mesh))?.full());
    let mut rng = rng_stream(13, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (a0, a1, a2): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let vals = DVector::from_fn(mesh.num_vertices(), |v, _| {
            let x = mesh.vertex(v);
            a0 + a1 * x[0] + a2 * x[1]
        });
        let grads = &full * vals;
        for e in 0..mesh.num_elements() {
            worst = worst.max((grads[2 * e] - a1).abs()).max((grads[2 * e + 1] - a2).abs());
        }
    }
    ensure(worst < 1e-12, || format!("affine gradient error {worst:e}"))?;
    Ok(format!("affine reproduction error {worst:.1e}"))
}

fn element_loop(mesh: &Mesh, full: &DMatrix<f64>, z: &[f64]) -> DMatrix<f64> {
    let n = mesh.num_interior();
    let dim = mesh.dim();
    let mut a = DMatrix::zeros(n, n);
    for (e, cell) in mesh.elements().enumerate() {
        let y = full.rows(e * dim, dim) * z[e].sqrt();
        for &u in cell {
            for &v in cell {
                if let (Some(i), Some(j)) = (mesh.interior_column(u), mesh.interior_column(v)) {
                    a[(i, j)] += y.column(u).dot(&y.column(v));
                }
            }
        }
    }
    a
}

fn check_element_loop() -> Outcome {
    let mesh = ok(jitter(&ok(unit_square(4))?, 0.2, 3))?;
    let d = ok(gradient_operator(&mesh))?;
    let p = ok(uniform_field(mesh.num_elements(), 0.1, 10.0, 5))?;
    let field = ok(scaling_vector(mesh.volumes(), &p))?;
    for e in 0..mesh.num_elements() {
        ensure(field.z[e] == mesh.volumes()[e] * p[e], || format!("z[{e}] differs"))?;
    }
    let a = csr_to_dense(&ok(assemble_stiffness(&d, &field))?);
    let oracle = element_loop(&mesh, &csr_to_dense(d.full()), &field.z);
    let diff = (&a - &oracle).amax();
    ensure(diff < 1e-12, || format!("triple product differs by {diff:e}"))?;
    ensure(a == a.transpose(), || "stiffness matrix not exactly symmetric".into())?;
    let lmin = a.symmetric_eigenvalues().min();
    ensure(lmin > 0.0, || format!("smallest eigenvalue {lmin}"))?;
    Ok(format!("max deviation {diff:.1e}, lambda_min {lmin:.3e}"))
}

fn check_stencil() -> Outcome {
    let mesh = ok(unit_square(6))?;
    let d = ok(gradient_operator(&mesh))?;
    let a = csr_to_dense(&laplacian(&d));
    let np = 7;
    for j in 1..6 {
        for i in 1..6 {
            let c = mesh.interior_column(j * np + i).unwrap();
            ensure((a[(c, c)] - 4.0).abs() < 1e-12, || format!("diagonal at ({i},{j})"))?;
            let mut off = 0.0;
            for (di, dj) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if let Some(col) = mesh.interior_column((nj * np as i64 + ni) as usize) {
                    ensure((a[(c, col)] + 1.0).abs() < 1e-12, || format!("neighbour of ({i},{j})"))?;
                }
                off += 1.0;
            }
            let row_abs: f64 = a.row(c).iter().map(|v| v.abs()).sum();
            ensure(row_abs <= a[(c, c)] + off + 1e-12, || "extra couplings".into())?;
        }
    }
    Ok("diagonal 4, neighbours -1".into())
}

fn check_load() -> Outcome {
    let tri = ok(Mesh::new(2, vec![0., 0., 1., 0., 0., 1.], vec![0, 1, 2]))?;
    let loads = ok(vertex_loads(&tri, &[1.0]))?;
    ensure(loads.iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-15), || {
        format!("{loads:?}")
    })?;
    let mesh = ok(jitter(&ok(square(5, -1.0, 1.0))?, 0.2, 8))?;
    let total: f64 = ok(vertex_loads(&mesh, &vec![1.0; mesh.num_elements()]))?.iter().sum();
    ensure((total - 4.0).abs() < 1e-12, || format!("total load {total}"))?;
    let n = mesh.num_interior();
    let psi = random_matrix(n, 5, 31);
    let b: Vec<f64> = random_matrix(n, 1, 32).iter().copied().collect();
    let r = ok(reduced_load(&psi, &b))?;
    let mut oracle = [0.0; 5];
    for (j, o) in oracle.iter_mut().enumerate() {
        for i in 0..n {
            *o += psi[(i, j)] * b[i];
        }
    }
    let diff = max_abs_diff(r.as_slice(), &oracle);
    ensure(diff < 1e-13, || format!("reduced load differs by {diff:e}"))?;
    Ok("exact shape-function integrals".into())
}

fn check_disk_poisson() -> Outcome {
    let errs: Vec<f64> = [4, 8, 16]
        .iter()
        .map(|&l| disk_poisson_error(l))
        .collect::<Result<_>>()
        .map_err(|e| e.to_string())?;
    ensure(errs.windows(2).all(|w| w[1] < w[0]), || {
        format!("not decreasing: {errs:?}")
    })?;
    ensure(errs[2] < 0.02, || format!("finest error {}", errs[2]))?;
    Ok(format!("relative L2 errors {}", fmt_list(&errs)))
}

fn check_laplacian_eigen() -> Outcome {
    let mut prev = 0.0;
    let mut seen = Vec::new();
    for cells in [6, 10, 16, 20] {
        let d = ok(gradient_operator(&ok(unit_square(cells))?))?;
        let h = 1.0 / cells as f64;
        let lam = csr_to_dense(&laplacian(&d)).symmetric_eigenvalues().min() / (h * h);
        ensure(lam > prev && lam < 2.0 * std::f64::consts::PI.powi(2), || {
            format!("scaled eigenvalue {lam} after {prev}")
        })?;
        prev = lam;
        seen.push(lam);
    }
    Ok(format!("h^-2 lambda_min = {seen:.4?}"))
}

fn check_eigenspace() -> Outcome {
    let mesh = ok(disk(10, 1.0))?;
    let delta = laplacian(&ok(gradient_operator(&mesh))?);
    let rho = 12;
    let dense = ok(smallest_eigenpairs_with(
        &delta,
        rho,
        &EigenOptions {
            method: EigenMethod::Dense,
            ..Default::default()
        },
    ))?;
    let krylov = ok(smallest_eigenpairs_with(
        &delta,
        rho,
        &EigenOptions {
            method: EigenMethod::Krylov,
            ..Default::default()
        },
    ))?;
    let gap = (&dense.vectors - &krylov.vectors * (krylov.vectors.transpose() * &dense.vectors))
        .singular_values()
        .max();
    ensure(gap < 1e-6, || format!("subspace angle sine {gap:e}"))?;
    Ok(format!("n = {}, sin(angle) = {gap:.1e}", delta.nrows()))
}

fn check_leverage() -> Outcome {
    let x = random_matrix(40, 5, 41);
    let diff = max_abs_diff(&ok(leverage_scores(&x))?, &gram_inverse_leverage(&x));
    ensure(diff < 1e-10, || format!("random 40x5 differs by {diff:e}"))?;
    let h = DMatrix::from_row_slice(4, 2, &[1., 1., 1., -1., 1., 1., 1., -1.]) * 0.5;
    let q = ok(sampling_distribution(&ok(leverage_scores(&h))?, 2))?;
    ensure(q.iter().all(|&v| (v - 0.25).abs() < 1e-15), || format!("{q:?}"))?;

    let mesh = ok(unit_square(6))?;
    let d = ok(gradient_operator(&mesh))?;
    let bundle = ok(build_offline_bundle(&mesh, &d, 5, &vec![1.0; mesh.num_elements()]))?;
    let x = ok(reduced_rows(&d, &bundle.psi, d.volumes()))?;
    let diff2 = max_abs_diff(&bundle.leverage, &gram_inverse_leverage(&x));
    ensure(diff2 < 1e-10, || format!("bundle leverage differs by {diff2:e}"))?;
    Ok(format!("max deviation {:.1e}", diff.max(diff2)))
}

fn check_reweighting() -> Outcome {
    let x = random_matrix(30, 4, 51);
    let mut worst: f64 = 0.0;
    for i in 0..30 {
        let (_, closed) = ok(reweighted_leverage(&x, i, 0.3))?;
        let mut scaled = x.clone();
        scaled.row_mut(i).scale_mut(0.3f64.sqrt());
        worst = worst.max(max_abs_diff(&closed, &ok(leverage_scores(&scaled))?));
    }
    ensure(worst < 1e-10, || format!("closed form differs by {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

fn check_alias() -> Outcome {
    let t = ok(AliasTable::new(&[0.25; 4]))?;
    let n = 1_000_000;
    let tab = tabulate_bounded(&draw_samples(&t, n, 61), 4);
    let sigma = (n as f64 * 0.25 * 0.75).sqrt();
    let worst = tab
        .counts
        .iter()
        .map(|&m| (m as f64 - n as f64 / 4.0).abs() / sigma)
        .fold(0.0, f64::max);
    ensure(worst < 3.0, || format!("{worst:.2} sigma"))?;
    Ok(format!("max deviation {worst:.2} sigma"))
}

fn check_chi_square() -> Outcome {
    let q: Vec<f64> = (1..=10).map(|i| i as f64 / 55.0).collect();
    let t = ok(AliasTable::new(&q))?;
    let c = 100_000;
    let tab = tabulate_bounded(&draw_samples(&t, c, 71), 10);
    let mut counts = [0u32; 10];
    for (&r, &m) in tab.rows.iter().zip(&tab.counts) {
        counts[r] = m;
    }
    let stat: f64 = counts
        .iter()
        .zip(&q)
        .map(|(&o, &p)| {
            let e = p * c as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    // 99.9% quantile of chi-square with 9 degrees of freedom.
    ensure(stat < 27.877, || format!("statistic {stat:.2}"))?;
    Ok(format!("chi2 = {stat:.2} < 27.877"))
}

fn check_tabulate() -> Outcome {
    let mut rng = rng_stream(81, 0);
    let draws: Vec<usize> = (0..20_000).map(|_| rng.random_range(0..500)).collect();
    let mut counts: HashMap<usize, u32> = HashMap::new();
    for &x in &draws {
        *counts.entry(x).or_default() += 1;
    }
    let tab = tabulate(&draws);
    ensure(tab.distinct() == counts.len(), || "distinct count differs".into())?;
    ensure(tab.rows.iter().zip(&tab.counts).all(|(r, m)| counts[r] == *m), || {
        "frequency differs".into()
    })?;
    ensure(
        tab.counts.iter().map(|&m| m as usize).sum::<usize>() == tab.total,
        || "counts do not sum to c".into(),
    )?;
    Ok(format!("{} distinct of {}", tab.distinct(), tab.total))
}

fn small_instance(
    rho: usize,
) -> std::result::Result<(Mesh, crate::mesh::GradientOperator, crate::reduction::OfflineBundle), String> {
    let mesh = ok(jitter(&ok(square(6, -1.0, 1.0))?, 0.2, 91))?;
    let d = ok(gradient_operator(&mesh))?;
    let f = crate::fields::ball_forcing(&mesh);
    let bundle = ok(build_offline_bundle(&mesh, &d, rho, &f))?;
    Ok((mesh, d, bundle))
}

fn check_three_forms() -> Outcome {
    let (mesh, d, bundle) = small_instance(6)?;
    let p = ok(uniform_field(mesh.num_elements(), 0.1, 100.0, 92))?;
    let z: Vec<f64> = mesh.volumes().iter().zip(&p).map(|(v, p)| v * p).collect();
    let table = ok(AliasTable::new(&bundle.q))?;
    let draws = draw_samples(&table, 500, 93);
    let sk = ok(build_sketch(&d, &bundle.psi, &z, &tabulate(&draws), &bundle.q))?;
    let x = ok(reduced_rows(&d, &bundle.psi, &z))?;
    let naive = naive_sketch(&x, &draws, &bundle.q);
    let sform = s_form_sketch(&x, &draws, &bundle.q);
    let scale = naive.amax();
    let e1 = (&sk.gram - &naive).amax() / scale;
    let e2 = (&sk.gram - &sform).amax() / scale;
    ensure(e1 < 1e-12 && e2 < 1e-12, || {
        format!("relative deviations {e1:e}, {e2:e}")
    })?;
    Ok(format!("relative deviations {e1:.1e}, {e2:.1e}"))
}

fn check_reduced_solve() -> Outcome {
    let a = random_matrix(8, 8, 101);
    let g = a.transpose() * &a + DMatrix::identity(8, 8);
    let rhs = DVector::from_iterator(8, random_matrix(8, 1, 102).iter().copied());
    let r = ok(solve_reduced(&g, &rhs))?;
    let oracle = g.clone().try_inverse().unwrap() * &rhs;
    let err = (&r - &oracle).norm() / oracle.norm();
    let res = (&g * &r - &rhs).norm() / rhs.norm();
    ensure(err < 1e-10 && res < 1e-10, || {
        format!("error {err:e}, residual {res:e}")
    })?;
    Ok(format!("relative error {err:.1e}"))
}

fn check_query_convergence() -> Outcome {
    let mesh = ok(unit_square(6))?;
    let d = ok(gradient_operator(&mesh))?;
    let f = vec![1.0; mesh.num_elements()];
    let n = mesh.num_interior();
    let bundle = ok(build_offline_bundle(&mesh, &d, n, &f))?;
    let ones = vec![1.0; mesh.num_elements()];
    let a = ok(assemble_stiffness(&d, &ok(scaling_vector(mesh.volumes(), &ones))?))?;
    let b = ok(assemble_load(&mesh, &f))?.b;
    let u = DVector::from_vec(ok(reference_solve(&a, &b))?);
    let solver = ok(SketchSolver::new(&bundle, &d))?;
    let mut errs = Vec::new();
    for c in [10_000, 100_000, 1_000_000] {
        let res = ok(solver.query(&ones, c, 7))?;
        errs.push((&res.u_hat - &u).norm() / u.norm());
    }
    ensure(errs[2] < 0.05, || format!("relative error {:.3} at c = 1e6", errs[2]))?;
    ensure(errs[2] < errs[0], || format!("no improvement: {errs:?}"))?;
    Ok(format!("relative errors {}", fmt_list(&errs)))
}

fn check_plan() -> Outcome {
    let c = ok(plan_sample_size(50, 0.1, 1.0))?;
    let formula = (750.0 * 750f64.ln() * 100.0).ceil() as usize;
    ensure(c.abs_diff(formula) <= 1, || format!("{c} vs {formula}"))?;
    let c2 = ok(plan_sample_size(50, 0.1, 0.5))?;
    ensure(c2.abs_diff(2 * formula) <= 2, || format!("{c2}"))?;
    Ok(format!("c = {c} (beta 1), {c2} (beta 0.5)"))
}

fn check_uniform() -> Outcome {
    let k = 100_000;
    let v = ok(uniform_field(k, 0.1, 100.0, 111))?;
    let mean = v.iter().sum::<f64>() / k as f64;
    let sigma = (99.9f64.powi(2) / 12.0 / k as f64).sqrt();
    let z = (mean - 50.05).abs() / sigma;
    ensure(z < 3.0, || format!("mean {mean} is {z:.2} sigma off"))?;
    Ok(format!("mean {mean:.3} ({z:.2} sigma)"))
}

fn check_matern() -> Outcome {
    let mut rng = rng_stream(121, 0);
    let s = [0.2f64, 0.3];
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x: [f64; 2] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let y: [f64; 2] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let r = (((x[0] - y[0]) / s[0]).powi(2) + ((x[1] - y[1]) / s[1]).powi(2)).sqrt();
        let c = ok(matern_covariance(&x, &y, 0.5, &s, 1.3))?;
        worst = worst.max((c - 1.3 * (-r).exp()).abs());
    }
    ensure(worst < 1e-12, || format!("exponential kernel differs by {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

fn check_kl_covariance() -> Outcome {
    let mesh = ok(square(4, -1.0, 1.0))?;
    let k = mesh.num_elements();
    let (nu, s) = (1.5, [0.5, 0.5]);
    let kl = ok(KarhunenLoeve::new(&mesh, nu, &s, 1.0, Some(k)))?;
    let cov = centroid_covariance(&mesh, nu, &s, 1.0);
    ensure(kl.min_eigenvalue >= -1e-8 * cov.norm(), || {
        format!("negative eigenvalue {}", kl.min_eigenvalue)
    })?;
    let draws = 2000;
    let samples: Vec<Vec<f64>> = (0..draws).map(|i| kl.sample_gaussian(1000 + i as u64)).collect();
    let mut rng = rng_stream(131, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (i, j) = (rng.random_range(0..k), rng.random_range(0..k));
        let est = samples.iter().map(|b| b[i] * b[j]).sum::<f64>() / draws as f64;
        let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / draws as f64).sqrt();
        worst = worst.max((est - cov[(i, j)]).abs() / se);
    }
    ensure(worst < 3.0, || format!("{worst:.2} standard errors"))?;
    Ok(format!("max deviation {worst:.2} standard errors"))
}

fn check_projection() -> Outcome {
    let psi = random_matrix(30, 4, 141).qr().q();
    let u = DVector::from_iterator(30, random_matrix(30, 1, 142).iter().copied());
    let oracle = (&u - &psi * psi.transpose() * &u).norm() / u.norm();
    let diff = (projection_error(&psi, &u) - oracle).abs();
    ensure(diff < 1e-12, || format!("differs by {diff:e}"))?;
    Ok(format!("projection error {oracle:.4}"))
}

fn check_deviation() -> Outcome {
    let a = random_matrix(7, 7, 151);
    let b = random_matrix(7, 7, 152);
    let g = a.transpose() * &a + DMatrix::identity(7, 7);
    let gh = b.transpose() * &b + DMatrix::identity(7, 7);
    let m = gh.clone().try_inverse().unwrap() * &g - DMatrix::identity(7, 7);
    let oracle = m.singular_values().max();
    let diff = (sketch_deviation(&g, &gh) - oracle).abs();
    ensure(diff < 1e-10 * oracle.max(1.0), || format!("differs by {diff:e}"))?;
    Ok(format!("deviation {oracle:.4}"))
}

fn check_bounds() -> Outcome {
    let (mesh, d, bundle) = small_instance(5)?;
    let p = ok(uniform_field(mesh.num_elements(), 0.1, 100.0, 161))?;
    let z: Vec<f64> = mesh.volumes().iter().zip(&p).map(|(v, p)| v * p).collect();
    // Sampling from the query's own leverage scores makes β = 1 exact.
    let x = ok(reduced_rows(&d, &bundle.psi, &z))?;
    let q = ok(sampling_distribution(&ok(leverage_scores(&x))?, bundle.rho()))?;
    let exact = ok(bundle.with_distribution(q))?;
    let eps = 0.5;
    let c = ok(plan_sample_size(bundle.rho(), eps, 1.0))?;
    let a = ok(assemble_stiffness(&d, &ok(scaling_vector(mesh.volumes(), &p))?))?;
    let b = ok(assemble_load(&mesh, &crate::fields::ball_forcing(&mesh)))?.b;
    let u_opt = DVector::from_vec(ok(reference_solve(&a, &b))?);
    let g = exact_gram(&a, &bundle.psi);
    let u_reg = &bundle.psi * g.clone().cholesky().unwrap().solve(&bundle.reduced_load);
    let kappa_a = dense_condition_number(&csr_to_dense(&a));
    let kappa_g = dense_condition_number(&g);
    let proj = projection_error(&bundle.psi, &u_opt);
    let bounds = theorem_bounds(kappa_g, kappa_a, eps, proj);
    let thm42 = (&u_opt - &u_reg).norm() / u_opt.norm();
    ensure(thm42 <= bounds.projection, || {
        format!("projection bound {thm42} > {}", bounds.projection)
    })?;
    let solver = ok(SketchSolver::new(&exact, &d))?;
    let mut violations = 0;
    for t in 0..200 {
        let r = ok(solver.query(&p, c, 5000 + t))?;
        let reg = (&r.u_hat - &u_reg).norm() / u_reg.norm();
        let total = (&r.u_hat - &u_opt).norm() / u_opt.norm();
        if reg > bounds.sketch || total > bounds.total {
            violations += 1;
        }
    }
    ensure(violations == 0, || {
        format!("{violations} of 200 trials exceed the bounds")
    })?;
    Ok(format!("c = {c}, 200 trials within bounds"))
}

fn check_benchmark_trend() -> Outcome {
    let (mesh, d, bundle) = small_instance(6)?;
    let load = ok(assemble_load(&mesh, &crate::fields::ball_forcing(&mesh)))?.b;
    let problem = Problem {
        mesh: &mesh,
        d: &d,
        bundle: &bundle,
        load: &load,
    };
    let field = FieldSpec::Uniform { lo: 0.1, hi: 100.0 };
    let mut means = Vec::new();
    for c in [400, 800, 1600] {
        let cfg = BenchmarkConfig {
            runs: 100,
            c,
            seed: 171,
            ..Default::default()
        };
        let report = ok(crate::diagnostics::run_benchmark(&problem, &field, &cfg))?;
        for r in report.rows.iter().filter(|r| !r.singular) {
            // ‖û − u_opt‖ ≤ ‖û − u_reg‖ + ‖u_reg − u_opt‖, each term bounded.
            let rhs = r.reg_err * (1.0 + r.bound42) + r.bound42;
            ensure(r.total_err <= rhs * (1.0 + 1e-9), || {
                format!("total {} exceeds {rhs}", r.total_err)
            })?;
            ensure(r.reg_err <= r.sketch_dev * (1.0 + 1e-9), || {
                "reg_err above sketch_dev".into()
            })?;
        }
        means.push(report.mean.sketch_dev);
    }
    ensure(means.windows(2).all(|w| w[1] < w[0]), || {
        format!("mean deviations {means:?}")
    })?;
    Ok(format!("mean sketch deviation {means:.3?}"))
}
