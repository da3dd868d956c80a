//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach the output; exits nonzero on failure.
//! An optional argument filters criteria by number or name substring.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use tempfile::TempDir;

use sketchfem::assembly::{assemble_load, assemble_stiffness, scaling_vector, StiffnessAssembler};
use sketchfem::config::RunConfig;
use sketchfem::diagnostics::{exact_gram, projection_error, reference_solve, run_benchmark, BenchmarkConfig, Problem};
use sketchfem::fields::{ball_forcing, discontinuous_field, uniform_field, FieldSpec, ForcingSpec};
use sketchfem::linalg::{csr_to_dense, dense_condition_number};
use sketchfem::mesh::{gradient_operator, GradientOperator, Mesh};
use sketchfem::meshgen::{cube, disk, jitter, square};
use sketchfem::parallel::Execution;
use sketchfem::pipeline::{run_offline, run_online};
use sketchfem::reduction::{
    build_offline_bundle, leverage_profile, leverage_scores, reduced_rows, reweighted_leverage, sampling_distribution,
    OfflineBundle,
};
use sketchfem::sampling::{draw_samples, rng_stream, tabulate, AliasTable};
use sketchfem::sketch::{build_sketch, plan_sample_size, SketchSolver, DEFAULT_BETA};
use sketchfem::verify::{disk_poisson_error, naive_sketch, s_form_sketch};

/// `(passed, detail)` for one criterion.
type Verdict = (bool, String);

type Criterion = (u32, &'static str, fn() -> Verdict);

const CRITERIA: &[Criterion] = &[
    (1, "exact sketch identities", exact_identities),
    (2, "leverage scores", leverage_suite),
    (3, "unbiasedness and rate", unbiasedness_and_rate),
    (4, "projection bound", projection_bound),
    (5, "sketch bound coverage", sketch_bound_coverage),
    (6, "row-wise deviation domination", deviation_domination),
    (7, "benchmark trends", benchmark_trends),
    (8, "disk Poisson convergence", fem_convergence),
    (9, "end-to-end determinism", determinism),
    (10, "online speedup", online_speedup),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for &(id, name, f) in CRITERIA {
        if !filters.is_empty()
            && !filters
                .iter()
                .any(|q| id.to_string() == *q || name.contains(q.as_str()))
        {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let (passed, detail) = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        let verdict = if passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {verdict} ({name}, {:.1} s): {detail}",
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!passed);
    }
    println!("{} of {ran} acceptance criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

struct Instance {
    mesh: Mesh,
    d: GradientOperator,
    bundle: OfflineBundle,
    f: Vec<f64>,
}

fn instance(mesh: Mesh, rho: usize) -> Instance {
    let d = gradient_operator(&mesh).unwrap();
    let f = ball_forcing(&mesh);
    let bundle = build_offline_bundle(&mesh, &d, rho, &f).unwrap();
    Instance { mesh, d, bundle, f }
}

fn scaling(mesh: &Mesh, p: &[f64]) -> Vec<f64> {
    mesh.volumes().iter().zip(p).map(|(v, p)| v * p).collect()
}

/// `u_opt` and `u_reg` for coefficient `p`, plus the exact reduced matrix.
fn exact_solutions(inst: &Instance, p: &[f64]) -> (DVector<f64>, DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let a = assemble_stiffness(&inst.d, &scaling_vector(inst.mesh.volumes(), p).unwrap()).unwrap();
    let b = assemble_load(&inst.mesh, &inst.f).unwrap().b;
    let u_opt = DVector::from_vec(reference_solve(&a, &b).unwrap());
    let g = exact_gram(&a, &inst.bundle.psi);
    let u_reg = &inst.bundle.psi * g.clone().cholesky().unwrap().solve(&inst.bundle.reduced_load);
    (u_opt, u_reg, g, csr_to_dense(&a))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

// --------------------------------------------------------------- criteria

fn exact_identities() -> Verdict {
    let start = Instant::now();
    let inst = instance(jitter(&square(8, -1.0, 1.0).unwrap(), 0.2, 1).unwrap(), 10);
    let p = uniform_field(inst.mesh.num_elements(), 0.1, 100.0, 2).unwrap();
    let z = scaling(&inst.mesh, &p);
    let q = &inst.bundle.q;
    let (c, seed) = (500, 3);

    let draws = draw_samples(&AliasTable::new(q).unwrap(), c, seed);
    let sk = build_sketch(&inst.d, &inst.bundle.psi, &z, &tabulate(&draws), q).unwrap();
    let x = reduced_rows(&inst.d, &inst.bundle.psi, &z).unwrap();
    let scale = sk.gram.amax();
    let e_naive = (&sk.gram - naive_sketch(&x, &draws, q)).amax() / scale;
    let e_sform = (&sk.gram - s_form_sketch(&x, &draws, q)).amax() / scale;

    // û_reg − u_reg = Ψ(Ĝ⁻¹G − I)Ψᵀu_reg, with û_reg from the online path.
    let solver = SketchSolver::new(&inst.bundle, &inst.d).unwrap();
    let res = solver.query(&p, c, seed).unwrap();
    let (_, u_reg, g, _) = exact_solutions(&inst, &p);
    let psi = &inst.bundle.psi;
    let ghat_inv_g = res.gram.clone().cholesky().unwrap().solve(&g);
    let rhs = psi * ((ghat_inv_g - DMatrix::identity(10, 10)) * (psi.transpose() * &u_reg));
    let lhs = &res.u_hat - &u_reg;
    let e_lemma = (&lhs - &rhs).norm() / lhs.norm();
    let same_draws = res.retries == 0 && res.gram == sk.gram;
    let elapsed = start.elapsed().as_secs_f64();

    (
        e_naive <= 1e-12 && e_sform <= 1e-12 && e_lemma <= 1e-10 && same_draws && elapsed < 10.0,
        format!(
            "naive sum {e_naive:.1e}, S = RW form {e_sform:.1e} (tol 1e-12); error identity {e_lemma:.1e} (tol 1e-10); {elapsed:.2} s (< 10 s)"
        ),
    )
}

fn random_tall(rng: &mut impl Rng, m: usize, rho: usize) -> DMatrix<f64> {
    // Rows of very different magnitude make the scores non-uniform.
    let mut x = DMatrix::from_fn(m, rho, |_, _| StandardNormal.sample(rng));
    for mut row in x.row_iter_mut() {
        row *= 10f64.powf(rng.random_range(-2.0..2.0));
    }
    x
}

fn leverage_suite() -> Verdict {
    let inst = instance(jitter(&disk(10, 1.0).unwrap(), 0.2, 21).unwrap(), 12);
    let mut sums = vec![inst.bundle.leverage.iter().sum::<f64>()];
    let mut in_range = inst.bundle.leverage.iter().all(|&l| (0.0..=1.0).contains(&l));
    for s in 0..5 {
        let p = uniform_field(inst.mesh.num_elements(), 0.1, 100.0, 22 + s).unwrap();
        let l = leverage_scores(&reduced_rows(&inst.d, &inst.bundle.psi, &scaling(&inst.mesh, &p)).unwrap()).unwrap();
        sums.push(l.iter().sum());
        in_range &= l.iter().all(|&v| (0.0..=1.0).contains(&v));
    }
    let sum_err = sums.iter().map(|s| (s - 12.0).abs()).fold(0.0, f64::max);

    let mut rng = rng_stream(23, 0);
    let (mut e_closed, mut e_cross, mut e_trace) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let rho = rng.random_range(2..=8);
        let m = rng.random_range(rho + 2..=100);
        let x = random_tall(&mut rng, m, rho);
        let i = rng.random_range(0..m);
        let gamma = 10f64.powf(rng.random_range(-2.0..2.0));
        let (_, closed) = reweighted_leverage(&x, i, gamma).unwrap();
        let mut scaled = x.clone();
        scaled.row_mut(i).scale_mut(gamma.sqrt());
        let direct = leverage_scores(&scaled).unwrap();
        e_closed = e_closed.max(
            closed
                .iter()
                .zip(&direct)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );

        let profile = leverage_profile(&x).unwrap();
        let cross = profile.cross_matrix();
        for (r, l) in profile.scores.iter().enumerate() {
            let s: f64 = cross.row(r).iter().map(|v| v * v).sum();
            e_cross = e_cross.max((s - l).abs());
        }

        let mut gx = x.clone();
        for mut row in gx.row_iter_mut() {
            row *= 10f64.powf(rng.random_range(-1.5..1.5));
        }
        let total: f64 = leverage_scores(&gx).unwrap().iter().sum();
        e_trace = e_trace.max((total - rho as f64).abs());
    }

    (
        sum_err <= 1e-8 && in_range && e_closed <= 1e-10 && e_cross <= 1e-8 && e_trace <= 1e-8,
        format!(
            "|sum - rho| {sum_err:.1e}; all scores in [0,1]: {in_range}; reweighting {e_closed:.1e} (tol 1e-10); \
             cross identity {e_cross:.1e}, trace under scaling {e_trace:.1e} (tol 1e-8)"
        ),
    )
}

fn unbiasedness_and_rate() -> Verdict {
    let start = Instant::now();
    let inst = instance(jitter(&square(15, -1.0, 1.0).unwrap(), 0.2, 31).unwrap(), 10);
    let p = uniform_field(inst.mesh.num_elements(), 0.1, 100.0, 32).unwrap();
    let z = scaling(&inst.mesh, &p);
    let x = reduced_rows(&inst.d, &inst.bundle.psi, &z).unwrap();
    let g = x.transpose() * &x;
    let table = AliasTable::new(&inst.bundle.q).unwrap();
    let trials = 500;
    let sketches = |c: usize, base: u64| -> Vec<DMatrix<f64>> {
        (0..trials)
            .map(|t| {
                let tab = tabulate(&draw_samples(&table, c, base + t));
                build_sketch(&inst.d, &inst.bundle.psi, &z, &tab, &inst.bundle.q)
                    .unwrap()
                    .gram
            })
            .collect()
    };
    let mse = |s: &[DMatrix<f64>]| s.iter().map(|h| (h - &g).norm_squared()).sum::<f64>() / s.len() as f64;

    let base = sketches(1000, 10_000);
    let mean = base.iter().fold(DMatrix::zeros(10, 10), |acc, h| acc + h) / trials as f64;
    let var: f64 = base.iter().map(|h| (h - &mean).norm_squared()).sum::<f64>() / (trials - 1) as f64;
    let bias = (&mean - &g).norm();
    let allowed = 3.0 * var.sqrt() / (trials as f64).sqrt();

    let mut ratios = Vec::new();
    for (c, seed) in [(1000, 20_000), (10_000, 30_000)] {
        ratios.push(mse(&sketches(c, seed)) / mse(&sketches(2 * c, seed + 5_000)));
    }
    let elapsed = start.elapsed().as_secs_f64();
    (
        bias <= allowed && ratios.iter().all(|r| (1.4..=2.6).contains(r)) && elapsed < 120.0,
        format!(
            "n = {}, ||mean - G||_F = {bias:.3e} <= {allowed:.3e}; MSE(c)/MSE(2c) = {:.3} (c = 1e3), {:.3} (c = 1e4); {elapsed:.1} s",
            inst.bundle.n(),
            ratios[0],
            ratios[1]
        ),
    )
}

fn projection_bound() -> Verdict {
    let mut rng = rng_stream(41, 0);
    let mut violations = 0;
    let mut worst_ratio = 0.0f64;
    for t in 0..50u64 {
        let seed = 4100 + t;
        let mesh = match t % 3 {
            0 => jitter(&square(rng.random_range(6..=12), -1.0, 1.0).unwrap(), 0.25, seed).unwrap(),
            1 => jitter(&disk(rng.random_range(5..=9), 1.0).unwrap(), 0.25, seed).unwrap(),
            _ => jitter(&cube(rng.random_range(4..=5), -1.0, 1.0).unwrap(), 0.2, seed).unwrap(),
        };
        let rho = if t % 2 == 0 { 5 } else { 20 }.min(mesh.num_interior());
        let k = mesh.num_elements();
        let p = match t % 4 {
            3 => discontinuous_field(&mesh, seed).unwrap(),
            _ => {
                let lo = 10f64.powf(rng.random_range(-2.0..0.0));
                let hi = 10f64.powf(rng.random_range(0.0..3.0));
                uniform_field(k, lo, hi, seed).unwrap()
            }
        };
        let inst = instance(mesh, rho);
        let (u_opt, u_reg, _, a) = exact_solutions(&inst, &p);
        let kappa = dense_condition_number(&a);
        let lhs = (&u_opt - &u_reg).norm();
        let rhs = (1.0 + kappa.sqrt()) * projection_error(&inst.bundle.psi, &u_opt) * u_opt.norm();
        worst_ratio = worst_ratio.max(lhs / rhs);
        if lhs > rhs {
            violations += 1;
        }
    }
    (
        violations == 0,
        format!("{violations} violations in 50 instances; largest error / bound = {worst_ratio:.3}"),
    )
}

fn sketch_bound_coverage() -> Verdict {
    let inst = instance(jitter(&disk(20, 1.0).unwrap(), 0.2, 51).unwrap(), 10);
    let p = uniform_field(inst.mesh.num_elements(), 0.1, 100.0, 52).unwrap();
    let x = reduced_rows(&inst.d, &inst.bundle.psi, &scaling(&inst.mesh, &p)).unwrap();
    let q = sampling_distribution(&leverage_scores(&x).unwrap(), 10).unwrap();
    let exact = inst.bundle.with_distribution(q).unwrap();
    let (_, u_reg, g, _) = exact_solutions(&inst, &p);
    let eps = 0.3;
    let c = plan_sample_size(10, eps, 1.0).unwrap();
    let bound = dense_condition_number(&g).sqrt() * eps / (1.0 - eps);
    let solver = SketchSolver::new(&exact, &inst.d).unwrap();
    let trials = 1000;
    let (mut within, mut singular, mut worst) = (0, 0, 0.0f64);
    for t in 0..trials {
        match solver.query(&p, c, 5100 + t) {
            Ok(r) => {
                singular += usize::from(r.retries > 0);
                let err = (&r.u_hat - &u_reg).norm() / u_reg.norm();
                worst = worst.max(err);
                within += usize::from(err <= bound);
            }
            Err(_) => singular += 1,
        }
    }
    (
        within >= 999 && singular <= 1,
        format!(
            "c = {c}: {within}/{trials} within sqrt(kappa(G)) eps/(1-eps) = {bound:.3} (worst {worst:.3}); {singular} singular sketches"
        ),
    )
}

fn deviation_domination() -> Verdict {
    let inst = instance(jitter(&disk(8, 1.0).unwrap(), 0.2, 61).unwrap(), 10);
    let load = assemble_load(&inst.mesh, &inst.f).unwrap().b;
    let problem = Problem {
        mesh: &inst.mesh,
        d: &inst.d,
        bundle: &inst.bundle,
        load: &load,
    };
    let fields = [
        FieldSpec::Uniform { lo: 0.1, hi: 100.0 },
        FieldSpec::LognormalMatern {
            nu: 1.5,
            scales: vec![0.2, 0.2],
            variance: 1.0,
            kl_modes: None,
        },
        FieldSpec::Discontinuous(Default::default()),
    ];
    let (mut rows, mut dominated, mut singular) = (0, 0, 0);
    for (fi, field) in fields.iter().enumerate() {
        for c in [60, 200, 1000] {
            let cfg = BenchmarkConfig {
                runs: 100,
                c,
                seed: 6100 + 10 * fi as u64,
                ..Default::default()
            };
            let report = run_benchmark(&problem, field, &cfg).unwrap();
            singular += report.singular_runs;
            for r in report.rows.iter().filter(|r| !r.singular) {
                rows += 1;
                dominated += usize::from(r.reg_err <= r.sketch_dev);
            }
        }
    }
    (
        rows > 0 && dominated == rows,
        format!("reg_err <= sketch_dev on {dominated}/{rows} non-singular rows ({singular} singular runs excluded)"),
    )
}

fn benchmark_trends() -> Verdict {
    let mesh = cube(16, -1.0, 1.0).unwrap();
    let d = gradient_operator(&mesh).unwrap();
    let f = ball_forcing(&mesh);
    let load = assemble_load(&mesh, &f).unwrap().b;
    let field = FieldSpec::Uniform { lo: 0.1, hi: 100.0 };
    let mut lines = Vec::new();
    let (mut trend, mut close, mut sparse, mut qualifying) = (true, true, true, 0);
    for rho in [20, 50] {
        let bundle = build_offline_bundle(&mesh, &d, rho, &f).unwrap();
        let problem = Problem {
            mesh: &mesh,
            d: &d,
            bundle: &bundle,
            load: &load,
        };
        let mut totals = Vec::new();
        for c in [5_000, 10_000] {
            let cfg = BenchmarkConfig {
                runs: 100,
                c,
                seed: 71,
                ..Default::default()
            };
            let m = run_benchmark(&problem, &field, &cfg).unwrap().mean;
            totals.push(m.total_err);
            sparse &= m.dedup_ratio < 0.15;
            if m.sketch_dev <= 1.5 {
                qualifying += 1;
                close &= m.total_err - m.proj_err <= 0.03;
            }
            lines.push(format!(
                "rho {rho} c {c}: c'/kd {:.3}, proj {:.4}, dev {:.3}, total {:.4}",
                m.dedup_ratio, m.proj_err, m.sketch_dev, m.total_err
            ));
        }
        trend &= totals[1] < totals[0];
    }
    (
        trend && close && qualifying > 0 && sparse,
        format!(
            "n = {}; (a) total falls with c: {trend}; (b) total - proj <= 0.03 on {qualifying} configs with dev <= 1.5: {close}; \
             (c) c'/kd < 0.15: {sparse}; [{}]",
            mesh.num_interior(),
            lines.join("; ")
        ),
    )
}

fn fem_convergence() -> Verdict {
    let errs: Vec<f64> = [8, 16, 32].iter().map(|&l| disk_poisson_error(l).unwrap()).collect();
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    (
        monotone && errs[2] < 0.02,
        format!(
            "relative L2 errors {:.3e}, {:.3e}, {:.3e} (finest < 2e-2)",
            errs[0], errs[1], errs[2]
        ),
    )
}

fn determinism() -> Verdict {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    jitter(&disk(10, 1.0).unwrap(), 0.2, 91)
        .unwrap()
        .save(root.join("m.mesh"))
        .unwrap();
    let forcing = ForcingSpec::Ball;
    run_offline(&root.join("m.mesh"), 10, &forcing, &root.join("a.bundle")).unwrap();
    run_offline(&root.join("m.mesh"), 10, &forcing, &root.join("b.bundle")).unwrap();
    let bundles_equal = std::fs::read(root.join("a.bundle")).unwrap() == std::fs::read(root.join("b.bundle")).unwrap();

    let strip = |name: &str| -> Vec<String> {
        std::fs::read_to_string(root.join(name))
            .unwrap()
            .lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(2);
                f.join(",")
            })
            .collect()
    };
    let mut outputs = Vec::new();
    for (name, execution) in [
        ("one.csv", Execution::Parallel),
        ("two.csv", Execution::Parallel),
        ("seq.csv", Execution::Sequential),
    ] {
        let text = format!(
            "mesh = m.mesh\nbundle = a.bundle\noutput = {name}\nforcing = ball\nruns = 8\nrho = 10\nc = 1500\nseed = 92\n\
             field = lognormal\nfield.nu = 1.5\nfield.scales = 0.2, 0.2\n"
        );
        let cfg = RunConfig::parse(&text, root).unwrap();
        run_online(&cfg, execution).unwrap();
        outputs.push(strip(name));
    }
    let same = outputs.iter().all(|o| o == &outputs[0]);
    (
        bundles_equal && same && outputs[0].len() == 10,
        format!("bundles identical: {bundles_equal}; 3 CSVs identical apart from time_s: {same}"),
    )
}

fn online_speedup() -> Verdict {
    let inst = instance(disk(80, 1.0).unwrap(), 50);
    let c = plan_sample_size(50, 0.3, DEFAULT_BETA).unwrap();
    let solver = SketchSolver::new(&inst.bundle, &inst.d).unwrap();
    let assembler = StiffnessAssembler::new(&inst.d);
    let b = assemble_load(&inst.mesh, &inst.f).unwrap().b;
    let (mut online, mut reference) = (Vec::new(), Vec::new());
    // The first pair warms caches and is discarded.
    for s in 0..22u64 {
        let p = uniform_field(inst.mesh.num_elements(), 0.1, 100.0, 1000 + s).unwrap();
        let r = solver.query(&p, c, s).unwrap();
        let a = assembler.assemble(&scaling(&inst.mesh, &p)).unwrap();
        let t = Instant::now();
        reference_solve(&a, &b).unwrap();
        let solve = t.elapsed().as_secs_f64();
        if s > 0 {
            online.push(r.elapsed);
            reference.push(solve);
        }
    }
    let (tq, ts) = (median(online), median(reference));
    let speedup = ts / tq;
    (
        speedup >= 5.0,
        format!(
            "n = {}, rho = 50, c = {c}: median query {:.2} ms, reference solve {:.2} ms, speedup {speedup:.1}x (>= 5x)",
            inst.bundle.n(),
            tq * 1e3,
            ts * 1e3
        ),
    )
}
