//! File-level offline and online stages, as driven by the command line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use log::info;

use crate::assembly::{assemble_load, reduced_load};
use crate::bundle::{load_bundle, save_bundle};
use crate::config::RunConfig;
use crate::diagnostics::{run_benchmark, write_csv, BenchmarkConfig, BenchmarkReport, Problem};
use crate::error::{Error, Result};
use crate::fields::ForcingSpec;
use crate::mesh::{gradient_operator, load_mesh};
use crate::parallel::Execution;
use crate::reduction::build_offline_bundle;

#[derive(Clone, Debug)]
pub struct OfflineSummary {
    pub n: usize,
    pub kd: usize,
    pub rho: usize,
    pub eigenvalue_range: (f64, f64),
    pub leverage_sum: f64,
    pub elapsed_s: f64,
}

/// Loads the mesh, builds the bundle for `rho` and `forcing`, writes it.
pub fn run_offline(mesh_path: &Path, rho: usize, forcing: &ForcingSpec, out: &Path) -> Result<OfflineSummary> {
    let start = Instant::now();
    let mesh = load_mesh(mesh_path)?;
    let d = gradient_operator(&mesh)?;
    let f = forcing.evaluate(&mesh);
    let bundle = build_offline_bundle(&mesh, &d, rho, &f)?;
    save_bundle(&bundle, out)?;
    let summary = OfflineSummary {
        n: bundle.n(),
        kd: bundle.kd(),
        rho,
        eigenvalue_range: (bundle.eigenvalues[0], bundle.eigenvalues[rho - 1]),
        leverage_sum: bundle.leverage.iter().sum(),
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    info!("offline bundle written to {}", out.display());
    Ok(summary)
}

#[derive(Clone, Debug)]
pub struct OnlineSummary {
    pub c: usize,
    pub report: BenchmarkReport,
}

/// Runs the benchmark described by `cfg` and writes its CSV report.
pub fn run_online(cfg: &RunConfig, execution: Execution) -> Result<OnlineSummary> {
    let mesh = load_mesh(&cfg.mesh_path)?;
    let bundle = load_bundle(&cfg.bundle_path)?;
    if bundle.fingerprint != *mesh.fingerprint() {
        return Err(Error::FingerprintMismatch);
    }
    if let Some(rho) = cfg.rho {
        if rho != bundle.rho() {
            return Err(Error::Config(format!(
                "config expects rho = {rho}, bundle has {}",
                bundle.rho()
            )));
        }
    }
    let d = gradient_operator(&mesh)?;
    let load = assemble_load(&mesh, &cfg.forcing.evaluate(&mesh))?.b;
    let reduced = reduced_load(&bundle.psi, &load)?;
    let scale = bundle.reduced_load.norm().max(f64::MIN_POSITIVE);
    if (&reduced - &bundle.reduced_load).norm() > 1e-10 * scale {
        return Err(Error::Config(format!(
            "forcing '{}' does not match the one the bundle was built with",
            cfg.forcing
        )));
    }
    let c = cfg.sample_size(bundle.rho())?;
    let problem = Problem {
        mesh: &mesh,
        d: &d,
        bundle: &bundle,
        load: &load,
    };
    let bench = BenchmarkConfig {
        runs: cfg.runs,
        c,
        eps: cfg.epsilon,
        beta: cfg.beta,
        seed: cfg.seed,
        execution,
        ..Default::default()
    };
    let report = run_benchmark(&problem, &cfg.field, &bench)?;
    let file = File::create(&cfg.output_csv).map_err(|e| Error::io(&cfg.output_csv, e))?;
    let mut w = BufWriter::new(file);
    write_csv(&mut w, &report)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&cfg.output_csv, e))?;
    info!(
        "{} runs, {} singular, report written to {}",
        report.rows.len(),
        report.singular_runs,
        cfg.output_csv.display()
    );
    Ok(OnlineSummary { c, report })
}
