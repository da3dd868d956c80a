use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::error;

use sketchfem::config::RunConfig;
use sketchfem::diagnostics::summary_table;
use sketchfem::fields::ForcingSpec;
use sketchfem::meshgen;
use sketchfem::parallel::{configure_threads, Execution};
use sketchfem::pipeline::{run_offline, run_online};
use sketchfem::{verify, Error};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "sketchfem",
    version,
    about = "Sketched finite element solves with leverage-score sampling"
)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the reduced basis and sampling distribution for a mesh.
    Offline {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        rho: usize,
        #[arg(long)]
        out: PathBuf,
        /// `ball` or a constant value.
        #[arg(long, default_value = "1")]
        forcing: String,
    },
    /// Run a stream of sketched queries described by a config file.
    Online {
        #[arg(long)]
        config: PathBuf,
        /// Run queries one after another instead of in parallel.
        #[arg(long)]
        sequential: bool,
    },
    /// Run the built-in oracle checks.
    Verify,
    /// Write a structured mesh in the text format.
    Mesh {
        #[arg(value_enum)]
        kind: MeshKind,
        /// Cells per side (square, cube) or rings (disk).
        #[arg(long)]
        size: usize,
        /// Vertex perturbation as a fraction of the local spacing.
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MeshKind {
    Disk,
    Square,
    Cube,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            ExitCode::from(if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_VALIDATION
            })
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Offline {
            mesh,
            rho,
            out,
            forcing,
        } => {
            let forcing = ForcingSpec::parse(&forcing)?;
            let s = run_offline(&mesh, rho, &forcing, &out)?;
            println!("n = {}, kd = {}, rho = {}", s.n, s.kd, s.rho);
            println!(
                "eigenvalues in [{:e}, {:e}]",
                s.eigenvalue_range.0, s.eigenvalue_range.1
            );
            println!("sum of leverage scores = {:.12} (expected {})", s.leverage_sum, s.rho);
            println!("elapsed {:.3} s", s.elapsed_s);
        }
        Command::Online { config, sequential } => {
            let cfg = RunConfig::load(&config)?;
            let execution = if sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            };
            let s = run_online(&cfg, execution)?;
            print!("{}", summary_table(&s.report));
            if s.report.singular_runs > 0 {
                println!(
                    "{} of {} runs had a singular sketch",
                    s.report.singular_runs,
                    s.report.rows.len()
                );
            }
        }
        Command::Verify => {
            let checks = verify::run_all();
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("{} of {} checks passed", checks.len() - failed, checks.len());
            if failed > 0 {
                return Ok(ExitCode::from(EXIT_NUMERICAL));
            }
        }
        Command::Mesh {
            kind,
            size,
            jitter,
            seed,
            out,
        } => {
            let mut mesh = match kind {
                MeshKind::Disk => meshgen::disk(size, 1.0)?,
                MeshKind::Square => meshgen::square(size, -1.0, 1.0)?,
                MeshKind::Cube => meshgen::cube(size, -1.0, 1.0)?,
            };
            if jitter > 0.0 {
                mesh = meshgen::jitter(&mesh, jitter, seed)?;
            }
            mesh.save(&out)?;
            println!(
                "{} vertices, {} elements, {} interior",
                mesh.num_vertices(),
                mesh.num_elements(),
                mesh.num_interior()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
