//! `lyapcert`: certified Lyapunov-exponent bounds and orbit verification
//! from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lyapcert::dynamics::fixed_point_les;
use lyapcert::problem::{
    bound_table, compile_for_degree, presets, verify_orbits, BoundRow, OrbitRow, OrbitScanOptions,
    Problem,
};
use lyapcert::sdp::{export_sdpa, import_solution};
use lyapcert::sos::{extract_certificate, verify_certificate, EIG_TOL, RES_TOL};
use lyapcert::symmetry::{check_equivariance, check_invariance, SYMBOLIC_TOL};
use lyapcert::Error;

#[derive(Parser)]
#[command(name = "lyapcert", version, about = "Certified upper bounds on maximal Lyapunov exponents of polynomial ODEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ProblemSource {
    /// Compiled-in system: `lorenz` or `henon-heiles`.
    #[arg(long, conflicts_with = "problem")]
    preset: Option<String>,
    /// Problem definition file (JSON).
    #[arg(long)]
    problem: Option<PathBuf>,
}

impl ProblemSource {
    fn load(&self) -> Result<Problem, Error> {
        match (&self.preset, &self.problem) {
            (Some(name), None) => presets::by_name(name),
            (None, Some(path)) => Problem::from_file(path),
            _ => Err(Error::Other(
                "exactly one of --preset or --problem is required".to_string(),
            )),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute certified bounds over a list of degrees.
    Bound {
        #[command(flatten)]
        source: ProblemSource,
        /// Comma-separated tunable-polynomial degrees, e.g. `2,4`.
        #[arg(long, value_delimiter = ',')]
        degrees: Vec<u32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the solver's relative duality-gap tolerance.
        #[arg(long)]
        gap_tol: Option<f64>,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Render an aligned table instead of CSV.
        #[arg(long)]
        pretty: bool,
    },
    /// Export one degree's SDP in SDPA sparse format plus a sidecar
    /// metadata file.
    Export {
        #[command(flatten)]
        source: ProblemSource,
        #[arg(long)]
        degree: u32,
        /// Output path for the `.dat-s` file; the sidecar gets `.meta.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-import an externally produced solution and verify the
    /// certificate it induces.
    ImportSolution {
        #[command(flatten)]
        source: ProblemSource,
        #[arg(long)]
        degree: u32,
        /// Solution file (JSON, as documented in the README).
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        pretty: bool,
    },
    /// Scan for periodic orbits, refine them, and measure leading LEs.
    VerifyOrbits {
        #[command(flatten)]
        source: ProblemSource,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 121)]
        ics: usize,
        #[arg(long, default_value_t = 33.0)]
        t_max: f64,
        #[arg(long, default_value_t = 1.0)]
        t_min: f64,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        pretty: bool,
    },
    /// Check the declared symmetries (field equivariance, set invariance)
    /// and print the lifted group order.
    CheckSymmetry {
        #[command(flatten)]
        source: ProblemSource,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(ok) => {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn worker_threads() -> usize {
    std::env::var("LYAPCERT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

fn emit(text: &str, out: &Option<PathBuf>) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Bound { source, degrees, seed: _, gap_tol, out, pretty } => {
            if degrees.is_empty() {
                return Err(Error::Other(
                    "no degrees requested; pass e.g. --degrees 2,4".to_string(),
                ));
            }
            let mut problem = source.load()?;
            if let Some(g) = gap_tol {
                problem.solver.gap_tol = g;
            }
            let rows = bound_table(&problem, &degrees, worker_threads());
            let text = if pretty {
                render_bound_pretty(&rows)
            } else {
                let mut s = String::from(BoundRow::csv_header());
                s.push('\n');
                for row in &rows {
                    s.push_str(&row.to_csv());
                    s.push('\n');
                }
                s
            };
            emit(&text, &out)?;
            Ok(rows.iter().all(|r| r.certified))
        }
        Command::Export { source, degree, out } => {
            let problem = source.load()?;
            let (_, _, compiled) = compile_for_degree(&problem, degree)?;
            export_sdpa(&compiled.sdp, &out)?;
            let meta = serde_json::json!({
                "problem": problem.name,
                "degree": degree,
                "constraints": compiled.sdp.num_rows(),
                "block_dims": compiled.sdp.block_dims,
                "block_labels": compiled.sdp.block_labels,
                "free_labels": compiled.sdp.free_labels,
                "row_labels": compiled.sdp.row_labels,
            });
            let meta_path = out.with_extension("meta.json");
            std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)?;
            println!(
                "wrote {} ({} constraints, {} blocks) and {}",
                out.display(),
                compiled.sdp.num_rows(),
                compiled.sdp.block_dims.len(),
                meta_path.display()
            );
            Ok(true)
        }
        Command::ImportSolution { source, degree, solution, pretty } => {
            let problem = source.load()?;
            let (ts, program, compiled) = compile_for_degree(&problem, degree)?;
            let sol = import_solution(&solution, &compiled.sdp)?;
            let cert = extract_certificate(&program, &compiled, &sol)?;
            let report = verify_certificate(&cert, &ts, &program, EIG_TOL, RES_TOL)?;
            if pretty {
                println!(
                    "bound {:.7}  status {}  residual {:.3e}  min_eig {:.3e}  -> {}",
                    cert.bound,
                    sol.status,
                    report.residual,
                    report.min_eig,
                    if report.pass { "certified" } else { "NOT certified" }
                );
            } else {
                println!("degree,bound,status,residual,min_eig,certified");
                println!(
                    "{},{:.16e},{},{:.16e},{:.16e},{}",
                    degree, cert.bound, sol.status, report.residual, report.min_eig, report.pass
                );
            }
            Ok(report.pass)
        }
        Command::VerifyOrbits { source, seed, dt, ics, t_max, t_min, eps, out, pretty } => {
            let problem = source.load()?;
            let opts = OrbitScanOptions {
                n_ics: ics,
                t_max,
                t_min,
                eps,
                dt,
                seed,
                ..OrbitScanOptions::default()
            };
            let report = verify_orbits(&problem, &opts)?;
            if let Some(les) = &report.fixed_point_les {
                let text = format!(
                    "fixed_point_les,{}\n",
                    les.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(",")
                );
                emit(&text, &out)?;
                return Ok(true);
            }
            let dim = problem.field.dim();
            let mut text = String::new();
            if pretty {
                for row in &report.rows {
                    text.push_str(&format!(
                        "T {:>10.6}  residual {:.2e}  mu1 {}  {}\n",
                        row.period,
                        row.residual,
                        row.mu1.map_or("-".to_string(), |m| format!("{m:.6}")),
                        row.note
                    ));
                }
            } else {
                text.push_str(&OrbitRow::csv_header(dim));
                text.push('\n');
                for row in &report.rows {
                    text.push_str(&row.to_csv());
                    text.push('\n');
                }
            }
            text.push_str(&format!(
                "# distinct periods: {}\n",
                report
                    .distinct_periods
                    .iter()
                    .map(|t| format!("{t:.4}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
            if let Some(max_mu1) = report.max_mu1 {
                text.push_str(&format!("# max mu1: {max_mu1:.6}\n"));
            }
            emit(&text, &out)?;
            if report.rows.is_empty() {
                eprintln!("warning: no orbits found");
                return Ok(false);
            }
            Ok(report.rows.iter().all(|r| r.mu1.is_some()))
        }
        Command::CheckSymmetry { source } => {
            let problem = source.load()?;
            let mut all_ok = true;
            for gen in problem.group.generators() {
                let lambda = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    gen.len(),
                    gen.iter().map(|&s| s as f64),
                ));
                let equivariant = check_equivariance(&problem.field, &lambda, SYMBOLIC_TOL)?;
                println!(
                    "generator {:?}: field equivariant = {equivariant}",
                    gen.iter().map(|&s| if s < 0 { "-" } else { "+" }).collect::<String>()
                );
                all_ok &= equivariant;
                for (k, g) in problem.set.inequalities.iter().enumerate() {
                    let inv = check_invariance(g, &problem.group, SYMBOLIC_TOL)?;
                    println!("  inequality {k}: invariant = {inv}");
                    all_ok &= inv;
                }
                for (k, h) in problem.set.equalities.iter().enumerate() {
                    let inv = check_invariance(h, &problem.group, SYMBOLIC_TOL)?;
                    println!("  equality {k}: invariant = {inv}");
                    all_ok &= inv;
                }
            }
            println!("G order: {}", problem.group.order());
            println!("G' order (lifted to (x,z)): {}", problem.group.lift().order());
            if problem.split.is_none() {
                if let Ok(les) = fixed_point_les(&problem.field, &vec![0.0; problem.field.dim()], 1e-9) {
                    println!(
                        "origin fixed-point LEs: {}",
                        les.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>().join(", ")
                    );
                }
            }
            Ok(all_ok)
        }
    }
}

fn render_bound_pretty(rows: &[BoundRow]) -> String {
    let mut s = format!(
        "{:>6} {:>14} {:>24} {:>10} {:>10} {:>10} {:>8}\n",
        "degree", "bound", "status", "gap", "residual", "min_eig", "time_s"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>6} {:>14} {:>24} {:>10} {:>10} {:>10} {:>8.2}\n",
            r.degree,
            r.bound.map_or("-".to_string(), |b| format!("{b:.7}")),
            r.status,
            r.gap.map_or("-".to_string(), |g| format!("{g:.1e}")),
            r.residual.map_or("-".to_string(), |x| format!("{x:.1e}")),
            r.min_eig.map_or("-".to_string(), |x| format!("{x:.1e}")),
            r.wall_time_s
        ));
    }
    s
}
