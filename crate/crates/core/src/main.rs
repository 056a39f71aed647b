//! Command-line driver.
//!
//! Every subcommand reads one JSON run configuration, echoes it (with
//! defaults filled in) into a run manifest next to the artifacts it writes,
//! and exits 0 on success, 1 on usage errors, 2 on solver failures, and 3
//! when acceptance checks fail. Failures print a structured JSON object to
//! stderr. Identical configurations produce byte-identical CSV and JSON
//! artifacts; wall times appear only in the manifest.

use clap::{ArgAction, Parser, Subcommand};
use plasma_branch::continuation::trace_branch;
use plasma_branch::dual::{free_boundary_solution, rabinowitz_export};
use plasma_branch::error::{Error, Result};
use plasma_branch::geometry::{build_mesh, mesh_export};
use plasma_branch::newton::{base_state, newton_solve, PlasmaConfig};
use plasma_branch::operators::{Operators, QuadField};
use plasma_branch::probe::run_probe;
use plasma_branch::report::{
    branch_csv, continuum_csv, dual_csv, mesh_stats_json, probe_json, spectrum_json, summary_json,
    variational_csv, OutputSession, RunConfig,
};
use plasma_branch::spectrum::{eigenpairs, sobolev_constant, EigenConfig};
use plasma_branch::variational::{minimize_free_energy, VariationalConfig};
use plasma_branch::verify::{run_all, verify_report_json};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "plasma-branch",
    version,
    about = "Branch continuation and verification for the constrained plasma problem"
)]
struct Cli {
    /// JSON run configuration (must set "p"; every other field has a default)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory (overrides the config and PLASMA_BRANCH_OUT)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the mesh resolution from the config
    #[arg(long, global = true)]
    resolution: Option<u32>,

    /// Override the probe seeds, comma separated
    #[arg(long, global = true, value_delimiter = ',', value_name = "SEEDS")]
    seeds: Option<Vec<u64>>,

    /// Print progress notes to stderr (repeat for more)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the mesh and write it with its statistics
    Mesh,
    /// Trace the solution branch from λ = 0 and write trace and summary
    Branch,
    /// Eigenpairs of the constrained linearization at the configured λ
    Spectrum,
    /// Free-energy minimizers over a λ grid
    Variational,
    /// Free-boundary (dual) quantities along the branch
    Dual,
    /// Rescaled branch data approaching the continuum limit
    Continuum,
    /// Genericity probe over perturbed copies of the configured domain
    Probe,
    /// Run the acceptance suite and write its report
    Verify,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = match &cli.config {
        Some(p) => p,
        None => {
            if matches!(cli.cmd, Cmd::Verify) {
                let mut cfg = RunConfig::with_p(2.0);
                cfg.verbosity = cli.verbose;
                return Ok(cfg);
            }
            return Err(Error::Usage(
                "--config <FILE> is required; the configuration must set `p`".into(),
            ));
        }
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(res) = cli.resolution {
        cfg.resolution = res;
    }
    if let Some(seeds) = &cli.seeds {
        cfg.probe.seeds = seeds.clone();
    }
    cfg.verbosity = cfg.verbosity.max(cli.verbose);
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    if let Some(dir) = &cli.out {
        return dir.clone();
    }
    if let Some(dir) = &cfg.outputs {
        return PathBuf::from(dir);
    }
    if let Ok(dir) = std::env::var("PLASMA_BRANCH_OUT") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from("out")
}

fn note(cfg: &RunConfig, msg: &str) {
    if cfg.verbosity > 0 {
        eprintln!("[plasma-branch] {msg}");
    }
}

struct Prepared {
    mesh: plasma_branch::geometry::Mesh,
    ops: Operators,
    pcfg: PlasmaConfig,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let mesh = build_mesh(&cfg.domain, cfg.resolution)?;
    let ops = Operators::assemble(&mesh)?;
    let pcfg = PlasmaConfig::new(cfg.p);
    pcfg.validate(&mesh)?;
    Ok(Prepared { mesh, ops, pcfg })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let dir = out_dir(&cli, &cfg);
    match cli.cmd {
        Cmd::Mesh => cmd_mesh(cfg, dir),
        Cmd::Branch => cmd_branch(cfg, dir),
        Cmd::Spectrum => cmd_spectrum(cfg, dir),
        Cmd::Variational => cmd_variational(cfg, dir),
        Cmd::Dual => cmd_dual(cfg, dir),
        Cmd::Continuum => cmd_continuum(cfg, dir),
        Cmd::Probe => cmd_probe(cfg, dir),
        Cmd::Verify => cmd_verify(cfg, dir),
    }
}

fn cmd_mesh(cfg: RunConfig, dir: PathBuf) -> Result<()> {
    let mut session = OutputSession::new(cfg.clone(), "mesh", &dir)?;
    let mesh = build_mesh(&cfg.domain, cfg.resolution)?;
    session.mark("mesh");
    session.write("mesh.txt", &mesh_export(&mesh))?;
    session.write("mesh_stats.json", &mesh_stats_json(&session.hash(), &mesh))?;
    session.finish()
}

fn cmd_branch(cfg: RunConfig, dir: PathBuf) -> Result<()> {
    let mut session = OutputSession::new(cfg.clone(), "branch", &dir)?;
    let pre = prepare(&cfg)?;
    session.mark("mesh");
    note(&cfg, "tracing branch from λ = 0");
    let trace = trace_branch(&pre.mesh, &pre.ops, &pre.pcfg, &cfg.continuation)?;
    session.mark("trace");
    note(&cfg, &format!("{} points, status {:?}", trace.points.len(), trace.status));
    session.write("branch.csv", &branch_csv(&session.hash(), &trace))?;
    session.write("summary.json", &summary_json(&session.hash(), &trace))?;
    session.finish()
}

fn cmd_spectrum(cfg: RunConfig, dir: PathBuf) -> Result<()> {
    let mut session = OutputSession::new(cfg.clone(), "spectrum", &dir)?;
    let pre = prepare(&cfg)?;
    session.mark("mesh");
    if !(cfg.lambda >= 0.0) {
        return Err(Error::Usage(format!(
            "config field `lambda` must be ≥ 0, got {}",
            cfg.lambda
        )));
    }
    let mut state = base_state(&pre.mesh, &pre.ops, &pre.pcfg)?;
    let steps = 8;
    for k in 1..=steps {
        let lambda = cfg.lambda * k as f64 / steps as f64;
        state = newton_solve(&pre.mesh, &pre.ops, &pre.pcfg, lambda, state.alpha, state.psi)?;
    }
    session.mark("homotopy");
    note(&cfg, &format!("state at λ = {}: α = {:.6}", state.lambda, state.alpha));
    let ecfg = EigenConfig {
        count: cfg.eigen_count,
        ..EigenConfig::default()
    };
    let spec = eigenpairs(&pre.mesh, &pre.ops, &pre.pcfg, &ecfg, &state, None)?;
    session.mark("eigen");
    session.write(
        "spectrum.json",
        &spectrum_json(&session.hash(), state.lambda, state.alpha, &spec),
    )?;
    session.finish()
}

fn lambda_grid(cfg: &RunConfig, pre: &Prepared) -> Result<Vec<f64>> {
    if let Some(grid) = &cfg.sweep.lambda_grid {
        if grid.is_empty() {
            return Err(Error::Usage("config field `sweep.lambda_grid` is empty".into()));
        }
        return Ok(grid.clone());
    }
    let l2p = sobolev_constant(&pre.mesh, &pre.ops, 2.0 * pre.pcfg.p)?.value;
    let lambda_max = 0.9 * l2p / pre.pcfg.p;
    let n = cfg.sweep.grid_points.max(1);
    Ok((1..=n).map(|k| lambda_max * k as f64 / n as f64).collect())
}

fn cmd_variational(cfg: RunConfig, dir: PathBuf) -> Result<()> {
    let mut session = OutputSession::new(cfg.clone(), "variational", &dir)?;
    let pre = prepare(&cfg)?;
    session.mark("mesh");
    let grid = lambda_grid(&cfg, &pre)?;
    let vcfg = VariationalConfig::default();
    let mut rows = Vec::new();
    let mut warm: Option<QuadField> = None;
    for &lambda in &grid {
        let it = minimize_free_energy(&pre.mesh, &pre.ops, &pre.pcfg, &vcfg, lambda, warm.as_ref())?;
        note(&cfg, &format!("λ = {lambda:.4}: J = {:.8e}, α = {:.6}", it.j_value, it.alpha));
        warm = Some(it.rho.clone());
        rows.push((lambda, it));
    }
    session.mark("sweep");
    session.write("variational.csv", &variational_csv(&session.hash(), &rows))?;
    session.finish()
}

fn cmd_dual(cfg: RunConfig, dir: PathBuf) -> Result<()> {
    let mut session = OutputSession::new(cfg.clone(), "dual", &dir)?;
    let pre = prepare(&cfg)?;
    session.mark("mesh");
    let trace = trace_branch(&pre.mesh, &pre.ops, &pre.pcfg, &cfg.continuation)?;
    session.mark("trace");
    let mut rows = Vec::new();
    for pt in trace.points.iter().filter(|pt| pt.lambda > 0.0) {
        let state = pt.state(&pre.mesh, &pre.pcfg)?;
        rows.push((pt.lambda, free_boundary_solution(&pre.mesh, &pre.pcfg, &state)?));
    }
    session.mark("dual");
    session.write("dual.csv", &dual_csv(&session.hash(), &rows))?;
    session.write("summary.json", &summary_json(&session.hash(), &trace))?;
    session.finish()
}

fn cmd_continuum(cfg: RunConfig, dir: PathBuf) -> Result<()> {
    let mut session = OutputSession::new(cfg.clone(), "continuum", &dir)?;
    let pre = prepare(&cfg)?;
    session.mark("mesh");
    let trace = trace_branch(&pre.mesh, &pre.ops, &pre.pcfg, &cfg.continuation)?;
    session.mark("trace");
    let points = rabinowitz_export(&pre.mesh, &pre.ops, &pre.pcfg, &trace)?;
    session.mark("rescale");
    session.write("continuum.csv", &continuum_csv(&session.hash(), &points))?;
    session.finish()
}

fn cmd_probe(cfg: RunConfig, dir: PathBuf) -> Result<()> {
    let pcfg = PlasmaConfig::new(cfg.p);
    let mut session = OutputSession::new(cfg.clone(), "probe", &dir)?;
    note(&cfg, &format!("probing {} seeds", cfg.probe.seeds.len()));
    let reports = run_probe(&cfg.domain, &pcfg, &cfg.probe)?;
    session.mark("probe");
    session.write("probe.json", &probe_json(&session.hash(), &cfg.probe, &reports))?;
    session.finish()
}

fn cmd_verify(cfg: RunConfig, dir: PathBuf) -> Result<()> {
    let mut session = OutputSession::new(cfg.clone(), "verify", &dir)?;
    let scratch = session.out_dir().join("scratch");
    let results = run_all(&scratch, cfg.verbosity > 0)?;
    session.mark("criteria");
    let mut failed = 0usize;
    for r in &results {
        let flag = if r.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {:02} {flag} [{:7.1}s] {}: {}",
            r.index,
            r.wall_ms / 1e3,
            r.name,
            r.detail
        );
        if !r.passed {
            failed += 1;
        }
    }
    session.write("verify_report.json", &verify_report_json(&session.hash(), &results))?;
    session.finish()?;
    if failed > 0 {
        return Err(Error::Acceptance(format!(
            "{failed} of {} acceptance criteria failed",
            results.len()
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let doc = serde_json::json!({
                "error": e.render().to_string().trim_end(),
                "exit_code": 1,
            });
            eprintln!("{}", serde_json::to_string_pretty(&doc).expect("error serializes"));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            let doc = serde_json::json!({
                "error": e.to_string(),
                "exit_code": code,
            });
            eprintln!("{}", serde_json::to_string_pretty(&doc).expect("error serializes"));
            ExitCode::from(code as u8)
        }
    }
}
