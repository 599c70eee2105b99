use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use nlsim::diagnostics::hamiltonian;
use nlsim::evolution::integrate;
use nlsim::ground_state::solve_ground_state;
use nlsim::scenario::{self, artifacts, ScenarioConfig, EXIT_OK};
use nlsim::{GridSpec, LabError};

/// Pseudo-spectral experiments for the focusing nonlinear Schrödinger equation.
#[derive(Parser)]
#[command(name = "nlsim", version)]
struct Cli {
    /// Root for relative output directories (overrides NLSIM_OUTPUT_ROOT).
    #[arg(long, global = true)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the ground state Q and write it as a snapshot plus a JSON record.
    GroundState(GroundStateArgs),
    /// Integrate a scenario and write diagnostics and snapshots only.
    Evolve { config: PathBuf },
    /// Re-run the diagnostic battery on the dumps of a finished run.
    Diagnose {
        dir: PathBuf,
        /// Report directory; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run scenarios from a config file.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
}

#[derive(Args)]
struct GroundStateArgs {
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Nonlinearity power; critical when omitted.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, default_value_t = 40.0)]
    length: f64,
    #[arg(long, default_value_t = 1024)]
    points: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Output directory, resolved against the output root.
    #[arg(long, default_value = "ground_state")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ScenarioCommand {
    Run { config: PathBuf },
    Ensemble {
        config: PathBuf,
        /// Worker threads; all cores by default.
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(serde::Serialize)]
struct GroundStateRecord {
    dim: usize,
    p: f64,
    mass: f64,
    #[serde(rename = "H")]
    hamiltonian: f64,
    residual: f64,
    q0: f64,
    iterations: usize,
}

fn root(cli_root: &Option<PathBuf>) -> PathBuf {
    cli_root
        .clone()
        .or_else(|| std::env::var_os(scenario::OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn config_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn ground_state(args: &GroundStateArgs, root: &Path) -> Result<i32, LabError> {
    let grid = GridSpec::new(args.dim, args.length, args.points)?;
    let p = args.p.unwrap_or_else(|| nlsim::ground_state::critical_exponent(args.dim));
    let gs = solve_ground_state(&grid, args.dim, p, args.tol)?;
    let dir = root.join(&args.out);
    fs::create_dir_all(&dir)?;
    let snap = nlsim::evolution::Snapshot { t: 0.0, step: 0, field: gs.field.clone() };
    artifacts::write_snapshot_file(&dir.join("ground_state.dat"), &snap)?;
    let record = GroundStateRecord {
        dim: args.dim,
        p,
        mass: gs.mass,
        hamiltonian: hamiltonian(&gs.field, p),
        residual: gs.residual,
        q0: gs.peak(),
        iterations: gs.iterations,
    };
    artifacts::write_json(&dir.join("ground_state.json"), &record)?;
    println!("{}", serde_json::to_string_pretty(&record).unwrap());
    Ok(EXIT_OK)
}

fn evolve(config: &Path, root: &Path) -> Result<i32, LabError> {
    let cfg = ScenarioConfig::load(config)?;
    let prep = scenario::prepare(&cfg, &config_base(config))?;
    let dir = scenario::output_dir(&cfg, Some(root));
    let traj = integrate(&prep.evolve)?;
    scenario::write_evolution(&prep, &traj, &dir)?;
    println!("{} steps, stop: {}, final t = {}", traj.steps(), traj.stop_reason.as_str(), traj.final_time());
    Ok(EXIT_OK)
}

fn run(cli: &Cli) -> Result<i32, LabError> {
    let root = root(&cli.output_root);
    match &cli.command {
        Command::GroundState(args) => ground_state(args, &root),
        Command::Evolve { config } => evolve(config, &root),
        Command::Diagnose { dir, out } => {
            let report = scenario::diagnose_dir(dir, out.as_deref().unwrap_or(dir))?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            Ok(EXIT_OK)
        }
        Command::Scenario(ScenarioCommand::Run { config }) => {
            let cfg = ScenarioConfig::load(config)?;
            let dir = scenario::output_dir(&cfg, Some(&root));
            let out = scenario::run_scenario(&cfg, &config_base(config), &dir)?;
            println!("{}", serde_json::to_string_pretty(&out.summary).unwrap());
            Ok(out.exit_code())
        }
        Command::Scenario(ScenarioCommand::Ensemble { config, threads }) => {
            let cfg = ScenarioConfig::load(config)?;
            let dir = scenario::output_dir(&cfg, Some(&root));
            let out = scenario::run_ensemble(&cfg, &config_base(config), &dir, *threads)?;
            println!("{}", serde_json::to_string_pretty(&out.summary).unwrap());
            Ok(out.exit_code())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            scenario::exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
