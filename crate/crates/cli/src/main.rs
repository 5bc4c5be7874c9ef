use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;

use config::{Config, FloatList, NameList};
use error::CliError;

/// Overrides the directory that default output files are written to.
pub const OUTPUT_DIR_ENV: &str = "LOGSUM_AMP_OUTPUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "logsum-amp", version, about = "Log-sum AMP, state evolution and phase diagrams")]
struct Cli {
    /// Flat key=value config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file, or `-` for stdout.
    #[arg(short, long, global = true)]
    output: Option<String>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate the thresholding function and its derivative.
    ProxEval(ProxEvalArgs),
    /// Run AMP on a generated instance and write its trajectory.
    AmpRun(AmpRunArgs),
    /// Iterate state evolution and write its trajectory.
    SeRun(SeRunArgs),
    /// State-evolution vector field on a log grid, plus its stable fixed points.
    SeField(SeFieldArgs),
    /// Critical measurement rate as a function of the signal density.
    PhaseBoundary(PhaseBoundaryArgs),
    /// Iterations to convergence for the adaptive and l1 denoisers.
    Bench(BenchArgs),
    /// Replica stability boundary for fixed epsilon (JSON).
    ReplicaAlphac(ReplicaArgs),
}

#[derive(Args, Debug, Default)]
struct ScheduleArgs {
    /// fixed, adaptive or l1.
    #[arg(long)]
    denoiser: Option<String>,
    /// Smoothing for the fixed schedule.
    #[arg(long, allow_hyphen_values = true)]
    epsilon: Option<f64>,
    /// Offset for the adaptive schedule.
    #[arg(long, allow_hyphen_values = true)]
    delta_epsilon: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct StopArgs {
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    mse_converge: Option<f64>,
    #[arg(long)]
    mse_diverge: Option<f64>,
    /// Final MSE that counts as a successful reconstruction.
    #[arg(long)]
    success_mse: Option<f64>,
    /// Cap on the Onsager factor.
    #[arg(long)]
    k_max: Option<f64>,
    /// Stop once MSE fails to drop over this many steps; 0 disables.
    #[arg(long)]
    stall_window: Option<usize>,
    #[arg(long)]
    stall_rel: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct QuadArgs {
    #[arg(long)]
    hermite_nodes: Option<usize>,
    #[arg(long)]
    xi_abs_tol: Option<f64>,
    #[arg(long)]
    xi_rel_tol: Option<f64>,
    #[arg(long)]
    xi_cutoff: Option<f64>,
    #[arg(long)]
    max_intervals: Option<usize>,
}

#[derive(Args, Debug)]
struct ProxEvalArgs {
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated smoothing values; defaults to sqrt(lambda) times 1/4, 1/2, 1, 2, 4.
    #[arg(long)]
    epsilons: Option<FloatList>,
    #[arg(long, allow_hyphen_values = true)]
    x_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    x_max: Option<f64>,
    #[arg(long)]
    x_step: Option<f64>,
}

#[derive(Args, Debug)]
struct AmpRunArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Largest instance allowed, in bytes.
    #[arg(long)]
    memory_budget: Option<u64>,
    /// Exit with code 3 unless the run converges.
    #[arg(long)]
    require_converged: Option<bool>,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    stop: StopArgs,
}

#[derive(Args, Debug)]
struct SeRunArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Initial MSE; defaults to rho.
    #[arg(long)]
    mse0: Option<f64>,
    #[arg(long)]
    chi0: Option<f64>,
    #[arg(long)]
    require_converged: Option<bool>,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    stop: StopArgs,
    #[command(flatten)]
    quad: QuadArgs,
}

#[derive(Args, Debug)]
struct SeFieldArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    mse_min: Option<f64>,
    #[arg(long)]
    mse_max: Option<f64>,
    #[arg(long)]
    chi_min: Option<f64>,
    #[arg(long)]
    chi_max: Option<f64>,
    /// Grid points per axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Inits per axis for the fixed-point search, on top of the uninformed
    /// and informed starts.
    #[arg(long)]
    init_grid: Option<usize>,
    /// Where to write the fixed points; defaults to `<output>_fixed_points.csv`.
    #[arg(long)]
    fixed_points_output: Option<String>,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    quad: QuadArgs,
}

#[derive(Args, Debug)]
struct PhaseBoundaryArgs {
    /// Comma-separated: it, adaptive, l1, analytic.
    #[arg(long)]
    method: Option<NameList>,
    #[arg(long)]
    rho_grid: Option<FloatList>,
    /// Smoothing values for the analytic method.
    #[arg(long)]
    epsilons: Option<FloatList>,
    #[arg(long)]
    alpha_tolerance: Option<f64>,
    #[command(flatten)]
    stop: StopArgs,
    #[command(flatten)]
    quad: QuadArgs,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// desk (N = 2000, stall cutoff) or full (N = 10000, no stall cutoff).
    #[arg(long)]
    scale: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    alphas: Option<FloatList>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
    /// Comma-separated: adaptive, l1.
    #[arg(long)]
    denoisers: Option<NameList>,
    #[arg(long, allow_hyphen_values = true)]
    delta_epsilon: Option<f64>,
    #[arg(long)]
    memory_budget: Option<u64>,
    #[command(flatten)]
    stop: StopArgs,
}

#[derive(Args, Debug)]
struct ReplicaArgs {
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Also report the self-consistent solution at this rate.
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    quad: QuadArgs,
}

/// Bytes ready to write for one command.
pub struct Product {
    pub extension: &'static str,
    pub data: Vec<u8>,
    /// Second table written next to the first (fixed points of `se-field`).
    pub companion: Option<Vec<u8>>,
    /// Reported after the data is written.
    pub failure: Option<CliError>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ProxEval(_) => "prox-eval",
            Command::AmpRun(_) => "amp-run",
            Command::SeRun(_) => "se-run",
            Command::SeField(_) => "se-field",
            Command::PhaseBoundary(_) => "phase-boundary",
            Command::Bench(_) => "bench",
            Command::ReplicaAlphac(_) => "replica-alphac",
        }
    }
}

enum Target {
    Stdout,
    File(PathBuf),
}

fn default_target(command: &str, extension: &str) -> PathBuf {
    let dir = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    dir.join(format!("{}.{extension}", command.replace('-', "_")))
}

fn companion_path(primary: &Path) -> PathBuf {
    let stem = primary.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    primary.with_file_name(format!("{stem}_fixed_points.csv"))
}

fn write_target(target: &Target, data: &[u8]) -> Result<(), CliError> {
    match target {
        Target::Stdout => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            match out.write_all(data).and_then(|()| out.flush()) {
                // A closed pipe (`| head`) is not an error.
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                r => r?,
            }
        }
        Target::File(p) => {
            std::fs::write(p, data).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            log::info!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            config::parse_file(&text)?
        }
        None => Default::default(),
    };
    let mut cfg = Config::new(file);
    let output: Option<String> = cfg.get_silent("output", cli.output.clone())?;
    let jobs: Option<usize> = cfg.get_silent("jobs", cli.jobs)?;
    let companion_override: Option<String> = match &cli.command {
        Command::SeField(a) => cfg.get_silent("fixed_points_output", a.fixed_points_output.clone())?,
        _ => None,
    };
    let name = cli.command.name();

    let product = match jobs {
        Some(0) => return Err(CliError::Usage("jobs must be at least 1".into())),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build()
                .map_err(|e| CliError::Io(e.to_string()))?;
            pool.install(|| commands::dispatch(&cli.command, &mut cfg))?
        }
        None => commands::dispatch(&cli.command, &mut cfg)?,
    };

    let target = match output.as_deref() {
        Some("-") => Target::Stdout,
        Some(p) => Target::File(PathBuf::from(p)),
        None => Target::File(default_target(name, product.extension)),
    };
    write_target(&target, &product.data)?;
    if let Some(extra) = &product.companion {
        let path = match (&companion_override, &target) {
            (Some(p), _) => Some(PathBuf::from(p)),
            (None, Target::File(p)) => Some(companion_path(p)),
            (None, Target::Stdout) => None,
        };
        match path {
            Some(p) => write_target(&Target::File(p), extra)?,
            None => log::warn!("fixed points not written: set --fixed-points-output when writing to stdout"),
        }
    }
    match product.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("logsum-amp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
