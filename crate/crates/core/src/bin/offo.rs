use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use offo_core::adagb2::RadiusNorm;
use offo_core::config::{ExperimentConfig, Overrides, SolverKind};
use offo_core::error::{Error, Result};
use offo_core::experiment::{self, EXIT_FAILED};
use offo_core::multilevel::CoarseModel;
use offo_core::noise::NoiseSchedule;
use offo_core::problems::ProblemKind;
use offo_core::schwarz::SchwarzVariant;
use offo_core::summary::{Layout, Summary};
use offo_core::trace::Trace;
use offo_core::verify::{run_suite, SuiteSize};

#[derive(Parser)]
#[command(name = "offo", version, about = "Objective-function-free multilevel and domain decomposition solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its trace.
    Run(RunArgs),
    /// Tabulate costs from saved traces.
    Summarize(SummarizeArgs),
    /// Run the invariant suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; flags override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<ProblemKind>,
    /// Cells per side of the finest mesh.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    solver: Option<SolverKind>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    subdomains: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
    #[arg(long)]
    variant: Option<SchwarzVariant>,
    #[arg(long, value_enum)]
    coarse_model: Option<CoarseArg>,
    #[arg(long)]
    truncation: Option<bool>,
    #[arg(long)]
    max_cycles: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Constant gradient noise variance.
    #[arg(long, conflicts_with = "noise_exp")]
    noise_const: Option<f64>,
    /// Exponentially decaying noise: initial variance and rate.
    #[arg(long, num_args = 2, value_names = ["VARIANCE", "RATE"])]
    noise_exp: Option<Vec<f64>>,
    /// Norm used when capping the radii on entry to a lower level.
    #[arg(long, value_enum)]
    radius_norm: Option<NormArg>,
    /// Trace path without extension, relative to the output root.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoarseArg {
    Tau,
    Galerkin,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Euclidean,
    Max,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Auto,
    List,
    Levels,
    Subdomains,
    Hybrid,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Trace files (`.ndjson`).
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    layout: LayoutArg,
    /// Also write one CSV row per trace here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Use the full problem counts instead of the quick ones.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn overrides(a: &RunArgs) -> Overrides {
    let noise = match (&a.noise_const, &a.noise_exp) {
        (Some(v), _) => Some(NoiseSchedule::Constant { variance: *v }),
        (None, Some(p)) => Some(NoiseSchedule::Exponential {
            initial_variance: p[0],
            decay: p[1],
        }),
        _ => None,
    };
    Overrides {
        problem: a.problem,
        cells: a.n,
        solver: a.solver,
        levels: a.levels,
        subdomains: a.subdomains,
        overlap: a.overlap,
        variant: a.variant,
        coarse_model: a.coarse_model.map(|c| match c {
            CoarseArg::Tau => CoarseModel::TauCorrected,
            CoarseArg::Galerkin => CoarseModel::Galerkin,
        }),
        truncation: a.truncation,
        max_cycles: a.max_cycles,
        seed: a.seed,
        noise,
        radius_norm: a.radius_norm.map(|n| match n {
            NormArg::Euclidean => RadiusNorm::Euclidean,
            NormArg::Max => RadiusNorm::Max,
        }),
        output: a.output.clone(),
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io(e.to_string())),
        _ => Ok(()),
    }
}

fn git_revision() -> Option<String> {
    let out = std::process::Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

fn run(a: RunArgs) -> Result<i32> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let problem = a
                .problem
                .ok_or_else(|| Error::Config("either --config or --problem is required".into()))?;
            ExperimentConfig::new(problem, 32, SolverKind::Ml)
        }
    };
    cfg.apply(&overrides(&a));
    cfg.validate()?;
    if a.dry_run {
        emit(&cfg.to_toml())?;
        return Ok(0);
    }
    let mut out = experiment::run(&cfg)?;
    out.trace.meta.git_revision = git_revision();
    let stem = experiment::output_stem(&cfg);
    out.trace.save(&stem)?;
    if !a.quiet {
        let r = &out.result;
        emit(&format!(
            "{} {} n={}: {:?} after {} cycles, cost {:.2}, final xi {:.3e}\ntrace: {}\n",
            cfg.problem.name.as_str(),
            cfg.solver.kind.as_str(),
            cfg.problem.cells,
            r.stop,
            r.num_cycles(),
            out.trace.final_cost(),
            r.final_xi(),
            stem.with_extension("ndjson").display()
        ))?;
    }
    Ok(out.exit_code())
}

fn summarize(a: SummarizeArgs) -> Result<i32> {
    let traces = a.traces.iter().map(|p| Trace::load(p)).collect::<Result<Vec<_>>>()?;
    let mut s = Summary::new(&traces)?;
    s = match a.layout {
        LayoutArg::Auto => s,
        LayoutArg::List => s.with_layout(Layout::List),
        LayoutArg::Levels => s.with_layout(Layout::Levels),
        LayoutArg::Subdomains => s.with_layout(Layout::Subdomains),
        LayoutArg::Hybrid => s.with_layout(Layout::Hybrid),
    };
    emit(&s.render_text())?;
    if let Some(path) = a.csv {
        let f = std::fs::File::create(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        s.write_csv(f)?;
    }
    Ok(0)
}

fn verify(a: VerifyArgs) -> Result<i32> {
    let size = if a.full { SuiteSize::full() } else { SuiteSize::quick() };
    let checks = run_suite(size, a.seed)?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    let mut text: String = checks.iter().map(|c| c.line() + "\n").collect();
    text.push_str(&format!("{} checks, {failed} failed\n", checks.len()));
    emit(&text)?;
    Ok(if failed == 0 { 0 } else { EXIT_FAILED })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Summarize(a) => summarize(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILED as u8)
        }
    }
}
