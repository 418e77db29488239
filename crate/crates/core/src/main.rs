use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sgd_pce::cli::{run_experiment, write_report, ExperimentConfig, ExperimentId};

#[derive(Parser)]
#[command(name = "sgd-pce", version, about = "Stochastic energy minimisation over FEM x polynomial chaos")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one optimisation and dump its trajectory and coefficients.
    Solve(Common),
    /// Reproduce a table or figure.
    Experiment {
        /// table1 | table2 | table3 | fig-convergence | fig-cdf |
        /// fig-staged-hessian | fig-batch-study | solve
        id: String,
        #[command(flatten)]
        common: Common,
    },
    /// Print the resolved configuration without running anything.
    ShowConfig {
        id: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// TOML file overlaid on the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `output` from the config, else results/<id>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted `key=value`, e.g. `sgd.n_iterations=100`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn resolve(id: &str, common: &Common) -> Result<ExperimentConfig, String> {
    let id: ExperimentId = id.parse().map_err(|e| format!("{e}"))?;
    let text = match &common.config {
        Some(path) => Some(std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?),
        None => None,
    };
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    ExperimentConfig::load(id, text.as_deref(), &overrides).map_err(|e| e.to_string())
}

fn execute(id: &str, common: &Common) -> Result<bool, String> {
    let cfg = resolve(id, common)?;
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results").join(cfg.experiment.as_str()));
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let written = write_report(&cfg, &report, &dir).map_err(|e| e.to_string())?;
    for check in &report.checks {
        let tag = if check.passed { "PASS" } else { "FAIL" };
        println!("{tag} {}: {}", check.name, check.detail);
    }
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(common) => execute("solve", common),
        Command::Experiment { id, common } => execute(id, common),
        Command::ShowConfig { id, common } => resolve(id, common).and_then(|cfg| {
            print!("{}", cfg.to_toml().map_err(|e| e.to_string())?);
            Ok(true)
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
