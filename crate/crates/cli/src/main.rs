use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vardis_lab::dtmc::{self, ChainState};
use vardis_lab::sim::channel::LossMatrix;
use vardis_lab::sim::deployment::{Deployment, DeploymentKind, DEFAULT_EXTENT_M};
use vardis_lab_cli::config::{CurveName, ExperimentConfig};
use vardis_lab_cli::experiment::{run_experiment, RunOptions};
use vardis_lab_cli::{presets, rsm_table};

#[derive(Parser)]
#[command(name = "vardis-lab", version, about = "Deterministic VarDis / beaconing simulation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every point of an experiment and write metrics.csv (plus
    /// queues.csv, rsm.csv and capacity.csv when configured).
    Run(RunArgs),
    /// Search the update-period grid for reliability and delay capacity.
    Capacity(RunArgs),
    /// Expected dissemination time from the Markov-chain model.
    Dtmc(DtmcArgs),
    /// Fit the two-level regression model to a response table.
    Rsm(RsmArgs),
    /// Built-in experiment presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Multiplies duration and warm-up.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, env = "VARDIS_LAB_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct DtmcArgs {
    /// `K=<n>`: n nodes spread over the extent.
    #[arg(long, value_name = "K=n", group = "topology")]
    line_variable: Option<String>,
    /// `K=<n>`: n nodes with adjacent links at `--per`.
    #[arg(long, value_name = "K=n", group = "topology")]
    line_fixed: Option<String>,
    #[arg(long, value_name = "K=n", group = "topology")]
    grid_variable: Option<String>,
    #[arg(long, value_name = "K=n", group = "topology")]
    grid_fixed: Option<String>,
    /// CSV of loss probabilities q[i][j], one row per sender, no header.
    #[arg(long, group = "topology")]
    loss_matrix: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    per: f64,
    #[arg(long, default_value_t = DEFAULT_EXTENT_M)]
    extent_m: f64,
    #[arg(long, value_enum, default_value = "step")]
    per_curve: Curve,
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    /// Node holding the update initially (defaults to the reference
    /// producer, or node 0 for a loss matrix).
    #[arg(long)]
    start: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Curve {
    Step,
    Linear,
}

#[derive(Args)]
struct RsmArgs {
    /// CSV with one column per factor and a response column.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "response")]
    response: String,
    /// Columns that split the table into separately fitted settings.
    #[arg(long)]
    group: Vec<String>,
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print a preset's TOML.
    Show { name: String },
}

fn load(args: &RunArgs) -> Result<ExperimentConfig> {
    match (&args.config, &args.preset) {
        (Some(path), _) => Ok(ExperimentConfig::from_file(path)?),
        (None, Some(name)) => {
            let Some(p) = presets::find(name) else {
                let names: Vec<&str> = presets::PRESETS.iter().map(|p| p.name).collect();
                bail!("unknown preset `{name}` (available: {})", names.join(", "));
            };
            Ok(p.config()?)
        }
        (None, None) => bail!("one of --config or --preset is required"),
    }
}

fn run(args: &RunArgs, capacity_only: bool) -> Result<ExitCode> {
    if !(args.scale > 0.0 && args.scale.is_finite()) {
        bail!("--scale must be positive");
    }
    if args.replications == Some(0) {
        bail!("--replications must be at least 1");
    }
    let cfg = load(args)?;
    let opts = RunOptions {
        seed: args.seed,
        replications: args.replications,
        scale: args.scale,
        jobs: args.jobs,
    };
    let report = run_experiment(&cfg, &opts, &args.out, capacity_only)?;
    println!("{}: {} points", cfg.name, report.points);
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    if report.invariant_violations > 0 {
        eprintln!("error: {} protocol invariant violations", report.invariant_violations);
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_k(spec: &str) -> Result<usize> {
    let v = spec.strip_prefix("K=").or_else(|| spec.strip_prefix("k=")).unwrap_or(spec);
    v.parse().with_context(|| format!("expected K=<n>, got `{spec}`"))
}

fn read_loss_matrix(path: &PathBuf) -> Result<LossMatrix> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().with_context(|| format!("`{v}` is not a probability")))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    LossMatrix::from_rows(rows).map_err(anyhow::Error::msg)
}

fn dtmc_cmd(args: &DtmcArgs) -> Result<()> {
    let curve = match args.per_curve {
        Curve::Step => CurveName::Step,
        Curve::Linear => CurveName::Linear,
    }
    .curve();
    let deployment = |kind: DeploymentKind, k: &str| -> Result<Deployment> {
        Deployment::new(kind, parse_k(k)?).map_err(anyhow::Error::msg)
    };
    let d = if let Some(k) = &args.line_variable {
        Some(deployment(DeploymentKind::LineVariable { extent_m: args.extent_m }, k)?)
    } else if let Some(k) = &args.line_fixed {
        Some(deployment(DeploymentKind::line_fixed_per(args.per), k)?)
    } else if let Some(k) = &args.grid_variable {
        Some(deployment(DeploymentKind::GridVariable { extent_m: args.extent_m }, k)?)
    } else if let Some(k) = &args.grid_fixed {
        Some(deployment(DeploymentKind::grid_fixed_per(args.per), k)?)
    } else {
        None
    };
    let (q, default_start) = match (&d, &args.loss_matrix) {
        (Some(d), _) => (d.loss_matrix(curve), d.reference_producer()),
        (None, Some(path)) => (read_loss_matrix(path)?, 0),
        (None, None) => bail!("give a deployment (--line-variable K=n, ...) or --loss-matrix"),
    };
    let n = q.len();
    let start = args.start.unwrap_or(default_start);
    if start >= n {
        bail!("--start {start} is not one of the {n} nodes");
    }
    if n > dtmc::MAX_NODES {
        bail!("{n} nodes exceeds the chain's limit of {}", dtmc::MAX_NODES);
    }
    let start = ChainState(1 << start);
    let chain = dtmc::build(&q, start)?;
    let steps = dtmc::expected_hitting_steps(&q, start)?;
    println!("nodes {n}");
    println!("states {}", chain.state_count());
    println!("steps {steps}");
    println!("seconds {}", dtmc::expected_delay_seconds(steps, n, args.beta));
    Ok(())
}

fn rsm_cmd(args: &RsmArgs) -> Result<()> {
    let f = std::fs::File::open(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let (factors, rows) = rsm_table::read_input(f, &args.response, &args.group)?;
    let fitted = rsm_table::fit_groups(&args.group, &factors, &args.response, &rows);
    rsm_table::write_csv(&fitted, std::io::stdout().lock())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a, false),
        Command::Capacity(a) => run(a, true),
        Command::Dtmc(a) => dtmc_cmd(a).map(|()| ExitCode::SUCCESS),
        Command::Rsm(a) => rsm_cmd(a).map(|()| ExitCode::SUCCESS),
        Command::Presets { action } => {
            match action {
                PresetAction::List => {
                    for p in presets::PRESETS {
                        println!("{:<20} {}", p.name, p.summary);
                    }
                }
                PresetAction::Show { name } => match presets::find(name) {
                    Some(p) => print!("{}", p.toml),
                    None => {
                        eprintln!("error: unknown preset `{name}`");
                        return ExitCode::FAILURE;
                    }
                },
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
