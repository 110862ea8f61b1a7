use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use horizon_core::experiment::{self, ExperimentConfig};
use horizon_core::otdist::{dqmd, DiscreteDistribution};
use horizon_core::Error;

/// Planning invariance and horizon generalization experiments on tabular mazes.
#[derive(Parser)]
#[command(name = "horizon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; every key is optional.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set seed=3 --set eval.n_pairs=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set output_dir=...`.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect random-behaviour trajectories.
    Generate(ConfigArgs),
    /// Estimate temporal distances with the configured estimator.
    Estimate(ConfigArgs),
    /// Close a distance table under path relaxation and certify it.
    Project {
        #[command(flatten)]
        args: ConfigArgs,
        /// Distance CSV to project instead of the configured estimate.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Distance-stratified success curve, eta and Reach of the configured policy.
    Evaluate {
        #[command(flatten)]
        args: ConfigArgs,
        /// Distance CSV for the greedy/Boltzmann policy instead of the configured estimate.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Success with and without planning on distant pairs.
    Invariance(ConfigArgs),
    /// Bellman error of exact and noise-corrupted critics.
    Bellman(ConfigArgs),
    /// Full pipeline: every method's curve, eta, Reach and invariance ratio.
    Report(ConfigArgs),
    /// Print a CSV output as gnuplot-ready columns.
    PlotData {
        /// Any CSV written by another subcommand.
        csv: PathBuf,
    },
    /// Transport distance between two state distributions.
    Transport {
        /// Source distribution CSV (state_id,prob).
        #[arg(long)]
        from: PathBuf,
        /// Target distribution CSV (state_id,prob).
        #[arg(long)]
        to: PathBuf,
        /// Ground cost: a distance CSV that must pass the quasimetric audit.
        #[arg(long)]
        cost: PathBuf,
        /// Write the JSON result here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, Error> {
    let base = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = base.with_overrides(&args.overrides)?;
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn json<T: serde::Serialize>(value: &T) -> Result<String, Error> {
    Ok(serde_json::to_string_pretty(value)?)
}

fn pct(x: f64) -> String {
    format!("{:.3}", x)
}

fn print_dir(cfg: &ExperimentConfig) {
    eprintln!("outputs in {}", cfg.output_dir.display());
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = load_config(&args)?;
            let data = experiment::cmd_generate(&cfg)?;
            println!("{}", json(&data.meta)?);
            print_dir(&cfg);
        }
        Command::Estimate(args) => {
            let cfg = load_config(&args)?;
            let est = experiment::cmd_estimate(&cfg)?;
            let n = est.table.len();
            println!(
                "{}: {n} states, {} of {} pairs unobserved",
                est.source,
                est.table.count_infinite(),
                n * n
            );
            print_dir(&cfg);
        }
        Command::Project { args, input } => {
            let cfg = load_config(&args)?;
            let q = experiment::cmd_project(&cfg, input.as_deref())?;
            println!("certified: {}", q.is_certified());
            print_dir(&cfg);
        }
        Command::Evaluate { args, table } => {
            let cfg = load_config(&args)?;
            let r = experiment::cmd_evaluate(&cfg, table.as_deref())?;
            println!("{}", r.method);
            for b in &r.curve.bins {
                println!("  d <= {:>6}: {} ({} pairs)", b.upper, pct(b.rate), b.n_pairs);
            }
            if let Some(agg) = r.stats.as_ref().and_then(|s| s.eta_aggregate) {
                println!("  eta {}", pct(agg));
            }
            if let Some(ratio) = r.invariance.as_ref().and_then(|i| i.ratio) {
                println!("  invariance ratio {}", pct(ratio));
            }
            print_dir(&cfg);
        }
        Command::Invariance(args) => {
            let cfg = load_config(&args)?;
            let s = experiment::cmd_invariance(&cfg)?;
            println!("{}", json(&s)?);
            print_dir(&cfg);
        }
        Command::Bellman(args) => {
            let cfg = load_config(&args)?;
            for p in experiment::cmd_bellman(&cfg)? {
                println!(
                    "{:<12} error {:.3e}  easy {}  distant {}",
                    p.checkpoint,
                    p.error,
                    pct(p.easy_success),
                    pct(p.distant_success)
                );
            }
            print_dir(&cfg);
        }
        Command::Report(args) => {
            let cfg = load_config(&args)?;
            let summary = experiment::cmd_pipeline(&cfg)?;
            for row in &summary.scatter {
                let show = |v: Option<f64>| v.map(pct).unwrap_or_else(|| "-".into());
                println!(
                    "{:<40} eta {}  invariance {}",
                    row.method,
                    show(row.eta_aggregate),
                    show(row.invariance_ratio)
                );
            }
            print_dir(&cfg);
        }
        Command::PlotData { csv } => print!("{}", experiment::plot_data(&csv)?),
        Command::Transport { from, to, cost, output } => {
            let p = DiscreteDistribution::read_csv(&from)?;
            let q = DiscreteDistribution::read_csv(&to)?;
            let cost = experiment::read_quasimetric(&cost)?;
            let t = dqmd(&p, &q, &cost)?;
            match output {
                Some(path) => t.write_json(Path::new(&path))?,
                None => println!("{}", t.to_json()?),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
