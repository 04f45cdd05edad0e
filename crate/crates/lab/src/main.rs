use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tsc_lab::config::{ControllerKind, ExperimentConfig, SweepSpec};
use tsc_lab::dataset::{load_flow, load_roadnet};
use tsc_lab::error::LabError;
use tsc_lab::plot::emit_plots;
use tsc_lab::results::{ResultRow, ResultsTable};
use tsc_lab::runner::{run_experiment_with, run_sweep};

#[derive(Parser)]
#[command(name = "tsc", version, about = "Traffic signal control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write results, plots and checkpoints.
    Run {
        /// TOML experiment config; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        controller: Option<ControllerKind>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Training episodes for dhlight.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Run one sub-experiment per parameter value on worker threads.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Parameter to vary; taken from the config's [sweep] table when omitted.
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values, e.g. 0.1,0.3,0.5.
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Render SVG charts from a results.csv.
    Plot {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a CityFlow roadnet and flow pair and report what was found.
    Validate {
        #[arg(long)]
        roadnet: PathBuf,
        #[arg(long)]
        flow: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, LabError> {
    path.map_or_else(|| Ok(ExperimentConfig::default()), ExperimentConfig::load)
}

fn progress(row: &ResultRow) {
    match (row.l_recon, row.l_clip) {
        (Some(r), Some(c)) => eprintln!(
            "[{}] episode {:>3}  ATT {:>8.2} s  throughput {:>5}  reward {:>8.3}  L_recon {:.4}  L_clip {:.4}",
            row.run_id, row.episode, row.att_secs, row.throughput, row.mean_reward, r, c
        ),
        _ => eprintln!(
            "[{}] ATT {:.2} s  throughput {}  reward {:.3}",
            row.run_id, row.att_secs, row.throughput, row.mean_reward
        ),
    }
}

fn execute(cli: Cli) -> Result<(), LabError> {
    match cli.command {
        Command::Run { config, seed, controller, out, episodes } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(c) = controller {
                cfg.controller = c;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(e) = episodes {
                cfg.hyperparameters.episodes = e;
            }
            let result = run_experiment_with(&cfg, progress)?;
            println!(
                "run {}: final ATT {:.2} s",
                result.run_id,
                result.table.rows().last().map_or(0.0, |r| r.att_secs)
            );
            for a in &result.artifacts {
                println!("  wrote {}", a.display());
            }
        }
        Command::Sweep { config, param, values, out, episodes } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(e) = episodes {
                cfg.hyperparameters.episodes = e;
            }
            let spec = match (param, values, cfg.sweep.clone()) {
                (Some(p), Some(v), _) => SweepSpec { param: p, values: SweepSpec::parse_values(&v)? },
                (None, None, Some(s)) => s,
                (Some(p), None, Some(s)) if s.param == p => s,
                _ => return Err(LabError::Config("sweep needs --param and --values or a [sweep] table".into())),
            };
            let result = run_sweep(&cfg, &spec)?;
            println!("{:>16}  {:>10}", spec.param, "ATT (s)");
            for p in &result.points {
                println!("{:>16}  {:>10.2}", p.value, p.att_secs);
            }
            println!("wrote {}", result.out_dir.display());
        }
        Command::Plot { results, out } => {
            let table = ResultsTable::read(&results)?;
            for p in emit_plots(&table, &out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Validate { roadnet, flow } => {
            let net = load_roadnet(&roadnet)?;
            let demand = load_flow(&flow, &net)?;
            demand.validate(&net)?;
            let last = demand.demands.last().map_or(0.0, |d| d.entry_time);
            println!(
                "ok: {} signalised intersections, {} roads, {} vehicles, last entry at {} s",
                net.intersection_count(),
                net.roads.len(),
                demand.len(),
                last
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
