use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fixpo_cli::export::{self, Input, XAxis};
use fixpo_cli::sweep::{self, GridAxis, SweepSpec};
use fixpo_cli::{run, RunConfig};

#[derive(Parser)]
#[command(name = "fixpo", version, about = "Train, sweep and export trust-region policy optimization runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path override, e.g. `trust_region.c_beta=1`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training job.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the Cartesian product of grid axes across seeds.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `key=v1,v2` or `key=[json, values]`. Repeatable.
        #[arg(long, value_name = "KEY=VALUES", required = true)]
        grid: Vec<String>,
        /// Number of seeds, starting at the base seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Leading improvement steps left out of the per-run averages.
        #[arg(long, default_value_t = 0)]
        skip_steps: usize,
    },
    /// Smooth and aggregate metrics files into plot-ready curves.
    Export {
        /// Metrics files, as `PATH` or `SERIES=PATH`.
        #[arg(required = true)]
        files: Vec<String>,
        #[arg(long, default_value = "env_steps")]
        x: XAxis,
        #[arg(long, default_value = "avg_return")]
        metric: String,
        /// EWMA span; 1 disables smoothing.
        #[arg(long, default_value_t = 1)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(args: &ConfigArgs) -> Result<RunConfig, fixpo_cli::ConfigError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Train { cfg } => {
            let cfg = match load(&cfg) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            match run(&cfg) {
                Ok(o) => {
                    println!("{}", serde_json::to_string_pretty(&o.summary).unwrap());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::Sweep {
            cfg,
            grid,
            seeds,
            jobs,
            skip_steps,
        } => {
            let base = match load(&cfg) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let result = (|| -> anyhow::Result<_> {
                let axes = grid
                    .iter()
                    .map(|g| GridAxis::parse(g).map_err(anyhow::Error::msg))
                    .collect::<anyhow::Result<Vec<_>>>()?;
                let spec = SweepSpec {
                    out_dir: base.out_dir.clone(),
                    seeds: (base.seed..base.seed + seeds).collect(),
                    base,
                    axes,
                    jobs,
                    skip_steps,
                };
                Ok(sweep::sweep(&spec)?)
            })();
            match result {
                Ok(r) => {
                    let failed = r.runs.iter().filter(|x| x.result.is_err()).count();
                    println!("{} runs, {failed} failed; aggregate at {}", r.runs.len(), r.aggregate_csv.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Export {
            files,
            x,
            metric,
            window,
            out,
        } => {
            let inputs: Vec<Input> = files.iter().map(|f| Input::parse(f)).collect();
            let result = export::curves(&inputs, x, &metric, window)
                .map_err(anyhow::Error::msg)
                .and_then(|pts| {
                    export::write_csv(&pts, &out).with_context(|| format!("writing {}", out.display()))
                });
            match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
