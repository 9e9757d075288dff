use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use regclust::{BandKind, Mode};
use regclust_cli::commands::{self, SummaryOptions};
use regclust_cli::config::RunConfig;
use regclust_cli::trace_io::read_manifest;
use regclust_cli::CliError;

#[derive(Parser)]
#[command(
    name = "regclust",
    version,
    about = "Joint clustering and registration of curves"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Joint,
    ClusteringOnly,
    RegistrationOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum BandArg {
    Pointwise,
    Simultaneous,
}

#[derive(Subcommand)]
enum Command {
    /// Generate engineered curves with known clusters and warps.
    Simulate {
        /// TOML simulation spec; built-in defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write this many datasets with derived seeds.
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the sampler and write the trace and summaries.
    Fit {
        /// TOML run configuration.
        #[arg(
            long,
            required_unless_present = "manifest",
            conflicts_with = "manifest"
        )]
        config: Option<PathBuf>,
        /// Re-run the configuration recorded in a trace manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        chains: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
    },
    /// Recompute summaries from a stored trace.
    Summarize {
        #[arg(long)]
        trace: PathBuf,
        /// Truth file from `simulate`, for agreement scores.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, value_enum, default_value = "simultaneous")]
        band: BandArg,
        #[arg(long, default_value_t = 101)]
        grid_points: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            spec,
            out,
            replicates,
            seed,
        } => {
            let mut spec = match spec {
                Some(p) => commands::load_sim_spec(&p)?,
                None => regclust::SimSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            for dir in commands::simulate(&spec, &out, replicates)? {
                println!("{}", dir.display());
            }
        }
        Command::Fit {
            config,
            manifest,
            chains,
            seed,
            out,
            data,
            mode,
            iterations,
            burn_in,
            thin,
        } => {
            let mut cfg = match (config, manifest) {
                (Some(p), _) => RunConfig::load(&p)?,
                (None, Some(p)) => {
                    let dir = p.parent().map(PathBuf::from).unwrap_or_default();
                    read_manifest(&dir)?.config
                }
                (None, None) => {
                    return Err(CliError::Config(
                        "one of --config or --manifest is required".into(),
                    ))
                }
            };
            if let Some(s) = seed {
                cfg.mcmc.seed = s;
            }
            if let Some(o) = out {
                cfg.output.dir = o;
            }
            if let Some(d) = data {
                cfg.data.path = d;
            }
            if let Some(m) = mode {
                cfg.model.mode = match m {
                    ModeArg::Joint => Mode::Joint,
                    ModeArg::ClusteringOnly => Mode::ClusteringOnly,
                    ModeArg::RegistrationOnly => Mode::RegistrationOnly,
                };
            }
            if let Some(n) = iterations {
                cfg.mcmc.iterations = n;
            }
            if let Some(n) = burn_in {
                cfg.mcmc.burn_in = n;
            }
            if let Some(n) = thin {
                cfg.mcmc.thin = n;
            }
            cfg.validate()?;
            for dir in commands::fit(&cfg, chains)? {
                println!("{}", dir.display());
            }
        }
        Command::Summarize {
            trace,
            truth,
            level,
            band,
            grid_points,
        } => {
            let band = match band {
                BandArg::Pointwise => BandKind::Pointwise,
                BandArg::Simultaneous => BandKind::Simultaneous,
            };
            let d = commands::summarize(
                &trace,
                &SummaryOptions {
                    truth,
                    level,
                    band,
                    grid_points,
                },
            )?;
            println!("draws {} lpml {:.3} k_mode {}", d.draws, d.lpml, d.k_mode);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
