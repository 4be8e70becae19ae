//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 for
//! failures while running.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use super::{config, output, run_experiment_on, trial_channels, OutputFormat};
use crate::cvxsolve;
use crate::error::{Error, Result};
use crate::model::{gaussian_matrix, gen_channels, is_proper, rng_from_seed, ChannelDoc, ChannelSet, SystemConfig};
use crate::oracle;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ia-rcrm", version, about = "Interference alignment experiments on MIMO interference channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Master seed, overriding the file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; results go to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long)]
        trials: Option<usize>,
        /// Worker threads, 0 for every core.
        #[arg(long)]
        workers: Option<usize>,
        /// Write the channels of every trial to this JSON file.
        #[arg(long)]
        dump_channels: Option<PathBuf>,
        /// Replay channels from a file written by --dump-channels; one trial per entry.
        #[arg(long, conflicts_with = "trials")]
        load_channels: Option<PathBuf>,
    },
    /// Check a config file and report whether the system is proper.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare the precoder solver with a grid search on small two-user instances.
    Oracle {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        instances: usize,
        /// Grid points per precoder direction.
        #[arg(long, default_value_t = 10_000)]
        points: usize,
    },
}

fn load_channel_file(path: &Path) -> Result<Vec<ChannelSet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse = |detail: String| Error::Parse { path: path.into(), detail };
    let docs: Vec<ChannelDoc> = serde_json::from_str(&text).map_err(|e| parse(e.to_string()))?;
    docs.into_iter().map(|d| ChannelSet::try_from(d).map_err(parse)).collect()
}

fn save_channel_file(path: &Path, channels: &[ChannelSet]) -> Result<()> {
    let docs: Vec<ChannelDoc> = channels.iter().map(ChannelDoc::from).collect();
    let text = serde_json::to_string(&docs).expect("channel documents serialize");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cmd: Command, out: &mut dyn Write) -> std::result::Result<(), (i32, Error)> {
    let config_err = |e| (EXIT_CONFIG, e);
    let runtime_err = |e| (EXIT_RUNTIME, e);
    match cmd {
        Command::Run { config, seed, out: out_path, format, trials, workers, dump_channels, load_channels } => {
            let mut spec = config::load_spec(&config).map_err(config_err)?;
            if let Some(s) = seed {
                spec.master_seed = s;
                spec.system.seed = s;
            }
            if let Some(t) = trials {
                spec.trials = t;
            }
            if let Some(w) = workers {
                spec.workers = w;
            }
            if let Some(f) = format {
                spec.format = match f {
                    FormatArg::Csv => OutputFormat::Csv,
                    FormatArg::Json => OutputFormat::Json,
                };
            }
            if out_path.is_some() {
                spec.output = out_path;
            }
            let channels = match load_channels {
                Some(path) => {
                    let ch = load_channel_file(&path).map_err(config_err)?;
                    spec.trials = ch.len();
                    ch
                }
                None => {
                    spec.validate().map_err(config_err)?;
                    trial_channels(&spec).map_err(runtime_err)?
                }
            };
            spec.validate().map_err(config_err)?;
            if let Some(path) = dump_channels {
                save_channel_file(&path, &channels).map_err(runtime_err)?;
            }
            let rows = run_experiment_on(&spec, &channels).map_err(|e| match e {
                Error::InvalidConfig(_) => config_err(e),
                other => runtime_err(other),
            })?;
            match &spec.output {
                Some(path) => output::emit_results(&rows, spec.format, path).map_err(runtime_err)?,
                None => {
                    let text = output::format_results(&rows, spec.format).map_err(runtime_err)?;
                    out.write_all(text.as_bytes()).map_err(|e| runtime_err(Error::io("<stdout>", e)))?;
                }
            }
            Ok(())
        }
        Command::Validate { config } => {
            let spec = config::load_spec(&config).map_err(config_err)?;
            let s = &spec.system;
            let text = format!(
                "system: K={} M_r={} M_t={} d={} kind={:?}\nproper={}\nslack={}\n",
                s.users,
                s.rx_antennas,
                s.tx_antennas,
                s.streams,
                s.channel_kind,
                is_proper(s),
                s.proper_slack()
            );
            out.write_all(text.as_bytes()).map_err(|e| runtime_err(Error::io("<stdout>", e)))?;
            Ok(())
        }
        Command::Oracle { seed, instances, points } => {
            let cfg = SystemConfig::generic(2, 2, 2, 1);
            let mut rng = rng_from_seed(seed);
            let mut worst: f64 = 0.0;
            for i in 0..instances {
                let ch = gen_channels(&cfg, &mut rng).map_err(runtime_err)?;
                let u: Vec<_> = (0..2).map(|_| gaussian_matrix(2, 1, cfg.complex_gaussian, &mut rng)).collect();
                let solved = cvxsolve::solve_precoders(&ch, &u, &cfg).map_err(runtime_err)?;
                let grid = oracle::grid_precoder_objective(&ch, &u, cfg.eps, points).map_err(runtime_err)?;
                let ratio = if grid > 0.0 { solved.report.objective / grid } else { 0.0 };
                worst = worst.max(ratio);
                writeln!(
                    out,
                    "instance {i}: solver {} grid {} ratio {} ({})",
                    output::format_g12(solved.report.objective),
                    output::format_g12(grid),
                    output::format_g12(ratio),
                    solved.report
                )
                .map_err(|e| runtime_err(Error::io("<stdout>", e)))?;
            }
            if worst > 1.02 {
                return Err(runtime_err(Error::contract(format!(
                    "solver exceeded the grid value by a factor of {worst}"
                ))));
            }
            Ok(())
        }
    }
}

/// Runs the command line `args` (including the program name), writing results
/// to `out` and diagnostics to `err`. Returns the process exit code.
pub fn cli_main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    EXIT_CONFIG
                }
            };
        }
    };
    match run(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err((code, e)) => {
            let _ = writeln!(err, "error: {e}");
            code
        }
    }
}

pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    cli_main_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
