use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use tcode::analytics::{gain_curve, optimal_redundancy, AnalyticsError, DEFAULT_GAMMA};
use tcode::config::parse_config;
use tcode::harness::{self, ExperimentConfig, HarnessError};
use tcode::report;

const DEFAULTS_HELP: &str = "\
Config files hold `key = value` lines under [topology], [link], [traffic],
[code] and [run] headers. `k`, `n` and `rate` (or `rates`) are required.
Defaults applied to everything else:

  [topology] rows = 4, cols = 4, removal_fraction = 0.2,
             routing = no-backtrack (uniform | no-backtrack | shortest-path),
             ttl = 64 x network diameter, service_mean_s = 0.0001
             file = PATH replaces the grid with a topology file
  [link]     capacity_bps = 1e7, mean_delay_s = 0.002
  [traffic]  packet_size_bits = 1000
  [code]     n_values = k..=2k (sweep-rate only)
  [run]      deadline_s = 0.3, horizon_s = 200, warmup_fraction = 0.1,
             replications = 5, seed = 1, record_messages = false,
             queue_alarm = 100

sweep-load uses `rates` when more than one is given, otherwise offered
information rates of 1..=12 Mbps.

Exit codes: 0 success, 1 usage or config error, 2 infeasible model
parameters, 3 runtime failure. TCODE_THREADS caps worker threads.";

#[derive(Parser, Debug)]
#[command(name = "tcode", version, about = "Transport-coding delay simulator and analytical model", after_help = DEFAULTS_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory for CSV output and the manifest; stdout when absent.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Suppress progress and summaries on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form gain curve for n = k..=n_max.
    Analyze {
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        k: usize,
        #[arg(long = "n-max")]
        n_max: usize,
        /// Capacity scale for absolute delays.
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
    },
    /// Replications of the configured code at the first rate.
    Simulate,
    /// Uncoded against coded at the first rate.
    Pair,
    /// Paired runs over a range of message rates.
    SweepLoad,
    /// Paired runs over n at the first rate, with the analytical gain.
    SweepRate,
    /// Parse, validate and print the resolved config.
    ValidateConfig,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: 1,
            error: error.into(),
        }
    }

    fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: 3,
            error: error.into(),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let code = match e {
            HarnessError::Config { .. }
            | HarnessError::NoRedundancy { .. }
            | HarnessError::Topology(_)
            | HarnessError::Io { .. } => 1,
            _ => 3,
        };
        Failure {
            code,
            error: e.into(),
        }
    }
}

impl From<AnalyticsError> for Failure {
    fn from(e: AnalyticsError) -> Self {
        let code = match e {
            AnalyticsError::Saturated { .. }
            | AnalyticsError::CodedInfeasible { .. }
            | AnalyticsError::NoFeasibleRedundancy { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            error: e.into(),
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::usage(anyhow::anyhow!("--config PATH is required")))?;
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(Failure::usage)?;
    let mut config = parse_config(&text)
        .with_context(|| format!("in config {}", path.display()))
        .map_err(Failure::usage)?;
    if let harness::TopologySource::File(f) = &mut config.topology {
        if f.is_relative() {
            if let Some(dir) = path.parent() {
                *f = dir.join(&*f);
            }
        }
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

struct Output<'a> {
    dir: Option<&'a Path>,
}

impl Output<'_> {
    fn prepare(&self) -> Result<(), Failure> {
        if let Some(dir) = self.dir {
            fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))
                .map_err(Failure::runtime)?;
        }
        Ok(())
    }

    /// Writes `name` into the output directory. Without one, only the
    /// primary table goes to stdout.
    fn emit(&self, name: &str, contents: &str, primary: bool) -> Result<(), Failure> {
        match self.dir {
            Some(dir) => {
                let path = dir.join(name);
                fs::write(&path, contents)
                    .with_context(|| format!("writing {}", path.display()))
                    .map_err(Failure::runtime)
            }
            None if primary => std::io::stdout()
                .write_all(contents.as_bytes())
                .context("writing stdout")
                .map_err(Failure::runtime),
            None => Ok(()),
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let out = Output {
        dir: cli.out.as_deref(),
    };
    let note = |msg: String| {
        if !cli.quiet {
            eprintln!("{msg}");
        }
    };
    match &cli.command {
        Command::Analyze {
            rho,
            k,
            n_max,
            gamma,
        } => {
            if *n_max < *k {
                return Err(Failure::usage(anyhow::anyhow!(
                    "--n-max ({n_max}) must be at least --k ({k})"
                )));
            }
            let best = optimal_redundancy(*rho, *k, *n_max)?;
            let rows = gain_curve(*rho, *k, *n_max, *gamma)?;
            out.prepare()?;
            out.emit(
                "gain_curve.csv",
                &report::gain_curve_csv(&rows, Some(best)),
                true,
            )?;
            note(format!("optimum n={} f={:.6}", best.0, best.1));
        }
        Command::ValidateConfig => {
            let config = load_config(cli)?;
            harness::prepare(&config)?;
            if !cli.quiet {
                print!("{}", tcode::config::format_config(&config));
            }
        }
        Command::Simulate => {
            let config = load_config(cli)?;
            out.prepare()?;
            let arm = harness::simulate(&config)?;
            out.emit("summary.csv", &report::arms_csv([&arm]), true)?;
            if config.record_messages {
                out.emit("messages.csv", &report::arm_messages_csv(&arm), false)?;
            }
            out.emit(
                "manifest.txt",
                &report::manifest("simulate", &config),
                false,
            )?;
            let a = &arm.aggregate;
            note(format!(
                "delay mean {:.6} s (+/- {:.6}), violation {:.4}",
                a.delay_mean, a.delay_half_width, a.violation_probability
            ));
        }
        Command::Pair | Command::SweepLoad => {
            let mut config = load_config(cli)?;
            let sweep = matches!(cli.command, Command::SweepLoad);
            if sweep && config.rates.len() < 2 {
                config.rates = harness::default_load_rates(&config);
            }
            out.prepare()?;
            let results = if sweep {
                harness::load_sweep(&config, &config.rates.clone())?
            } else {
                config.rates.truncate(1);
                vec![harness::run_paired(&config)?]
            };
            out.emit("pairs.csv", &report::pairs_csv(&results), true)?;
            out.emit("ratios.csv", &report::ratios_csv(&results), false)?;
            if config.record_messages {
                out.emit("messages.csv", &report::messages_csv(&results), false)?;
            }
            let command = if sweep { "sweep-load" } else { "pair" };
            out.emit("manifest.txt", &report::manifest(command, &config), false)?;
            for p in &results {
                note(format!(
                    "rate {:.3}: gain {} variance ratio {} violation ratio {}{}",
                    p.rate,
                    report::opt(p.delay_gain),
                    report::opt(p.variance_ratio),
                    report::opt(p.violation_ratio),
                    if p.queue_growth {
                        " (queue growth)"
                    } else {
                        ""
                    }
                ));
            }
        }
        Command::SweepRate => {
            let mut config = load_config(cli)?;
            if config.n_values.is_empty() {
                config.n_values = (config.k..=2 * config.k).collect();
            }
            config.rates.truncate(1);
            out.prepare()?;
            let rows = harness::rate_sweep(&config, &config.n_values.clone())?;
            out.emit("rate_sweep.csv", &report::rate_sweep_csv(&rows), true)?;
            let arms = rows.first().map(|r| &r.paired.uncoded).into_iter().chain(
                rows.iter()
                    .filter(|r| r.n > config.k)
                    .map(|r| &r.paired.coded),
            );
            out.emit("pairs.csv", &report::arms_csv(arms), false)?;
            out.emit(
                "manifest.txt",
                &report::manifest("sweep-rate", &config),
                false,
            )?;
            for r in &rows {
                note(format!(
                    "n={} R={:.3}: empirical f {} analytical f {}",
                    r.n,
                    r.code_rate,
                    report::opt(r.empirical_gain),
                    report::opt(r.analytical_gain)
                ));
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
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
