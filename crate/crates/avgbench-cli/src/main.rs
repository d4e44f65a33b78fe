//! `avgbench` command-line front end.

mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::{parse, CheckConfig, Experiment, RunConfig, SupermapConfig, SupermapMode};
use error::CliError;
use run::Settings;

const THREADS_ENV: &str = "AVGBENCH_THREADS";

const PRESETS: [(&str, &str); 7] = [
    ("fig1_u1", include_str!("../configs/fig1_u1.toml")),
    ("fig1_u2", include_str!("../configs/fig1_u2.toml")),
    ("fig1_u3", include_str!("../configs/fig1_u3.toml")),
    ("fig2", include_str!("../configs/fig2.toml")),
    ("table_s11", include_str!("../configs/table_s11.toml")),
    ("table_s12", include_str!("../configs/table_s12.toml")),
    ("noisy_twobody", include_str!("../configs/noisy_twobody.toml")),
];

#[derive(Parser, Debug)]
#[command(name = "avgbench", version, about = "Averaged benchmarking of brickwork circuits")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sampled realizations; 0 evaluates classical values only.
    #[arg(long, global = true)]
    rounds: Option<u64>,
    /// Measurement shots per realization; 0 uses exact realization values.
    #[arg(long, global = true)]
    shots: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Tolerance for classification and certificates.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Worker threads (also AVGBENCH_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Classify a channel or an averaged gate described in a TOML file.
    Check { file: Option<PathBuf> },
    /// Run a configuration file or a shipped preset.
    Benchmark {
        #[arg(long)]
        preset: Option<String>,
    },
    /// Search for optimal rescaling supermaps.
    Supermap {
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Demand that both transfer blocks are kept exactly.
        #[arg(long)]
        force_both_unit: bool,
        #[arg(long, default_value_t = 100)]
        verify_samples: usize,
    },
    /// List presets, or print one.
    Presets { name: Option<String> },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    #[value(alias = "three_way")]
    ThreeWay,
    #[value(alias = "four_way")]
    FourWay,
}

fn read(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn preset(name: &str) -> Result<&'static str, CliError> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        CliError::Config(format!("unknown preset `{name}` (available: {})", names.join(", ")))
    })
}

fn init_threads(flag: Option<usize>, config: Option<usize>) -> Result<(), CliError> {
    let env = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(v.parse::<usize>().map_err(|_| CliError::Config(format!("{THREADS_ENV}={v} is not a count")))?),
        Err(_) => None,
    };
    if let Some(n) = flag.or(env).or(config) {
        if n == 0 {
            return Err(CliError::Config("thread count must be positive".into()));
        }
        // A pool may already exist when called twice in-process; that is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn settings(cli: &Cli, cfg: Option<&RunConfig>) -> Settings {
    Settings {
        seed: cli.seed.or(cfg.and_then(|c| c.seed)).unwrap_or(1),
        rounds: cli.rounds.or(cfg.and_then(|c| c.rounds)).unwrap_or(0),
        shots: cli.shots.or(cfg.and_then(|c| c.shots)).unwrap_or(0),
        out: cli
            .out
            .clone()
            .or(cfg.and_then(|c| c.out.clone()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("avgbench-out")),
        tol: cli.tol.unwrap_or(1e-9),
    }
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Check { file } => {
            let path = file.as_ref().or(cli.config.as_ref()).ok_or_else(|| {
                CliError::Config("check needs a file argument or --config".into())
            })?;
            init_threads(cli.threads, None)?;
            let cfg: CheckConfig = parse(&read(path)?, &path.display().to_string())?;
            run::check(&cfg, cli.tol)
        }
        Command::Benchmark { preset: name } => {
            let (text, origin) = match (&cli.config, name) {
                (Some(p), None) => (read(p)?, p.display().to_string()),
                (None, Some(n)) => (preset(n)?.to_string(), format!("preset {n}")),
                _ => return Err(CliError::Config("benchmark needs exactly one of --config or --preset".into())),
            };
            let cfg: RunConfig = parse(&text, &origin)?;
            init_threads(cli.threads, cfg.threads)?;
            let s = settings(cli, Some(&cfg));
            match &cfg.experiment {
                Experiment::Benchmark(b) => run::benchmark(b, &s),
                Experiment::PhiSweep(p) => run::phi_sweep(p, &s),
                Experiment::DepthSweep(d) => run::depth_sweep(d, &s),
                Experiment::Supermap(m) => run::supermap(m, &s),
            }
        }
        Command::Supermap { mode, force_both_unit, verify_samples } => {
            init_threads(cli.threads, None)?;
            let cfg = SupermapConfig {
                mode: match mode {
                    ModeArg::ThreeWay => SupermapMode::ThreeWay,
                    ModeArg::FourWay => SupermapMode::FourWay,
                },
                force_unit_transfer: *force_both_unit,
                verify_samples: *verify_samples,
            };
            run::supermap(&cfg, &settings(cli, None))
        }
        Command::Presets { name } => match name {
            Some(n) => Ok(preset(n)?.to_string()),
            None => Ok(PRESETS.iter().map(|(n, _)| format!("{n}\n")).collect()),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
