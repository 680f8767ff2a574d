use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use feddpgan::harness::{
    compare_runs, parse_config, run_experiment, sweep_configs, ExperimentConfig, ExperimentReport,
};

#[derive(Parser)]
#[command(
    name = "feddpgan",
    version,
    about = "Federated DP-GAN augmentation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML config.
    Run {
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for metrics.csv, summary.json and samples.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment per value of a dotted config key.
    Sweep {
        config: PathBuf,
        /// Dotted key, e.g. `privacy.sigma_n`.
        #[arg(long)]
        param: String,
        /// Comma-separated TOML literals.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Parent directory; each run writes to `<out>/<index>-<value>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Align per-round accuracy across finished runs.
    Compare {
        /// `summary.json` files or run directories containing one.
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        /// Write the comparison CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))
}

fn execute(
    mut cfg: ExperimentConfig,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<ExperimentReport> {
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(dir) = out {
        cfg.output_path = Some(dir.to_string_lossy().into_owned());
    }
    let report = run_experiment(&cfg)?;
    println!(
        "{} seed={} final_accuracy={:.4} config={}",
        report.label,
        report.seed,
        report.final_accuracy,
        &report.config_hash[..12]
    );
    if cfg.output_path.is_none() {
        print!("{}", report.metrics_csv());
    }
    Ok(report)
}

fn dir_name(value: &str) -> String {
    value
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let cfg = parse_config(&read_config(&config)?)?;
            execute(cfg, seed, out.as_deref())?;
        }
        Command::Sweep {
            config,
            param,
            values,
            seed,
            out,
        } => {
            let configs = sweep_configs(&read_config(&config)?, &param, &values)?;
            for (i, (cfg, value)) in configs.into_iter().zip(&values).enumerate() {
                println!("{param} = {value}");
                let dir = out
                    .as_ref()
                    .map(|d| d.join(format!("{i}-{}", dir_name(value))));
                execute(cfg, seed, dir.as_deref())?;
            }
        }
        Command::Compare { reports, out } => {
            let loaded = reports
                .iter()
                .map(|p| {
                    let file = if p.is_dir() {
                        p.join("summary.json")
                    } else {
                        p.clone()
                    };
                    let text = std::fs::read_to_string(&file)
                        .with_context(|| format!("reading {}", file.display()))?;
                    ExperimentReport::from_summary_json(&text)
                        .with_context(|| format!("parsing {}", file.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let table = compare_runs(&loaded)?;
            match out {
                Some(path) => std::fs::write(&path, table.to_csv())
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{}", table.to_csv()),
            }
            for (label, delta) in table.labels[1..].iter().zip(&table.final_deltas) {
                eprintln!("{} - {label}: {delta:+.4}", table.labels[0]);
            }
        }
    }
    Ok(())
}

/// Context chain up to the first library error, whose message already
/// carries its own stage labels.
fn describe(err: &anyhow::Error) -> String {
    let mut parts = Vec::new();
    for cause in err.chain() {
        parts.push(cause.to_string());
        if cause.is::<feddpgan::Error>() {
            break;
        }
    }
    parts.join(": ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::FAILURE
        }
    }
}
