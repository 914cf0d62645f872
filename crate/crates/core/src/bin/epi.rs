//! Command-line front end: `run`, `sweep`, `analyze`, `diagnose`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use epi_core::harness::{analyze_snapshots, diagnose, run_all, sweep, RunConfig, SweepAxis};

#[derive(Parser)]
#[command(name = "epi", version, about = "Evolving parameter isolation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; the built-in benchmark when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this seed only instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path config override, e.g. `--override optimizer.lr=3e-4`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = RunConfig::resolve(self.config.as_deref(), &self.overrides)?;
        if let Some(seed) = self.seed {
            config.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write logs, summaries and snapshots.
    Run(Common),
    /// Vary one hyper-parameter and aggregate over seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `p`, `H` or `beta`.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Drift report from a run directory's mask snapshots.
    Analyze {
        dir: PathBuf,
    },
    /// Perturbation check of the sensitivity signal at three checkpoints.
    Diagnose(Common),
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let body = serde_json::to_string_pretty(value)?;
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(common) => {
            let config = common.resolve()?;
            std::fs::create_dir_all(&config.output_dir)?;
            let summaries = run_all(&config)?;
            for s in &summaries {
                println!(
                    "seed {}: mean final perf {:.4}, mean FR {}, refreshes {}, {:.1}s",
                    s.seed,
                    s.mean_final_perf,
                    s.mean_forgetting.map_or("n/a".into(), |f| format!("{f:.3}%")),
                    s.refresh_count,
                    s.wall_time_secs
                );
            }
        }
        Command::Sweep { common, axis, values } => {
            let config = common.resolve()?;
            std::fs::create_dir_all(&config.output_dir)?;
            let table = sweep(&config, axis, &values, Some(&config.output_dir))?;
            let csv = config.output_dir.join("sweep.csv");
            std::fs::write(&csv, table.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
            write_json(&config.output_dir.join("sweep.json"), &table)?;
            print!("{}", table.to_csv());
        }
        Command::Analyze { dir } => {
            let report = analyze_snapshots(&dir)?;
            std::fs::write(dir.join("drift.csv"), report.to_csv())?;
            write_json(&dir.join("drift.json"), &report)?;
            print!("{}", report.to_csv());
            for (bucket, pct) in &report.flip_rates {
                println!("flip rate {bucket}: {pct:.3}%");
            }
        }
        Command::Diagnose(common) => {
            let config = common.resolve()?;
            std::fs::create_dir_all(&config.output_dir)?;
            for &seed in &config.seeds {
                let report = diagnose(&config, seed)?;
                write_json(&config.output_dir.join(format!("diagnose_seed_{seed}.json")), &report)?;
                for row in &report.rows {
                    let fmt = |c: Option<epi_core::metrics::Correlation>| {
                        c.map_or("n/a".to_string(), |c| format!("r={:.3} rho={:.3}", c.pearson, c.spearman))
                    };
                    println!(
                        "seed {seed} {} (step {}): raw {} | normalized {}",
                        row.label,
                        row.step,
                        fmt(row.raw),
                        fmt(row.normalized)
                    );
                }
            }
        }
    }
    Ok(())
}
