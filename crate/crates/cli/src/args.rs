use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ubd::rca::Aggregator;

use crate::commands::{cmd_audit, cmd_estimate, cmd_gen_phantoms, cmd_synthetic_grid};
use crate::config::{Overrides, RunConfig};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(
    name = "ubd",
    version,
    about = "Ground-truth-free segmentation quality estimates and subgroup bias audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the Dice score of every predicted mask in a manifest.
    Estimate {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate, then compare the two groups of a binary attribute.
    Audit {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the 12 x 12 synthetic degradation grid on generated phantoms.
    SyntheticGrid {
        #[command(flatten)]
        common: Common,
    },
    /// Write the phantom corpus as PNGs with a manifest.
    GenPhantoms {
        /// Also write the predictions of grid cell MALE,FEMALE.
        #[arg(long, value_name = "MALE,FEMALE", value_parser = parse_cell)]
        cell: Option<(u8, u8)>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Settings file (.toml or .json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of references per estimate.
    #[arg(long)]
    k: Option<usize>,
    /// How per-reference scores are combined: mean or max.
    #[arg(long, value_parser = parse_aggregator)]
    aggregator: Option<Aggregator>,
    /// Attribute that splits the population into two groups.
    #[arg(long)]
    attribute: Option<String>,
    /// Attribute value whose advantage counts as a positive gap.
    #[arg(long)]
    positive_group: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "UBD_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

impl Common {
    fn resolve(self) -> Result<RunConfig> {
        RunConfig::resolve(&Overrides {
            config: self.config,
            k: self.k,
            aggregator: self.aggregator,
            attribute: self.attribute,
            positive_group: self.positive_group,
            seed: self.seed,
            threads: self.threads,
            out: self.out,
        })
    }
}

fn parse_aggregator(s: &str) -> std::result::Result<Aggregator, String> {
    s.parse().map_err(|e: ubd::Error| e.to_string())
}

fn parse_cell(s: &str) -> std::result::Result<(u8, u8), String> {
    let (i, j) = s.split_once(',').ok_or("expected MALE,FEMALE, e.g. 12,1")?;
    let level = |v: &str| v.trim().parse::<u8>().map_err(|e| format!("{v:?}: {e}"));
    Ok((level(i)?, level(j)?))
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Estimate { manifest, common } => {
            let cfg = common.resolve()?;
            let outcome = cmd_estimate(&manifest, &cfg)?;
            println!("scored {} cases", outcome.results.len());
            print_files(&outcome.files);
        }
        Command::Audit { manifest, common } => {
            let cfg = common.resolve()?;
            let outcome = cmd_audit(&manifest, &cfg)?;
            print!("{}", outcome.summary());
            print_files(&outcome.files);
        }
        Command::SyntheticGrid { common } => {
            let cfg = common.resolve()?;
            let outcome = cmd_synthetic_grid(&cfg)?;
            for d in &outcome.summary.diagnostics {
                let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
                println!(
                    "{} ({}): pearson {} slope {} sign agreement {}",
                    d.structure,
                    d.aggregator,
                    fmt(d.pearson_r),
                    fmt(d.slope),
                    fmt(d.agreement_at(0.0)),
                );
            }
            for w in &outcome.summary.warnings {
                eprintln!("warning: {w}");
            }
            print_files(&outcome.files);
        }
        Command::GenPhantoms { cell, common } => {
            let cfg = common.resolve()?;
            let export = cmd_gen_phantoms(&cfg, cell)?;
            println!("exported {} cases", export.manifest.cases.len());
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 on success, 1 for bad input, 2 when a
/// computation fails.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
