use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use satjam_cli::commands;
use satjam_cli::config::ConfigFile;
use satjam_cli::summary::{self, SampleRef};
use satjam_cli::{exit, CliError, Result, RunConfig};
use satjam_core::dataset::Group;

/// Jamming-detection reproduction harness for a MIMO-OFDM satellite link.
#[derive(Debug, Parser)]
#[command(name = "satjam", version)]
struct Cli {
    /// TOML file whose keys override the command-line flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate and write datasets.
    Generate(Common),
    /// Train one detector per dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Score trained detectors on their held-out samples.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Merge per-dataset reports into summary.txt and summary.json.
    Report {
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Dump a sample's feature tensor as images, e.g. `--plot C1:17`.
        #[arg(long, value_name = "NAME:ID")]
        plot: Vec<SampleRef>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// A, B, C or D; all groups when omitted.
    #[arg(long, value_parser = parse_group)]
    group: Option<Group>,
    /// Dataset within the group; all of them when omitted.
    #[arg(long)]
    id: Option<u32>,
    /// Sample-count divisor; 1 is full scale.
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

fn parse_group(s: &str) -> std::result::Result<Group, String> {
    Group::parse(s).ok_or_else(|| format!("unknown group {s:?}, expected A, B, C or D"))
}

impl Common {
    fn apply(self, c: &mut RunConfig) {
        c.group = self.group.or(c.group);
        c.id = self.id.or(c.id);
        c.scale = self.scale.unwrap_or(c.scale);
        c.seed = self.seed.unwrap_or(c.seed);
        c.data_dir = self.data_dir.unwrap_or_else(|| c.data_dir.clone());
        c.run_dir = self.run_dir.unwrap_or_else(|| c.run_dir.clone());
    }
}

fn resolve(config: Option<&PathBuf>, flags: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    flags(&mut c);
    if let Some(path) = config {
        c.apply(ConfigFile::load(path)?);
    }
    c.apply_env(|k| std::env::var(k).ok());
    c.validate()?;
    Ok(c)
}

fn run(cli: Cli) -> Result<()> {
    let mut log = std::io::stderr();
    let config = cli.config.as_ref();
    match cli.command {
        Command::Generate(common) => {
            let c = resolve(config, |c| common.apply(c))?;
            for g in commands::generate(&c, &mut log)? {
                println!("{} {} {}", g.name, g.samples, g.digest);
            }
        }
        Command::Train {
            common,
            epochs,
            batch_size,
        } => {
            let c = resolve(config, |c| {
                common.apply(c);
                c.epochs = epochs.unwrap_or(c.epochs);
                c.batch_size = batch_size.unwrap_or(c.batch_size);
            })?;
            for t in commands::train(&c, &mut log)? {
                let loss = t.final_loss.map(|l| format!("{l:.6}")).unwrap_or_else(|| "-".into());
                println!("{} {} {}", t.name, loss, t.checkpoint_digest);
            }
        }
        Command::Eval { common, batch_size } => {
            let c = resolve(config, |c| {
                common.apply(c);
                c.batch_size = batch_size.unwrap_or(c.batch_size);
            })?;
            let reports = commands::eval(&c, &mut log)?;
            for r in &reports {
                println!("{} {:.4} {}", r.dataset, r.accuracy(), if r.passed { "PASS" } else { "FAIL" });
            }
            let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.dataset.as_str()).collect();
            if !failed.is_empty() {
                return Err(CliError::Acceptance(format!("below threshold: {}", failed.join(" "))));
            }
        }
        Command::Report {
            data_dir,
            run_dir,
            plot,
        } => {
            let c = resolve(config, |c| {
                c.data_dir = data_dir.unwrap_or_else(|| c.data_dir.clone());
                c.run_dir = run_dir.unwrap_or_else(|| c.run_dir.clone());
            })?;
            for sample in &plot {
                for path in summary::dump_plot(&c.data_dir, &c.run_dir.join("plots"), sample)? {
                    eprintln!("wrote {}", path.display());
                }
            }
            let result = summary::report(&c.run_dir);
            let summary = match &result {
                Ok(s) => Some(s.clone()),
                Err(_) => satjam_cli::runs::read_json(&c.run_dir.join("summary.json")).ok(),
            };
            if let Some(s) = summary {
                print!("{}", summary::render(&s));
            }
            result?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("satjam: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
