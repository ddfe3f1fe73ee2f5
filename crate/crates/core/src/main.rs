use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use nxkt::eval::{ConfigLabel, KnowledgeSubset};
use nxkt::runner::commands;
use nxkt::runner::{LoadedConfig, Outcome};

/// Knowledge-transfer experiments for multiple-choice science QA.
#[derive(Debug, Parser)]
#[command(name = "nxkt", version)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, short, global = true, default_value = "experiment.toml")]
    config: PathBuf,

    /// Override a configuration field, e.g. `--set stages.knowledge.epochs=3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Learning rate for every training stage.
    #[arg(long, global = true)]
    lr: Option<f64>,

    /// Batch size for every training stage.
    #[arg(long, global = true)]
    batch_size: Option<usize>,

    /// Epochs for every training stage.
    #[arg(long, global = true)]
    epochs: Option<usize>,

    /// Comma-separated run seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    /// Rerun even when the manifest says outputs are current.
    #[arg(long, global = true)]
    force: bool,

    /// More logging (-v info, -vv debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse the explanation tables into a normalized knowledge base.
    Ingest,
    /// Count questions per dataset and split.
    Stats,
    /// Build completion, cloze and fine-tuning pairs plus the vocabulary.
    Gen,
    /// Train every stage the configured label asks for, once per seed.
    Train,
    /// Evaluate the trained models on dev and test splits.
    Eval,
    /// Answer every question with the BM25 retrieval solver.
    Baseline,
    /// Train and evaluate the knowledge-category ablation grid.
    Ablate {
        /// Cells to run concurrently in child processes.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Write gnuplot data and a script for the training curves.
    Report,
    /// Run ingest, stats, gen, train, eval and baseline in order.
    All,
    /// Write the synthetic corpus and a matching configuration.
    Synth {
        /// Destination directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = nxkt::synth::DEFAULT_SEED)]
        seed: u64,
        /// `output_dir` written into the generated configuration.
        #[arg(long, default_value = "out/synthetic")]
        output_dir: String,
    },
    /// One ablation cell (used by `ablate --jobs`).
    #[command(hide = true)]
    Cell {
        #[arg(long)]
        subset: String,
        #[arg(long)]
        label: String,
    },
}

impl Cli {
    fn all_overrides(&self) -> Vec<String> {
        let mut o = Vec::new();
        for stage in ["knowledge", "cloze", "finetune"] {
            if let Some(lr) = self.lr {
                o.push(format!("stages.{stage}.learning_rate={lr:e}"));
            }
            if let Some(b) = self.batch_size {
                o.push(format!("stages.{stage}.batch_size={b}"));
            }
            if let Some(e) = self.epochs {
                o.push(format!("stages.{stage}.epochs={e}"));
            }
        }
        if let Some(seeds) = &self.seeds {
            let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
            o.push(format!("seeds=[{}]", list.join(",")));
        }
        o.extend(self.overrides.iter().cloned());
        o
    }

    fn load_config(&self) -> Result<LoadedConfig> {
        if !self.config.is_file() {
            bail!(
                "configuration file {} not found (pass --config, or create one with `nxkt synth --out DIR`)",
                self.config.display()
            );
        }
        LoadedConfig::from_file(&self.config, &self.all_overrides())
            .with_context(|| format!("loading {}", self.config.display()))
    }
}

fn print(outcome: &Outcome) {
    print!("{}", outcome.summary);
    if !outcome.summary.ends_with('\n') {
        println!();
    }
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Synth { out, seed, output_dir } = &cli.command {
        print(&commands::synth(out, *seed, output_dir)?);
        return Ok(());
    }

    let cfg = cli.load_config()?;
    let force = cli.force;
    let outcome = match &cli.command {
        Command::Ingest => commands::ingest(&cfg, force)?,
        Command::Stats => commands::stats(&cfg, force)?,
        Command::Gen => commands::gen(&cfg, force)?,
        Command::Train => commands::train(&cfg, force)?,
        Command::Eval => commands::eval(&cfg, force)?,
        Command::Baseline => commands::baseline(&cfg, force)?,
        Command::Ablate { jobs } => {
            if *jobs == 0 {
                bail!("--jobs must be at least 1");
            }
            commands::ablate(&cfg, *jobs, force)?
        }
        Command::Report => commands::report(&cfg, force)?,
        Command::All => {
            let steps: [(&str, fn(&LoadedConfig, bool) -> nxkt::Result<Outcome>); 6] = [
                ("ingest", commands::ingest),
                ("stats", commands::stats),
                ("gen", commands::gen),
                ("train", commands::train),
                ("eval", commands::eval),
                ("baseline", commands::baseline),
            ];
            for (name, step) in steps {
                println!("== {name}");
                print(&step(&cfg, force).with_context(|| format!("step `{name}`"))?);
            }
            return Ok(());
        }
        Command::Cell { subset, label } => {
            let subset: KnowledgeSubset = subset.parse()?;
            let label: ConfigLabel = label.parse()?;
            commands::run_cell(&cfg, subset, label, force)?;
            return Ok(());
        }
        Command::Synth { .. } => unreachable!("handled above"),
    };
    print(&outcome);
    Ok(())
}
