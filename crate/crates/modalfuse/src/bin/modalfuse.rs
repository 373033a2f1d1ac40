//! Command-line front end. All logic lives in the library; this binary
//! parses arguments, dispatches, and maps errors to exit codes.

use clap::{Parser, Subcommand, ValueEnum};
use modalfuse::data::Split;
use modalfuse::experiment::{
    run_embed, run_evaluate, run_generate_data, run_report, run_sparsify, run_sweep, run_train,
    ExperimentConfig,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "modalfuse", version, about = "Multimodal contrastive embedding toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(arg: SplitArg) -> Split {
        match arg {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Materialize the configured synthetic dataset as a manifest.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply modal sparsity and write the result as a new manifest.
    Sparsify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sparsity: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model, writing per-epoch checkpoints and loss records.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        sparsity: f64,
    },
    /// Export embeddings for one split from a checkpoint.
    Embed {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        sparsity: f64,
    },
    /// Compute retrieval, uniformity, and probe metrics from embeddings.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train_embeddings: PathBuf,
        #[arg(long)]
        test_embeddings: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        sparsity: f64,
        #[arg(long, default_value_t = 0)]
        epoch: usize,
    },
    /// Run the full mode x sparsity grid end to end.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate metric records into per-metric series and a summary.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> modalfuse::Result<()> {
    match command {
        Command::GenerateData { config, out } => {
            let config = ExperimentConfig::from_file(&config)?;
            let manifest = run_generate_data(&config, &out)?;
            println!("wrote manifest {}", manifest.display());
        }
        Command::Sparsify { config, sparsity, out } => {
            let config = ExperimentConfig::from_file(&config)?;
            let (manifest, report) = run_sparsify(&config, sparsity, &out)?;
            println!("wrote sparse manifest {}", manifest.display());
            println!(
                "requested {} removed {} retained {}",
                report.requested, report.removed_samples, report.retained_samples
            );
        }
        Command::Train { config, out, sparsity } => {
            let config = ExperimentConfig::from_file(&config)?;
            let artifacts = run_train(&config, sparsity, &out)?;
            println!(
                "selected epoch {} -> {}",
                artifacts.outcome.selected_epoch,
                artifacts.selected_checkpoint.display()
            );
            for epoch in &artifacts.outcome.curves {
                println!(
                    "epoch {:3}  train {}  test {}",
                    epoch.epoch,
                    epoch.train_loss.map_or("-".into(), |v| format!("{v:.6}")),
                    epoch.test_loss.map_or("-".into(), |v| format!("{v:.6}")),
                );
            }
        }
        Command::Embed { config, checkpoint, split, out, sparsity } => {
            let config = ExperimentConfig::from_file(&config)?;
            run_embed(&config, sparsity, &checkpoint, split.into(), &out)?;
            println!("wrote embeddings {}", out.display());
        }
        Command::Evaluate {
            config,
            train_embeddings,
            test_embeddings,
            records,
            sparsity,
            epoch,
        } => {
            let config = ExperimentConfig::from_file(&config)?;
            let written = run_evaluate(
                &config,
                sparsity,
                epoch,
                &train_embeddings,
                &test_embeddings,
                &records,
            )?;
            for record in &written {
                println!("{} = {:.6}", record.metric, record.value);
            }
            println!("appended {} records to {}", written.len(), records.display());
        }
        Command::Sweep { config, out } => {
            let config = ExperimentConfig::from_file(&config)?;
            let summary = run_sweep(&config, &out)?;
            println!(
                "completed {} cells, {} missing; records at {}",
                summary.completed,
                summary.missing.len(),
                summary.records_path.display()
            );
            for cell in &summary.missing {
                println!("missing {} s={}: {}", cell.mode, cell.sparsity, cell.error);
            }
        }
        Command::Report { records, out } => {
            let summary = run_report(&records, &out)?;
            print!("{summary}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
