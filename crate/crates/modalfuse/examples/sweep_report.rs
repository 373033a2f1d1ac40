//! Runs a miniature mode x sparsity sweep end to end and prints the
//! aggregated report. Takes a minute or two on one CPU.

use modalfuse::data::SyntheticConfig;
use modalfuse::experiment::{run_report, run_sweep, DataSource, ExperimentConfig};
use modalfuse::model::ModelHyper;
use modalfuse::schema::{FusionMode, ModalityDecl, ModalitySchema};
use modalfuse::train::TrainingConfig;

fn main() -> modalfuse::Result<()> {
    let config = ExperimentConfig {
        mode: FusionMode::Mca,
        schema: ModalitySchema::new(vec![
            ModalityDecl::sequence("audio", 4, 6),
            ModalityDecl::sequence("text", 3, 5),
            ModalityDecl::tabular("sensors", 4),
        ])?,
        model: ModelHyper {
            depth: 1,
            width: 16,
            heads: 2,
            ff_multiplier: 2,
            tokens_per_channel: 1,
            embed_dim: 8,
            temperature: 0.07,
        },
        training: TrainingConfig { batch: 32, max_lr: 3e-3, warmup_steps: 8, epochs: 3, seed: 19 },
        data: DataSource::Synthetic(SyntheticConfig {
            samples: 240,
            latent_dim: 5,
            noise: 0.08,
            classes: 3,
        }),
        sparsity: vec![0.0, 0.4, 0.8],
        split_fraction: 0.2,
    };

    let dir = std::env::temp_dir().join("modalfuse_sweep_example");
    let _ = std::fs::remove_dir_all(&dir);
    let summary = run_sweep(&config, &dir)?;
    println!(
        "{} cells completed, {} missing; records at {}",
        summary.completed,
        summary.missing.len(),
        summary.records_path.display()
    );
    for cell in &summary.missing {
        println!("  missing {} s={}: {}", cell.mode, cell.sparsity, cell.error);
    }
    let report = run_report(&summary.records_path, &dir.join("report"))?;
    print!("{report}");
    println!("series files under {}", dir.join("report").join("series").display());
    Ok(())
}
