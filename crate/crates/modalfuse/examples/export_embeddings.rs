//! Saves a trained model to the checkpoint format, reloads it, exports
//! embeddings for the test split, and reads them back.

use modalfuse::checkpoint::load_checkpoint;
use modalfuse::data::{split, synthetic_multimodal, Split, SyntheticConfig};
use modalfuse::embedfile::{read_embeddings, write_embeddings};
use modalfuse::experiment::embed_split;
use modalfuse::model::{Model, ModelHyper};
use modalfuse::schema::{FusionMode, ModalityDecl, ModalitySchema};
use modalfuse::train::{train, TrainingConfig};

fn main() -> modalfuse::Result<()> {
    let schema = ModalitySchema::new(vec![
        ModalityDecl::sequence("audio", 4, 6),
        ModalityDecl::tabular("sensors", 4),
    ])?;
    let mut dataset = synthetic_multimodal(
        &schema,
        &SyntheticConfig { samples: 96, latent_dim: 4, noise: 0.1, classes: 3 },
        3,
    )?;
    split(&mut dataset, 0.25, 5)?;

    let hyper = ModelHyper {
        depth: 1,
        width: 16,
        heads: 2,
        ff_multiplier: 2,
        tokens_per_channel: 1,
        embed_dim: 8,
        temperature: 0.1,
    };
    let mut model = Model::new(schema.clone(), hyper.clone(), FusionMode::Zorro, 23)?;
    let dir = std::env::temp_dir().join("modalfuse_export_example");
    std::fs::create_dir_all(&dir)?;
    let config = TrainingConfig { batch: 16, max_lr: 2e-3, warmup_steps: 5, epochs: 2, seed: 23 };
    let outcome = train(&mut model, &dataset, &config, Some(&dir), "{}")?;
    let checkpoint_path = outcome.checkpoints.last().unwrap();
    println!("checkpoint: {}", checkpoint_path.display());

    let checkpoint = load_checkpoint(checkpoint_path)?;
    let reloaded = Model::from_params(schema, hyper, FusionMode::Zorro, checkpoint.params)?;
    let embeddings = embed_split(&reloaded, &dataset, Split::Test)?;

    let out = dir.join("test.mfl");
    write_embeddings(&out, &embeddings)?;
    let back = read_embeddings(&out)?;
    println!(
        "wrote and re-read {}: {} samples x {} channels x {} dims",
        out.display(),
        back.samples(),
        back.channels(),
        back.dim()
    );
    let available = back.availability.iter().flatten().filter(|a| **a).count();
    println!("{available} sample-channel slots available");
    Ok(())
}
