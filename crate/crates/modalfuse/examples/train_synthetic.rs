//! Trains a small MCA model on synthetic data and prints the loss curve.
//! Swap the mode to `zorro` or `eao` to compare fusion strategies.

use modalfuse::data::{split, synthetic_multimodal, SyntheticConfig};
use modalfuse::model::{Model, ModelHyper};
use modalfuse::schema::{FusionMode, ModalityDecl, ModalitySchema};
use modalfuse::train::{train, TrainingConfig};

fn main() -> modalfuse::Result<()> {
    let schema = ModalitySchema::new(vec![
        ModalityDecl::sequence("audio", 6, 8),
        ModalityDecl::sequence("text", 4, 6),
        ModalityDecl::tabular("sensors", 5),
    ])?;
    let mut dataset = synthetic_multimodal(
        &schema,
        &SyntheticConfig { samples: 320, latent_dim: 6, noise: 0.08, classes: 4 },
        11,
    )?;
    split(&mut dataset, 0.2, 13)?;

    let hyper = ModelHyper {
        depth: 1,
        width: 32,
        heads: 2,
        ff_multiplier: 2,
        tokens_per_channel: 1,
        embed_dim: 16,
        temperature: 0.07,
    };
    let mut model = Model::new(schema, hyper, FusionMode::Mca, 17)?;
    println!("{} with {} parameters", model.mode, model.parameter_count());

    let config = TrainingConfig { batch: 32, max_lr: 3e-3, warmup_steps: 10, epochs: 6, seed: 17 };
    let outcome = train(&mut model, &dataset, &config, None, "{}")?;
    for epoch in &outcome.curves {
        println!(
            "epoch {:2}  train {}  test {}",
            epoch.epoch,
            epoch.train_loss.map_or("     -".into(), |v| format!("{v:.4}")),
            epoch.test_loss.map_or("     -".into(), |v| format!("{v:.4}")),
        );
    }
    println!("selected epoch {}", outcome.selected_epoch);
    Ok(())
}
