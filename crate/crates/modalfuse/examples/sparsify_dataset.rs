//! Generates a synthetic multimodal dataset and applies the modal
//! sparsity procedure at increasing levels, printing what survives.

use modalfuse::data::{drop_modalities, measured_sparsity, synthetic_multimodal, SyntheticConfig};
use modalfuse::schema::{ModalityDecl, ModalitySchema};

fn main() -> modalfuse::Result<()> {
    let schema = ModalitySchema::new(vec![
        ModalityDecl::sequence("video", 4, 8),
        ModalityDecl::sequence("audio", 4, 6),
        ModalityDecl::tabular("clinical", 5),
    ])?;
    let config = SyntheticConfig { samples: 2000, latent_dim: 6, noise: 0.1, classes: 4 };
    let dataset = synthetic_multimodal(&schema, &config, 7)?;
    println!(
        "generated {} samples, measured sparsity {:.4}",
        dataset.samples.len(),
        measured_sparsity(&dataset)?
    );

    for s in [0.2, 0.4, 0.6, 0.8] {
        let (sparse, report) = drop_modalities(&dataset, s, 100)?;
        println!(
            "S={s}: pre-removal sparsity {:.3}, removed {} empty samples, retained {}, post sparsity {:.3}",
            report.pre_removal_sparsity,
            report.removed_samples,
            report.retained_samples,
            measured_sparsity(&sparse)?
        );
    }
    Ok(())
}
