//! Shows the EAO pass structure and inference-time fusion, including a
//! sample with missing modalities and a degenerate (zero-mean) case.

use modalfuse::data::{synthetic_multimodal, Split, SyntheticConfig};
use modalfuse::experiment::embed_split;
use modalfuse::model::{eao_inference_fusion, Model, ModelHyper};
use modalfuse::schema::{FusionMode, ModalityDecl, ModalitySchema};
use ndarray::{array, Array2};

fn main() -> modalfuse::Result<()> {
    let schema = ModalitySchema::new(vec![
        ModalityDecl::sequence("video", 3, 4),
        ModalityDecl::sequence("audio", 3, 4),
        ModalityDecl::tabular("clinical", 3),
    ])?;
    let hyper = ModelHyper {
        depth: 1,
        width: 16,
        heads: 2,
        ff_multiplier: 2,
        tokens_per_channel: 1,
        embed_dim: 8,
        temperature: 0.1,
    };
    let model = Model::new(schema.clone(), hyper, FusionMode::Eao, 4)?;
    println!(
        "EAO at M={}: {} embedding channels, {} forward passes per sample",
        schema.modality_count(),
        model.channels.len(),
        model.forward_pass_count()
    );
    for channel in &model.channels {
        println!("  subset {}", channel.label_named(&schema));
    }

    let mut dataset = synthetic_multimodal(
        &schema,
        &SyntheticConfig { samples: 8, latent_dim: 4, noise: 0.1, classes: 2 },
        6,
    )?;
    for sample in &mut dataset.samples {
        sample.split = Split::Test;
    }
    let set = embed_split(&model, &dataset, Split::Test)?;
    let sample = 0;
    let available: Vec<usize> = (0..set.channels())
        .filter(|&c| set.availability[sample][c])
        .collect();
    let stacked = Array2::from_shape_fn((available.len(), set.dim()), |(i, j)| {
        set.vectors[[sample, available[i], j]]
    });
    let fused = eao_inference_fusion(&stacked)?;
    println!(
        "sample 0 fuses {} available subsets; fused norm {:.6}",
        available.len(),
        fused.iter().map(|v| v * v).sum::<f64>().sqrt()
    );

    let antipodal = array![[1.0, 0.0], [-1.0, 0.0]];
    println!("antipodal pair fusion: {:?}", eao_inference_fusion(&antipodal));
    Ok(())
}
