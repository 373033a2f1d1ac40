//! Central finite differences against the tape's analytic gradients for
//! a few parameter blocks of a tiny model.

use modalfuse::autodiff::Graph;
use modalfuse::contrastive::contrastive_loss;
use modalfuse::data::{synthetic_multimodal, SyntheticConfig};
use modalfuse::model::{Model, ModelHyper};
use modalfuse::schema::{FusionMode, ModalityDecl, ModalitySchema};
use ndarray::Array2;

fn loss_of(model: &Model, samples: &[&modalfuse::data::Sample]) -> modalfuse::Result<f64> {
    let mut graph = Graph::new();
    let bound = model.bind(&mut graph);
    let batch = model.embed_batch(&mut graph, &bound, samples)?;
    let (node, _) =
        contrastive_loss(&mut graph, &batch, &model.channels, model.hyper.temperature)?;
    Ok(graph.value(node.expect("loss"))[[0, 0]])
}

fn main() -> modalfuse::Result<()> {
    let schema = ModalitySchema::new(vec![
        ModalityDecl::sequence("a", 2, 3),
        ModalityDecl::tabular("b", 2),
    ])?;
    let hyper = ModelHyper {
        depth: 1,
        width: 8,
        heads: 2,
        ff_multiplier: 2,
        tokens_per_channel: 1,
        embed_dim: 4,
        temperature: 0.2,
    };
    let mut model = Model::new(schema.clone(), hyper, FusionMode::Mca, 12)?;
    let dataset = synthetic_multimodal(
        &schema,
        &SyntheticConfig { samples: 4, latent_dim: 3, noise: 0.2, classes: 2 },
        9,
    )?;
    let refs: Vec<&modalfuse::data::Sample> = dataset.samples.iter().collect();

    let analytic = {
        let mut graph = Graph::new();
        let bound = model.bind(&mut graph);
        let batch = model.embed_batch(&mut graph, &bound, &refs)?;
        let (node, _) =
            contrastive_loss(&mut graph, &batch, &model.channels, model.hyper.temperature)?;
        let grads = graph.backward(node.expect("loss"));
        bound.collect_grads(&model.params, &grads)
    };

    let h = 1e-5;
    for name in ["fusion.tokens", "pool.q", "l0.attn.wq", "enc0.lin.w", "head.w"] {
        let grad = analytic.iter().find(|(n, _)| n == name).expect("block").1.clone();
        let (rows, cols) = grad.dim();
        let mut fd = Array2::zeros((rows, cols));
        for r in 0..rows {
            for c in 0..cols {
                let original = model.params.get(name)[[r, c]];
                model.params.get_mut(name)[[r, c]] = original + h;
                let plus = loss_of(&model, &refs)?;
                model.params.get_mut(name)[[r, c]] = original - h;
                let minus = loss_of(&model, &refs)?;
                model.params.get_mut(name)[[r, c]] = original;
                fd[[r, c]] = (plus - minus) / (2.0 * h);
            }
        }
        let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = norm(&(&fd - &grad)) / norm(&fd).max(norm(&grad)).max(1e-12);
        println!("{name:>14}: {rows}x{cols}, relative error {rel:.2e}");
    }
    Ok(())
}
