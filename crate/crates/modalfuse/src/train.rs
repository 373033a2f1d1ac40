//! Training loop: Adam under linear warmup then cosine decay to zero,
//! per-epoch mean train and test contrastive loss, a checkpoint per epoch,
//! and test-loss epoch selection. Epoch 0 is the initial state evaluated
//! before any update.

use crate::checkpoint::save_checkpoint;
use crate::contrastive::contrastive_loss;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::Adam;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

fn default_batch() -> usize {
    32
}
fn default_max_lr() -> f64 {
    1e-4
}
fn default_warmup() -> usize {
    2000
}
fn default_epochs() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_max_lr")]
    pub max_lr: f64,
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch: default_batch(),
            max_lr: default_max_lr(),
            warmup_steps: default_warmup(),
            epochs: default_epochs(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::InvalidConfig(format!(
                "batch must be >= 2 for contrastive pairs, got {}",
                self.batch
            )));
        }
        if !self.max_lr.is_finite() || self.max_lr <= 0.0 {
            return Err(Error::InvalidConfig(format!("max_lr must be positive, got {}", self.max_lr)));
        }
        Ok(())
    }
}

/// Linear warmup to `max_lr` over `warmup` steps, then cosine decay
/// reaching exactly zero at the last of `total` steps.
pub fn lr_at(step: usize, total: usize, warmup: usize, max_lr: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    if warmup > 0 && step < warmup {
        return max_lr * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(1).saturating_sub(warmup).max(1);
    let progress = (step.saturating_sub(warmup)).min(span) as f64 / span as f64;
    max_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the batch losses seen during the epoch; the initial epoch
    /// evaluates without updates. `None` when every batch was skipped.
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub curves: Vec<EpochRecord>,
    pub selected_epoch: usize,
    /// One per recorded epoch, parallel to `curves`, when a checkpoint
    /// directory was given.
    pub checkpoints: Vec<PathBuf>,
}

/// Epoch with the lowest test loss, earliest on ties; epochs without a
/// test loss are passed over.
pub fn select_epoch(curves: &[EpochRecord]) -> usize {
    let mut best = 0;
    let mut best_loss = f64::INFINITY;
    for record in curves {
        if let Some(loss) = record.test_loss {
            if loss < best_loss {
                best_loss = loss;
                best = record.epoch;
            }
        }
    }
    best
}

fn mean_of(losses: &[f64]) -> Option<f64> {
    if losses.is_empty() {
        None
    } else {
        Some(losses.iter().sum::<f64>() / losses.len() as f64)
    }
}

/// Mean contrastive loss over a split without updating parameters.
pub fn eval_loss(model: &Model, dataset: &Dataset, split: Split, batch: usize) -> Result<Option<f64>> {
    let indices = dataset.indices_of(split);
    let mut batch_losses = Vec::new();
    for chunk in indices.chunks(batch.max(2)) {
        let samples: Vec<&crate::data::Sample> =
            chunk.iter().map(|&i| &dataset.samples[i]).collect();
        let mut graph = crate::autodiff::Graph::new();
        let bound = model.bind(&mut graph);
        let embedded = model.embed_batch(&mut graph, &bound, &samples)?;
        let (_, report) =
            contrastive_loss(&mut graph, &embedded, &model.channels, model.hyper.temperature)?;
        if let Some(total) = report.total {
            if !total.is_finite() {
                return Err(Error::Numeric {
                    layer: model.hyper.depth,
                    detail: "non-finite contrastive loss".into(),
                });
            }
            batch_losses.push(total);
        }
    }
    Ok(mean_of(&batch_losses))
}

/// Runs the full loop. Checkpoints are written per epoch into
/// `checkpoint_dir` when given; on numeric failure the error is returned
/// and every checkpoint written so far stays on disk.
pub fn train(
    model: &mut Model,
    dataset: &Dataset,
    config: &TrainingConfig,
    checkpoint_dir: Option<&Path>,
    config_json: &str,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_indices = dataset.indices_of(Split::Train);
    if train_indices.is_empty() {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    let batches_per_epoch = train_indices.len().div_ceil(config.batch);
    let total_steps = config.epochs * batches_per_epoch;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::standard();
    let mut curves = Vec::with_capacity(config.epochs + 1);
    let mut checkpoints = Vec::new();
    let mut step = 0usize;

    let write_epoch = |model: &mut Model, epoch: usize, checkpoints: &mut Vec<PathBuf>| -> Result<()> {
        if let Some(dir) = checkpoint_dir {
            let path = dir.join(format!("epoch_{epoch:03}.ckpt"));
            save_checkpoint(&path, config_json, config.seed, &model.params)?;
            model.params.quantize_f32();
            checkpoints.push(path);
        }
        Ok(())
    };

    write_epoch(model, 0, &mut checkpoints)?;
    curves.push(EpochRecord {
        epoch: 0,
        train_loss: eval_loss(model, dataset, Split::Train, config.batch)?,
        test_loss: eval_loss(model, dataset, Split::Test, config.batch)?,
    });

    for epoch in 1..=config.epochs {
        let mut order = train_indices.clone();
        order.shuffle(&mut shuffle_rng);
        let mut batch_losses = Vec::with_capacity(batches_per_epoch);
        for chunk in order.chunks(config.batch) {
            let lr = lr_at(step, total_steps, config.warmup_steps, config.max_lr);
            step += 1;
            let samples: Vec<&crate::data::Sample> =
                chunk.iter().map(|&i| &dataset.samples[i]).collect();
            let mut graph = crate::autodiff::Graph::new();
            let bound = model.bind(&mut graph);
            let embedded = model.embed_batch(&mut graph, &bound, &samples)?;
            let (node, report) = contrastive_loss(
                &mut graph,
                &embedded,
                &model.channels,
                model.hyper.temperature,
            )?;
            let Some(node) = node else { continue };
            let total = report.total.expect("loss value for loss node");
            if !total.is_finite() {
                return Err(Error::Numeric {
                    layer: model.hyper.depth,
                    detail: "non-finite contrastive loss".into(),
                });
            }
            batch_losses.push(total);
            let grads = graph.backward(node);
            let named = bound.collect_grads(&model.params, &grads);
            adam.apply(&mut model.params, &named, lr);
            model.params.check_finite().map_err(|_| Error::Numeric {
                layer: model.hyper.depth,
                detail: "non-finite parameters after update".into(),
            })?;
        }
        write_epoch(model, epoch, &mut checkpoints)?;
        curves.push(EpochRecord {
            epoch,
            train_loss: mean_of(&batch_losses),
            test_loss: eval_loss(model, dataset, Split::Test, config.batch)?,
        });
    }

    let selected_epoch = select_epoch(&curves);
    Ok(TrainOutcome { curves, selected_epoch, checkpoints })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, synthetic_multimodal, SyntheticConfig};
    use crate::model::ModelHyper;
    use crate::schema::{FusionMode, ModalityDecl, ModalitySchema};

    fn schema() -> ModalitySchema {
        ModalitySchema::new(vec![
            ModalityDecl::sequence("sa", 3, 2),
            ModalityDecl::tabular("ta", 2),
        ])
        .unwrap()
    }

    fn tiny_dataset(samples: usize) -> Dataset {
        let config = SyntheticConfig {
            samples,
            latent_dim: 3,
            noise: 0.05,
            classes: 3,
        };
        let mut data = synthetic_multimodal(&schema(), &config, 77).unwrap();
        split(&mut data, 0.25, 5).unwrap();
        data
    }

    fn tiny_model(mode: FusionMode) -> Model {
        let hyper = ModelHyper {
            depth: 1,
            width: 8,
            heads: 2,
            ff_multiplier: 2,
            tokens_per_channel: 1,
            embed_dim: 4,
            temperature: 0.3,
        };
        Model::new(schema(), hyper, mode, 123).unwrap()
    }

    #[test]
    fn schedule_shape() {
        let max = 1e-3;
        let total = 200;
        let warmup = 50;
        assert!((lr_at(0, total, warmup, max) - max / 50.0).abs() < 1e-18);
        assert!((lr_at(49, total, warmup, max) - max).abs() < 1e-18);
        assert!((lr_at(warmup, total, warmup, max) - max).abs() < 1e-18);
        assert_eq!(lr_at(total - 1, total, warmup, max), 0.0);
        // Midpoint of the decay span lands at half the peak.
        let mid = warmup + (total - 1 - warmup) / 2;
        let span = (total - 1 - warmup) as f64;
        let expect = max * 0.5
            * (1.0 + (std::f64::consts::PI * (mid - warmup) as f64 / span).cos());
        assert!((lr_at(mid, total, warmup, max) - expect).abs() < 1e-18);
        for s in 1..total {
            assert!(lr_at(s, total, warmup, max) <= lr_at(s - 1, total, warmup, max) + 1e-15 || s < warmup);
        }
        // No warmup: starts at the peak.
        assert_eq!(lr_at(0, 100, 0, max), max);
    }

    #[test]
    fn epoch_selection_rules() {
        let mk = |pairs: &[(usize, f64)]| -> Vec<EpochRecord> {
            pairs
                .iter()
                .map(|&(epoch, loss)| EpochRecord {
                    epoch,
                    train_loss: None,
                    test_loss: Some(loss),
                })
                .collect()
        };
        assert_eq!(select_epoch(&mk(&[(0, 3.0), (1, 2.0), (2, 1.0)])), 2);
        assert_eq!(select_epoch(&mk(&[(0, 3.0), (1, 2.0), (2, 1.0), (3, 1.5), (4, 2.5)])), 2);
        assert_eq!(select_epoch(&mk(&[(0, 2.0), (1, 1.0), (2, 1.0), (3, 1.0)])), 1);
        assert_eq!(select_epoch(&[]), 0);
    }

    #[test]
    fn zero_epochs_emit_initial_record_only() {
        let dataset = tiny_dataset(12);
        let mut model = tiny_model(FusionMode::Zorro);
        let config = TrainingConfig {
            batch: 4,
            epochs: 0,
            warmup_steps: 2,
            max_lr: 1e-3,
            seed: 1,
        };
        let outcome = train(&mut model, &dataset, &config, None, "{}").unwrap();
        assert_eq!(outcome.curves.len(), 1);
        assert_eq!(outcome.curves[0].epoch, 0);
        assert!(outcome.curves[0].train_loss.is_some());
        assert!(outcome.curves[0].test_loss.is_some());
        assert_eq!(outcome.selected_epoch, 0);
    }

    #[test]
    fn loss_decreases_on_tiny_run() {
        let dataset = tiny_dataset(24);
        let mut model = tiny_model(FusionMode::Mca);
        let config = TrainingConfig {
            batch: 6,
            epochs: 4,
            warmup_steps: 4,
            max_lr: 3e-3,
            seed: 2,
        };
        let outcome = train(&mut model, &dataset, &config, None, "{}").unwrap();
        assert_eq!(outcome.curves.len(), 5);
        let first = outcome.curves[0].train_loss.unwrap();
        let last = outcome.curves[4].train_loss.unwrap();
        assert!(last < first, "train loss {first} -> {last}");
    }

    #[test]
    fn training_is_deterministic() {
        let dataset = tiny_dataset(16);
        let config = TrainingConfig {
            batch: 4,
            epochs: 2,
            warmup_steps: 3,
            max_lr: 1e-3,
            seed: 3,
        };
        let run = || {
            let mut model = tiny_model(FusionMode::Eao);
            let outcome = train(&mut model, &dataset, &config, None, "{}").unwrap();
            (outcome
                .curves
                .iter()
                .map(|r| (r.train_loss, r.test_loss))
                .collect::<Vec<_>>(),)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoints_written_per_epoch_and_canonical() {
        let dataset = tiny_dataset(10);
        let mut model = tiny_model(FusionMode::Zorro);
        let dir = tempfile::tempdir().unwrap();
        let config = TrainingConfig {
            batch: 4,
            epochs: 2,
            warmup_steps: 2,
            max_lr: 1e-3,
            seed: 4,
        };
        let outcome =
            train(&mut model, &dataset, &config, Some(dir.path()), "{\"k\":1}").unwrap();
        assert_eq!(outcome.checkpoints.len(), 3);
        for (epoch, path) in outcome.checkpoints.iter().enumerate() {
            assert!(path.ends_with(format!("epoch_{epoch:03}.ckpt")));
            assert!(path.exists());
        }
        // In-memory parameters equal the last checkpoint exactly: the
        // file is canonical after quantization.
        let last = crate::checkpoint::load_checkpoint(&outcome.checkpoints[2]).unwrap();
        for (name, tensor) in model.params.iter() {
            assert_eq!(last.params.get(name), tensor, "{name}");
        }
        assert_eq!(last.config_json, "{\"k\":1}");
    }

    #[test]
    fn poisoned_parameters_abort_with_checkpoints_retained() {
        let dataset = tiny_dataset(10);
        let mut model = tiny_model(FusionMode::Zorro);
        *model
            .params
            .get_mut("head.w")
            .get_mut((0, 0))
            .unwrap() = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        let config = TrainingConfig {
            batch: 4,
            epochs: 2,
            warmup_steps: 2,
            max_lr: 1e-3,
            seed: 5,
        };
        let err = train(&mut model, &dataset, &config, Some(dir.path()), "{}").unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
        assert_eq!(err.exit_code(), 3);
        // The initial checkpoint was written before the failure surfaced.
        assert!(dir.path().join("epoch_000.ckpt").exists());
    }

    #[test]
    fn rejects_degenerate_config() {
        let config = TrainingConfig { batch: 1, ..Default::default() };
        assert!(config.validate().is_err());
        let config = TrainingConfig { max_lr: 0.0, ..Default::default() };
        assert!(config.validate().is_err());
    }
}
