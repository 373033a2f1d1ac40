//! Dataset model: samples with optional per-modality payloads, splits,
//! modal-sparsity degradation, and feature selection.

mod manifest;
mod synthetic;

pub use manifest::{load_manifest, save_manifest, Manifest, ManifestModality, TargetKind};
pub use synthetic::{synthetic_multimodal, SyntheticConfig};

use crate::error::{Error, Result};
use crate::masking::PresenceBitmap;
use crate::schema::{ModalityKind, ModalitySchema};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Raw data for one modality of one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// `[steps x dim]` sequence of raw vectors.
    Sequence(Array2<f64>),
    /// One value per declared column.
    Tabular(Vec<f64>),
}

/// Optional supervised targets attached to a sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Targets {
    pub regression: Option<f64>,
    pub class: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// One slot per modality; `Some` iff the presence bit is set.
    pub payloads: Vec<Option<Payload>>,
    pub presence: PresenceBitmap,
    pub targets: Targets,
    pub split: Split,
}

impl Sample {
    pub fn presence_count(&self) -> usize {
        self.presence.present_count()
    }
}

/// Where a dataset came from, echoed into outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { seed: u64 },
    Manifest { path: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: ModalitySchema,
    pub samples: Vec<Sample>,
    pub provenance: Provenance,
    /// Number of classes when classification targets exist.
    pub class_count: Option<usize>,
}

/// Bookkeeping from one [`drop_modalities`] application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub requested: f64,
    /// Fraction of dropped (sample, modality) slots before removal.
    pub pre_removal_sparsity: f64,
    pub removed_samples: usize,
    pub retained_samples: usize,
}

impl Dataset {
    /// Checks schema conformance, payload/presence agreement, and that every
    /// sample retains at least one modality.
    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let m = self.schema.modality_count();
        for sample in &self.samples {
            if sample.payloads.len() != m || sample.presence.len() != m {
                return Err(Error::InvalidInput(format!(
                    "sample `{}` has {} modality slots, schema declares {m}",
                    sample.id,
                    sample.payloads.len()
                )));
            }
            if !sample.presence.any() {
                return Err(Error::InvalidInput(format!(
                    "sample `{}` has no modalities present",
                    sample.id
                )));
            }
            for (i, (payload, decl)) in
                sample.payloads.iter().zip(&self.schema.modalities).enumerate()
            {
                match (payload, sample.presence.is_present(i)) {
                    (Some(_), false) | (None, true) => {
                        return Err(Error::InvalidInput(format!(
                            "sample `{}` modality `{}`: payload and presence disagree",
                            sample.id, decl.name
                        )));
                    }
                    (None, false) => continue,
                    (Some(p), true) => match (p, decl.kind) {
                        (Payload::Sequence(arr), ModalityKind::Sequence) => {
                            if arr.ncols() != decl.dim {
                                return Err(Error::Shape(format!(
                                    "sample `{}` modality `{}`: vectors have {} entries, schema declares {}",
                                    sample.id,
                                    decl.name,
                                    arr.ncols(),
                                    decl.dim
                                )));
                            }
                        }
                        (Payload::Tabular(row), ModalityKind::Tabular) => {
                            if row.len() != decl.dim {
                                return Err(Error::Shape(format!(
                                    "sample `{}` modality `{}`: {} values, schema declares {}",
                                    sample.id,
                                    decl.name,
                                    row.len(),
                                    decl.dim
                                )));
                            }
                        }
                        _ => {
                            return Err(Error::InvalidInput(format!(
                                "sample `{}` modality `{}`: payload kind mismatch",
                                sample.id, decl.name
                            )));
                        }
                    },
                }
            }
        }
        Ok(())
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Fraction of dropped modality slots: `1 - mean(M_i / M_T)`.
pub fn measured_sparsity(dataset: &Dataset) -> Result<f64> {
    if dataset.samples.is_empty() {
        return Err(Error::InvalidInput("measured_sparsity on an empty dataset".into()));
    }
    let m_t = dataset.schema.modality_count() as f64;
    let mean_present: f64 = dataset
        .samples
        .iter()
        .map(|s| s.presence_count() as f64 / m_t)
        .sum::<f64>()
        / dataset.samples.len() as f64;
    Ok(1.0 - mean_present)
}

/// Drops each (sample, modality) slot independently with probability
/// `sparsity`, then removes samples that lost every modality.
///
/// Run once up front so all later work sees the same degraded data. The
/// report carries the pre-removal measured sparsity for verification.
pub fn drop_modalities(
    dataset: &Dataset,
    sparsity: f64,
    seed: u64,
) -> Result<(Dataset, SparsityReport)> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::InvalidConfig(format!(
            "modal sparsity must lie in [0, 1), got {sparsity}"
        )));
    }
    if dataset.samples.iter().any(|s| !s.presence.all()) {
        return Err(Error::InvalidInput(
            "drop_modalities expects a fully modal dataset".into(),
        ));
    }
    let m = dataset.schema.modality_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::with_capacity(dataset.samples.len());
    let mut dropped_slots = 0usize;
    let mut removed = 0usize;
    for sample in &dataset.samples {
        let mut out = sample.clone();
        let mut bits = vec![true; m];
        for slot in 0..m {
            if rng.random::<f64>() < sparsity {
                bits[slot] = false;
                out.payloads[slot] = None;
                dropped_slots += 1;
            }
        }
        out.presence = PresenceBitmap::new(bits);
        if out.presence.any() {
            kept.push(out);
        } else {
            removed += 1;
        }
    }
    let total_slots = dataset.samples.len() * m;
    let report = SparsityReport {
        requested: sparsity,
        pre_removal_sparsity: dropped_slots as f64 / total_slots as f64,
        removed_samples: removed,
        retained_samples: kept.len(),
    };
    let out = Dataset {
        schema: dataset.schema.clone(),
        samples: kept,
        provenance: dataset.provenance.clone(),
        class_count: dataset.class_count,
    };
    Ok((out, report))
}

/// Tags each sample train or test: a seeded shuffle of sample positions,
/// with the first `floor(n * test_fraction)` positions becoming the test
/// split. Tags depend only on sample count, order, and seed.
pub fn split(dataset: &mut Dataset, test_fraction: f64, seed: u64) -> Result<()> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
        return Err(Error::InvalidConfig(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = dataset.samples.len();
    let test_size = (n as f64 * test_fraction).floor() as usize;
    if test_size == 0 || test_size == n {
        return Err(Error::InvalidConfig(format!(
            "split of {n} samples at fraction {test_fraction} leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    for (rank, &idx) in order.iter().enumerate() {
        dataset.samples[idx].split = if rank < test_size { Split::Test } else { Split::Train };
    }
    Ok(())
}

/// Indices of the `k` highest-variance columns, ties to the lower index.
pub fn select_top_variance(table: &Array2<f64>, k: usize) -> Result<Vec<usize>> {
    if k > table.ncols() {
        return Err(Error::InvalidConfig(format!(
            "cannot select {k} columns from {}",
            table.ncols()
        )));
    }
    let n = table.nrows() as f64;
    let mut ranked: Vec<(usize, f64)> = (0..table.ncols())
        .map(|j| {
            let col = table.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (j, var)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(k).map(|(j, _)| j).collect())
}

/// Per-column mean and standard deviation for tabular standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Train-split statistics for one tabular modality; zero-variance columns
/// get unit std so standardization stays finite.
pub fn column_stats(dataset: &Dataset, modality: usize) -> Result<ColumnStats> {
    let decl = &dataset.schema.modalities[modality];
    if decl.kind != ModalityKind::Tabular {
        return Err(Error::InvalidInput(format!(
            "column_stats on non-tabular modality `{}`",
            decl.name
        )));
    }
    let cols = decl.dim;
    let mut sum = vec![0.0; cols];
    let mut sum_sq = vec![0.0; cols];
    let mut count = 0usize;
    for sample in &dataset.samples {
        if sample.split != Split::Train || !sample.presence.is_present(modality) {
            continue;
        }
        if let Some(Payload::Tabular(row)) = &sample.payloads[modality] {
            for (j, &v) in row.iter().enumerate() {
                sum[j] += v;
                sum_sq[j] += v * v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput(format!(
            "no train samples carry tabular modality `{}`",
            decl.name
        )));
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| {
            let var = (sq / n - m * m).max(0.0);
            if var == 0.0 {
                1.0
            } else {
                var.sqrt()
            }
        })
        .collect();
    Ok(ColumnStats { mean, std })
}

/// Applies precomputed z-score standardization to every present payload of
/// one tabular modality.
pub fn standardize_tabular(dataset: &mut Dataset, modality: usize, stats: &ColumnStats) {
    for sample in &mut dataset.samples {
        if let Some(Payload::Tabular(row)) = &mut sample.payloads[modality] {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - stats.mean[j]) / stats.std[j];
            }
        }
    }
}
