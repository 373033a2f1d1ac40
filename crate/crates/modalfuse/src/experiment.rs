//! Experiment runner: config parsing and echo, dataset preparation with
//! modal sparsity, training with per-epoch records, embedding export,
//! evaluation (uniformity, alignment, retrieval against the all-modality
//! fusion channel, linear probes), the sparsity sweep grid, and series
//! reports. The CLI binary is a thin wrapper over these functions.

use crate::checkpoint::{diff_configs, load_checkpoint, Checkpoint};
use crate::data::{
    column_stats, drop_modalities, load_manifest, measured_sparsity, save_manifest, split,
    standardize_tabular, synthetic_multimodal, Dataset, Sample, Split, SparsityReport,
    SyntheticConfig,
};
use crate::embedfile::{read_embeddings, write_embeddings, EmbeddingSet};
use crate::error::{Error, Result};
use crate::masking::ChannelSet;
use crate::metrics::{
    alignment, log_uniformity, median_rank, ranks_from_similarity, recall_at_k,
    similarity_matrix, uniformity,
};
use crate::model::{eao_inference_fusion, Model, ModelHyper};
use crate::probe::{
    eval_classification, eval_regression, fit_probe, ProbeHyper, ProbeTargets, TargetScaler,
};
use crate::schema::{FusionMode, ModalityKind, ModalitySchema};
use crate::train::{train, TrainOutcome, TrainingConfig};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Seed derivation offsets so every stage is deterministic from one seed
/// and the dataset is identical across fusion modes.
const SEED_DROP: u64 = 1;
const SEED_SPLIT: u64 = 2;
const SEED_MODEL: u64 = 3;

fn default_sparsity_list() -> Vec<f64> {
    vec![0.0, 0.2, 0.4, 0.6, 0.8]
}

fn default_split_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Manifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: FusionMode,
    pub schema: ModalitySchema,
    #[serde(default)]
    pub model: ModelHyper,
    #[serde(default)]
    pub training: TrainingConfig,
    pub data: DataSource,
    #[serde(default = "default_sparsity_list")]
    pub sparsity: Vec<f64>,
    #[serde(default = "default_split_fraction")]
    pub split_fraction: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        self.model.clone().normalized()?;
        self.training.validate()?;
        if !(0.0..1.0).contains(&self.split_fraction) || self.split_fraction == 0.0 {
            return Err(Error::InvalidConfig(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        for &s in &self.sparsity {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::InvalidConfig(format!(
                    "sparsity values must lie in [0, 1), got {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read `{}`: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Model hyperparameters with derived defaults filled in.
    pub fn hyper(&self) -> ModelHyper {
        self.model.clone().normalized().expect("validated config")
    }
}

/// Full config echo for checkpoints and outputs, extended with the
/// sparsity this run actually used.
pub fn effective_config_json(config: &ExperimentConfig, run_sparsity: f64) -> Result<String> {
    let mut value = serde_json::to_value(config)
        .map_err(|e| Error::Parse(format!("config echo: {e}")))?;
    value
        .as_object_mut()
        .expect("config serializes to an object")
        .insert("run_sparsity".into(), serde_json::json!(run_sparsity));
    serde_json::to_string_pretty(&value).map_err(|e| Error::Parse(format!("config echo: {e}")))
}

pub fn run_id(config: &ExperimentConfig, run_sparsity: f64) -> String {
    format!(
        "{}-s{}-seed{}",
        config.mode.label(),
        run_sparsity,
        config.training.seed
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    pub mode: String,
    pub sparsity: f64,
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

pub fn append_records(path: &Path, records: &[MetricRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Parse(format!("metric record: {e}")))?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Load(format!("cannot read `{}`: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            serde_json::from_str(line).map_err(|e| Error::Parse(format!("metric record: {e}")))
        })
        .collect()
}

/// Builds the run's dataset: load or synthesize, apply modal sparsity,
/// split, and z-score tabular modalities from train-split statistics.
pub fn prepare_dataset(
    config: &ExperimentConfig,
    run_sparsity: f64,
) -> Result<(Dataset, Option<SparsityReport>)> {
    let mut dataset = match &config.data {
        DataSource::Synthetic(synth) => {
            synthetic_multimodal(&config.schema, synth, config.training.seed)?
        }
        DataSource::Manifest(path) => {
            let dataset = load_manifest(path)?;
            if dataset.schema != config.schema {
                return Err(Error::ConfigMismatch(vec![format!(
                    "schema: config declares {:?}, manifest {} declares {:?}",
                    config.schema.modalities.iter().map(|m| &m.name).collect::<Vec<_>>(),
                    path.display(),
                    dataset.schema.modalities.iter().map(|m| &m.name).collect::<Vec<_>>()
                )]));
            }
            dataset
        }
    };
    let report = if run_sparsity > 0.0 {
        let (sparse, report) =
            drop_modalities(&dataset, run_sparsity, config.training.seed.wrapping_add(SEED_DROP))?;
        dataset = sparse;
        Some(report)
    } else {
        None
    };
    split(
        &mut dataset,
        config.split_fraction,
        config.training.seed.wrapping_add(SEED_SPLIT),
    )?;
    for m in 0..dataset.schema.modality_count() {
        if dataset.schema.modalities[m].kind == ModalityKind::Tabular {
            let stats = column_stats(&dataset, m)?;
            standardize_tabular(&mut dataset, m, &stats);
        }
    }
    Ok((dataset, report))
}

pub fn build_model(config: &ExperimentConfig) -> Result<Model> {
    Model::new(
        config.schema.clone(),
        config.hyper(),
        config.mode,
        config.training.seed.wrapping_add(SEED_MODEL),
    )
}

/// Embeds one split in inference mode, chunked so no graph outlives its
/// batch. Row order is the dataset order restricted to the split.
pub fn embed_split(model: &Model, dataset: &Dataset, which: Split) -> Result<EmbeddingSet> {
    let indices = dataset.indices_of(which);
    let channels = model.channels.len();
    let dim = model.hyper.embed_dim;
    let mut vectors = Array3::zeros((indices.len(), channels, dim));
    let mut availability = vec![vec![false; channels]; indices.len()];
    for (chunk_start, chunk) in indices.chunks(32).enumerate().map(|(i, c)| (i * 32, c)) {
        let samples: Vec<&Sample> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
        let mut graph = crate::autodiff::Graph::new();
        let bound = model.bind(&mut graph);
        let batch = model.embed_batch(&mut graph, &bound, &samples)?;
        for (offset, se) in batch.samples.iter().enumerate() {
            let row = chunk_start + offset;
            for c in 0..channels {
                availability[row][c] = se.availability.is_available(c);
                if let Some(node) = se.nodes[c] {
                    let value = graph.value(node);
                    for j in 0..dim {
                        vectors[[row, c, j]] = value[[0, j]];
                    }
                }
            }
        }
    }
    Ok(EmbeddingSet { vectors, availability })
}

/// The all-modality gallery: the full-set channel for MCA and Zorro, or
/// the renormalized mean of available subset embeddings for EAO.
/// Degenerate EAO means are flagged unavailable.
pub fn fused_gallery(
    set: &EmbeddingSet,
    channels: &[ChannelSet],
    mode: FusionMode,
) -> Result<(Array2<f64>, Vec<bool>)> {
    let samples = set.samples();
    let dim = set.dim();
    match mode {
        FusionMode::Mca | FusionMode::Zorro => {
            let max_len = channels.iter().map(ChannelSet::len).max().expect("channels");
            let full =
                channels.iter().position(|c| c.len() == max_len).expect("full channel present");
            let mut out = Array2::zeros((samples, dim));
            let mut avail = vec![false; samples];
            for s in 0..samples {
                avail[s] = set.availability[s][full];
                for j in 0..dim {
                    out[[s, j]] = set.vectors[[s, full, j]];
                }
            }
            Ok((out, avail))
        }
        FusionMode::Eao => {
            let mut out = Array2::zeros((samples, dim));
            let mut avail = vec![false; samples];
            for s in 0..samples {
                let rows: Vec<usize> =
                    (0..channels.len()).filter(|&c| set.availability[s][c]).collect();
                if rows.is_empty() {
                    continue;
                }
                let stacked = Array2::from_shape_fn((rows.len(), dim), |(i, j)| {
                    set.vectors[[s, rows[i], j]]
                });
                match eao_inference_fusion(&stacked) {
                    Ok(fused) => {
                        avail[s] = true;
                        for j in 0..dim {
                            out[[s, j]] = fused[j];
                        }
                    }
                    Err(Error::DegenerateFusion) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok((out, avail))
        }
    }
}

/// Metric-name label for a channel: modality name, `fusion` for the full
/// set, joined names otherwise.
fn channel_label(channel: &ChannelSet, schema: &ModalitySchema) -> String {
    if channel.len() == schema.modality_count() {
        "fusion".into()
    } else {
        channel.label_named(schema)
    }
}

#[derive(Debug, Clone)]
pub struct RunMeta {
    pub run_id: String,
    pub mode: String,
    pub sparsity: f64,
    pub epoch: usize,
}

impl RunMeta {
    fn at_epoch(&self, epoch: usize) -> RunMeta {
        RunMeta { epoch, ..self.clone() }
    }
}

fn record(meta: &RunMeta, split: &str, metric: &str, value: f64) -> MetricRecord {
    MetricRecord {
        run_id: meta.run_id.clone(),
        mode: meta.mode.clone(),
        sparsity: meta.sparsity,
        epoch: meta.epoch,
        split: split.into(),
        metric: metric.into(),
        value,
    }
}

fn split_targets(dataset: &Dataset, which: Split) -> (Vec<Option<f64>>, Vec<Option<usize>>) {
    let indices = dataset.indices_of(which);
    let regression = indices.iter().map(|&i| dataset.samples[i].targets.regression).collect();
    let class = indices.iter().map(|&i| dataset.samples[i].targets.class).collect();
    (regression, class)
}

/// Evaluation on exported embeddings: per-channel uniformity, retrieval
/// of each unimodal channel against the all-modality fusion gallery, and
/// linear probes on the fusion embedding. Retrieval metrics follow the
/// test split; probes fit on the train split.
pub fn evaluate_embeddings(
    config: &ExperimentConfig,
    dataset: &Dataset,
    train_set: &EmbeddingSet,
    test_set: &EmbeddingSet,
    meta: &RunMeta,
) -> Result<Vec<MetricRecord>> {
    let channels = crate::masking::embedding_channels(
        config.schema.modality_count(),
        config.mode,
    )?;
    for (set, which) in [(train_set, Split::Train), (test_set, Split::Test)] {
        let expected = dataset.indices_of(which).len();
        if set.samples() != expected {
            return Err(Error::Shape(format!(
                "embedding file has {} samples, split has {expected}",
                set.samples()
            )));
        }
        if set.channels() != channels.len() {
            return Err(Error::Shape(format!(
                "embedding file has {} channels, mode {} has {}",
                set.channels(),
                config.mode,
                channels.len()
            )));
        }
    }
    let mut records = Vec::new();

    for (c, channel) in channels.iter().enumerate() {
        let rows: Vec<usize> =
            (0..test_set.samples()).filter(|&s| test_set.availability[s][c]).collect();
        if rows.len() < 2 {
            continue;
        }
        let label = channel_label(channel, &config.schema);
        let vectors = test_set.gather(c, &rows);
        records.push(record(meta, "test", &format!("uniformity/{label}"), uniformity(&vectors)?));
        records.push(record(
            meta,
            "test",
            &format!("log_uniformity/{label}"),
            log_uniformity(&vectors)?,
        ));
    }

    let (fused_test, fused_avail) = fused_gallery(test_set, &channels, config.mode)?;
    let mut recall1_values = Vec::new();
    for (c, channel) in channels.iter().enumerate() {
        if !channel.is_unimodal() {
            continue;
        }
        let name = &config.schema.modalities[channel.members()[0]].name;
        let rows: Vec<usize> = (0..test_set.samples())
            .filter(|&s| test_set.availability[s][c] && fused_avail[s])
            .collect();
        if rows.len() < 2 {
            continue;
        }
        let queries = test_set.gather(c, &rows);
        let gallery = Array2::from_shape_fn((rows.len(), test_set.dim()), |(i, j)| {
            fused_test[[rows[i], j]]
        });
        records.push(record(
            meta,
            "test",
            &format!("alignment/{name}->fusion"),
            alignment(&queries, &gallery)?,
        ));
        let ranks = ranks_from_similarity(&similarity_matrix(&queries, &gallery)?)?;
        records.push(record(
            meta,
            "test",
            &format!("median_rank/{name}->fusion"),
            median_rank(&ranks)?,
        ));
        for k in [1usize, 5, 10] {
            let value = recall_at_k(&ranks, k)?;
            records.push(record(meta, "test", &format!("recall@{k}/{name}->fusion"), value));
            if k == 1 {
                recall1_values.push(value);
            }
        }
    }
    if !recall1_values.is_empty() {
        records.push(record(
            meta,
            "test",
            "recall@1/unimodal_mean->fusion",
            recall1_values.iter().sum::<f64>() / recall1_values.len() as f64,
        ));
    }

    let (fused_train, fused_train_avail) = fused_gallery(train_set, &channels, config.mode)?;
    let (train_reg, train_class) = split_targets(dataset, Split::Train);
    let (test_reg, test_class) = split_targets(dataset, Split::Test);
    let probe_hyper = ProbeHyper { seed: config.training.seed, ..Default::default() };

    let gather_rows = |matrix: &Array2<f64>, rows: &[usize]| {
        Array2::from_shape_fn((rows.len(), matrix.ncols()), |(i, j)| matrix[[rows[i], j]])
    };

    // Regression probe on the fusion embedding, targets scaled to [0, 1]
    // by train-split statistics.
    let train_rows: Vec<usize> = (0..train_set.samples())
        .filter(|&s| fused_train_avail[s] && train_reg[s].is_some())
        .collect();
    let test_rows: Vec<usize> = (0..test_set.samples())
        .filter(|&s| fused_avail[s] && test_reg[s].is_some())
        .collect();
    if train_rows.len() >= 2 && test_rows.len() >= 2 {
        let raw_train: Vec<f64> = train_rows.iter().map(|&s| train_reg[s].unwrap()).collect();
        let scaler = TargetScaler::fit(&raw_train)?;
        let scaled_train: Vec<f64> = raw_train.iter().map(|&v| scaler.apply(v)).collect();
        let scaled_test: Vec<f64> =
            test_rows.iter().map(|&s| scaler.apply(test_reg[s].unwrap())).collect();
        let probe = fit_probe(
            &gather_rows(&fused_train, &train_rows),
            &ProbeTargets::Regression(scaled_train),
            &probe_hyper,
        )?;
        let eval = eval_regression(&probe, &gather_rows(&fused_test, &test_rows), &scaled_test)?;
        records.push(record(meta, "test", "probe/l1", eval.l1));
        if let Some(r) = eval.pearson_r {
            records.push(record(meta, "test", "probe/pearson_r", r));
        }
    }

    // Classification probe.
    if let Some(classes) = dataset.class_count {
        let train_rows: Vec<usize> = (0..train_set.samples())
            .filter(|&s| fused_train_avail[s] && train_class[s].is_some())
            .collect();
        let test_rows: Vec<usize> = (0..test_set.samples())
            .filter(|&s| fused_avail[s] && test_class[s].is_some())
            .collect();
        if train_rows.len() >= 2 && test_rows.len() >= 2 {
            let labels: Vec<usize> =
                train_rows.iter().map(|&s| train_class[s].unwrap()).collect();
            let probe = fit_probe(
                &gather_rows(&fused_train, &train_rows),
                &ProbeTargets::Classification { labels, classes },
                &probe_hyper,
            )?;
            let test_labels: Vec<usize> =
                test_rows.iter().map(|&s| test_class[s].unwrap()).collect();
            let eval = eval_classification(
                &probe,
                &gather_rows(&fused_test, &test_rows),
                &test_labels,
            )?;
            records.push(record(meta, "test", "probe/ce", eval.ce));
            records.push(record(meta, "test", "probe/macro_aupr", eval.macro_aupr));
        }
    }
    Ok(records)
}

pub struct TrainArtifacts {
    pub outcome: TrainOutcome,
    pub records: Vec<MetricRecord>,
    pub checkpoint_dir: PathBuf,
    pub selected_checkpoint: PathBuf,
}

/// generate-data: materialize the synthetic dataset as a manifest plus
/// CSV payloads.
pub fn run_generate_data(config: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    let DataSource::Synthetic(synth) = &config.data else {
        return Err(Error::InvalidConfig(
            "generate-data needs a synthetic data source".into(),
        ));
    };
    let dataset = synthetic_multimodal(&config.schema, synth, config.training.seed)?;
    save_manifest(&dataset, out_dir)
}

/// sparsify: apply modal dropping and write the sparse dataset as a new
/// manifest with its sparsity report alongside.
pub fn run_sparsify(
    config: &ExperimentConfig,
    sparsity: f64,
    out_dir: &Path,
) -> Result<(PathBuf, SparsityReport)> {
    let dataset = match &config.data {
        DataSource::Synthetic(synth) => {
            synthetic_multimodal(&config.schema, synth, config.training.seed)?
        }
        DataSource::Manifest(path) => load_manifest(path)?,
    };
    let (sparse, report) =
        drop_modalities(&dataset, sparsity, config.training.seed.wrapping_add(SEED_DROP))?;
    let manifest = save_manifest(&sparse, out_dir)?;
    let report_json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Parse(format!("sparsity report: {e}")))?;
    fs::write(out_dir.join("sparsity_report.json"), report_json)?;
    Ok((manifest, report))
}

/// train: full loop with per-epoch checkpoints and loss records written
/// to `out_dir`.
pub fn run_train(
    config: &ExperimentConfig,
    run_sparsity: f64,
    out_dir: &Path,
) -> Result<TrainArtifacts> {
    config.validate()?;
    let (dataset, _) = prepare_dataset(config, run_sparsity)?;
    let mut model = build_model(config)?;
    let checkpoint_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&checkpoint_dir)?;
    let echo = effective_config_json(config, run_sparsity)?;
    let outcome = train(&mut model, &dataset, &config.training, Some(&checkpoint_dir), &echo)?;

    let meta = RunMeta {
        run_id: run_id(config, run_sparsity),
        mode: config.mode.label().into(),
        sparsity: run_sparsity,
        epoch: 0,
    };
    let mut records = Vec::new();
    records.push(record(&meta, "all", "measured_sparsity", measured_sparsity(&dataset)?));
    for epoch_record in &outcome.curves {
        let at = meta.at_epoch(epoch_record.epoch);
        if let Some(v) = epoch_record.train_loss {
            records.push(record(&at, "train", "loss", v));
        }
        if let Some(v) = epoch_record.test_loss {
            records.push(record(&at, "test", "loss", v));
        }
    }
    records.push(record(
        &meta.at_epoch(outcome.selected_epoch),
        "all",
        "selected_epoch",
        outcome.selected_epoch as f64,
    ));

    append_records(&out_dir.join("metrics.jsonl"), &records)?;
    let selected_checkpoint =
        checkpoint_dir.join(format!("epoch_{:03}.ckpt", outcome.selected_epoch));
    let selection = serde_json::json!({
        "selected_epoch": outcome.selected_epoch,
        "checkpoint": selected_checkpoint,
        "curves": outcome.curves,
    });
    fs::write(
        out_dir.join("selection.json"),
        serde_json::to_string_pretty(&selection)
            .map_err(|e| Error::Parse(format!("selection: {e}")))?,
    )?;
    Ok(TrainArtifacts { outcome, records, checkpoint_dir, selected_checkpoint })
}

/// embed: load a checkpoint, refuse config drift, rebuild the dataset
/// deterministically, and export one split.
pub fn run_embed(
    config: &ExperimentConfig,
    run_sparsity: f64,
    checkpoint_path: &Path,
    which: Split,
    out_path: &Path,
) -> Result<()> {
    config.validate()?;
    let checkpoint = load_checkpoint(checkpoint_path)?;
    check_config_echo(config, run_sparsity, &checkpoint)?;
    let (dataset, _) = prepare_dataset(config, run_sparsity)?;
    let model = Model::from_params(
        config.schema.clone(),
        config.hyper(),
        config.mode,
        checkpoint.params,
    )?;
    let set = embed_split(&model, &dataset, which)?;
    write_embeddings(out_path, &set)
}

fn check_config_echo(
    config: &ExperimentConfig,
    run_sparsity: f64,
    checkpoint: &Checkpoint,
) -> Result<()> {
    let ours: serde_json::Value =
        serde_json::from_str(&effective_config_json(config, run_sparsity)?)
            .map_err(|e| Error::Parse(format!("config echo: {e}")))?;
    let theirs: serde_json::Value = serde_json::from_str(&checkpoint.config_json)
        .map_err(|e| Error::Load(format!("checkpoint config echo: {e}")))?;
    let diff = diff_configs(&ours, &theirs);
    if diff.is_empty() {
        Ok(())
    } else {
        Err(Error::ConfigMismatch(diff))
    }
}

/// evaluate: metrics and probes from exported train and test embeddings,
/// appended to a record file.
pub fn run_evaluate(
    config: &ExperimentConfig,
    run_sparsity: f64,
    epoch: usize,
    train_path: &Path,
    test_path: &Path,
    records_path: &Path,
) -> Result<Vec<MetricRecord>> {
    config.validate()?;
    let (dataset, _) = prepare_dataset(config, run_sparsity)?;
    let train_set = read_embeddings(train_path)?;
    let test_set = read_embeddings(test_path)?;
    let meta = RunMeta {
        run_id: run_id(config, run_sparsity),
        mode: config.mode.label().into(),
        sparsity: run_sparsity,
        epoch,
    };
    let records = evaluate_embeddings(config, &dataset, &train_set, &test_set, &meta)?;
    append_records(records_path, &records)?;
    Ok(records)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub mode: String,
    pub sparsity: f64,
    pub error: String,
}

#[derive(Debug)]
pub struct SweepSummary {
    pub records_path: PathBuf,
    pub completed: usize,
    pub missing: Vec<SweepCell>,
}

/// sweep: the full sparsity x mode grid; each cell trains, embeds both
/// splits, and evaluates. Failed cells are named in missing.json rather
/// than silently dropped.
pub fn run_sweep(config: &ExperimentConfig, out_dir: &Path) -> Result<SweepSummary> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let records_path = out_dir.join("records.jsonl");
    let mut missing = Vec::new();
    let mut completed = 0usize;
    for mode in FusionMode::ALL {
        for &sparsity in &config.sparsity {
            let mut cell_config = config.clone();
            cell_config.mode = mode;
            let cell_id = run_id(&cell_config, sparsity);
            let cell_dir = out_dir.join(&cell_id);
            match run_cell(&cell_config, sparsity, &cell_dir, &records_path) {
                Ok(()) => completed += 1,
                Err(e) => missing.push(SweepCell {
                    mode: mode.label().into(),
                    sparsity,
                    error: e.to_string(),
                }),
            }
        }
    }
    let missing_json = serde_json::to_string_pretty(&missing)
        .map_err(|e| Error::Parse(format!("missing cells: {e}")))?;
    fs::write(out_dir.join("missing.json"), missing_json)?;
    Ok(SweepSummary { records_path, completed, missing })
}

fn run_cell(
    config: &ExperimentConfig,
    sparsity: f64,
    cell_dir: &Path,
    records_path: &Path,
) -> Result<()> {
    fs::create_dir_all(cell_dir)?;
    let artifacts = run_train(config, sparsity, cell_dir)?;
    append_records(records_path, &artifacts.records)?;
    let train_path = cell_dir.join("train.mfl");
    let test_path = cell_dir.join("test.mfl");
    run_embed(config, sparsity, &artifacts.selected_checkpoint, Split::Train, &train_path)?;
    run_embed(config, sparsity, &artifacts.selected_checkpoint, Split::Test, &test_path)?;
    run_evaluate(
        config,
        sparsity,
        artifacts.outcome.selected_epoch,
        &train_path,
        &test_path,
        records_path,
    )?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesPoint {
    pub sparsity: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Series {
    pub metric: String,
    pub mode: String,
    pub points: Vec<SeriesPoint>,
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

/// report: figure-ready series per (metric, mode) over sparsity from a
/// record file, written one JSON file each, plus a text summary of the
/// headline metrics. Later records win when a cell was re-run.
pub fn run_report(records_path: &Path, out_dir: &Path) -> Result<String> {
    let records = read_records(records_path)?;
    fs::create_dir_all(out_dir)?;
    let mut grouped: BTreeMap<(String, String), BTreeMap<String, (f64, f64)>> = BTreeMap::new();
    for r in &records {
        if r.split != "test" {
            continue;
        }
        grouped
            .entry((r.metric.clone(), r.mode.clone()))
            .or_default()
            .insert(format!("{:.6}", r.sparsity), (r.sparsity, r.value));
    }
    let series_dir = out_dir.join("series");
    fs::create_dir_all(&series_dir)?;
    let mut all_series = Vec::new();
    for ((metric, mode), points) in &grouped {
        let series = Series {
            metric: metric.clone(),
            mode: mode.clone(),
            points: points
                .values()
                .map(|&(sparsity, value)| SeriesPoint { sparsity, value })
                .collect(),
        };
        let file = series_dir.join(format!("{}__{}.json", sanitize(metric), sanitize(mode)));
        fs::write(
            &file,
            serde_json::to_string_pretty(&series)
                .map_err(|e| Error::Parse(format!("series: {e}")))?,
        )?;
        all_series.push(series);
    }

    let mut summary = String::new();
    summary.push_str("metric trends over modal sparsity (test split)\n");
    for headline in [
        "loss",
        "recall@1/unimodal_mean->fusion",
        "probe/macro_aupr",
        "probe/pearson_r",
    ] {
        let mut lines = Vec::new();
        for series in all_series.iter().filter(|s| s.metric == headline) {
            let points: Vec<String> = series
                .points
                .iter()
                .map(|p| format!("{}:{:.4}", p.sparsity, p.value))
                .collect();
            lines.push(format!("  {:<6} {}", series.mode, points.join("  ")));
        }
        if !lines.is_empty() {
            summary.push_str(&format!("{headline}\n"));
            for line in lines {
                summary.push_str(&line);
                summary.push('\n');
            }
        }
    }
    fs::write(out_dir.join("summary.txt"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ModalityDecl;

    fn desk_config(mode: FusionMode) -> ExperimentConfig {
        ExperimentConfig {
            mode,
            schema: ModalitySchema::new(vec![
                ModalityDecl::sequence("sa", 3, 2),
                ModalityDecl::tabular("ta", 2),
            ])
            .unwrap(),
            model: ModelHyper {
                depth: 1,
                width: 8,
                heads: 2,
                ff_multiplier: 2,
                tokens_per_channel: 1,
                embed_dim: 4,
                temperature: 0.3,
            },
            training: TrainingConfig {
                batch: 8,
                max_lr: 2e-3,
                warmup_steps: 4,
                epochs: 2,
                seed: 11,
            },
            data: DataSource::Synthetic(SyntheticConfig {
                samples: 40,
                latent_dim: 3,
                noise: 0.05,
                classes: 3,
            }),
            sparsity: vec![0.0, 0.4],
            split_fraction: 0.2,
        }
    }

    #[test]
    fn config_round_trips_and_validates() {
        let config = desk_config(FusionMode::Mca);
        let json = serde_json::to_string(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(&path, &json).unwrap();
        let loaded = ExperimentConfig::from_file(&path).unwrap();
        assert_eq!(loaded, config);

        let mut bad = desk_config(FusionMode::Mca);
        bad.split_fraction = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = desk_config(FusionMode::Mca);
        bad.sparsity = vec![1.0];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn defaults_mirror_training_reference() {
        let json = r#"{
            "mode": "mca",
            "schema": {"modalities": [
                {"name": "a", "kind": "sequence", "dim": 2, "token_budget": 2},
                {"name": "b", "kind": "tabular", "dim": 2, "token_budget": 2}
            ]},
            "data": {"synthetic": {"samples": 10, "latent_dim": 2, "noise": 0.1}}
        }"#;
        let config: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(config.training.batch, 32);
        assert_eq!(config.training.max_lr, 1e-4);
        assert_eq!(config.training.warmup_steps, 2000);
        assert_eq!(config.sparsity, vec![0.0, 0.2, 0.4, 0.6, 0.8]);
        assert_eq!(config.split_fraction, 0.1);
        assert_eq!(config.model.width, 512);
        assert_eq!(config.model.heads, 8);
        assert_eq!(config.model.tokens_per_channel, 8);
    }

    #[test]
    fn prepared_dataset_is_mode_independent() {
        let a = prepare_dataset(&desk_config(FusionMode::Mca), 0.4).unwrap().0;
        let b = prepare_dataset(&desk_config(FusionMode::Eao), 0.4).unwrap().0;
        assert_eq!(a.samples.len(), b.samples.len());
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn records_round_trip_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let records = vec![
            MetricRecord {
                run_id: "mca-s0-seed1".into(),
                mode: "mca".into(),
                sparsity: 0.0,
                epoch: 3,
                split: "test".into(),
                metric: "loss".into(),
                value: 1.25,
            },
            MetricRecord {
                run_id: "mca-s0-seed1".into(),
                mode: "mca".into(),
                sparsity: 0.0,
                epoch: 3,
                split: "test".into(),
                metric: "recall@1/sa->fusion".into(),
                value: 0.5,
            },
        ];
        append_records(&path, &records[..1]).unwrap();
        append_records(&path, &records[1..]).unwrap();
        assert_eq!(read_records(&path).unwrap(), records);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(!text.contains("time"), "records carry no timestamps");
    }

    #[test]
    fn train_embed_evaluate_cycle_produces_artifacts() {
        let config = desk_config(FusionMode::Mca);
        let dir = tempfile::tempdir().unwrap();
        let artifacts = run_train(&config, 0.0, dir.path()).unwrap();
        assert!(dir.path().join("metrics.jsonl").exists());
        assert!(dir.path().join("selection.json").exists());
        assert_eq!(artifacts.outcome.curves.len(), 3);
        assert!(artifacts.selected_checkpoint.exists());

        let train_path = dir.path().join("train.mfl");
        let test_path = dir.path().join("test.mfl");
        run_embed(&config, 0.0, &artifacts.selected_checkpoint, Split::Train, &train_path)
            .unwrap();
        run_embed(&config, 0.0, &artifacts.selected_checkpoint, Split::Test, &test_path)
            .unwrap();

        let records_path = dir.path().join("eval.jsonl");
        let records = run_evaluate(
            &config,
            0.0,
            artifacts.outcome.selected_epoch,
            &train_path,
            &test_path,
            &records_path,
        )
        .unwrap();
        let names: Vec<&str> = records.iter().map(|r| r.metric.as_str()).collect();
        assert!(names.contains(&"uniformity/fusion"));
        assert!(names.contains(&"recall@1/sa->fusion"));
        assert!(names.contains(&"recall@1/unimodal_mean->fusion"));
        assert!(names.contains(&"probe/l1"));
        assert!(names.contains(&"probe/macro_aupr"));
        assert!(names.contains(&"median_rank/ta->fusion"));
    }

    #[test]
    fn embed_refuses_mismatched_config() {
        let config = desk_config(FusionMode::Zorro);
        let dir = tempfile::tempdir().unwrap();
        let artifacts = run_train(&config, 0.0, dir.path()).unwrap();

        let mut other = config.clone();
        other.model.width = 16;
        let out = dir.path().join("x.mfl");
        let err = run_embed(&other, 0.0, &artifacts.selected_checkpoint, Split::Test, &out)
            .unwrap_err();
        match err {
            Error::ConfigMismatch(fields) => {
                assert!(fields.iter().any(|f| f.contains("model.width")), "{fields:?}");
            }
            other => panic!("expected config mismatch, got {other}"),
        }
        assert_eq!(
            run_embed(&config, 0.4, &artifacts.selected_checkpoint, Split::Test, &out)
                .unwrap_err()
                .exit_code(),
            2
        );
    }

    #[test]
    fn eao_fused_gallery_matches_hand_fusion() {
        let channels = crate::masking::embedding_channels(2, FusionMode::Eao).unwrap();
        assert_eq!(channels.len(), 3);
        let mut vectors = Array3::zeros((2, 3, 2));
        // Sample 0: subsets {0} and {0,1} available, antipodal on axis 0.
        vectors[[0, 0, 0]] = 1.0;
        vectors[[0, 2, 0]] = -1.0;
        // Sample 1: {1} and {0,1} available, orthogonal.
        vectors[[1, 1, 0]] = 1.0;
        vectors[[1, 2, 1]] = 1.0;
        let availability = vec![vec![true, false, true], vec![false, true, true]];
        let set = EmbeddingSet { vectors, availability };
        let (fused, avail) = fused_gallery(&set, &channels, FusionMode::Eao).unwrap();
        // Sample 0 degenerates to the zero mean.
        assert!(!avail[0]);
        assert!(avail[1]);
        let inv = 0.5f64.sqrt();
        assert!((fused[[1, 0]] - inv).abs() < 1e-12);
        assert!((fused[[1, 1]] - inv).abs() < 1e-12);
    }

    #[test]
    fn report_builds_series_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let records_path = dir.path().join("records.jsonl");
        let mk = |mode: &str, sparsity: f64, metric: &str, value: f64| MetricRecord {
            run_id: format!("{mode}-s{sparsity}-seed0"),
            mode: mode.into(),
            sparsity,
            epoch: 1,
            split: "test".into(),
            metric: metric.into(),
            value,
        };
        append_records(
            &records_path,
            &[
                mk("mca", 0.0, "recall@1/unimodal_mean->fusion", 0.9),
                mk("mca", 0.4, "recall@1/unimodal_mean->fusion", 0.7),
                mk("zorro", 0.0, "recall@1/unimodal_mean->fusion", 0.8),
                // Re-run of the same cell: the later record wins.
                mk("mca", 0.4, "recall@1/unimodal_mean->fusion", 0.75),
            ],
        )
        .unwrap();
        let out = dir.path().join("report");
        let summary = run_report(&records_path, &out).unwrap();
        assert!(summary.contains("recall@1/unimodal_mean->fusion"));
        assert!(summary.contains("mca"));
        let series_file =
            out.join("series").join("recall_1_unimodal_mean__fusion__mca.json");
        assert!(series_file.exists(), "{}", series_file.display());
        let series: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(series_file).unwrap()).unwrap();
        let points = series["points"].as_array().unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[1]["value"], 0.75);
    }

    #[test]
    fn sweep_covers_grid_and_names_missing_cells() {
        let mut config = desk_config(FusionMode::Mca);
        config.sparsity = vec![0.0];
        config.training.epochs = 1;
        let dir = tempfile::tempdir().unwrap();
        let summary = run_sweep(&config, dir.path()).unwrap();
        assert_eq!(summary.completed, 3);
        assert!(summary.missing.is_empty());
        assert!(summary.records_path.exists());
        let missing: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join("missing.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(missing.as_array().unwrap().len(), 0);
        let records = read_records(&summary.records_path).unwrap();
        for mode in ["mca", "zorro", "eao"] {
            assert!(records.iter().any(|r| r.mode == mode && r.metric == "loss"));
            assert!(records
                .iter()
                .any(|r| r.mode == mode && r.metric.starts_with("recall@1/")));
        }
    }

    #[test]
    fn generate_and_sparsify_write_manifests() {
        let config = desk_config(FusionMode::Mca);
        let dir = tempfile::tempdir().unwrap();
        let gen_dir = dir.path().join("data");
        let manifest = run_generate_data(&config, &gen_dir).unwrap();
        assert!(manifest.exists());
        let loaded = load_manifest(&manifest).unwrap();
        assert_eq!(loaded.samples.len(), 40);

        let sparse_dir = dir.path().join("sparse");
        let (sparse_manifest, report) = run_sparsify(&config, 0.3, &sparse_dir).unwrap();
        assert!(sparse_manifest.exists());
        assert!(sparse_dir.join("sparsity_report.json").exists());
        assert_eq!(report.requested, 0.3);
        let sparse = load_manifest(&sparse_manifest).unwrap();
        assert!(sparse.samples.iter().any(|s| !s.presence.all()));

        // Training directly from the sparsified manifest round-trips.
        let mut manifest_config = config.clone();
        manifest_config.data = DataSource::Manifest(sparse_manifest);
        let out = dir.path().join("trained");
        let artifacts = run_train(&manifest_config, 0.0, &out).unwrap();
        assert!(artifacts.selected_checkpoint.exists());
    }
}
