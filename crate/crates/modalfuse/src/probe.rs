//! Linear probes on frozen embeddings: an L1 regression head and a
//! cross-entropy classification head, both fit with plain full-batch
//! gradient descent under cosine decay. Evaluation reports mean absolute
//! error with Pearson correlation, or cross-entropy with macro AUPR.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeHyper {
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        ProbeHyper { lr: 0.1, steps: 2000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeTargets {
    Regression(Vec<f64>),
    Classification { labels: Vec<usize>, classes: usize },
}

#[derive(Debug, Clone)]
pub struct ProbeParams {
    /// `[embed_dim x outputs]`; one output for regression, class count
    /// for classification.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub classes: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegressionEval {
    pub l1: f64,
    /// `None` when predictions or targets have zero variance.
    pub pearson_r: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationEval {
    pub ce: f64,
    /// Macro mean over classes that occur in the evaluation set.
    pub macro_aupr: f64,
    /// Per class; `None` marks classes absent from the evaluation set.
    pub per_class_aupr: Vec<Option<f64>>,
    pub absent_classes: Vec<usize>,
}

/// Min-max scaling of regression targets to [0, 1], fit on the training
/// split. A constant training target keeps span 1 so apply is the
/// identity shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub min: f64,
    pub span: f64,
}

impl TargetScaler {
    pub fn fit(train_targets: &[f64]) -> Result<Self> {
        if train_targets.is_empty() {
            return Err(Error::InvalidInput("target scaler needs data".into()));
        }
        if train_targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite regression target".into()));
        }
        let min = train_targets.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = train_targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if max > min { max - min } else { 1.0 };
        Ok(TargetScaler { min, span })
    }

    pub fn apply(&self, value: f64) -> f64 {
        (value - self.min) / self.span
    }
}

fn cosine_lr(base: f64, step: usize, steps: usize) -> f64 {
    base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / steps as f64).cos())
}

fn check_inputs(x: &Array2<f64>, n_targets: usize) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("probe needs at least one sample".into()));
    }
    if x.nrows() != n_targets {
        return Err(Error::Shape(format!(
            "probe inputs {} vs targets {n_targets}",
            x.nrows()
        )));
    }
    Ok(())
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Full-batch gradient descent under the task loss; deterministic given
/// the seed. The encoder is never touched: inputs are plain matrices.
pub fn fit_probe(
    x: &Array2<f64>,
    targets: &ProbeTargets,
    hyper: &ProbeHyper,
) -> Result<ProbeParams> {
    let d = x.ncols();
    let (outputs, classes) = match targets {
        ProbeTargets::Regression(t) => {
            check_inputs(x, t.len())?;
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite regression target".into()));
            }
            (1, None)
        }
        ProbeTargets::Classification { labels, classes } => {
            check_inputs(x, labels.len())?;
            if *classes < 2 {
                return Err(Error::InvalidInput("classification needs >= 2 classes".into()));
            }
            if let Some(bad) = labels.iter().find(|&&l| l >= *classes) {
                return Err(Error::InvalidInput(format!(
                    "label {bad} outside class range 0..{classes}"
                )));
            }
            (*classes, Some(*classes))
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut weight = crate::params::trunc_normal(&mut rng, d, outputs, 1e-3);
    let mut bias = Array1::<f64>::zeros(outputs);
    let n = x.nrows() as f64;

    for step in 0..hyper.steps {
        let lr = cosine_lr(hyper.lr, step, hyper.steps);
        let pred = x.dot(&weight) + &bias;
        // d(loss)/d(pred), shape [n x outputs].
        let dpred = match targets {
            ProbeTargets::Regression(t) => Array2::from_shape_fn((x.nrows(), 1), |(i, _)| {
                (pred[[i, 0]] - t[i]).signum() / n
            }),
            ProbeTargets::Classification { labels, .. } => {
                let mut probs = softmax_rows(&pred);
                for (i, &label) in labels.iter().enumerate() {
                    probs[[i, label]] -= 1.0;
                }
                probs / n
            }
        };
        let dw = x.t().dot(&dpred);
        let db = dpred.sum_axis(Axis(0));
        weight.zip_mut_with(&dw, |w, g| *w -= lr * g);
        bias.zip_mut_with(&db, |b, g| *b -= lr * g);
    }
    Ok(ProbeParams { weight, bias, classes })
}

pub fn predict(probe: &ProbeParams, x: &Array2<f64>) -> Array2<f64> {
    x.dot(&probe.weight) + &probe.bias
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

pub fn eval_regression(
    probe: &ProbeParams,
    x: &Array2<f64>,
    targets: &[f64],
) -> Result<RegressionEval> {
    check_inputs(x, targets.len())?;
    let pred = predict(probe, x);
    let preds: Vec<f64> = pred.column(0).to_vec();
    let l1 = preds
        .iter()
        .zip(targets.iter())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / targets.len() as f64;
    Ok(RegressionEval { l1, pearson_r: pearson_r(targets, &preds) })
}

/// Step-interpolated average precision: mean over positives of precision
/// at each positive's rank, scores sorted descending with index order
/// breaking ties. `None` when there are no positives.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Option<f64> {
    let total = positives.iter().filter(|&&p| p).count();
    if total == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (rank0, &i) in order.iter().enumerate() {
        if positives[i] {
            hits += 1;
            acc += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Some(acc / total as f64)
}

pub fn eval_classification(
    probe: &ProbeParams,
    x: &Array2<f64>,
    labels: &[usize],
) -> Result<ClassificationEval> {
    check_inputs(x, labels.len())?;
    let classes = probe
        .classes
        .ok_or_else(|| Error::InvalidInput("probe was not fit for classification".into()))?;
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidInput(format!(
            "label {bad} outside class range 0..{classes}"
        )));
    }
    let logits = predict(probe, x);
    let probs = softmax_rows(&logits);
    let ce = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -probs[[i, l]].max(1e-300).ln())
        .sum::<f64>()
        / labels.len() as f64;

    let mut per_class_aupr = Vec::with_capacity(classes);
    let mut absent_classes = Vec::new();
    let mut macro_sum = 0.0;
    let mut macro_n = 0usize;
    for c in 0..classes {
        let scores: Vec<f64> = (0..labels.len()).map(|i| probs[[i, c]]).collect();
        let positives: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        match average_precision(&scores, &positives) {
            Some(ap) => {
                macro_sum += ap;
                macro_n += 1;
                per_class_aupr.push(Some(ap));
            }
            None => {
                absent_classes.push(c);
                per_class_aupr.push(None);
            }
        }
    }
    Ok(ClassificationEval {
        ce,
        macro_aupr: macro_sum / macro_n as f64,
        per_class_aupr,
        absent_classes,
    })
}
