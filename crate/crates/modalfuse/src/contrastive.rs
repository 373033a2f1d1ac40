//! Symmetric InfoNCE over unordered channel pairs. Every distinct pair of
//! embedding channels contributes one term computed on the sub-batch of
//! samples where both channels are available; sub-batches with fewer than
//! two samples are skipped and excluded from the mean.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::masking::ChannelSet;
use crate::model::BatchEmbeddings;
use serde::Serialize;

const UNIT_NORM_TOL: f64 = 1e-5;

/// One channel pair's contribution to the batch loss.
#[derive(Debug, Clone, Serialize)]
pub struct PairLoss {
    pub pair: String,
    pub samples: usize,
    /// `None` when the pair was skipped for lack of co-available samples.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    /// Mean over contributing pairs; `None` when every pair was skipped.
    pub total: Option<f64>,
    pub pairs: Vec<PairLoss>,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
}

/// Symmetric InfoNCE for aligned rows of `x` and `y` (`[n x d]`, unit
/// norm, n >= 2): half the mean cross-entropy of the row-wise softmax of
/// the similarity matrix against the diagonal, plus the same for columns.
pub fn info_nce_pair(
    graph: &mut Graph,
    x: NodeId,
    y: NodeId,
    temperature: f64,
) -> Result<NodeId> {
    let (n, d) = graph.value(x).dim();
    if graph.value(y).dim() != (n, d) {
        return Err(Error::Shape(format!(
            "info_nce_pair shape mismatch: {:?} vs {:?}",
            (n, d),
            graph.value(y).dim()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "info_nce_pair needs at least 2 samples, got {n}"
        )));
    }
    for node in [x, y] {
        for row in graph.value(node).rows() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Contract(format!(
                    "info_nce_pair expects unit-norm rows, found norm {norm}"
                )));
            }
        }
    }
    let yt = graph.transpose(y);
    let sim = graph.matmul(x, yt);
    let sim = graph.scale(sim, 1.0 / temperature);

    let row_lsm = graph.log_softmax_rows(sim);
    let row_diag = graph.diag(row_lsm);
    let row_mean = graph.mean_all(row_diag);

    let sim_t = graph.transpose(sim);
    let col_lsm = graph.log_softmax_rows(sim_t);
    let col_diag = graph.diag(col_lsm);
    let col_mean = graph.mean_all(col_diag);

    let sum = graph.add(row_mean, col_mean);
    Ok(graph.scale(sum, -0.5))
}

/// All unordered pairs of distinct channels in canonical order.
pub fn channel_pairs(channels: &[ChannelSet]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(channels.len() * (channels.len() - 1) / 2);
    for a in 0..channels.len() {
        for b in (a + 1)..channels.len() {
            pairs.push((a, b));
        }
    }
    pairs
}

/// Batch loss: mean of `info_nce_pair` over every unordered channel pair
/// with at least two co-available samples. Returns the loss node (`None`
/// when every pair was skipped) and a per-pair report.
pub fn contrastive_loss(
    graph: &mut Graph,
    batch: &BatchEmbeddings,
    channels: &[ChannelSet],
    temperature: f64,
) -> Result<(Option<NodeId>, LossReport)> {
    let mut pair_nodes = Vec::new();
    let mut pairs = Vec::new();
    for (a, b) in channel_pairs(channels) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for sample in &batch.samples {
            if let (Some(x), Some(y)) = (sample.nodes[a], sample.nodes[b]) {
                xs.push(x);
                ys.push(y);
            }
        }
        let label = format!("{}|{}", channels[a], channels[b]);
        if xs.len() < 2 {
            pairs.push(PairLoss { pair: label, samples: xs.len(), loss: None });
            continue;
        }
        let x = graph.concat_rows(&xs);
        let y = graph.concat_rows(&ys);
        let loss = info_nce_pair(graph, x, y, temperature)?;
        pair_nodes.push(loss);
        pairs.push(PairLoss {
            pair: label,
            samples: xs.len(),
            loss: Some(graph.value(loss)[[0, 0]]),
        });
    }
    let pairs_used = pair_nodes.len();
    let pairs_skipped = pairs.len() - pairs_used;
    let total_node = if pair_nodes.is_empty() {
        None
    } else {
        let stacked = graph.concat_rows(&pair_nodes);
        Some(graph.mean_all(stacked))
    };
    let report = LossReport {
        total: total_node.map(|n| graph.value(n)[[0, 0]]),
        pairs,
        pairs_used,
        pairs_skipped,
    };
    Ok((total_node, report))
}
