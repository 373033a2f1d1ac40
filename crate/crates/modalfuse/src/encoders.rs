//! Raw-data encoders: sequences go through a linear map, layer
//! normalization, and sinusoidal positions; tabular values go through a
//! shared per-value MLP plus a learned column embedding.

use crate::autodiff::{Graph, NodeId};
use crate::data::Payload;
use crate::error::{Error, Result};
use crate::params::{scaled_init, trunc_normal, BoundParams, ParamSet};
use crate::schema::{ModalityKind, ModalitySchema};
use ndarray::Array2;
use rand::Rng;

pub const LN_EPS: f64 = 1e-5;

/// Interleaved sinusoidal position vector: entry 2i is
/// `sin(pos / 10000^(2i/width))` and entry 2i+1 the matching cosine.
pub fn sinusoidal(pos: usize, width: usize) -> Result<Vec<f64>> {
    if width % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "sinusoidal positions need an even width, got {width}"
        )));
    }
    let mut out = vec![0.0; width];
    for i in 0..width / 2 {
        let rate = 10000f64.powf(2.0 * i as f64 / width as f64);
        let arg = pos as f64 / rate;
        out[2 * i] = arg.sin();
        out[2 * i + 1] = arg.cos();
    }
    Ok(out)
}

/// Stacked position vectors for positions `0..rows`.
pub fn sinusoidal_table(rows: usize, width: usize) -> Result<Array2<f64>> {
    let mut table = Array2::zeros((rows, width));
    for pos in 0..rows {
        let row = sinusoidal(pos, width)?;
        for (j, v) in row.into_iter().enumerate() {
            table[[pos, j]] = v;
        }
    }
    Ok(table)
}

/// Registers encoder parameters for every modality in the schema.
///
/// Sequence: linear `[dim x width]` + bias, layernorm scale/shift.
/// Tabular: value MLP `(1 -> width) relu (width -> width)` with biases,
/// plus a `[columns x width]` column embedding table.
pub fn init_encoder_params(
    schema: &ModalitySchema,
    width: usize,
    rng: &mut impl Rng,
    params: &mut ParamSet,
) {
    for (i, decl) in schema.modalities.iter().enumerate() {
        match decl.kind {
            ModalityKind::Sequence => {
                params.insert(format!("enc{i}.lin.w"), scaled_init(rng, decl.dim, width));
                params.insert(format!("enc{i}.lin.b"), Array2::zeros((1, width)));
                params.insert(format!("enc{i}.ln.g"), Array2::ones((1, width)));
                params.insert(format!("enc{i}.ln.b"), Array2::zeros((1, width)));
            }
            ModalityKind::Tabular => {
                params.insert(format!("enc{i}.val.w1"), scaled_init(rng, 1, width));
                params.insert(format!("enc{i}.val.b1"), Array2::zeros((1, width)));
                params.insert(format!("enc{i}.val.w2"), scaled_init(rng, width, width));
                params.insert(format!("enc{i}.val.b2"), Array2::zeros((1, width)));
                params.insert(format!("enc{i}.col"), trunc_normal(rng, decl.dim, width, 0.02));
            }
        }
    }
}

/// Encodes one modality payload into `[tokens x width]` graph nodes.
///
/// Sequences longer than the token budget are truncated head-first (the
/// earliest steps are kept); the returned flag reports truncation. Shorter
/// sequences are not padded here; the model layer owns block sizing.
pub fn encode_modality(
    graph: &mut Graph,
    bound: &BoundParams,
    schema: &ModalitySchema,
    modality: usize,
    payload: &Payload,
    width: usize,
) -> Result<(NodeId, bool)> {
    let decl = &schema.modalities[modality];
    match (payload, decl.kind) {
        (Payload::Sequence(raw), ModalityKind::Sequence) => {
            if raw.ncols() != decl.dim {
                return Err(Error::Shape(format!(
                    "modality `{}` expects vectors of {} entries, got {}",
                    decl.name,
                    decl.dim,
                    raw.ncols()
                )));
            }
            if raw.nrows() == 0 {
                return Err(Error::InvalidInput(format!(
                    "modality `{}` has an empty sequence",
                    decl.name
                )));
            }
            let truncated = raw.nrows() > decl.token_budget;
            let keep = raw.nrows().min(decl.token_budget);
            let raw = raw.slice(ndarray::s![..keep, ..]).to_owned();
            let x = graph.constant(raw);
            let w = bound.id(&format!("enc{modality}.lin.w"));
            let b = bound.id(&format!("enc{modality}.lin.b"));
            let g = bound.id(&format!("enc{modality}.ln.g"));
            let beta = bound.id(&format!("enc{modality}.ln.b"));
            let pos = graph.constant(sinusoidal_table(keep, width)?);

            let h = graph.matmul(x, w);
            let h = graph.add_row(h, b);
            let h = graph.layer_norm_rows(h, LN_EPS);
            let h = graph.mul_row(h, g);
            let h = graph.add_row(h, beta);
            let out = graph.add(h, pos);
            Ok((out, truncated))
        }
        (Payload::Tabular(values), ModalityKind::Tabular) => {
            if values.len() != decl.dim {
                return Err(Error::Shape(format!(
                    "modality `{}` expects {} columns, got {}",
                    decl.name,
                    decl.dim,
                    values.len()
                )));
            }
            let col_vec =
                Array2::from_shape_fn((values.len(), 1), |(i, _)| values[i]);
            let x = graph.constant(col_vec);
            let w1 = bound.id(&format!("enc{modality}.val.w1"));
            let b1 = bound.id(&format!("enc{modality}.val.b1"));
            let w2 = bound.id(&format!("enc{modality}.val.w2"));
            let b2 = bound.id(&format!("enc{modality}.val.b2"));
            let col = bound.id(&format!("enc{modality}.col"));

            let h = graph.matmul(x, w1);
            let h = graph.add_row(h, b1);
            let h = graph.relu(h);
            let h = graph.matmul(h, w2);
            let h = graph.add_row(h, b2);
            let out = graph.add(h, col);
            Ok((out, false))
        }
        _ => Err(Error::InvalidInput(format!(
            "modality `{}` payload kind does not match its declaration",
            decl.name
        ))),
    }
}
