//! Masked transformer encoder with fusion tokens, cross-attention pooling,
//! and the three embedding strategies: MCA and Zorro run one forward pass
//! over modality plus fusion tokens; EAO runs one pass per modality subset
//! and fuses by averaging at inference time.

use crate::autodiff::{Graph, NodeId};
use crate::data::Sample;
use crate::encoders::{encode_modality, init_encoder_params, LN_EPS};
use crate::error::{Error, Result};
use crate::masking::{
    build_token_layout, channel_availability, embedding_channels, enumerate_channels,
    AvailabilityBitmap, ChannelSet, MaskCache, PresenceBitmap, TokenLayout,
};
use crate::params::{trunc_normal, BoundParams, ParamSet};
use crate::schema::{FusionMode, ModalitySchema};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

fn default_depth() -> usize {
    4
}
fn default_width() -> usize {
    512
}
fn default_heads() -> usize {
    8
}
fn default_ff() -> usize {
    4
}
fn default_tpc() -> usize {
    8
}
fn default_temperature() -> f64 {
    0.07
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHyper {
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_ff")]
    pub ff_multiplier: usize,
    #[serde(default = "default_tpc")]
    pub tokens_per_channel: usize,
    /// Defaults to `width` when absent.
    #[serde(default)]
    pub embed_dim: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

impl Default for ModelHyper {
    fn default() -> Self {
        ModelHyper {
            depth: default_depth(),
            width: default_width(),
            heads: default_heads(),
            ff_multiplier: default_ff(),
            tokens_per_channel: default_tpc(),
            embed_dim: 0,
            temperature: default_temperature(),
        }
    }
}

impl ModelHyper {
    /// Fills derived defaults and checks consistency.
    pub fn normalized(mut self) -> Result<Self> {
        if self.embed_dim == 0 {
            self.embed_dim = self.width;
        }
        if self.width == 0 || self.width % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "width must be positive and even, got {}",
                self.width
            )));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "width {} must divide evenly into {} heads",
                self.width, self.heads
            )));
        }
        if self.ff_multiplier == 0 {
            return Err(Error::InvalidConfig("ff_multiplier must be >= 1".into()));
        }
        if self.tokens_per_channel == 0 {
            return Err(Error::InvalidConfig("tokens_per_channel must be >= 1".into()));
        }
        if self.temperature <= 0.0 || !self.temperature.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(self)
    }
}

/// One embedding per channel for one sample, as graph nodes.
pub struct SampleEmbedding {
    /// `[1 x embed_dim]` node per channel, `None` when unavailable.
    pub nodes: Vec<Option<NodeId>>,
    pub availability: AvailabilityBitmap,
}

/// Batch of per-sample embeddings sharing one graph.
pub struct BatchEmbeddings {
    pub samples: Vec<SampleEmbedding>,
}

pub struct Model {
    pub schema: ModalitySchema,
    pub hyper: ModelHyper,
    pub mode: FusionMode,
    pub params: ParamSet,
    /// Token layout of the single-pass modes; for EAO only modality blocks.
    pub layout: TokenLayout,
    /// Channels owning embeddings, canonical order.
    pub channels: Vec<ChannelSet>,
    single_pass_masks: Option<MaskCache>,
    /// Per EAO subset: member modalities, their layout, padding-only masks.
    eao_passes: Vec<(ChannelSet, TokenLayout, MaskCache)>,
}

impl Model {
    /// Initializes a model with freshly drawn parameters.
    pub fn new(
        schema: ModalitySchema,
        hyper: ModelHyper,
        mode: FusionMode,
        seed: u64,
    ) -> Result<Self> {
        let hyper = hyper.normalized()?;
        schema.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let width = hyper.width;

        init_encoder_params(&schema, width, &mut rng, &mut params);
        for layer in 0..hyper.depth {
            let p = |suffix: &str| format!("l{layer}.{suffix}");
            params.insert(p("ln1.g"), Array2::ones((1, width)));
            params.insert(p("ln1.b"), Array2::zeros((1, width)));
            for name in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
                params.insert(p(name), crate::params::scaled_init(&mut rng, width, width));
            }
            for name in ["attn.bq", "attn.bk", "attn.bv", "attn.bo"] {
                params.insert(p(name), Array2::zeros((1, width)));
            }
            params.insert(p("ln2.g"), Array2::ones((1, width)));
            params.insert(p("ln2.b"), Array2::zeros((1, width)));
            let hidden = hyper.ff_multiplier * width;
            params.insert(p("ff.wg"), crate::params::scaled_init(&mut rng, width, hidden));
            params.insert(p("ff.bg"), Array2::zeros((1, hidden)));
            params.insert(p("ff.wv"), crate::params::scaled_init(&mut rng, width, hidden));
            params.insert(p("ff.bv"), Array2::zeros((1, hidden)));
            params.insert(p("ff.wo"), crate::params::scaled_init(&mut rng, hidden, width));
            params.insert(p("ff.bo"), Array2::zeros((1, width)));
        }

        let layout = build_token_layout(&schema, hyper.tokens_per_channel, mode)?;
        if mode != FusionMode::Eao {
            let total_fusion = layout.fusion_token_total();
            params.insert("fusion.tokens", trunc_normal(&mut rng, total_fusion, width, 0.02));
        }
        let channels = embedding_channels(schema.modality_count(), mode)?;
        if mode != FusionMode::Eao {
            params.insert("pool.q", trunc_normal(&mut rng, channels.len(), width, 0.02));
        }
        params.insert("head.w", trunc_normal(&mut rng, width, hyper.embed_dim, 0.02));
        params.insert("head.b", Array2::zeros((1, hyper.embed_dim)));

        Self::assemble(schema, hyper, mode, params, layout, channels)
    }

    /// Rebuilds a model around parameters loaded from a checkpoint.
    pub fn from_params(
        schema: ModalitySchema,
        hyper: ModelHyper,
        mode: FusionMode,
        params: ParamSet,
    ) -> Result<Self> {
        let hyper = hyper.normalized()?;
        schema.validate()?;
        let layout = build_token_layout(&schema, hyper.tokens_per_channel, mode)?;
        let channels = embedding_channels(schema.modality_count(), mode)?;
        Self::assemble(schema, hyper, mode, params, layout, channels)
    }

    fn assemble(
        schema: ModalitySchema,
        hyper: ModelHyper,
        mode: FusionMode,
        params: ParamSet,
        layout: TokenLayout,
        channels: Vec<ChannelSet>,
    ) -> Result<Self> {
        let single_pass_masks = match mode {
            FusionMode::Eao => None,
            _ => Some(MaskCache::new(layout.clone(), mode)?),
        };
        let mut eao_passes = Vec::new();
        if mode == FusionMode::Eao {
            for subset in enumerate_channels(schema.modality_count(), FusionMode::Eao)? {
                let sub_layout = subset_layout(&schema, &subset);
                let masks = MaskCache::full(sub_layout.clone());
                eao_passes.push((subset, sub_layout, masks));
            }
        }
        Ok(Model {
            schema,
            hyper,
            mode,
            params,
            layout,
            channels,
            single_pass_masks,
            eao_passes,
        })
    }

    /// Exact count of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Transformer forward passes needed per sample: one for the
    /// single-pass modes, one per subset for EAO.
    pub fn forward_pass_count(&self) -> usize {
        match self.mode {
            FusionMode::Eao => self.eao_passes.len(),
            _ => 1,
        }
    }

    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        self.params.bind(graph)
    }

    /// Per-channel embeddings for one sample, dispatched by mode.
    pub fn embed_sample(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        sample: &Sample,
    ) -> Result<SampleEmbedding> {
        match self.mode {
            FusionMode::Eao => self.embed_eao(graph, bound, sample),
            _ => self.embed_single_pass(graph, bound, sample),
        }
    }

    pub fn embed_batch(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        samples: &[&Sample],
    ) -> Result<BatchEmbeddings> {
        let mut out = Vec::with_capacity(samples.len());
        for sample in samples {
            out.push(self.embed_sample(graph, bound, sample)?);
        }
        Ok(BatchEmbeddings { samples: out })
    }

    /// Encoded token block for one modality: encoder output zero-filled to
    /// the token budget when the sequence is short, or all-zero pad tokens
    /// when the modality is absent.
    fn modality_block(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        sample: &Sample,
        modality: usize,
    ) -> Result<NodeId> {
        let budget = self.schema.modalities[modality].token_budget;
        let width = self.hyper.width;
        match &sample.payloads[modality] {
            Some(payload) => {
                let (tokens, _) = encode_modality(
                    graph,
                    bound,
                    &self.schema,
                    modality,
                    payload,
                    width,
                )?;
                let have = graph.value(tokens).nrows();
                if have < budget {
                    let fill = graph.constant(Array2::zeros((budget - have, width)));
                    Ok(graph.concat_rows(&[tokens, fill]))
                } else {
                    Ok(tokens)
                }
            }
            None => Ok(graph.constant(Array2::zeros((budget, width)))),
        }
    }

    /// MCA/Zorro: one masked forward pass, then per-channel pooling.
    fn embed_single_pass(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        sample: &Sample,
    ) -> Result<SampleEmbedding> {
        let availability = channel_availability(&sample.presence, &self.channels);
        let mut blocks = Vec::with_capacity(self.schema.modality_count() + 1);
        for m in 0..self.schema.modality_count() {
            blocks.push(self.modality_block(graph, bound, sample, m)?);
        }
        blocks.push(bound.id("fusion.tokens"));
        let tokens = graph.concat_rows(&blocks);

        let cache = self.single_pass_masks.as_ref().expect("single-pass mask cache");
        let bias = graph.constant((*cache.bias_for(&sample.presence)).clone());
        let contextual = transformer_forward(graph, bound, &self.hyper, tokens, bias)?;

        let mut nodes = Vec::with_capacity(self.channels.len());
        for (c, channel) in self.channels.iter().enumerate() {
            if !availability.is_available(c) {
                nodes.push(None);
                continue;
            }
            let block = if channel.is_unimodal() {
                self.layout.modality_blocks[channel.members()[0]]
            } else {
                self.layout.fusion_block(channel).expect("fusion block for channel")
            };
            let pooled = pool_channel(
                graph,
                bound,
                contextual,
                block.offset,
                block.len,
                c,
                self.hyper.width,
            );
            nodes.push(Some(project_embedding(graph, bound, pooled)));
        }
        Ok(SampleEmbedding { nodes, availability })
    }

    /// EAO: one unmasked forward pass per modality subset, mean pooling
    /// over the present members' output tokens, shared projection.
    fn embed_eao(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        sample: &Sample,
    ) -> Result<SampleEmbedding> {
        let availability = channel_availability(&sample.presence, &self.channels);
        let mut nodes = Vec::with_capacity(self.channels.len());
        for (c, (subset, sub_layout, masks)) in self.eao_passes.iter().enumerate() {
            debug_assert_eq!(subset, &self.channels[c]);
            if !availability.is_available(c) {
                nodes.push(None);
                continue;
            }
            let mut blocks = Vec::with_capacity(subset.len());
            for &m in subset.members() {
                blocks.push(self.modality_block(graph, bound, sample, m)?);
            }
            let tokens = graph.concat_rows(&blocks);
            let sub_presence = PresenceBitmap::new(
                subset.members().iter().map(|&m| sample.presence.is_present(m)).collect(),
            );
            let bias = graph.constant((*masks.bias_for(&sub_presence)).clone());
            let contextual = transformer_forward(graph, bound, &self.hyper, tokens, bias)?;

            // Mean over the present members' (non-pad) output tokens.
            let mut kept = Vec::new();
            for (slot, &m) in subset.members().iter().enumerate() {
                if sample.presence.is_present(m) {
                    let block = sub_layout.modality_blocks[slot];
                    kept.push(graph.slice_rows(contextual, block.offset, block.len));
                }
            }
            let pooled_src =
                if kept.len() == 1 { kept[0] } else { graph.concat_rows(&kept) };
            let pooled = graph.mean_rows(pooled_src);
            nodes.push(Some(project_embedding(graph, bound, pooled)));
        }
        Ok(SampleEmbedding { nodes, availability })
    }
}

/// Modality-block-only layout for one EAO subset.
fn subset_layout(schema: &ModalitySchema, subset: &ChannelSet) -> TokenLayout {
    let mut offset = 0;
    let mut modality_blocks = Vec::with_capacity(subset.len());
    for &m in subset.members() {
        let len = schema.modalities[m].token_budget;
        modality_blocks.push(crate::masking::Block { offset, len });
        offset += len;
    }
    TokenLayout { modality_blocks, fusion_blocks: Vec::new(), total_tokens: offset }
}

/// Pre-layernorm transformer encoder stack with masked multi-head
/// attention and GeGLU feed-forward; depth 0 is the identity.
pub fn transformer_forward(
    graph: &mut Graph,
    bound: &BoundParams,
    hyper: &ModelHyper,
    tokens: NodeId,
    mask_bias: NodeId,
) -> Result<NodeId> {
    let width = hyper.width;
    let head_dim = width / hyper.heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut h = tokens;
    for layer in 0..hyper.depth {
        let p = |suffix: &str| format!("l{layer}.{suffix}");

        let ln1 = graph.layer_norm_rows(h, LN_EPS);
        let ln1 = graph.mul_row(ln1, bound.id(&p("ln1.g")));
        let ln1 = graph.add_row(ln1, bound.id(&p("ln1.b")));
        let q = graph.matmul(ln1, bound.id(&p("attn.wq")));
        let q = graph.add_row(q, bound.id(&p("attn.bq")));
        let k = graph.matmul(ln1, bound.id(&p("attn.wk")));
        let k = graph.add_row(k, bound.id(&p("attn.bk")));
        let v = graph.matmul(ln1, bound.id(&p("attn.wv")));
        let v = graph.add_row(v, bound.id(&p("attn.bv")));

        let mut head_outputs = Vec::with_capacity(hyper.heads);
        for head in 0..hyper.heads {
            let offset = head * head_dim;
            let qh = graph.slice_cols(q, offset, head_dim);
            let kh = graph.slice_cols(k, offset, head_dim);
            let vh = graph.slice_cols(v, offset, head_dim);
            let kt = graph.transpose(kh);
            let scores = graph.matmul(qh, kt);
            let scores = graph.scale(scores, scale);
            let scores = graph.add(scores, mask_bias);
            let attention = graph.softmax_rows(scores);
            head_outputs.push(graph.matmul(attention, vh));
        }
        let ctx = if head_outputs.len() == 1 {
            head_outputs[0]
        } else {
            graph.concat_cols(&head_outputs)
        };
        let attn_out = graph.matmul(ctx, bound.id(&p("attn.wo")));
        let attn_out = graph.add_row(attn_out, bound.id(&p("attn.bo")));
        h = graph.add(h, attn_out);

        let ln2 = graph.layer_norm_rows(h, LN_EPS);
        let ln2 = graph.mul_row(ln2, bound.id(&p("ln2.g")));
        let ln2 = graph.add_row(ln2, bound.id(&p("ln2.b")));
        let gate = graph.matmul(ln2, bound.id(&p("ff.wg")));
        let gate = graph.add_row(gate, bound.id(&p("ff.bg")));
        let gate = graph.gelu(gate);
        let value = graph.matmul(ln2, bound.id(&p("ff.wv")));
        let value = graph.add_row(value, bound.id(&p("ff.bv")));
        let ff = graph.mul(gate, value);
        let ff = graph.matmul(ff, bound.id(&p("ff.wo")));
        let ff = graph.add_row(ff, bound.id(&p("ff.bo")));
        h = graph.add(h, ff);

        if !graph.value(h).iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric {
                layer,
                detail: "non-finite activations after transformer layer".into(),
            });
        }
    }
    Ok(h)
}

/// Cross-attention pooling: channel query `channel_index` of `pool.q`
/// attends over rows `[offset, offset+len)` of the contextual tokens.
/// Single head, no feed-forward, no extra projections.
pub fn pool_channel(
    graph: &mut Graph,
    bound: &BoundParams,
    contextual: NodeId,
    offset: usize,
    len: usize,
    channel_index: usize,
    width: usize,
) -> NodeId {
    let tokens = graph.slice_rows(contextual, offset, len);
    let query = bound.id("pool.q");
    let query = graph.slice_rows(query, channel_index, 1);
    let keys = graph.transpose(tokens);
    let scores = graph.matmul(query, keys);
    let scores = graph.scale(scores, 1.0 / (width as f64).sqrt());
    let attention = graph.softmax_rows(scores);
    graph.matmul(attention, tokens)
}

/// Shared head projection to `embed_dim` followed by L2 normalization.
fn project_embedding(graph: &mut Graph, bound: &BoundParams, pooled: NodeId) -> NodeId {
    let z = graph.matmul(pooled, bound.id("head.w"));
    let z = graph.add_row(z, bound.id("head.b"));
    graph.l2_normalize_rows(z)
}

/// Renormalized mean of the available subset embeddings (`[k x d]`).
pub fn eao_inference_fusion(available: &Array2<f64>) -> Result<Array1<f64>> {
    if available.nrows() == 0 {
        return Err(Error::DegenerateFusion);
    }
    let mean = available.sum_axis(ndarray::Axis(0)) / available.nrows() as f64;
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return Err(Error::DegenerateFusion);
    }
    Ok(mean / norm)
}
