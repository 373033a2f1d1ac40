//! Channel enumeration, token layouts, and modal-channel block attention masks.
//!
//! A *channel* is a nonempty subset of modalities that owns one pooled
//! embedding. The block attention mask gives every fusion channel its own
//! isolated attention lane: unimodal token blocks self-attend only, and a
//! fusion block attends to itself plus the token blocks of its member
//! modalities. Padding for missing modalities is applied on top of the rule
//! mask without disturbing any other token.

use crate::error::{Error, Result};
use crate::schema::{FusionMode, ModalitySchema};
use ndarray::Array2;
use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

/// Additive logit bias for disallowed attention pairs.
///
/// Large enough that `exp` underflows to exactly 0.0 in both f32 and f64,
/// so masked keys contribute nothing to the softmax mixture.
pub const MASK_NEG: f64 = -1e9;

/// A nonempty, strictly increasing set of modality indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChannelSet {
    members: Vec<usize>,
}

impl ChannelSet {
    /// Builds a channel from any iterator of indices; sorts and rejects
    /// duplicates or an empty set.
    pub fn new(members: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut members: Vec<usize> = members.into_iter().collect();
        members.sort_unstable();
        if members.is_empty() {
            return Err(Error::InvalidSchema("channel set must be nonempty".into()));
        }
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSchema("channel set has duplicate members".into()));
        }
        Ok(ChannelSet { members })
    }

    pub fn singleton(m: usize) -> Self {
        ChannelSet { members: vec![m] }
    }

    /// The full set {0, .., m-1}.
    pub fn full(m: usize) -> Self {
        ChannelSet { members: (0..m).collect() }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_unimodal(&self) -> bool {
        self.members.len() == 1
    }

    pub fn contains(&self, modality: usize) -> bool {
        self.members.binary_search(&modality).is_ok()
    }

    /// True when at least one member modality is present.
    pub fn intersects(&self, presence: &PresenceBitmap) -> bool {
        self.members.iter().any(|&m| presence.is_present(m))
    }

    /// Canonical text form, e.g. `m0` or `m0+m2`.
    pub fn label(&self) -> String {
        let parts: Vec<String> = self.members.iter().map(|m| format!("m{m}")).collect();
        parts.join("+")
    }

    /// Text form using schema modality names, e.g. `audio+face`.
    pub fn label_named(&self, schema: &ModalitySchema) -> String {
        let parts: Vec<&str> =
            self.members.iter().map(|&m| schema.modalities[m].name.as_str()).collect();
        parts.join("+")
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Canonical channel order: by subset size, then lexicographic members.
impl Ord for ChannelSet {
    fn cmp(&self, other: &Self) -> Ordering {
        self.members
            .len()
            .cmp(&other.members.len())
            .then_with(|| self.members.cmp(&other.members))
    }
}

impl PartialOrd for ChannelSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Per-modality presence flags for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PresenceBitmap {
    present: Vec<bool>,
}

impl PresenceBitmap {
    pub fn new(present: Vec<bool>) -> Self {
        PresenceBitmap { present }
    }

    pub fn all_present(modality_count: usize) -> Self {
        PresenceBitmap { present: vec![true; modality_count] }
    }

    pub fn from_present_indices(modality_count: usize, present: &[usize]) -> Self {
        let mut bits = vec![false; modality_count];
        for &m in present {
            bits[m] = true;
        }
        PresenceBitmap { present: bits }
    }

    pub fn len(&self) -> usize {
        self.present.len()
    }

    pub fn is_empty(&self) -> bool {
        self.present.is_empty()
    }

    pub fn is_present(&self, modality: usize) -> bool {
        self.present[modality]
    }

    pub fn any(&self) -> bool {
        self.present.iter().any(|&p| p)
    }

    pub fn all(&self) -> bool {
        self.present.iter().all(|&p| p)
    }

    pub fn present_count(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.present
    }

    /// Compact cache key; valid for up to 64 modalities.
    pub fn key(&self) -> u64 {
        self.present
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &p)| if p { acc | (1 << i) } else { acc })
    }
}

/// Per-channel availability flags for one sample, in canonical channel order.
///
/// A channel is available iff at least one of its member modalities is
/// present; for unimodal channels this reduces to plain presence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvailabilityBitmap {
    available: Vec<bool>,
}

impl AvailabilityBitmap {
    pub fn is_available(&self, channel: usize) -> bool {
        self.available[channel]
    }

    pub fn len(&self) -> usize {
        self.available.len()
    }

    pub fn is_empty(&self) -> bool {
        self.available.is_empty()
    }

    pub fn flags(&self) -> &[bool] {
        &self.available
    }

    pub fn any(&self) -> bool {
        self.available.iter().any(|&a| a)
    }
}

/// Enumerates the channel sets that carry fusion tokens (MCA/Zorro) or
/// identify forward passes (EAO).
///
/// MCA yields every subset of size >= 2 (2^M - M - 1 channels), Zorro the
/// single all-modality set, and EAO every subset of size 1 or 2.
pub fn enumerate_channels(modality_count: usize, mode: FusionMode) -> Result<Vec<ChannelSet>> {
    if modality_count < 2 {
        return Err(Error::InvalidSchema(format!(
            "channel enumeration needs at least 2 modalities, got {modality_count}"
        )));
    }
    let keep = |size: usize| match mode {
        FusionMode::Mca => size >= 2,
        FusionMode::Zorro => size == modality_count,
        FusionMode::Eao => size == 1 || size == 2,
    };
    let mut channels = Vec::new();
    for bits in 1u64..(1u64 << modality_count) {
        let members: Vec<usize> = (0..modality_count).filter(|&m| bits & (1 << m) != 0).collect();
        if keep(members.len()) {
            channels.push(ChannelSet { members });
        }
    }
    channels.sort();
    Ok(channels)
}

/// All channels that own an embedding: unimodal singletons plus the mode's
/// fusion channels, in canonical order.
pub fn embedding_channels(modality_count: usize, mode: FusionMode) -> Result<Vec<ChannelSet>> {
    let mut channels: Vec<ChannelSet> = match mode {
        // EAO's enumerated subsets already include the singletons.
        FusionMode::Eao => enumerate_channels(modality_count, mode)?,
        _ => {
            let mut all: Vec<ChannelSet> =
                (0..modality_count).map(ChannelSet::singleton).collect();
            all.extend(enumerate_channels(modality_count, mode)?);
            all
        }
    };
    channels.sort();
    Ok(channels)
}

/// Contiguous token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub offset: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }

    pub fn contains(&self, token: usize) -> bool {
        token >= self.offset && token < self.offset + self.len
    }
}

/// Deterministic map from flat token index to owning block.
///
/// Modality blocks come first in modality order, then fusion blocks in
/// canonical channel order. Blocks are contiguous, non-overlapping, and
/// cover `[0, total_tokens)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLayout {
    pub modality_blocks: Vec<Block>,
    pub fusion_blocks: Vec<(ChannelSet, Block)>,
    pub total_tokens: usize,
}

impl TokenLayout {
    pub fn modality_token_total(&self) -> usize {
        self.modality_blocks.iter().map(|b| b.len).sum()
    }

    pub fn fusion_token_total(&self) -> usize {
        self.fusion_blocks.iter().map(|(_, b)| b.len).sum()
    }

    pub fn fusion_block(&self, channel: &ChannelSet) -> Option<Block> {
        self.fusion_blocks.iter().find(|(c, _)| c == channel).map(|(_, b)| *b)
    }

    /// Which block owns each token, in flat order.
    pub fn owners(&self) -> Vec<TokenOwner> {
        let mut owners = vec![TokenOwner::Modality(0); self.total_tokens];
        for (m, block) in self.modality_blocks.iter().enumerate() {
            for t in block.range() {
                owners[t] = TokenOwner::Modality(m);
            }
        }
        for (f, (_, block)) in self.fusion_blocks.iter().enumerate() {
            for t in block.range() {
                owners[t] = TokenOwner::Fusion(f);
            }
        }
        owners
    }
}

/// Owner of one token position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenOwner {
    Modality(usize),
    /// Index into `TokenLayout::fusion_blocks`.
    Fusion(usize),
}

/// Builds the token layout for a schema and fusion mode.
///
/// MCA gets one `tokens_per_channel` block per fusion channel. Zorro gets a
/// single fusion block sized to the MCA total for the same modality count,
/// so the two modes keep parameter parity. EAO has no fusion blocks.
pub fn build_token_layout(
    schema: &ModalitySchema,
    tokens_per_channel: usize,
    mode: FusionMode,
) -> Result<TokenLayout> {
    schema.validate()?;
    if tokens_per_channel == 0 {
        return Err(Error::InvalidConfig("tokens_per_channel must be >= 1".into()));
    }
    let m = schema.modality_count();
    let mut offset = 0usize;
    let mut modality_blocks = Vec::with_capacity(m);
    for decl in &schema.modalities {
        modality_blocks.push(Block { offset, len: decl.token_budget });
        offset += decl.token_budget;
    }

    let mut fusion_blocks = Vec::new();
    match mode {
        FusionMode::Mca => {
            for channel in enumerate_channels(m, FusionMode::Mca)? {
                fusion_blocks.push((channel, Block { offset, len: tokens_per_channel }));
                offset += tokens_per_channel;
            }
        }
        FusionMode::Zorro => {
            let mca_fusion_total = ((1usize << m) - m - 1) * tokens_per_channel;
            fusion_blocks.push((ChannelSet::full(m), Block { offset, len: mca_fusion_total }));
            offset += mca_fusion_total;
        }
        FusionMode::Eao => {}
    }

    Ok(TokenLayout { modality_blocks, fusion_blocks, total_tokens: offset })
}

/// Boolean attention mask; `allowed[q, k]` means query `q` may attend key `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    allowed: Array2<bool>,
}

impl AttentionMask {
    pub fn full(tokens: usize) -> Self {
        AttentionMask { allowed: Array2::from_elem((tokens, tokens), true) }
    }

    pub fn dim(&self) -> usize {
        self.allowed.nrows()
    }

    pub fn is_allowed(&self, q: usize, k: usize) -> bool {
        self.allowed[[q, k]]
    }

    pub fn matrix(&self) -> &Array2<bool> {
        &self.allowed
    }

    pub fn count_allowed(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    /// Additive logit bias matrix: 0 where allowed, [`MASK_NEG`] elsewhere.
    pub fn to_bias(&self) -> Array2<f64> {
        self.allowed.mapv(|a| if a { 0.0 } else { MASK_NEG })
    }

    /// Portable text form: one row per line, `1` allowed / `0` masked.
    pub fn to_bitmap_text(&self) -> String {
        let n = self.dim();
        let mut out = String::with_capacity(n * (n + 1));
        for q in 0..n {
            for k in 0..n {
                out.push(if self.allowed[[q, k]] { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    /// Parses the text form written by [`AttentionMask::to_bitmap_text`].
    pub fn from_bitmap_text(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        let n = rows.len();
        let mut allowed = Array2::from_elem((n, n), false);
        for (q, row) in rows.iter().enumerate() {
            if row.chars().count() != n {
                return Err(Error::Parse(format!(
                    "mask row {q} has {} entries, expected {n}",
                    row.chars().count()
                )));
            }
            for (k, c) in row.chars().enumerate() {
                allowed[[q, k]] = match c {
                    '1' => true,
                    '0' => false,
                    other => return Err(Error::Parse(format!("bad mask char `{other}`"))),
                };
            }
        }
        Ok(AttentionMask { allowed })
    }
}

/// Builds the block attention rule mask for an MCA or Zorro layout.
///
/// `allowed[q, k]` iff (a) q and k share a modality block, (b) q is in
/// fusion block S and k belongs to a member modality of S, or (c) q and k
/// share a fusion block. Everything else is masked: unimodal blocks never
/// see each other, modality queries never see fusion keys, and distinct
/// fusion channels are isolated.
pub fn build_attention_mask(layout: &TokenLayout, mode: FusionMode) -> Result<AttentionMask> {
    if mode == FusionMode::Eao {
        return Err(Error::InvalidConfig(
            "EAO uses padding-only masking; build a full mask instead".into(),
        ));
    }
    let owners = layout.owners();
    let n = layout.total_tokens;
    let mut allowed = Array2::from_elem((n, n), false);
    for q in 0..n {
        for k in 0..n {
            allowed[[q, k]] = match (owners[q], owners[k]) {
                (TokenOwner::Modality(a), TokenOwner::Modality(b)) => a == b,
                (TokenOwner::Fusion(f), TokenOwner::Modality(m)) => {
                    layout.fusion_blocks[f].0.contains(m)
                }
                (TokenOwner::Fusion(a), TokenOwner::Fusion(b)) => a == b,
                (TokenOwner::Modality(_), TokenOwner::Fusion(_)) => false,
            };
        }
    }
    Ok(AttentionMask { allowed })
}

/// Applies missing-modality padding on top of a rule (or full) mask.
///
/// Every token of a missing modality becomes a pad: its key column is
/// cleared for all queries and its query row is cleared except for
/// self-attention, which is kept so the masked softmax stays well defined.
/// Pad outputs are never pooled or read downstream.
pub fn apply_padding(
    mask: &AttentionMask,
    layout: &TokenLayout,
    presence: &PresenceBitmap,
) -> AttentionMask {
    let mut allowed = mask.allowed.clone();
    for (m, block) in layout.modality_blocks.iter().enumerate() {
        if presence.is_present(m) {
            continue;
        }
        for p in block.range() {
            for q in 0..layout.total_tokens {
                allowed[[q, p]] = false;
            }
            for k in 0..layout.total_tokens {
                allowed[[p, k]] = false;
            }
            allowed[[p, p]] = true;
        }
    }
    AttentionMask { allowed }
}

/// Computes per-channel availability for one sample.
///
/// A fusion channel stays available while any member modality is present;
/// unimodal availability equals presence.
pub fn channel_availability(
    presence: &PresenceBitmap,
    channels: &[ChannelSet],
) -> AvailabilityBitmap {
    AvailabilityBitmap {
        available: channels.iter().map(|c| c.intersects(presence)).collect(),
    }
}

/// Caches padded mask biases per unique presence pattern (at most 2^M).
///
/// Safe for concurrent reads; insertions take the write lock briefly.
pub struct MaskCache {
    layout: TokenLayout,
    base: AttentionMask,
    bias: RwLock<HashMap<u64, Arc<Array2<f64>>>>,
}

impl MaskCache {
    /// Cache over the block attention rule mask (MCA/Zorro).
    pub fn new(layout: TokenLayout, mode: FusionMode) -> Result<Self> {
        let base = build_attention_mask(&layout, mode)?;
        Ok(MaskCache { layout, base, bias: RwLock::new(HashMap::new()) })
    }

    /// Cache over a full mask; padding is the only masking (EAO).
    pub fn full(layout: TokenLayout) -> Self {
        let base = AttentionMask::full(layout.total_tokens);
        MaskCache { layout, base, bias: RwLock::new(HashMap::new()) }
    }

    pub fn layout(&self) -> &TokenLayout {
        &self.layout
    }

    pub fn base(&self) -> &AttentionMask {
        &self.base
    }

    /// Padded additive bias for the given presence pattern.
    pub fn bias_for(&self, presence: &PresenceBitmap) -> Arc<Array2<f64>> {
        let key = presence.key();
        if let Some(hit) = self.bias.read().unwrap().get(&key) {
            return Arc::clone(hit);
        }
        let padded = apply_padding(&self.base, &self.layout, presence);
        let bias = Arc::new(padded.to_bias());
        let mut map = self.bias.write().unwrap();
        Arc::clone(map.entry(key).or_insert(bias))
    }
}
