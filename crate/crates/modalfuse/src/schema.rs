//! Modality declarations and fusion strategy selection.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// How per-channel embeddings are produced from a multimodal sample.
///
/// `Mca` fuses every modality combination in one forward pass through
/// per-channel fusion tokens, `Zorro` keeps a single all-modality fusion
/// channel, and `Eao` runs one forward pass per unimodal/bimodal subset and
/// fuses by averaging at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Mca,
    Zorro,
    Eao,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Mca, FusionMode::Zorro, FusionMode::Eao];

    pub fn label(&self) -> &'static str {
        match self {
            FusionMode::Mca => "mca",
            FusionMode::Zorro => "zorro",
            FusionMode::Eao => "eao",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mca" => Ok(FusionMode::Mca),
            "zorro" => Ok(FusionMode::Zorro),
            "eao" => Ok(FusionMode::Eao),
            other => Err(Error::InvalidConfig(format!("unknown fusion mode `{other}`"))),
        }
    }
}

/// Raw data layout of one modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityKind {
    /// A variable-length series of fixed-size vectors (one token per step).
    Sequence,
    /// A single row of scalar columns (one token per column).
    Tabular,
}

/// Declares one modality: name, kind, raw dimensionality, and token budget.
///
/// For tabular modalities the token budget always equals the column count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityDecl {
    pub name: String,
    pub kind: ModalityKind,
    /// Vector size per step (sequence) or column count (tabular).
    pub dim: usize,
    /// Number of tokens this modality occupies in the layout.
    pub token_budget: usize,
}

impl ModalityDecl {
    pub fn sequence(name: impl Into<String>, dim: usize, token_budget: usize) -> Self {
        ModalityDecl { name: name.into(), kind: ModalityKind::Sequence, dim, token_budget }
    }

    pub fn tabular(name: impl Into<String>, columns: usize) -> Self {
        ModalityDecl {
            name: name.into(),
            kind: ModalityKind::Tabular,
            dim: columns,
            token_budget: columns,
        }
    }
}

/// Ordered set of modality declarations for a dataset/model pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySchema {
    pub modalities: Vec<ModalityDecl>,
}

impl ModalitySchema {
    pub fn new(modalities: Vec<ModalityDecl>) -> Result<Self> {
        let schema = ModalitySchema { modalities };
        schema.validate()?;
        Ok(schema)
    }

    pub fn modality_count(&self) -> usize {
        self.modalities.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.len() < 2 {
            return Err(Error::InvalidSchema(format!(
                "need at least 2 modalities, got {}",
                self.modalities.len()
            )));
        }
        let mut names = std::collections::HashSet::new();
        for m in &self.modalities {
            if m.name.is_empty() {
                return Err(Error::InvalidSchema("empty modality name".into()));
            }
            if !names.insert(m.name.clone()) {
                return Err(Error::InvalidSchema(format!("duplicate modality name `{}`", m.name)));
            }
            if m.dim == 0 {
                return Err(Error::InvalidSchema(format!("modality `{}` has dim 0", m.name)));
            }
            if m.token_budget == 0 {
                return Err(Error::InvalidSchema(format!(
                    "modality `{}` has zero-length token block",
                    m.name
                )));
            }
            if m.kind == ModalityKind::Tabular && m.token_budget != m.dim {
                return Err(Error::InvalidSchema(format!(
                    "tabular modality `{}` must use one token per column ({} != {})",
                    m.name, m.token_budget, m.dim
                )));
            }
        }
        Ok(())
    }
}
