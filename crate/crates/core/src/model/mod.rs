//! Encoder-only transformer token classifier.
//!
//! One architecture covers the BERT/ROBERTA layout (independent layers,
//! embedding size equal to hidden size) and the ALBERT layout (factorized
//! embeddings projected to the hidden size, one parameter set shared by every
//! layer). Layers are post-LayerNorm:
//!
//! ```text
//! x <- LayerNorm(x + MultiHead(x))
//! x <- LayerNorm(x + GELU(x W1 + b1) W2 + b2)
//! ```

mod attention;
mod checkpoint;
mod forward;
mod params;
mod real;

use serde::{Deserialize, Serialize};

use crate::tags::BioLabel;

pub use attention::{attention, attention_backward};
pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CheckpointHeader};
pub use forward::{backward, forward, loss_and_grad, ForwardTrace, Mode};
pub use params::{init_model, LayerField, ParamKind, ParamSpec, Slot, TaggerModel, TopField};
pub use real::Real;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("input: {0}")]
    Input(String),
    #[error("every position in the batch is ignored")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Naming scheme for parameter paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Bert,
    Roberta,
    Albert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub type_vocab: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub share_layers: bool,
    pub factorized_embedding: bool,
    pub num_labels: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

fn default_eps() -> f64 {
    1e-12
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    /// Number of distinct layer parameter sets.
    pub fn layer_sets(&self) -> usize {
        if self.share_layers {
            1
        } else {
            self.num_layers
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
            ("type_vocab", self.type_vocab),
            ("embedding_dim", self.embedding_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("num_labels", self.num_labels),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(ModelError::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !self.factorized_embedding && self.embedding_dim != self.hidden_dim {
            return Err(ModelError::Config(
                "embedding_dim must equal hidden_dim unless factorized_embedding is set".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(ModelError::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    fn preset(family: Family, vocab: usize, positions: usize, types: usize, e: usize, h: usize, layers: usize, heads: usize, f: usize) -> Self {
        let albert = family == Family::Albert;
        ModelConfig {
            family,
            vocab_size: vocab,
            max_positions: positions,
            type_vocab: types,
            embedding_dim: e,
            hidden_dim: h,
            num_layers: layers,
            num_heads: heads,
            ffn_dim: f,
            dropout: if albert { 0.0 } else { 0.1 },
            share_layers: albert,
            factorized_embedding: albert,
            num_labels: BioLabel::COUNT,
            layer_norm_eps: 1e-12,
        }
    }

    pub fn bert_base() -> Self {
        Self::preset(Family::Bert, 30522, 512, 2, 768, 768, 12, 12, 3072)
    }

    pub fn bert_large() -> Self {
        Self::preset(Family::Bert, 30522, 512, 2, 1024, 1024, 24, 16, 4096)
    }

    pub fn roberta_base() -> Self {
        Self::preset(Family::Roberta, 50265, 514, 1, 768, 768, 12, 12, 3072)
    }

    pub fn roberta_large() -> Self {
        Self::preset(Family::Roberta, 50265, 514, 1, 1024, 1024, 24, 16, 4096)
    }

    pub fn albert_base() -> Self {
        Self::preset(Family::Albert, 30000, 512, 2, 128, 768, 12, 12, 3072)
    }

    pub fn albert_xxlarge() -> Self {
        Self::preset(Family::Albert, 30000, 512, 2, 128, 4096, 12, 64, 16384)
    }

    /// Desk-scale default: 2 layers, hidden 32, 2 heads. Dropout is on
    /// because plain SGD at the desk learning rates diverges without it.
    pub fn tiny(vocab_size: usize, max_positions: usize) -> Self {
        ModelConfig {
            family: Family::Bert,
            vocab_size,
            max_positions,
            type_vocab: 2,
            embedding_dim: 32,
            hidden_dim: 32,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 64,
            dropout: 0.1,
            share_layers: false,
            factorized_embedding: false,
            num_labels: BioLabel::COUNT,
            layer_norm_eps: 1e-12,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "bert-base" => Self::bert_base(),
            "bert-large" => Self::bert_large(),
            "roberta-base" => Self::roberta_base(),
            "roberta-large" => Self::roberta_large(),
            "albert-base" => Self::albert_base(),
            "albert-xxlarge" => Self::albert_xxlarge(),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub name: String,
    pub count: u64,
}

/// Per-tensor parameter counts in module order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterLedger {
    pub entries: Vec<LedgerEntry>,
    pub total: u64,
}

impl ParameterLedger {
    pub fn get(&self, name: &str) -> Option<u64> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.count)
    }

    pub fn render(&self) -> String {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{:<width$}  {:>12}\n", e.name, e.count));
        }
        out.push_str(&format!("{:<width$}  {:>12}\n", "total", self.total));
        out
    }
}

/// Exact parameter counts. Shared layers are counted once.
pub fn count_parameters(config: &ModelConfig) -> ParameterLedger {
    let entries: Vec<LedgerEntry> = params::layout(config)
        .into_iter()
        .map(|spec| LedgerEntry {
            count: spec.shape.iter().map(|&d| d as u64).product(),
            name: spec.name,
        })
        .collect();
    let total = entries.iter().map(|e| e.count).sum();
    ParameterLedger { entries, total }
}
