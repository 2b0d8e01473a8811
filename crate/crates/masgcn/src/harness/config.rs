//! Run configuration: JSON in, validated knobs out.

use crate::error::{Error, Result};
use crate::model::ModelShape;
use crate::views::Activation;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Every knob a run reads. Unknown JSON keys are rejected so a typo cannot
/// silently fall back to a default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Number of attention views / distance masks (P).
    pub views: usize,
    pub gcn_layers: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Input-embedding dropout rate.
    pub dropout: f64,
    /// Weight of the structural-entropy loss.
    pub gamma: f64,
    pub lstm_hidden: usize,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub position_dim: usize,
    pub max_rel_pos: i32,
    pub epochs: usize,
    pub activation: Activation,
    /// Bottleneck divisor for the two gate matrices.
    pub gate_reduction: usize,
    pub freeze_word_embeddings: bool,
    /// Ablation: drop the entropy term from the objective.
    pub disable_se_loss: bool,
    /// Ablation: replace the learned view gate with a uniform constant.
    pub disable_view_gate: bool,
    /// Off by default: the gate is used as raw scores, not a distribution.
    pub normalize_gates: bool,
    /// Stop once training accuracy reaches this level, if set.
    pub early_stop_train_acc: Option<f64>,
    pub track_train_accuracy: bool,
    /// Optional word-vector file; absent means random init.
    pub pretrained_vectors: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 1,
            views: 10,
            gcn_layers: 2,
            batch_size: 16,
            lr: 0.002,
            dropout: 0.7,
            gamma: 0.01,
            lstm_hidden: 50,
            word_dim: 300,
            pos_dim: 30,
            position_dim: 30,
            max_rel_pos: 40,
            epochs: 50,
            activation: Activation::Relu,
            gate_reduction: 1,
            freeze_word_embeddings: true,
            disable_se_loss: false,
            disable_view_gate: false,
            normalize_gates: false,
            early_stop_train_acc: None,
            track_train_accuracy: true,
            pretrained_vectors: None,
        }
    }
}

impl TrainConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: TrainConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Config(format!(
                "gamma must be nonnegative, got {}",
                self.gamma
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if let Some(acc) = self.early_stop_train_acc {
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::Config(format!(
                    "early_stop_train_acc must be in [0, 1], got {}",
                    acc
                )));
            }
        }
        // shape constraints (positive dims, gate_reduction <= views, ...)
        self.shape(2, 2, 1).validate()
    }

    /// Model shape for the given vocabulary sizes.
    pub fn shape(&self, word_vocab: usize, pos_vocab: usize, num_types: usize) -> ModelShape {
        ModelShape {
            word_vocab,
            pos_vocab,
            num_types,
            word_dim: self.word_dim,
            pos_dim: self.pos_dim,
            position_dim: self.position_dim,
            max_rel_pos: self.max_rel_pos,
            hidden: self.lstm_hidden,
            views: self.views,
            gcn_layers: self.gcn_layers,
            gate_reduction: self.gate_reduction,
            freeze_word_embeddings: self.freeze_word_embeddings,
        }
    }

    /// Effective entropy-loss weight after the ablation switch.
    pub fn effective_gamma(&self) -> f64 {
        if self.disable_se_loss {
            0.0
        } else {
            self.gamma
        }
    }
}
