//! Owned model parameters: construction, seeded init, tape binding, and
//! the canonical tensor naming the optimizer and checkpoints rely on.

use crate::autodiff::{Tape, Var};
use crate::corpus::FeatureBundle;
use crate::encoder::{EmbeddingTables, LstmWeightVars, LstmWeights, TableVars};
use crate::error::{Error, Result};
use crate::views::{self, ForwardOpts, GcnLayerVars, HeadVars, MatrixTrace, TypeAttnVars};
use crate::objective;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Everything that fixes tensor shapes. Stored in checkpoints so a loaded
/// model cannot silently disagree with its weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub word_vocab: usize,
    pub pos_vocab: usize,
    pub num_types: usize,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub position_dim: usize,
    pub max_rel_pos: i32,
    pub hidden: usize,
    pub views: usize,
    pub gcn_layers: usize,
    pub gate_reduction: usize,
    pub freeze_word_embeddings: bool,
}

impl ModelShape {
    /// Token feature width D (BiLSTM output).
    pub fn feature_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.word_dim + self.pos_dim + self.position_dim
    }

    /// Width of the gate bottleneck.
    pub fn gate_hidden(&self) -> usize {
        (self.views / self.gate_reduction).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("word_vocab", self.word_vocab),
            ("pos_vocab", self.pos_vocab),
            ("num_types", self.num_types),
            ("word_dim", self.word_dim),
            ("pos_dim", self.pos_dim),
            ("position_dim", self.position_dim),
            ("hidden", self.hidden),
            ("views", self.views),
            ("gcn_layers", self.gcn_layers),
            ("gate_reduction", self.gate_reduction),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{} must be positive", name)));
            }
        }
        if self.max_rel_pos < 1 {
            return Err(Error::Config("max_rel_pos must be at least 1".into()));
        }
        if self.gate_reduction > self.views {
            return Err(Error::Config(format!(
                "gate_reduction {} exceeds view count {}",
                self.gate_reduction, self.views
            )));
        }
        Ok(())
    }
}

/// Projections for one attention head, all D x D.
#[derive(Debug, Clone)]
pub struct HeadParams {
    pub w_asp_a: Array2<f64>,
    pub w_asp_k: Array2<f64>,
    pub w_self_q: Array2<f64>,
    pub w_self_k: Array2<f64>,
}

/// One GCN layer: feature projection plus the two gate matrices.
#[derive(Debug, Clone)]
pub struct GcnLayerParams {
    pub w: Array2<f64>,
    pub gate_w1: Array2<f64>,
    pub gate_w2: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub tables: EmbeddingTables,
    pub lstm_fwd: LstmWeights,
    pub lstm_bwd: LstmWeights,
    pub heads: Vec<HeadParams>,
    /// Shared scalar bias inside the aspect-attention tanh.
    pub b_a: Array2<f64>,
    pub h_type: Array2<f64>,
    pub w_t: Array2<f64>,
    pub gcn: Vec<GcnLayerParams>,
    pub w_p: Array2<f64>,
    pub b_p: Array2<f64>,
}

fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

fn embedding_init(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-0.25..0.25))
}

impl ModelParams {
    /// Fresh parameters. The draw order is fixed (table order below);
    /// changing it changes every seeded run.
    pub fn init(shape: ModelShape, rng: &mut impl Rng) -> Result<Self> {
        shape.validate()?;
        let d = shape.feature_dim();
        let mut word = embedding_init(rng, shape.word_vocab, shape.word_dim);
        word.row_mut(0).fill(0.0);
        let pos = embedding_init(rng, shape.pos_vocab, shape.pos_dim);
        let position = embedding_init(
            rng,
            2 * shape.max_rel_pos as usize + 1,
            shape.position_dim,
        );
        let tables = EmbeddingTables {
            word,
            pos,
            position,
            max_rel_pos: shape.max_rel_pos,
        };
        let lstm_fwd = LstmWeights::init(rng, shape.input_dim(), shape.hidden);
        let lstm_bwd = LstmWeights::init(rng, shape.input_dim(), shape.hidden);
        let heads = (0..shape.views)
            .map(|_| HeadParams {
                w_asp_a: xavier(rng, d, d),
                w_asp_k: xavier(rng, d, d),
                w_self_q: xavier(rng, d, d),
                w_self_k: xavier(rng, d, d),
            })
            .collect();
        let b_a = Array2::zeros((1, 1));
        let h_type = embedding_init(rng, shape.num_types, d);
        let w_t = xavier(rng, d, 1);
        let gh = shape.gate_hidden();
        let gcn = (0..shape.gcn_layers)
            .map(|_| GcnLayerParams {
                w: xavier(rng, d, d),
                gate_w1: xavier(rng, gh, shape.views),
                gate_w2: xavier(rng, shape.views, gh),
            })
            .collect();
        let w_p = xavier(rng, d, objective::NUM_CLASSES);
        let b_p = Array2::zeros((1, objective::NUM_CLASSES));
        Ok(ModelParams {
            shape,
            tables,
            lstm_fwd,
            lstm_bwd,
            heads,
            b_a,
            h_type,
            w_t,
            gcn,
            w_p,
            b_p,
        })
    }

    /// All-zero tensors for the given shape; checkpoint loading fills them.
    pub fn zeroed(shape: ModelShape) -> Result<Self> {
        shape.validate()?;
        let d = shape.feature_dim();
        let tables = EmbeddingTables {
            word: Array2::zeros((shape.word_vocab, shape.word_dim)),
            pos: Array2::zeros((shape.pos_vocab, shape.pos_dim)),
            position: Array2::zeros((
                2 * shape.max_rel_pos as usize + 1,
                shape.position_dim,
            )),
            max_rel_pos: shape.max_rel_pos,
        };
        let zero_lstm = || LstmWeights {
            w_x: Array2::zeros((shape.input_dim(), 4 * shape.hidden)),
            w_h: Array2::zeros((shape.hidden, 4 * shape.hidden)),
            b: Array2::zeros((1, 4 * shape.hidden)),
        };
        let heads = (0..shape.views)
            .map(|_| HeadParams {
                w_asp_a: Array2::zeros((d, d)),
                w_asp_k: Array2::zeros((d, d)),
                w_self_q: Array2::zeros((d, d)),
                w_self_k: Array2::zeros((d, d)),
            })
            .collect();
        let gh = shape.gate_hidden();
        let gcn = (0..shape.gcn_layers)
            .map(|_| GcnLayerParams {
                w: Array2::zeros((d, d)),
                gate_w1: Array2::zeros((gh, shape.views)),
                gate_w2: Array2::zeros((shape.views, gh)),
            })
            .collect();
        Ok(ModelParams {
            lstm_fwd: zero_lstm(),
            lstm_bwd: zero_lstm(),
            tables,
            heads,
            b_a: Array2::zeros((1, 1)),
            h_type: Array2::zeros((shape.num_types, d)),
            w_t: Array2::zeros((d, 1)),
            gcn,
            w_p: Array2::zeros((d, objective::NUM_CLASSES)),
            b_p: Array2::zeros((1, objective::NUM_CLASSES)),
            shape,
        })
    }

    /// Replaces the word table, e.g. with pretrained vectors. Shape-checked.
    pub fn set_word_table(&mut self, table: Array2<f64>) -> Result<()> {
        if table.dim() != (self.shape.word_vocab, self.shape.word_dim) {
            return Err(Error::Shape(format!(
                "word table is {:?}, expected ({}, {})",
                table.dim(),
                self.shape.word_vocab,
                self.shape.word_dim
            )));
        }
        self.tables.word = table;
        self.zero_word_pad_row();
        Ok(())
    }

    /// The pad token must embed to zero; call after any update to the table.
    pub fn zero_word_pad_row(&mut self) {
        self.tables.word.row_mut(0).fill(0.0);
    }

    /// Canonical (name, tensor) listing. Optimizer state, checkpoints and
    /// gradient collection all key off this exact order.
    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![
            ("embed.word".into(), &self.tables.word),
            ("embed.pos".into(), &self.tables.pos),
            ("embed.position".into(), &self.tables.position),
            ("lstm.fwd.w_x".into(), &self.lstm_fwd.w_x),
            ("lstm.fwd.w_h".into(), &self.lstm_fwd.w_h),
            ("lstm.fwd.b".into(), &self.lstm_fwd.b),
            ("lstm.bwd.w_x".into(), &self.lstm_bwd.w_x),
            ("lstm.bwd.w_h".into(), &self.lstm_bwd.w_h),
            ("lstm.bwd.b".into(), &self.lstm_bwd.b),
        ];
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("head{}.w_asp_a", i), &h.w_asp_a));
            out.push((format!("head{}.w_asp_k", i), &h.w_asp_k));
            out.push((format!("head{}.w_self_q", i), &h.w_self_q));
            out.push((format!("head{}.w_self_k", i), &h.w_self_k));
        }
        out.push(("attn.b_a".into(), &self.b_a));
        out.push(("type.h_type".into(), &self.h_type));
        out.push(("type.w_t".into(), &self.w_t));
        for (l, g) in self.gcn.iter().enumerate() {
            out.push((format!("gcn{}.w", l), &g.w));
            out.push((format!("gcn{}.gate_w1", l), &g.gate_w1));
            out.push((format!("gcn{}.gate_w2", l), &g.gate_w2));
        }
        out.push(("clf.w_p".into(), &self.w_p));
        out.push(("clf.b_p".into(), &self.b_p));
        out
    }

    /// Mutable view in the identical order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out: Vec<(String, &mut Array2<f64>)> = vec![
            ("embed.word".into(), &mut self.tables.word),
            ("embed.pos".into(), &mut self.tables.pos),
            ("embed.position".into(), &mut self.tables.position),
            ("lstm.fwd.w_x".into(), &mut self.lstm_fwd.w_x),
            ("lstm.fwd.w_h".into(), &mut self.lstm_fwd.w_h),
            ("lstm.fwd.b".into(), &mut self.lstm_fwd.b),
            ("lstm.bwd.w_x".into(), &mut self.lstm_bwd.w_x),
            ("lstm.bwd.w_h".into(), &mut self.lstm_bwd.w_h),
            ("lstm.bwd.b".into(), &mut self.lstm_bwd.b),
        ];
        for (i, h) in self.heads.iter_mut().enumerate() {
            out.push((format!("head{}.w_asp_a", i), &mut h.w_asp_a));
            out.push((format!("head{}.w_asp_k", i), &mut h.w_asp_k));
            out.push((format!("head{}.w_self_q", i), &mut h.w_self_q));
            out.push((format!("head{}.w_self_k", i), &mut h.w_self_k));
        }
        out.push(("attn.b_a".into(), &mut self.b_a));
        out.push(("type.h_type".into(), &mut self.h_type));
        out.push(("type.w_t".into(), &mut self.w_t));
        for (l, g) in self.gcn.iter_mut().enumerate() {
            out.push((format!("gcn{}.w", l), &mut g.w));
            out.push((format!("gcn{}.gate_w1", l), &mut g.gate_w1));
            out.push((format!("gcn{}.gate_w2", l), &mut g.gate_w2));
        }
        out.push(("clf.w_p".into(), &mut self.w_p));
        out.push(("clf.b_p".into(), &mut self.b_p));
        out
    }

    /// Whether gradient steps apply to this tensor.
    pub fn is_trainable(&self, name: &str) -> bool {
        !(name == "embed.word" && self.shape.freeze_word_embeddings)
    }

    /// Binds every tensor onto a tape by reference. The word table becomes
    /// a constant when frozen so no gradient is even accumulated for it.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> ModelVars {
        let word = if self.shape.freeze_word_embeddings {
            tape.constant(&self.tables.word)
        } else {
            tape.param(&self.tables.word)
        };
        let tables = TableVars {
            word,
            pos: tape.param(&self.tables.pos),
            position: tape.param(&self.tables.position),
        };
        let lstm_fwd = LstmWeightVars::bind(tape, &self.lstm_fwd);
        let lstm_bwd = LstmWeightVars::bind(tape, &self.lstm_bwd);
        let heads = self
            .heads
            .iter()
            .map(|h| HeadVars {
                w_asp_a: tape.param(&h.w_asp_a),
                w_asp_k: tape.param(&h.w_asp_k),
                w_self_q: tape.param(&h.w_self_q),
                w_self_k: tape.param(&h.w_self_k),
            })
            .collect();
        let b_a = tape.param(&self.b_a);
        let type_attn = TypeAttnVars {
            h_type: tape.param(&self.h_type),
            w_t: tape.param(&self.w_t),
        };
        let gcn = self
            .gcn
            .iter()
            .map(|g| GcnLayerVars {
                w: tape.param(&g.w),
                gate_w1: tape.param(&g.gate_w1),
                gate_w2: tape.param(&g.gate_w2),
            })
            .collect();
        ModelVars {
            tables,
            lstm_fwd,
            lstm_bwd,
            heads,
            b_a,
            type_attn,
            gcn,
            w_p: tape.param(&self.w_p),
            b_p: tape.param(&self.b_p),
        }
    }

    /// Forward options consistent with this shape.
    pub fn forward_opts(
        &self,
        activation: views::Activation,
        disable_view_gate: bool,
        normalize_gates: bool,
        capture_trace: bool,
    ) -> ForwardOpts {
        ForwardOpts {
            hidden: self.shape.hidden,
            max_rel_pos: self.shape.max_rel_pos,
            activation,
            disable_view_gate,
            normalize_gates,
            capture_trace,
        }
    }
}

/// Tape bindings for the whole model, in the same canonical order.
pub struct ModelVars {
    pub tables: TableVars,
    pub lstm_fwd: LstmWeightVars,
    pub lstm_bwd: LstmWeightVars,
    pub heads: Vec<HeadVars>,
    pub b_a: Var,
    pub type_attn: TypeAttnVars,
    pub gcn: Vec<GcnLayerVars>,
    pub w_p: Var,
    pub b_p: Var,
}

impl ModelVars {
    /// (name, var) pairs aligned with `ModelParams::named_tensors`.
    pub fn named_vars(&self) -> Vec<(String, Var)> {
        let mut out: Vec<(String, Var)> = vec![
            ("embed.word".into(), self.tables.word),
            ("embed.pos".into(), self.tables.pos),
            ("embed.position".into(), self.tables.position),
            ("lstm.fwd.w_x".into(), self.lstm_fwd.w_x),
            ("lstm.fwd.w_h".into(), self.lstm_fwd.w_h),
            ("lstm.fwd.b".into(), self.lstm_fwd.b),
            ("lstm.bwd.w_x".into(), self.lstm_bwd.w_x),
            ("lstm.bwd.w_h".into(), self.lstm_bwd.w_h),
            ("lstm.bwd.b".into(), self.lstm_bwd.b),
        ];
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("head{}.w_asp_a", i), h.w_asp_a));
            out.push((format!("head{}.w_asp_k", i), h.w_asp_k));
            out.push((format!("head{}.w_self_q", i), h.w_self_q));
            out.push((format!("head{}.w_self_k", i), h.w_self_k));
        }
        out.push(("attn.b_a".into(), self.b_a));
        out.push(("type.h_type".into(), self.type_attn.h_type));
        out.push(("type.w_t".into(), self.type_attn.w_t));
        for (l, g) in self.gcn.iter().enumerate() {
            out.push((format!("gcn{}.w", l), g.w));
            out.push((format!("gcn{}.gate_w1", l), g.gate_w1));
            out.push((format!("gcn{}.gate_w2", l), g.gate_w2));
        }
        out.push(("clf.w_p".into(), self.w_p));
        out.push(("clf.b_p".into(), self.b_p));
        out
    }
}

/// One sentence's loss pieces. `total` stays on the tape for backward;
/// the floats are detached values for logging.
pub struct ExampleLoss {
    pub total: Var,
    pub ce: f64,
    pub se: f64,
    pub logits: Array2<f64>,
    pub trace: Option<MatrixTrace>,
}

/// Cross-entropy plus `se_weight` times the structural-entropy loss.
/// A zero weight skips the entropy graph entirely, so the total is
/// bit-identical to plain cross-entropy.
pub fn example_loss<'a>(
    tape: &mut Tape<'a>,
    vars: &ModelVars,
    bundle: &'a FeatureBundle,
    dropout: Option<Array2<f64>>,
    se_weight: f64,
    opts: &ForwardOpts,
) -> Result<ExampleLoss> {
    let pass = views::forward(tape, vars, bundle, dropout, opts)?;
    let logits = tape.value(pass.logits).clone();
    let ce = objective::cross_entropy(tape, pass.logits, bundle.tok.label_id as usize);
    let ce_val = tape.value(ce)[(0, 0)];
    if !ce_val.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite cross entropy {}",
            ce_val
        )));
    }
    let (total, se_val) = if se_weight == 0.0 {
        (ce, 0.0)
    } else {
        let se = objective::structural_entropy_loss(tape, pass.a_type, &bundle.syn.partition)?;
        let se_val = tape.value(se)[(0, 0)];
        if !se_val.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite structural entropy {}",
                se_val
            )));
        }
        let scaled = tape.scale(se, se_weight);
        (tape.add(ce, scaled), se_val)
    };
    Ok(ExampleLoss {
        total,
        ce: ce_val,
        se: se_val,
        logits,
        trace: pass.trace,
    })
}
