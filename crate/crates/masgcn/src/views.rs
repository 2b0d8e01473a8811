//! Multi-view attention: per-head semantic matrices, distance-mask
//! assembly, dependency-type attention, and the view-gated GCN stack.

use crate::autodiff::{Tape, Var};
use crate::corpus::FeatureBundle;
use crate::encoder::{self, ContextualEncoding};
use crate::error::{Error, Result};
use crate::model::ModelVars;
use crate::syntax::{MaskStack, TypeMatrix0};
use crate::objective;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape<'_>, v: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(v),
            Activation::Tanh => tape.tanh(v),
            Activation::Sigmoid => tape.sigmoid(v),
        }
    }
}

/// Tape bindings for one attention head.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub w_asp_a: Var,
    pub w_asp_k: Var,
    pub w_self_q: Var,
    pub w_self_k: Var,
}

/// Tape bindings for dependency-type attention.
#[derive(Debug, Clone, Copy)]
pub struct TypeAttnVars {
    pub h_type: Var,
    pub w_t: Var,
}

/// Tape bindings for one GCN layer and its view gate.
#[derive(Debug, Clone, Copy)]
pub struct GcnLayerVars {
    pub w: Var,
    pub gate_w1: Var,
    pub gate_w2: Var,
}

/// The assembled per-view adjacency stack for one sentence.
#[derive(Debug, Clone)]
pub struct ViewVars {
    pub a_sem: Vec<Var>,
    pub a_mask: Vec<Var>,
    pub a: Vec<Var>,
    pub a_type: Var,
}

/// Aspect-aware attention scores. The aspect summary row is projected
/// once and broadcast, so all output rows are identical by construction.
pub fn aspect_attention(
    tape: &mut Tape<'_>,
    enc: &ContextualEncoding,
    head: &HeadVars,
    b_a: Var,
) -> Var {
    let n = tape.value(enc.h).nrows();
    let mean = tape.mean_rows(enc.h_a);
    let projected = tape.matmul(mean, head.w_asp_a);
    let keys = tape.matmul(enc.h, head.w_asp_k);
    let row = tape.matmul_nt(projected, keys);
    let rep = tape.repeat_rows(row, n);
    let biased = tape.add_scalar(rep, b_a);
    tape.tanh(biased)
}

/// Scaled bilinear self-attention scores; query and key are both `h`.
pub fn self_attention(tape: &mut Tape<'_>, h: Var, head: &HeadVars) -> Var {
    let d = tape.value(h).ncols();
    let q = tape.matmul(h, head.w_self_q);
    let k = tape.matmul(h, head.w_self_k);
    let scores = tape.matmul_nt(q, k);
    tape.scale(scores, 1.0 / (d as f64).sqrt())
}

/// Elementwise sum of the two attention signals.
pub fn semantic_matrix(tape: &mut Tape<'_>, a_asp: Var, a_self: Var) -> Var {
    tape.add(a_asp, a_self)
}

/// Softmax over the U type scores scattered onto tree-edge cells; all
/// other cells stay 0.
pub fn type_attention(
    tape: &mut Tape<'_>,
    type0: &TypeMatrix0,
    params: &TypeAttnVars,
) -> Result<Var> {
    let u = tape.value(params.h_type).nrows();
    for ((i, j), &t) in type0.ids.indexed_iter() {
        if t as usize > u {
            return Err(Error::Vocab(format!(
                "type matrix cell ({}, {}) has id {} outside [1, {}]",
                i, j, t, u
            )));
        }
    }
    let scores = tape.matmul(params.h_type, params.w_t);
    let row = tape.transpose(scores);
    let alpha_row = tape.softmax_rows(row);
    let alpha = tape.transpose(alpha_row);
    Ok(tape.scatter_edges(alpha, type0.ids.clone()))
}

fn check_finite(tape: &Tape<'_>, v: Var, what: &str) -> Result<()> {
    if tape.value(v).iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("{} contains a non-finite entry", what)));
    }
    Ok(())
}

/// Masks each semantic matrix, row-normalizes, and adds the type matrix:
/// `A^i = softmax(A_sem^i + M^i) + A_type`.
pub fn assemble_views(
    tape: &mut Tape<'_>,
    a_sem: &[Var],
    masks: &MaskStack,
    a_type: Var,
) -> Result<ViewVars> {
    if a_sem.len() != masks.m.len() {
        return Err(Error::Shape(format!(
            "{} semantic matrices vs {} masks",
            a_sem.len(),
            masks.m.len()
        )));
    }
    check_finite(tape, a_type, "type attention matrix")?;
    let mut a_mask = Vec::with_capacity(a_sem.len());
    let mut a = Vec::with_capacity(a_sem.len());
    for (i, (&sem, mask)) in a_sem.iter().zip(&masks.m).enumerate() {
        check_finite(tape, sem, &format!("semantic matrix {}", i))?;
        if mask.iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric(format!("mask {} contains NaN", i)));
        }
        let mask_var = tape.constant_owned(mask.clone());
        let shifted = tape.add(sem, mask_var);
        let normalized = tape.softmax_rows(shifted);
        let combined = tape.add(normalized, a_type);
        a_mask.push(normalized);
        a.push(combined);
    }
    Ok(ViewVars {
        a_sem: a_sem.to_vec(),
        a_mask,
        a,
        a_type,
    })
}

/// Per-view scalar means of the message products, as a P x 1 column.
pub fn view_means(tape: &mut Tape<'_>, products: &[Var]) -> Var {
    let means: Vec<Var> = products.iter().map(|&p| tape.mean(p)).collect();
    tape.stack_rows(&means)
}

/// Gate values `W_2 sigma(W_1 H_avg)` as a P x 1 column, unnormalized
/// unless `normalize` is set.
pub fn view_gate(
    tape: &mut Tape<'_>,
    h_avg: Var,
    layer: &GcnLayerVars,
    activation: Activation,
    normalize: bool,
) -> Var {
    let z = tape.matmul(layer.gate_w1, h_avg);
    let hidden = activation.apply(tape, z);
    let gate = tape.matmul(layer.gate_w2, hidden);
    if normalize {
        let row = tape.transpose(gate);
        let sm = tape.softmax_rows(row);
        tape.transpose(sm)
    } else {
        gate
    }
}

/// Gate-weighted sum of the per-view message products.
pub fn gcn_aggregate(tape: &mut Tape<'_>, products: &[Var], gate: Var) -> Var {
    assert_eq!(
        tape.value(gate).dim(),
        (products.len(), 1),
        "gate must be one scalar per view"
    );
    let mut acc: Option<Var> = None;
    for (i, &p) in products.iter().enumerate() {
        let g = tape.gather_rows(gate, vec![i]);
        let weighted = tape.mul_scalar(p, g);
        acc = Some(match acc {
            Some(prev) => tape.add(prev, weighted),
            None => weighted,
        });
    }
    acc.expect("at least one view")
}

pub struct GcnLayerOutput {
    pub h: Var,
    /// Gate column actually applied (uniform 1/P when the gate is disabled).
    pub gate: Var,
}

/// One GCN layer: view products, gate, aggregate, linear map, activation.
/// With the gate disabled the aggregation is the unweighted view mean.
pub fn gcn_layer(
    tape: &mut Tape<'_>,
    h_prev: Var,
    views: &ViewVars,
    layer: &GcnLayerVars,
    activation: Activation,
    disable_view_gate: bool,
    normalize_gates: bool,
) -> GcnLayerOutput {
    let products: Vec<Var> = views.a.iter().map(|&a| tape.matmul(a, h_prev)).collect();
    let gate = if disable_view_gate {
        let p = products.len();
        tape.constant_owned(Array2::from_elem((p, 1), 1.0 / p as f64))
    } else {
        let h_avg = view_means(tape, &products);
        view_gate(tape, h_avg, layer, activation, normalize_gates)
    };
    let agg = gcn_aggregate(tape, &products, gate);
    let mapped = tape.matmul(agg, layer.w);
    let h = activation.apply(tape, mapped);
    GcnLayerOutput { h, gate }
}

/// Forward-pass switches; mirrors the training config's model knobs.
#[derive(Debug, Clone)]
pub struct ForwardOpts {
    pub hidden: usize,
    pub max_rel_pos: i32,
    pub activation: Activation,
    pub disable_view_gate: bool,
    pub normalize_gates: bool,
    pub capture_trace: bool,
}

/// Intermediate matrices captured for export.
#[derive(Debug, Clone)]
pub struct MatrixTrace {
    pub a_sem: Vec<Array2<f64>>,
    pub a_mask: Vec<Array2<f64>>,
    pub a: Vec<Array2<f64>>,
    pub a_type: Array2<f64>,
    /// Per-layer applied gate values, P per layer.
    pub gates: Vec<Vec<f64>>,
}

pub struct ForwardPass {
    pub logits: Var,
    /// Type attention matrix, shared across views; input to the SE loss.
    pub a_type: Var,
    pub trace: Option<MatrixTrace>,
}

/// Runs the whole model for one sentence: embed, encode, attention,
/// assembly, L gated GCN layers, aspect pooling, classifier.
pub fn forward<'a>(
    tape: &mut Tape<'a>,
    vars: &ModelVars,
    bundle: &'a FeatureBundle,
    dropout: Option<Array2<f64>>,
    opts: &ForwardOpts,
) -> Result<ForwardPass> {
    let aspect_idx = bundle.tok.aspect_indices();
    let x = encoder::embed(tape, &vars.tables, &bundle.tok, opts.max_rel_pos)?;
    let enc = encoder::encode(
        tape,
        x,
        &vars.lstm_fwd,
        &vars.lstm_bwd,
        opts.hidden,
        &aspect_idx,
        dropout,
    )?;

    let mut a_sem = Vec::with_capacity(vars.heads.len());
    for head in &vars.heads {
        let asp = aspect_attention(tape, &enc, head, vars.b_a);
        let slf = self_attention(tape, enc.h, head);
        a_sem.push(semantic_matrix(tape, asp, slf));
    }

    let a_type = type_attention(tape, &bundle.syn.type0, &vars.type_attn)?;
    let views = assemble_views(tape, &a_sem, &bundle.syn.masks, a_type)?;

    let mut h = enc.h;
    let mut gates = Vec::new();
    for layer in &vars.gcn {
        let out = gcn_layer(
            tape,
            h,
            &views,
            layer,
            opts.activation,
            opts.disable_view_gate,
            opts.normalize_gates,
        );
        h = out.h;
        if opts.capture_trace {
            gates.push(tape.value(out.gate).column(0).to_vec());
        }
    }

    let logits = objective::classify(tape, h, &aspect_idx, vars.w_p, vars.b_p)?;

    let trace = if opts.capture_trace {
        Some(MatrixTrace {
            a_sem: views.a_sem.iter().map(|&v| tape.value(v).clone()).collect(),
            a_mask: views.a_mask.iter().map(|&v| tape.value(v).clone()).collect(),
            a: views.a.iter().map(|&v| tape.value(v).clone()).collect(),
            a_type: tape.value(a_type).clone(),
            gates,
        })
    } else {
        None
    };

    Ok(ForwardPass {
        logits,
        a_type,
        trace,
    })
}
