//! Token embedding and the bidirectional LSTM encoder.

use crate::autodiff::{Tape, Var};
use crate::corpus::{TokenizedExample, Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use ndarray::Array2;
use rand::Rng;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

/// Learnable lookup tables. Row 0 of the word and POS tables is the pad
/// row: all-zero and never updated.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables {
    pub word: Array2<f64>,
    pub pos: Array2<f64>,
    /// Indexed by rel_position + max_rel_pos, shape (2*max_rel_pos+1) x dim.
    pub position: Array2<f64>,
    pub max_rel_pos: i32,
}

impl EmbeddingTables {
    pub fn word_dim(&self) -> usize {
        self.word.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.word.ncols() + self.pos.ncols() + self.position.ncols()
    }
}

/// One direction's LSTM weights: input, recurrent, bias. Gate order along
/// the 4H axis is input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub w_x: Array2<f64>,
    pub w_h: Array2<f64>,
    pub b: Array2<f64>,
}

impl LstmWeights {
    pub fn hidden(&self) -> usize {
        self.w_h.nrows()
    }

    pub fn init(rng: &mut impl Rng, input_dim: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut uniform = |r: usize, c: usize| {
            Array2::from_shape_fn((r, c), |_| rng.gen_range(-bound..bound))
        };
        LstmWeights {
            w_x: uniform(input_dim, 4 * hidden),
            w_h: uniform(hidden, 4 * hidden),
            b: Array2::zeros((1, 4 * hidden)),
        }
    }
}

/// Tape bindings for the three tables.
#[derive(Debug, Clone, Copy)]
pub struct TableVars {
    pub word: Var,
    pub pos: Var,
    pub position: Var,
}

/// Tape bindings for one direction.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeightVars {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

impl LstmWeightVars {
    pub fn bind<'a>(tape: &mut Tape<'a>, w: &'a LstmWeights) -> Self {
        LstmWeightVars {
            w_x: tape.param(&w.w_x),
            w_h: tape.param(&w.w_h),
            b: tape.param(&w.b),
        }
    }
}

/// Contextual features for one sentence, all living on the tape.
#[derive(Debug, Clone, Copy)]
pub struct ContextualEncoding {
    /// N x D token features.
    pub h: Var,
    /// M x D rows of `h` at aspect positions.
    pub h_a: Var,
    /// N x D broadcast of the aspect-row mean.
    pub h_a_hat: Var,
}

/// Per-token concatenation [word | pos | position]. A pad word id zeroes
/// the whole row: pad marks token absence, not a real position.
pub fn embed(
    tape: &mut Tape<'_>,
    tables: &TableVars,
    tok: &TokenizedExample,
    max_rel_pos: i32,
) -> Result<Var> {
    let n_word = tape.value(tables.word).nrows();
    let n_pos = tape.value(tables.pos).nrows();
    let n_position = tape.value(tables.position).nrows();
    let mut position_ids = Vec::with_capacity(tok.len());
    for (i, &r) in tok.rel_positions.iter().enumerate() {
        let idx = r + max_rel_pos;
        if idx < 0 || idx as usize >= n_position {
            return Err(Error::Shape(format!(
                "token {}: rel position {} outside table for max_rel_pos {}",
                i, r, max_rel_pos
            )));
        }
        position_ids.push(idx as usize);
    }
    for (i, &w) in tok.word_ids.iter().enumerate() {
        if w as usize >= n_word {
            return Err(Error::Shape(format!("token {}: word id {} out of range", i, w)));
        }
        if tok.pos_ids[i] as usize >= n_pos {
            return Err(Error::Shape(format!(
                "token {}: pos id {} out of range",
                i, tok.pos_ids[i]
            )));
        }
    }

    let word_rows = tape.gather_rows(
        tables.word,
        tok.word_ids.iter().map(|&w| w as usize).collect(),
    );
    let pos_rows = tape.gather_rows(
        tables.pos,
        tok.pos_ids.iter().map(|&p| p as usize).collect(),
    );
    let position_rows = tape.gather_rows(tables.position, position_ids);
    let left = tape.concat_cols(word_rows, pos_rows);
    let mut x = tape.concat_cols(left, position_rows);

    if tok.word_ids.contains(&PAD_ID) {
        let width = tape.value(x).ncols();
        let mask = Array2::from_shape_fn((tok.len(), width), |(i, _)| {
            if tok.word_ids[i] == PAD_ID {
                0.0
            } else {
                1.0
            }
        });
        let mask = tape.constant_owned(mask);
        x = tape.mul(x, mask);
    }
    Ok(x)
}

/// Inverted-dropout mask: zeros with probability `rate`, survivors scaled
/// by 1/(1-rate) so expectations match eval mode.
pub fn dropout_mask(rng: &mut impl Rng, rows: usize, cols: usize, rate: f64) -> Array2<f64> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
    let keep = 1.0 - rate;
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.gen::<f64>() < rate {
            0.0
        } else {
            1.0 / keep
        }
    })
}

fn lstm_direction(
    tape: &mut Tape<'_>,
    x: Var,
    w: &LstmWeightVars,
    hidden: usize,
    reverse: bool,
) -> Var {
    let n = tape.value(x).nrows();
    let zero = tape.constant_owned(Array2::zeros((1, hidden)));
    let mut h_prev = zero;
    let mut c_prev = zero;
    let mut states = vec![zero; n];
    let order: Vec<usize> = if reverse {
        (0..n).rev().collect()
    } else {
        (0..n).collect()
    };
    for &t in &order {
        let x_t = tape.gather_rows(x, vec![t]);
        let zx = tape.matmul(x_t, w.w_x);
        let zh = tape.matmul(h_prev, w.w_h);
        let z0 = tape.add(zx, zh);
        let z = tape.add_row(z0, w.b);
        let i_gate_pre = tape.slice_cols(z, 0, hidden);
        let f_gate_pre = tape.slice_cols(z, hidden, 2 * hidden);
        let g_pre = tape.slice_cols(z, 2 * hidden, 3 * hidden);
        let o_gate_pre = tape.slice_cols(z, 3 * hidden, 4 * hidden);
        let i_gate = tape.sigmoid(i_gate_pre);
        let f_gate = tape.sigmoid(f_gate_pre);
        let g = tape.tanh(g_pre);
        let o_gate = tape.sigmoid(o_gate_pre);
        let keep = tape.mul(f_gate, c_prev);
        let write = tape.mul(i_gate, g);
        let c = tape.add(keep, write);
        let c_act = tape.tanh(c);
        let h = tape.mul(o_gate, c_act);
        states[t] = h;
        h_prev = h;
        c_prev = c;
    }
    tape.stack_rows(&states)
}

/// Runs both directions over `x` and concatenates their states per token;
/// output width is twice the hidden size.
pub fn bilstm(
    tape: &mut Tape<'_>,
    x: Var,
    fwd: &LstmWeightVars,
    bwd: &LstmWeightVars,
    hidden: usize,
) -> Var {
    let f = lstm_direction(tape, x, fwd, hidden, false);
    let b = lstm_direction(tape, x, bwd, hidden, true);
    tape.concat_cols(f, b)
}

/// Gathers aspect rows of `h` and broadcasts their mean back to N rows.
pub fn aspect_summary(
    tape: &mut Tape<'_>,
    h: Var,
    aspect_idx: &[usize],
) -> Result<(Var, Var)> {
    if aspect_idx.is_empty() {
        return Err(Error::EmptyInput("aspect mask selects no tokens".into()));
    }
    let n = tape.value(h).nrows();
    let h_a = tape.gather_rows(h, aspect_idx.to_vec());
    let mean = tape.mean_rows(h_a);
    let h_a_hat = tape.repeat_rows(mean, n);
    Ok((h_a, h_a_hat))
}

/// Full encoder pass: optional input dropout, BiLSTM, aspect summary.
pub fn encode(
    tape: &mut Tape<'_>,
    x: Var,
    fwd: &LstmWeightVars,
    bwd: &LstmWeightVars,
    hidden: usize,
    aspect_idx: &[usize],
    dropout: Option<Array2<f64>>,
) -> Result<ContextualEncoding> {
    let x = match dropout {
        Some(mask) => {
            assert_eq!(mask.dim(), tape.value(x).dim(), "dropout mask shape");
            let m = tape.constant_owned(mask);
            tape.mul(x, m)
        }
        None => x,
    };
    let h = bilstm(tape, x, fwd, bwd, hidden);
    let (h_a, h_a_hat) = aspect_summary(tape, h, aspect_idx)?;
    Ok(ContextualEncoding { h, h_a, h_a_hat })
}

/// Loads `word v1 .. v<dim>` lines into a fresh table. In-vocabulary rows
/// are copied; everything else stays at its uniform [-0.25, 0.25] init
/// (pad row excepted: zero). Returns the table and vocab coverage over
/// non-special entries.
pub fn load_pretrained_vectors(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut impl Rng,
) -> Result<(Array2<f64>, f64)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut table = Array2::from_shape_fn((vocab.len(), dim), |_| rng.gen_range(-0.25..0.25));
    table.row_mut(PAD_ID as usize).fill(0.0);

    let mut covered = vec![false; vocab.len()];
    let mut file_dim: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = match parts.next() {
            Some(w) => w,
            None => continue,
        };
        let values: Vec<&str> = parts.collect();
        match file_dim {
            None => {
                if values.len() != dim {
                    return Err(Error::Config(format!(
                        "{}: vectors are {}-dimensional, config expects {}",
                        path.display(),
                        values.len(),
                        dim
                    )));
                }
                file_dim = Some(values.len());
            }
            Some(d) if values.len() != d => {
                log::warn!(
                    "{} line {}: expected {} values, found {}; skipping",
                    path.display(),
                    lineno + 1,
                    d,
                    values.len()
                );
                continue;
            }
            _ => {}
        }
        let Some(id) = vocab.id_of(word) else {
            continue;
        };
        if id == PAD_ID {
            continue;
        }
        let mut row = vec![0.0f64; dim];
        let mut ok = true;
        for (slot, v) in row.iter_mut().zip(&values) {
            match v.parse::<f64>() {
                Ok(x) => *slot = x,
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            log::warn!(
                "{} line {}: unparseable float; skipping",
                path.display(),
                lineno + 1
            );
            continue;
        }
        for (c, &v) in row.iter().enumerate() {
            table[(id as usize, c)] = v;
        }
        covered[id as usize] = true;
    }

    let real: Vec<usize> = (2..vocab.len()).collect();
    let coverage = if real.is_empty() {
        0.0
    } else {
        real.iter().filter(|&&i| covered[i]).count() as f64 / real.len() as f64
    };
    log::info!(
        "pretrained vectors: {:.1}% of {} vocabulary words covered",
        coverage * 100.0,
        real.len()
    );
    Ok((table, coverage))
}
