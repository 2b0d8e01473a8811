//! Classifier head, cross-entropy, the structural-entropy loss over the
//! type-attention matrix, and a brute-force entropy oracle for tests.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::syntax::PartitionOneHot;
use ndarray::Array2;

pub const NUM_CLASSES: usize = 3;
/// Lower clamp inside the loss's log2 so empty partitions stay finite.
pub const SE_LOG_EPS: f64 = 1e-12;

/// Mean-pools the final layer's aspect rows and applies the linear head;
/// returns 1 x 3 logits.
pub fn classify(
    tape: &mut Tape<'_>,
    h_last: Var,
    aspect_idx: &[usize],
    w_p: Var,
    b_p: Var,
) -> Result<Var> {
    if aspect_idx.is_empty() {
        return Err(Error::EmptyInput("aspect mask selects no tokens".into()));
    }
    let rows = tape.gather_rows(h_last, aspect_idx.to_vec());
    let pooled = tape.mean_rows(rows);
    let scores = tape.matmul(pooled, w_p);
    Ok(tape.add_row(scores, b_p))
}

/// Negative log-softmax of the gold class for a 1 x 3 logit row.
pub fn cross_entropy(tape: &mut Tape<'_>, logits: Var, label: usize) -> Var {
    tape.cross_entropy_logits(logits, label)
}

/// Structural-entropy loss of the type-attention matrix under the
/// dependency-type partition:
/// trace{ (Y^T A Y / 2*sum(A)) . log2(1_{UxN} A Y / 2*sum(A)) }.
/// The trace of the product is taken as sum(B * C^T) without forming the
/// U x U product. A zero matrix (no edges) contributes a gradient-free 0.
pub fn structural_entropy_loss(
    tape: &mut Tape<'_>,
    a_type: Var,
    partition: &PartitionOneHot,
) -> Result<Var> {
    let a_val = tape.value(a_type);
    if a_val.iter().any(|&v| v < 0.0) {
        return Err(Error::Numeric(
            "type attention matrix has negative entries".into(),
        ));
    }
    let n = a_val.nrows();
    if partition.y.nrows() != n {
        return Err(Error::Shape(format!(
            "partition has {} rows for {} tokens",
            partition.y.nrows(),
            n
        )));
    }
    if a_val.sum() == 0.0 {
        return Ok(tape.constant_owned(Array2::zeros((1, 1))));
    }
    let u = partition.y.ncols();
    let y = tape.constant_owned(partition.y.clone());
    let y_t = tape.constant_owned(partition.y.t().to_owned());
    let ones = tape.constant_owned(Array2::ones((u, n)));

    let ay = tape.matmul(a_type, y);
    let within = tape.matmul(y_t, ay);
    let volumes = tape.matmul(ones, ay);
    let total = tape.sum(a_type);
    let denom = tape.scale(total, 2.0);
    let b = tape.div_scalar(within, denom);
    let c = tape.div_scalar(volumes, denom);
    let log_c = tape.log2_clamped(c, SE_LOG_EPS);
    let log_c_t = tape.transpose(log_c);
    let hadamard = tape.mul(b, log_c_t);
    Ok(tape.sum(hadamard))
}

/// Two-level structural entropy by direct summation:
/// H = sum_parts -(g/vol) * log2(V/vol). Empty or zero-volume parts are
/// skipped. Background form for characterizing the trained loss; the
/// training loss above follows a different normalization and sign.
pub fn se_oracle(a: &Array2<f64>, partition: &[Vec<usize>]) -> f64 {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "adjacency must be square");
    let vol: f64 = a.sum();
    if vol == 0.0 {
        return 0.0;
    }
    let degree: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    let mut h = 0.0;
    for part in partition {
        if part.is_empty() {
            continue;
        }
        let in_part = {
            let mut mask = vec![false; n];
            for &i in part {
                mask[i] = true;
            }
            mask
        };
        let v_part: f64 = part.iter().map(|&i| degree[i]).sum();
        if v_part == 0.0 {
            continue;
        }
        let mut cut = 0.0;
        for &i in part {
            for j in 0..n {
                if !in_part[j] {
                    cut += a[(i, j)];
                }
            }
        }
        h -= (cut / vol) * (v_part / vol).log2();
    }
    h
}

/// Batch loss summary. The combined scalar follows sum-of-CE plus
/// gamma times mean-of-SE; gamma = 0 short-circuits to the CE sum alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub ce: f64,
    pub se: f64,
    pub total: f64,
    pub gamma: f64,
}

pub fn total_loss(ce_values: &[f64], se_values: &[f64], gamma: f64) -> Result<LossBundle> {
    if gamma < 0.0 {
        return Err(Error::Config(format!("gamma must be nonnegative, got {}", gamma)));
    }
    let ce: f64 = ce_values.iter().sum();
    let se = if se_values.is_empty() {
        0.0
    } else {
        se_values.iter().sum::<f64>() / se_values.len() as f64
    };
    let total = if gamma == 0.0 { ce } else { ce + gamma * se };
    if !total.is_finite() || !ce.is_finite() || !se.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss: ce {} se {} gamma {}",
            ce, se, gamma
        )));
    }
    Ok(LossBundle {
        ce,
        se,
        total,
        gamma,
    })
}
