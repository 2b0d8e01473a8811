//! Accuracy, per-class F1 and macro-F1 over the three polarity classes.

use crate::objective::NUM_CLASSES;
use serde::Serialize;

/// Full evaluation summary. `confusion[gold][pred]` counts examples.
#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: [f64; NUM_CLASSES],
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

/// Index of the largest logit; earlier class wins exact ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Scores predictions against gold labels. Classes absent from both gold
/// and predictions score an F1 of zero, pulling the macro average down;
/// every ratio with a zero denominator is taken as zero.
pub fn evaluate_predictions(golds: &[usize], preds: &[usize]) -> Evaluation {
    assert_eq!(golds.len(), preds.len(), "gold/pred length mismatch");
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for (&g, &p) in golds.iter().zip(preds) {
        assert!(g < NUM_CLASSES && p < NUM_CLASSES, "label out of range");
        confusion[g][p] += 1;
    }
    let n = golds.len();
    let correct: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
    let accuracy = if n == 0 { 0.0 } else { correct as f64 / n as f64 };

    let mut per_class_f1 = [0.0; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        let tp = confusion[c][c];
        let pred_c: usize = (0..NUM_CLASSES).map(|g| confusion[g][c]).sum();
        let gold_c: usize = confusion[c].iter().sum();
        let precision = if pred_c == 0 { 0.0 } else { tp as f64 / pred_c as f64 };
        let recall = if gold_c == 0 { 0.0 } else { tp as f64 / gold_c as f64 };
        per_class_f1[c] = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
    }
    let macro_f1 = per_class_f1.iter().sum::<f64>() / NUM_CLASSES as f64;
    Evaluation {
        n,
        accuracy,
        macro_f1,
        per_class_f1,
        confusion,
    }
}
