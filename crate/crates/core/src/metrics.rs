//! Evaluation: joint goal accuracy and slot-level recall, with the
//! in-train/unseen value partition used to study generalization.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefState, SlotValue};
use crate::data::ValuePartition;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("prediction/gold length mismatch: {preds} vs {golds}")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("no gold slot values match the filter")]
    ZeroDenominator,
}

/// Fraction of turns whose predicted belief state equals the gold state as a
/// set. Empty-equals-empty counts as correct.
pub fn joint_goal_accuracy(
    preds: &[BeliefState],
    golds: &[BeliefState],
) -> Result<f64, MetricsError> {
    check_lengths(preds, golds)?;
    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / golds.len() as f64)
}

/// Recall over gold slot values, counted per turn: values repeated across
/// turns contribute once per turn. With a filter, only gold values inside the
/// filter set enter numerator and denominator.
pub fn slot_recall(
    preds: &[BeliefState],
    golds: &[BeliefState],
    filter: Option<&BTreeSet<SlotValue>>,
) -> Result<f64, MetricsError> {
    check_lengths(preds, golds)?;
    let keep = |sv: &SlotValue| filter.is_none_or(|f| f.contains(sv));
    let mut hit = 0usize;
    let mut total = 0usize;
    for (p, g) in preds.iter().zip(golds) {
        for sv in g.entries() {
            if keep(&sv) {
                total += 1;
                if p.contains(&sv) {
                    hit += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(MetricsError::ZeroDenominator);
    }
    Ok(hit as f64 / total as f64)
}

/// One evaluation pass over aligned predictions and golds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub jga: f64,
    pub slot_recall_overall: f64,
    /// Absent when the partition contributes no gold values on that side.
    pub slot_recall_in_train: Option<f64>,
    pub slot_recall_unseen: Option<f64>,
    pub n_turns: usize,
    pub n_slot_values: usize,
}

/// Computes JGA plus overall and partitioned slot recall in one pass.
/// A partition side without any matching gold values reports `None` rather
/// than a divide-by-zero.
pub fn evaluate_partitioned(
    preds: &[BeliefState],
    golds: &[BeliefState],
    partition: &ValuePartition,
) -> Result<EvalResult, MetricsError> {
    check_lengths(preds, golds)?;
    let jga = joint_goal_accuracy(preds, golds)?;
    let overall = slot_recall(preds, golds, None)?;
    let side = |values: &BTreeSet<SlotValue>| match slot_recall(preds, golds, Some(values)) {
        Ok(r) => Ok(Some(r)),
        Err(MetricsError::ZeroDenominator) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(EvalResult {
        jga,
        slot_recall_overall: overall,
        slot_recall_in_train: side(&partition.in_train)?,
        slot_recall_unseen: side(&partition.unseen)?,
        n_turns: golds.len(),
        n_slot_values: golds.iter().map(BeliefState::len).sum(),
    })
}

fn check_lengths(preds: &[BeliefState], golds: &[BeliefState]) -> Result<(), MetricsError> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(MetricsError::EmptyEvalSet);
    }
    Ok(())
}
