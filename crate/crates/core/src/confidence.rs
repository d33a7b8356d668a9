//! Confidence scoring of pseudo-labels and selection of the examples whose
//! labels get frozen into the labeled pool.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Example;
use crate::model::GenerationResult;
use crate::util::{ceil_frac, rng};

/// What a confidence score aggregates: the model probability of each emitted
/// token at its own decoding step, as reported in
/// [`GenerationResult::token_probs`].
pub const SCORE_BASIS: &str = "per-step probability of each emitted token";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfidenceError {
    #[error("cannot score an empty generation")]
    EmptyGeneration,
}

/// How per-token probabilities collapse into one score per example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Mean over emitted tokens. The default.
    Average,
    /// Maximum over emitted tokens.
    Max,
    /// The probability at one uniformly drawn token position.
    Random,
}

impl FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "average" => Ok(Criterion::Average),
            "max" => Ok(Criterion::Max),
            "random" => Ok(Criterion::Random),
            other => Err(format!(
                "unknown criterion {other:?} (expected average, max, or random)"
            )),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Criterion::Average => "average",
            Criterion::Max => "max",
            Criterion::Random => "random",
        })
    }
}

/// Probability of index `chosen` under a numerically stable softmax of
/// `logits`.
pub fn softmax_prob(logits: &[f64], chosen: usize) -> f64 {
    assert!(chosen < logits.len(), "chosen index out of range");
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    (logits[chosen] - max).exp() / denom
}

pub fn score_average(g: &GenerationResult) -> Result<f64, ConfidenceError> {
    if g.token_probs.is_empty() {
        return Err(ConfidenceError::EmptyGeneration);
    }
    Ok(g.token_probs.iter().sum::<f64>() / g.token_probs.len() as f64)
}

pub fn score_max(g: &GenerationResult) -> Result<f64, ConfidenceError> {
    if g.token_probs.is_empty() {
        return Err(ConfidenceError::EmptyGeneration);
    }
    Ok(g.token_probs
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn score_random(g: &GenerationResult, seed: u64) -> Result<f64, ConfidenceError> {
    if g.token_probs.is_empty() {
        return Err(ConfidenceError::EmptyGeneration);
    }
    let idx = rng(seed).gen_range(0..g.token_probs.len());
    Ok(g.token_probs[idx])
}

/// Scores a generation under `criterion`. `seed` only matters for
/// [`Criterion::Random`].
pub fn score(
    g: &GenerationResult,
    criterion: Criterion,
    seed: u64,
) -> Result<f64, ConfidenceError> {
    match criterion {
        Criterion::Average => score_average(g),
        Criterion::Max => score_max(g),
        Criterion::Random => score_random(g, seed),
    }
}

/// A pseudo-labeled candidate with its confidence score. `flagged` marks
/// examples whose generation was empty or failed to parse cleanly; they keep
/// score 0 and can only be selected when nothing better exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub example: Example,
    pub generation: GenerationResult,
    pub score: f64,
    pub criterion: Criterion,
    pub flagged: bool,
}

/// Which scored candidates move to the labeled pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    /// The `ceil(k * n)` highest-scoring candidates. The default.
    TopK,
    /// `ceil(k * n)` candidates drawn uniformly without replacement.
    RandomK,
    /// Every candidate, regardless of score.
    SelectAll,
}

impl FromStr for SelectionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "top-k" => Ok(SelectionMethod::TopK),
            "random-k" => Ok(SelectionMethod::RandomK),
            "select-all" => Ok(SelectionMethod::SelectAll),
            other => Err(format!(
                "unknown selection method {other:?} (expected top-k, random-k, or select-all)"
            )),
        }
    }
}

impl std::fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SelectionMethod::TopK => "top-k",
            SelectionMethod::RandomK => "random-k",
            SelectionMethod::SelectAll => "select-all",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub criterion: Criterion,
    pub method: SelectionMethod,
    /// Fraction of candidates to take per iteration, in (0, 1].
    pub k: f64,
    /// Seeds the draw for [`SelectionMethod::RandomK`].
    pub seed: u64,
}

/// Splits candidates into (selected, remaining). Top-k orders by score
/// descending with ties broken by example id ascending; selected keep that
/// order, remaining keep their input order.
pub fn select(
    candidates: Vec<ScoredExample>,
    cfg: &SelectionConfig,
) -> (Vec<ScoredExample>, Vec<ScoredExample>) {
    let n = candidates.len();
    match cfg.method {
        SelectionMethod::SelectAll => (candidates, Vec::new()),
        SelectionMethod::TopK => {
            let m = ceil_frac(cfg.k, n);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                candidates[b]
                    .score
                    .total_cmp(&candidates[a].score)
                    .then_with(|| {
                        candidates[a]
                            .example
                            .example_id
                            .cmp(&candidates[b].example.example_id)
                    })
            });
            split_by_order(candidates, &order[..m])
        }
        SelectionMethod::RandomK => {
            let m = ceil_frac(cfg.k, n);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng(cfg.seed));
            split_by_order(candidates, &order[..m])
        }
    }
}

fn split_by_order(
    candidates: Vec<ScoredExample>,
    chosen: &[usize],
) -> (Vec<ScoredExample>, Vec<ScoredExample>) {
    let chosen_set: std::collections::BTreeSet<usize> = chosen.iter().copied().collect();
    let mut slots: Vec<Option<ScoredExample>> = candidates.into_iter().map(Some).collect();
    let selected: Vec<ScoredExample> = chosen
        .iter()
        .map(|&i| slots[i].take().expect("each index chosen once"))
        .collect();
    let remaining: Vec<ScoredExample> = slots
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !chosen_set.contains(i))
        .filter_map(|(_, s)| s)
        .collect();
    (selected, remaining)
}
