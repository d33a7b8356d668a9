//! Purpose-preserving augmentation. Each variant rewrites the latest user
//! utterance while keeping the belief state consistent with it: maintain
//! variants never touch tokens that surface a belief value, change variants
//! rewrite value tokens and the belief state together.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefError, BeliefState, SlotValue};
use crate::data::{
    tokenize, tokenize_with_spans, utterances_text, Dialogue, Example, Label, Speaker, Token, Turn,
    Utterance,
};
use crate::model::{ConditionalGenerator, MaskedInfiller, ModelError};
use crate::util::{hash_str, mix, rng};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PpaugError {
    #[error("example {0} has no target belief state")]
    MissingTarget(String),
    #[error("example {0} has no user utterance to rewrite")]
    MissingUserTurn(String),
    #[error("no utterance token overlaps a belief value")]
    NoOverlap,
    #[error("no alternative values available for any slot in the target")]
    EmptyDict,
    #[error("infiller returned {got} tokens for {expected}")]
    InfillLengthChanged { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
}

/// The four augmentation variants: token infilling or full regeneration,
/// each either maintaining the belief state or changing it alongside the
/// utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugVariant {
    MlmMaintain,
    MlmChange,
    GenMaintain,
    GenChange,
}

impl std::str::FromStr for AugVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mlm-maintain" => Ok(AugVariant::MlmMaintain),
            "mlm-change" => Ok(AugVariant::MlmChange),
            "gen-maintain" => Ok(AugVariant::GenMaintain),
            "gen-change" => Ok(AugVariant::GenChange),
            other => Err(format!(
                "unknown variant {other:?} (expected mlm-maintain, mlm-change, gen-maintain, or gen-change)"
            )),
        }
    }
}

impl std::fmt::Display for AugVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AugVariant::MlmMaintain => "mlm-maintain",
            AugVariant::MlmChange => "mlm-change",
            AugVariant::GenMaintain => "gen-maintain",
            AugVariant::GenChange => "gen-change",
        })
    }
}

/// Positions of utterance tokens whose normalized form appears in any value
/// of the belief state. These are the tokens that carry the dialogue purpose.
pub fn overlap_indices(tokens: &[Token], belief: &BeliefState) -> BTreeSet<usize> {
    let value_norms: BTreeSet<String> = belief
        .entries()
        .flat_map(|sv| tokenize(sv.value()))
        .map(|t| t.norm)
        .filter(|n| !n.is_empty())
        .collect();
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.norm.is_empty() && value_norms.contains(&t.norm))
        .map(|(i, _)| i)
        .collect()
}

/// A masking decision over one tokenized utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub mask_indices: BTreeSet<usize>,
    pub protected_indices: BTreeSet<usize>,
    pub rate: f64,
}

/// Draws `min(pool, max(1, round(rate * n_tokens)))` mask positions uniformly
/// from the non-protected pool; zero rate or an empty pool masks nothing.
pub fn plan_mask(tokens: &[Token], protected: &BTreeSet<usize>, rate: f64, seed: u64) -> MaskPlan {
    let pool: Vec<usize> = (0..tokens.len())
        .filter(|i| !protected.contains(i))
        .collect();
    let n_mask = if rate > 0.0 && !pool.is_empty() {
        pool.len()
            .min(((rate * tokens.len() as f64).round() as usize).max(1))
    } else {
        0
    };
    let mut order = pool;
    order.shuffle(&mut rng(seed));
    MaskPlan {
        mask_indices: order.into_iter().take(n_mask).collect(),
        protected_indices: protected.clone(),
        rate,
    }
}

/// One augmented training pair, traceable to its source example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedExample {
    pub source_id: String,
    pub variant: AugVariant,
    pub prompt: String,
    pub context: Vec<Utterance>,
    pub target: BeliefState,
}

impl AugmentedExample {
    /// The rewritten user utterance.
    pub fn augmented_text(&self) -> &str {
        self.context
            .iter()
            .rev()
            .find(|u| u.speaker == Speaker::User)
            .map(|u| u.text.as_str())
            .unwrap_or("")
    }

    /// Converts to a gold-labeled training example with a namespaced id, so
    /// augmented and source pools can be mixed without collisions.
    pub fn to_example(&self) -> Example {
        Example {
            example_id: format!("aug:{}", self.source_id),
            dialogue_id: format!("aug:{}", self.source_id),
            prompt: self.prompt.clone(),
            context: self.context.clone(),
            label: Some(Label::Gold {
                target: self.target.clone(),
            }),
            hidden_gold: None,
        }
    }

    /// Regroups the flat utterance history into dialogue turns so augmented
    /// examples can be written in the corpus line format. Only the final turn
    /// carries a belief annotation: earlier turns came along as context.
    pub fn to_dialogue(&self) -> Dialogue {
        let mut turns: Vec<Turn> = Vec::new();
        let mut pending_system: Option<Utterance> = None;
        for u in &self.context {
            match u.speaker {
                Speaker::System => pending_system = Some(u.clone()),
                Speaker::User => turns.push(Turn {
                    system: pending_system.take(),
                    user: u.clone(),
                    gold_belief: None,
                }),
            }
        }
        if let Some(last) = turns.last_mut() {
            last.gold_belief = Some(self.target.clone());
        }
        Dialogue::new(format!("aug:{}", self.source_id), turns)
            .expect("augmented context starts with a user turn")
    }
}

struct SourceParts<'a> {
    target: &'a BeliefState,
    user_idx: usize,
    user_text: &'a str,
}

fn source_parts(e: &Example) -> Result<SourceParts<'_>, PpaugError> {
    let target = e
        .target()
        .ok_or_else(|| PpaugError::MissingTarget(e.example_id.clone()))?;
    let user_idx = e
        .context
        .iter()
        .rposition(|u| u.speaker == Speaker::User)
        .ok_or_else(|| PpaugError::MissingUserTurn(e.example_id.clone()))?;
    Ok(SourceParts {
        target,
        user_idx,
        user_text: &e.context[user_idx].text,
    })
}

fn with_rewritten_user(e: &Example, user_idx: usize, new_text: String) -> Vec<Utterance> {
    let mut context = e.context.clone();
    context[user_idx] = Utterance::new(Speaker::User, new_text);
    context
}

fn infill_checked(
    infiller: &dyn MaskedInfiller,
    tokens: &[Token],
    masks: &BTreeSet<usize>,
) -> Result<Vec<Token>, PpaugError> {
    let out = infiller.infill(tokens, masks)?;
    if out.len() != tokens.len() {
        return Err(PpaugError::InfillLengthChanged {
            expected: tokens.len(),
            got: out.len(),
        });
    }
    Ok(out)
}

/// Splices replacement surfaces into the original text at the masked spans,
/// leaving every other byte untouched.
fn splice(
    text: &str,
    spans: &[(Token, std::ops::Range<usize>)],
    surface_at: impl Fn(usize) -> Option<String>,
) -> String {
    let mut out = text.to_string();
    for i in (0..spans.len()).rev() {
        if let Some(surface) = surface_at(i) {
            out.replace_range(spans[i].1.clone(), &surface);
        }
    }
    out
}

/// Rewrites non-value tokens of the latest user utterance via masked
/// infilling; the belief state passes through verbatim. Zero rate reproduces
/// the utterance byte for byte.
pub fn augment_mlm_maintain(
    e: &Example,
    infiller: &dyn MaskedInfiller,
    rate: f64,
    seed: u64,
) -> Result<AugmentedExample, PpaugError> {
    let parts = source_parts(e)?;
    let spans = tokenize_with_spans(parts.user_text);
    let tokens: Vec<Token> = spans.iter().map(|(t, _)| t.clone()).collect();
    let protected = overlap_indices(&tokens, parts.target);
    let plan = plan_mask(&tokens, &protected, rate, seed);
    let replaced = infill_checked(infiller, &tokens, &plan.mask_indices)?;
    let new_text = splice(parts.user_text, &spans, |i| {
        plan.mask_indices
            .contains(&i)
            .then(|| replaced[i].surface.clone())
    });
    Ok(AugmentedExample {
        source_id: e.example_id.clone(),
        variant: AugVariant::MlmMaintain,
        prompt: e.prompt.clone(),
        context: with_rewritten_user(e, parts.user_idx, new_text),
        target: parts.target.clone(),
    })
}

/// Rewrites value tokens of the latest user utterance via masked infilling
/// and updates the belief state to match: every masked occurrence of a value
/// token is replaced consistently, and each affected value is rebuilt from
/// its tokens' replacements.
pub fn augment_mlm_change(
    e: &Example,
    infiller: &dyn MaskedInfiller,
    rate: f64,
    seed: u64,
) -> Result<AugmentedExample, PpaugError> {
    let parts = source_parts(e)?;
    let spans = tokenize_with_spans(parts.user_text);
    let tokens: Vec<Token> = spans.iter().map(|(t, _)| t.clone()).collect();
    let overlap = overlap_indices(&tokens, parts.target);
    if overlap.is_empty() {
        return Err(PpaugError::NoOverlap);
    }
    let protected: BTreeSet<usize> = (0..tokens.len()).filter(|i| !overlap.contains(i)).collect();
    let plan = plan_mask(&tokens, &protected, rate, seed);
    let replaced = infill_checked(infiller, &tokens, &plan.mask_indices)?;
    // One replacement surface per value-token norm, first masked position
    // winning, so repeated mentions and the belief state stay consistent.
    let mut replacement_by_norm: BTreeMap<String, String> = BTreeMap::new();
    for &i in &plan.mask_indices {
        replacement_by_norm
            .entry(tokens[i].norm.clone())
            .or_insert_with(|| replaced[i].surface.clone());
    }
    let new_text = splice(parts.user_text, &spans, |i| {
        plan.mask_indices
            .contains(&i)
            .then(|| replacement_by_norm[&tokens[i].norm].clone())
    });
    let mut new_entries = Vec::new();
    for sv in parts.target.entries() {
        let value_tokens = tokenize(sv.value());
        if value_tokens
            .iter()
            .any(|t| replacement_by_norm.contains_key(&t.norm))
        {
            let rebuilt = value_tokens
                .iter()
                .map(|t| {
                    replacement_by_norm
                        .get(&t.norm)
                        .cloned()
                        .unwrap_or_else(|| t.surface.clone())
                })
                .collect::<Vec<_>>()
                .join(" ");
            new_entries.push(SlotValue::new(sv.domain(), sv.slot(), &rebuilt)?);
        } else {
            new_entries.push(sv);
        }
    }
    Ok(AugmentedExample {
        source_id: e.example_id.clone(),
        variant: AugVariant::MlmChange,
        prompt: e.prompt.clone(),
        context: with_rewritten_user(e, parts.user_idx, new_text),
        target: BeliefState::from_entries(new_entries),
    })
}

/// Regenerates the latest user utterance from the dialogue prefix and the
/// unchanged belief state. Returns up to `beam_width` rewrites, best first.
pub fn augment_gen_maintain(
    e: &Example,
    generator: &dyn ConditionalGenerator,
    beam_width: usize,
) -> Result<Vec<AugmentedExample>, PpaugError> {
    let parts = source_parts(e)?;
    let prefix = utterances_text(&e.context[..parts.user_idx]);
    let candidates = generator.generate_conditioned(&prefix, parts.target, beam_width);
    Ok(candidates
        .into_iter()
        .map(|text| AugmentedExample {
            source_id: e.example_id.clone(),
            variant: AugVariant::GenMaintain,
            prompt: e.prompt.clone(),
            context: with_rewritten_user(e, parts.user_idx, text),
            target: parts.target.clone(),
        })
        .collect())
}

/// Alternative values per (domain, slot), harvested from gold labels.
pub type SlotValueDict = BTreeMap<(String, String), BTreeSet<String>>;

pub fn build_slot_value_dict(examples: &[Example]) -> SlotValueDict {
    let mut dict = SlotValueDict::new();
    for ex in examples {
        if let Some(Label::Gold { target }) = &ex.label {
            for sv in target.entries() {
                dict.entry((sv.domain().to_string(), sv.slot().to_string()))
                    .or_default()
                    .insert(sv.value().to_string());
            }
        }
    }
    dict
}

/// Substitutes dictionary alternatives into the belief state, then
/// regenerates the latest user utterance to express the new state. Slots
/// with no listed alternative keep their value; a target with no dictionary
/// coverage at all is a skip condition.
pub fn augment_gen_change(
    e: &Example,
    generator: &dyn ConditionalGenerator,
    dict: &SlotValueDict,
    beam_width: usize,
    seed: u64,
) -> Result<Vec<AugmentedExample>, PpaugError> {
    let parts = source_parts(e)?;
    if parts.target.is_empty() {
        return Err(PpaugError::EmptyDict);
    }
    let covered = parts.target.entries().any(|sv| {
        dict.get(&(sv.domain().to_string(), sv.slot().to_string()))
            .is_some_and(|vs| !vs.is_empty())
    });
    if !covered {
        return Err(PpaugError::EmptyDict);
    }
    let mut pick_rng = rng(seed);
    let mut new_entries = Vec::new();
    for sv in parts.target.entries() {
        let alternatives: Vec<&String> = dict
            .get(&(sv.domain().to_string(), sv.slot().to_string()))
            .into_iter()
            .flatten()
            .filter(|v| v.as_str() != sv.value())
            .collect();
        if alternatives.is_empty() {
            new_entries.push(sv);
        } else {
            let choice = alternatives[pick_rng.gen_range(0..alternatives.len())];
            new_entries.push(SlotValue::new(sv.domain(), sv.slot(), choice)?);
        }
    }
    let new_target = BeliefState::from_entries(new_entries);
    let prefix = utterances_text(&e.context[..parts.user_idx]);
    let candidates = generator.generate_conditioned(&prefix, &new_target, beam_width);
    Ok(candidates
        .into_iter()
        .map(|text| AugmentedExample {
            source_id: e.example_id.clone(),
            variant: AugVariant::GenChange,
            prompt: e.prompt.clone(),
            context: with_rewritten_user(e, parts.user_idx, text),
            target: new_target.clone(),
        })
        .collect())
}

/// A fully configured augmentation strategy, borrowing its backends.
pub enum Augmenter<'a> {
    MlmMaintain {
        infiller: &'a dyn MaskedInfiller,
        rate: f64,
    },
    MlmChange {
        infiller: &'a dyn MaskedInfiller,
        rate: f64,
    },
    GenMaintain {
        generator: &'a dyn ConditionalGenerator,
        beam_width: usize,
    },
    GenChange {
        generator: &'a dyn ConditionalGenerator,
        dict: &'a SlotValueDict,
        beam_width: usize,
    },
}

impl Augmenter<'_> {
    pub fn variant(&self) -> AugVariant {
        match self {
            Augmenter::MlmMaintain { .. } => AugVariant::MlmMaintain,
            Augmenter::MlmChange { .. } => AugVariant::MlmChange,
            Augmenter::GenMaintain { .. } => AugVariant::GenMaintain,
            Augmenter::GenChange { .. } => AugVariant::GenChange,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutcome {
    pub augmented: Vec<AugmentedExample>,
    /// Sources that could not be augmented (no value overlap, no dictionary
    /// alternatives) and were carried over verbatim instead.
    pub skipped: usize,
}

/// Augments every example once, in order, with per-example seeds derived
/// from `seed`. Inapplicable examples contribute a verbatim copy so the
/// output always has exactly one entry per input.
pub fn augment_dataset(
    examples: &[Example],
    augmenter: &Augmenter<'_>,
    seed: u64,
) -> Result<AugmentOutcome, PpaugError> {
    let mut augmented = Vec::with_capacity(examples.len());
    let mut skipped = 0usize;
    for (i, ex) in examples.iter().enumerate() {
        let ex_seed = mix(seed, &[i as u64, hash_str(&ex.example_id)]);
        let result = match augmenter {
            Augmenter::MlmMaintain { infiller, rate } => {
                augment_mlm_maintain(ex, *infiller, *rate, ex_seed).map(Some)
            }
            Augmenter::MlmChange { infiller, rate } => {
                augment_mlm_change(ex, *infiller, *rate, ex_seed).map(Some)
            }
            Augmenter::GenMaintain {
                generator,
                beam_width,
            } => augment_gen_maintain(ex, *generator, *beam_width).map(|v| v.into_iter().next()),
            Augmenter::GenChange {
                generator,
                dict,
                beam_width,
            } => augment_gen_change(ex, *generator, dict, *beam_width, ex_seed)
                .map(|v| v.into_iter().next()),
        };
        match result {
            Ok(Some(aug)) => augmented.push(aug),
            Ok(None) | Err(PpaugError::NoOverlap) | Err(PpaugError::EmptyDict) => {
                skipped += 1;
                augmented.push(verbatim_copy(ex, augmenter.variant())?);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(AugmentOutcome { augmented, skipped })
}

fn verbatim_copy(e: &Example, variant: AugVariant) -> Result<AugmentedExample, PpaugError> {
    let target = e
        .target()
        .ok_or_else(|| PpaugError::MissingTarget(e.example_id.clone()))?;
    Ok(AugmentedExample {
        source_id: e.example_id.clone(),
        variant,
        prompt: e.prompt.clone(),
        context: e.context.clone(),
        target: target.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_examples, Dialogue, Turn};
    use crate::toy::{ToyInfiller, ToyUtteranceGenerator};
    use proptest::prelude::*;

    fn sv(d: &str, s: &str, v: &str) -> SlotValue {
        SlotValue::new(d, s, v).unwrap()
    }

    fn example(user_text: &str, belief: &[(&str, &str, &str)]) -> Example {
        let gold = BeliefState::from_entries(belief.iter().map(|(d, s, v)| sv(d, s, v)));
        let dialogue = Dialogue::new(
            "d1",
            vec![Turn {
                system: None,
                user: Utterance::new(Speaker::User, user_text),
                gold_belief: Some(gold),
            }],
        )
        .unwrap();
        build_examples(&[dialogue], "translate dialogue to belief state :").remove(0)
    }

    fn table(entries: &[(&str, &[&str])]) -> ToyInfiller {
        let map = entries
            .iter()
            .map(|(k, vs)| (k.to_string(), vs.iter().map(|v| v.to_string()).collect()))
            .collect();
        ToyInfiller::new(map, 5)
    }

    #[test]
    fn overlap_covers_multi_word_and_normalized_values() {
        let tokens = tokenize("i want a Guest House near 16:00 please");
        let belief = BeliefState::from_entries([
            sv("hotel", "type", "guest house"),
            sv("train", "time", "16:00"),
        ]);
        let overlap = overlap_indices(&tokens, &belief);
        // "Guest", "House", "16:00" at positions 3, 4, 6.
        assert_eq!(overlap, BTreeSet::from([3, 4, 6]));
    }

    #[test]
    fn mask_plan_sizes_follow_the_rate_formula() {
        let tokens = tokenize("one two three four five six seven eight nine ten");
        let none = BTreeSet::new();
        assert!(plan_mask(&tokens, &none, 0.0, 1).mask_indices.is_empty());
        assert_eq!(plan_mask(&tokens, &none, 0.2, 1).mask_indices.len(), 2);
        assert_eq!(plan_mask(&tokens, &none, 0.25, 1).mask_indices.len(), 3); // round(2.5)
        assert_eq!(plan_mask(&tokens, &none, 0.01, 1).mask_indices.len(), 1); // max(1, ..)
        assert_eq!(plan_mask(&tokens, &none, 1.0, 1).mask_indices.len(), 10);
        let all: BTreeSet<usize> = (0..tokens.len()).collect();
        assert!(plan_mask(&tokens, &all, 0.9, 1).mask_indices.is_empty());
        let half: BTreeSet<usize> = (0..5).collect();
        // Pool of 5 caps round(0.9 * 10) = 9.
        assert_eq!(plan_mask(&tokens, &half, 0.9, 1).mask_indices.len(), 5);
    }

    #[test]
    fn mask_plan_avoids_protected_positions_and_is_seeded() {
        let tokens = tokenize("a b c d e f g h");
        let protected = BTreeSet::from([1, 3, 5]);
        let plan = plan_mask(&tokens, &protected, 0.5, 9);
        assert!(plan.mask_indices.is_disjoint(&protected));
        assert_eq!(plan, plan_mask(&tokens, &protected, 0.5, 9));
        let seeds_differ = (0..50u64)
            .any(|s| plan_mask(&tokens, &protected, 0.5, s).mask_indices != plan.mask_indices);
        assert!(seeds_differ);
    }

    #[test]
    fn mlm_maintain_at_zero_rate_is_byte_identical() {
        let e = example(
            "i am looking for a cheap hotel in the east",
            &[("hotel", "area", "east"), ("hotel", "price", "cheap")],
        );
        let infiller = ToyInfiller::with_default_table(3);
        let aug = augment_mlm_maintain(&e, &infiller, 0.0, 11).unwrap();
        assert_eq!(
            aug.augmented_text(),
            "i am looking for a cheap hotel in the east"
        );
        assert_eq!(&aug.target, e.target().unwrap());
        assert_eq!(aug.variant, AugVariant::MlmMaintain);
    }

    #[test]
    fn mlm_maintain_never_touches_value_tokens() {
        let e = example(
            "i am looking for a cheap hotel in the east",
            &[("hotel", "area", "east"), ("hotel", "price", "cheap")],
        );
        let infiller = ToyInfiller::with_default_table(3);
        for seed in 0..200 {
            let aug = augment_mlm_maintain(&e, &infiller, 1.0, seed).unwrap();
            let text = aug.augmented_text().to_string();
            assert!(text.contains("cheap"), "value dropped in {text:?}");
            assert!(text.contains("east"), "value dropped in {text:?}");
            assert_eq!(&aug.target, e.target().unwrap());
        }
    }

    #[test]
    fn mlm_maintain_with_synonyms_changes_only_masked_spans() {
        let e = example(
            "i am looking for a cheap hotel",
            &[("hotel", "price", "cheap")],
        );
        // Only "looking" has a synonym; everything else passes through.
        let infiller = table(&[("looking", &["searching"])]);
        let aug = augment_mlm_maintain(&e, &infiller, 1.0, 2).unwrap();
        assert_eq!(aug.augmented_text(), "i am searching for a cheap hotel");
    }

    #[test]
    fn mlm_maintain_requires_a_target() {
        let mut e = example("hello", &[]);
        e.label = None;
        let infiller = ToyInfiller::identity();
        assert!(matches!(
            augment_mlm_maintain(&e, &infiller, 0.2, 1),
            Err(PpaugError::MissingTarget(_))
        ));
    }

    #[test]
    fn mlm_change_rewrites_text_and_target_together() {
        let e = example(
            "i want a cheap hotel in the east",
            &[("hotel", "area", "east"), ("hotel", "price", "cheap")],
        );
        let infiller = table(&[("east", &["west"]), ("cheap", &["pricey"])]);
        let aug = augment_mlm_change(&e, &infiller, 1.0, 4).unwrap();
        assert_eq!(aug.augmented_text(), "i want a pricey hotel in the west");
        assert_eq!(
            aug.target.to_set(),
            BTreeSet::from([sv("hotel", "area", "west"), sv("hotel", "price", "pricey")])
        );
    }

    #[test]
    fn mlm_change_replaces_repeated_mentions_consistently() {
        let e = example("east side of the east end", &[("hotel", "area", "east")]);
        let infiller = ToyInfiller::new(
            [(
                "east".to_string(),
                vec!["west".to_string(), "north".to_string()],
            )]
            .into(),
            7,
        );
        for seed in 0..100 {
            let aug = augment_mlm_change(&e, &infiller, 1.0, seed).unwrap();
            let value = aug.target.get("hotel", "area").unwrap().to_string();
            let text = aug.augmented_text();
            // Both mentions changed, to the same alternative.
            assert_eq!(text, format!("{value} side of the {value} end"));
        }
    }

    #[test]
    fn mlm_change_updates_multi_word_values_by_position() {
        let e = example("a guest house please", &[("hotel", "type", "guest house")]);
        let infiller = table(&[("guest", &["boarding"]), ("house", &["lodge"])]);
        let aug = augment_mlm_change(&e, &infiller, 1.0, 6).unwrap();
        let value = aug.target.get("hotel", "type").unwrap();
        let text = aug.augmented_text().to_string();
        assert!(
            text.contains(value),
            "target {value:?} not surfaced in {text:?}"
        );
        assert_ne!(value, "guest house");
    }

    #[test]
    fn mlm_change_without_overlap_is_a_skip_condition() {
        let e = example("hello there", &[("hotel", "area", "east")]);
        let infiller = ToyInfiller::identity();
        assert!(matches!(
            augment_mlm_change(&e, &infiller, 0.5, 1),
            Err(PpaugError::NoOverlap)
        ));
    }

    #[test]
    fn gen_maintain_rewrites_utterance_and_keeps_target() {
        let e = example("i want a hotel in the east", &[("hotel", "area", "east")]);
        let generator = ToyUtteranceGenerator::new();
        let augs = augment_gen_maintain(&e, &generator, 3).unwrap();
        assert_eq!(augs.len(), 3);
        for aug in &augs {
            assert_eq!(&aug.target, e.target().unwrap());
            assert!(aug.augmented_text().contains("east"));
            assert_ne!(aug.augmented_text(), "i want a hotel in the east");
        }
        let texts: BTreeSet<&str> = augs.iter().map(|a| a.augmented_text()).collect();
        assert_eq!(texts.len(), 3, "beam candidates are distinct");
    }

    #[test]
    fn slot_value_dict_collects_gold_values_only() {
        let mut examples = vec![
            example("east please", &[("hotel", "area", "east")]),
            example("west please", &[("hotel", "area", "west")]),
            example("cheap food", &[("restaurant", "price", "cheap")]),
        ];
        // Pseudo-labels must not leak into the dictionary.
        examples.push({
            let mut e = example("north please", &[("hotel", "area", "north")]);
            let target = e.target().unwrap().clone();
            e.label = Some(Label::Pseudo {
                target,
                confidence: 0.9,
            });
            e
        });
        let dict = build_slot_value_dict(&examples);
        assert_eq!(
            dict[&("hotel".to_string(), "area".to_string())],
            BTreeSet::from(["east".to_string(), "west".to_string()])
        );
        assert_eq!(dict.len(), 2);
    }

    #[test]
    fn gen_change_swaps_values_from_the_dictionary() {
        let e = example("i want a hotel in the east", &[("hotel", "area", "east")]);
        let pool = vec![
            example("east please", &[("hotel", "area", "east")]),
            example("west please", &[("hotel", "area", "west")]),
            example("north please", &[("hotel", "area", "north")]),
        ];
        let dict = build_slot_value_dict(&pool);
        let generator = ToyUtteranceGenerator::new();
        let augs = augment_gen_change(&e, &generator, &dict, 2, 13).unwrap();
        assert_eq!(augs.len(), 2);
        let value = augs[0].target.get("hotel", "area").unwrap().to_string();
        assert!(value == "west" || value == "north", "picked {value:?}");
        for aug in &augs {
            assert_eq!(aug.target.get("hotel", "area"), Some(value.as_str()));
            assert!(aug.augmented_text().contains(&value));
        }
    }

    #[test]
    fn gen_change_skips_without_alternatives_or_target_values() {
        let generator = ToyUtteranceGenerator::new();
        let empty_target = example("anything", &[]);
        let dict = SlotValueDict::new();
        assert!(matches!(
            augment_gen_change(&empty_target, &generator, &dict, 2, 1),
            Err(PpaugError::EmptyDict)
        ));
        let e = example("east please", &[("hotel", "area", "east")]);
        assert!(matches!(
            augment_gen_change(&e, &generator, &dict, 2, 1),
            Err(PpaugError::EmptyDict)
        ));
        // A dictionary that only lists the original value is still coverage:
        // the slot keeps its value and the rewrite proceeds.
        let same_only =
            build_slot_value_dict(&[example("east please", &[("hotel", "area", "east")])]);
        let augs = augment_gen_change(&e, &generator, &same_only, 2, 1).unwrap();
        assert_eq!(augs[0].target.get("hotel", "area"), Some("east"));
    }

    #[test]
    fn dataset_augmentation_doubles_with_verbatim_copies_for_skips() {
        let examples = vec![
            example("i want a hotel in the east", &[("hotel", "area", "east")]),
            example("hello there", &[("hotel", "area", "east")]), // no overlap
            example("cheap food please", &[("restaurant", "price", "cheap")]),
        ];
        let infiller = ToyInfiller::with_default_table(1);
        let augmenter = Augmenter::MlmChange {
            infiller: &infiller,
            rate: 0.5,
        };
        let outcome = augment_dataset(&examples, &augmenter, 21).unwrap();
        assert_eq!(outcome.augmented.len(), examples.len());
        assert_eq!(outcome.skipped, 1);
        let copy = &outcome.augmented[1];
        assert_eq!(copy.augmented_text(), "hello there");
        assert_eq!(&copy.target, examples[1].target().unwrap());
        assert_eq!(copy.variant, AugVariant::MlmChange);
        // Namespaced ids keep augmented and source pools disjoint.
        assert!(outcome
            .augmented
            .iter()
            .all(|a| a.to_example().example_id.starts_with("aug:")));
    }

    #[test]
    fn dataset_augmentation_is_deterministic_in_the_seed() {
        let examples = vec![
            example(
                "i am looking for a cheap hotel",
                &[("hotel", "price", "cheap")],
            ),
            example("i need a place in the east", &[("hotel", "area", "east")]),
        ];
        let infiller = ToyInfiller::with_default_table(2);
        let augmenter = Augmenter::MlmMaintain {
            infiller: &infiller,
            rate: 0.4,
        };
        let a = augment_dataset(&examples, &augmenter, 33).unwrap();
        let b = augment_dataset(&examples, &augmenter, 33).unwrap();
        assert_eq!(a, b);
        let c = augment_dataset(&examples, &augmenter, 34).unwrap();
        assert!(
            a.augmented.iter().zip(&c.augmented).any(|(x, y)| x != y) || a.skipped != c.skipped,
            "different seeds should eventually differ"
        );
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [
            AugVariant::MlmMaintain,
            AugVariant::MlmChange,
            AugVariant::GenMaintain,
            AugVariant::GenChange,
        ] {
            assert_eq!(v.to_string().parse::<AugVariant>().unwrap(), v);
        }
        assert!("mlm".parse::<AugVariant>().is_err());
    }

    #[test]
    fn to_dialogue_regroups_context_and_annotates_the_final_turn() {
        let gold = BeliefState::from_entries([sv("hotel", "area", "east")]);
        let dialogue = Dialogue::new(
            "d7",
            vec![
                Turn {
                    system: None,
                    user: Utterance::new(Speaker::User, "hello there ."),
                    gold_belief: Some(BeliefState::new()),
                },
                Turn {
                    system: Some(Utterance::new(Speaker::System, "how can i help ?")),
                    user: Utterance::new(Speaker::User, "somewhere in the east ."),
                    gold_belief: Some(gold.clone()),
                },
            ],
        )
        .unwrap();
        let prompt = "translate dialogue to belief state :";
        let e = build_examples(&[dialogue], prompt).pop().unwrap();
        let infiller = ToyInfiller::identity();
        let aug = augment_mlm_maintain(&e, &infiller, 0.0, 1).unwrap();
        let rebuilt = aug.to_dialogue();
        assert_eq!(rebuilt.dialogue_id, "aug:d7:t02");
        assert_eq!(rebuilt.turns.len(), 2);
        assert!(rebuilt.turns[0].system.is_none());
        assert!(rebuilt.turns[0].gold_belief.is_none());
        assert_eq!(
            rebuilt.turns[1].system.as_ref().unwrap().text,
            "how can i help ?"
        );
        assert_eq!(rebuilt.turns[1].user.text, "somewhere in the east .");
        assert_eq!(rebuilt.turns[1].gold_belief.as_ref().unwrap(), &gold);
        let reread = build_examples(&[rebuilt], prompt);
        assert_eq!(reread.last().unwrap().context, e.context);
    }

    proptest! {
        #[test]
        fn masks_and_protections_never_intersect(
            n_tokens in 1usize..30,
            protected_bits in prop::collection::vec(prop::bool::ANY, 30),
            rate in 0.0f64..=1.0,
            seed in 0u64..500
        ) {
            let text: Vec<String> = (0..n_tokens).map(|i| format!("w{i}")).collect();
            let tokens = tokenize(&text.join(" "));
            let protected: BTreeSet<usize> =
                (0..n_tokens).filter(|&i| protected_bits[i]).collect();
            let plan = plan_mask(&tokens, &protected, rate, seed);
            prop_assert!(plan.mask_indices.is_disjoint(&protected));
            prop_assert!(plan.mask_indices.iter().all(|&i| i < n_tokens));
            let pool = n_tokens - protected.len();
            let expected = if rate > 0.0 && pool > 0 {
                pool.min(((rate * n_tokens as f64).round() as usize).max(1))
            } else {
                0
            };
            prop_assert_eq!(plan.mask_indices.len(), expected);
        }
    }
}
