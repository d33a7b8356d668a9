//! Deterministic toy backends. The generative model memorizes its training
//! pairs and answers unseen inputs by nearest-neighbor retrieval over token
//! overlap, with optional seeded output corruption; per-token probabilities
//! come from configurable profiles so confidence-based selection has real
//! signal to work with. A synonym-table infiller and a template utterance
//! generator back the two augmentation families.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{
    detokenize_belief, is_structural_token, tokenize_belief_text, BeliefState, SlotValue,
};
use crate::data::{tokenize, Example, Token};
use crate::model::{
    validation_jga, ConditionalGenerator, EpochReport, GenerationResult, GenerativeModel,
    MaskedInfiller, ModelError, ModelFactory, TrainHistory, TrainSchedule, DEFAULT_MAX_LEN,
};
use crate::util::{fnv1a64, hash_str, mix, rng};

/// How per-token output probabilities are assigned. Retrieval similarity is
/// 1.0 for exact input matches and the token-overlap score otherwise, so
/// far-fetched retrievals read as low confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbProfile {
    /// Every token gets `p` scaled by retrieval similarity.
    Constant { p: f64 },
    /// Tokens take these values verbatim, repeating the last entry when the
    /// output is longer. Not similarity-scaled.
    Explicit { probs: Vec<f64> },
    /// Structural tokens (brackets, punctuation-only) get the fixed
    /// `boilerplate` value; content tokens get `content` scaled by retrieval
    /// similarity. Mirrors decoders that are near-certain about format
    /// tokens and uncertain about values.
    Structural { boilerplate: f64, content: f64 },
}

impl ProbProfile {
    pub fn probs(&self, tokens: &[Token], similarity: f64) -> Vec<f64> {
        match self {
            ProbProfile::Constant { p } => tokens.iter().map(|_| p * similarity).collect(),
            ProbProfile::Explicit { probs } => {
                let last = probs.last().copied().unwrap_or(1.0);
                (0..tokens.len())
                    .map(|i| probs.get(i).copied().unwrap_or(last))
                    .collect()
            }
            ProbProfile::Structural {
                boilerplate,
                content,
            } => tokens
                .iter()
                .map(|t| {
                    if is_structural_token(t) {
                        *boilerplate
                    } else {
                        content * similarity
                    }
                })
                .collect(),
        }
    }
}

/// What the model emits for inputs it has never memorized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Emit an empty belief state.
    Empty,
    /// Retrieve the memorized entry with the highest token-overlap
    /// similarity and emit its target.
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelConfig {
    pub seed: u64,
    /// Probability that a generated belief text is corrupted (each value
    /// negated). Drawn deterministically per input, so repeated calls agree.
    pub noise_rate: f64,
    pub fallback: FallbackPolicy,
    /// Profile attached to entries memorized during training.
    pub train_profile: ProbProfile,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        ToyModelConfig {
            seed: 0,
            noise_rate: 0.0,
            fallback: FallbackPolicy::Nearest,
            train_profile: ProbProfile::Structural {
                boilerplate: 0.97,
                content: 0.8,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MemoryEntry {
    target_text: String,
    profile: ProbProfile,
    input_norms: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OracleEntry {
    target_text: String,
    profile: ProbProfile,
}

/// A sequence-to-sequence model that learns by memorization: training stores
/// (input fingerprint -> target text) pairs, generation replays them. Unseen
/// inputs go through the fallback policy. Oracle entries let tests pin exact
/// outputs and probabilities for chosen inputs without touching training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyGenerativeModel {
    config: ToyModelConfig,
    memory: std::collections::BTreeMap<u64, MemoryEntry>,
    oracle: std::collections::BTreeMap<u64, OracleEntry>,
    trained: bool,
}

impl ToyGenerativeModel {
    pub fn new(config: ToyModelConfig) -> Self {
        ToyGenerativeModel {
            config,
            memory: std::collections::BTreeMap::new(),
            oracle: std::collections::BTreeMap::new(),
            trained: false,
        }
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    pub fn memory_len(&self) -> usize {
        self.memory.len()
    }

    /// Pins the exact output and probability profile for one input text.
    /// Consulted after memory but before the fallback policy.
    pub fn set_oracle_entry(&mut self, input_text: &str, target_text: &str, profile: ProbProfile) {
        self.oracle.insert(
            fnv1a64(input_text.as_bytes()),
            OracleEntry {
                target_text: target_text.to_string(),
                profile,
            },
        );
    }

    /// Rewrites the probability profile on every memorized entry.
    pub fn set_memory_profile(&mut self, profile: ProbProfile) {
        for entry in self.memory.values_mut() {
            entry.profile = profile.clone();
        }
    }

    fn memorize(&mut self, input_text: &str, target_text: &str) {
        let input_norms = norm_set(input_text);
        self.memory.insert(
            fnv1a64(input_text.as_bytes()),
            MemoryEntry {
                target_text: target_text.to_string(),
                profile: self.config.train_profile.clone(),
                input_norms,
            },
        );
    }

    /// Picks the target for `input_text` along with the retrieval
    /// similarity, or `None` for an empty emission.
    fn retrieve(&self, input_text: &str) -> Option<(String, ProbProfile, f64)> {
        let fp = fnv1a64(input_text.as_bytes());
        if let Some(entry) = self.memory.get(&fp) {
            return Some((entry.target_text.clone(), entry.profile.clone(), 1.0));
        }
        if let Some(entry) = self.oracle.get(&fp) {
            return Some((entry.target_text.clone(), entry.profile.clone(), 1.0));
        }
        match self.config.fallback {
            FallbackPolicy::Empty => None,
            FallbackPolicy::Nearest => {
                let query = norm_set(input_text);
                let mut best: Option<(f64, u64)> = None;
                for (fp, entry) in &self.memory {
                    let sim = jaccard(&query, &entry.input_norms);
                    let better = match best {
                        None => true,
                        Some((best_sim, best_fp)) => {
                            sim > best_sim || (sim == best_sim && *fp < best_fp)
                        }
                    };
                    if better {
                        best = Some((sim, *fp));
                    }
                }
                best.map(|(sim, fp)| {
                    let entry = &self.memory[&fp];
                    (entry.target_text.clone(), entry.profile.clone(), sim)
                })
            }
        }
    }
}

fn norm_set(text: &str) -> BTreeSet<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !t.norm.is_empty())
        .map(|t| t.norm)
        .collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Negates every value in a parseable belief text ("east" becomes
/// "not east"), yielding a well-formed state guaranteed to differ from the
/// original. Unparseable or empty inputs map to a fixed sentinel state.
pub fn corrupt_belief_text(text: &str) -> String {
    let parsed = BeliefState::parse(text);
    if parsed.belief.is_empty() {
        return "[unk][unk] unk".to_string();
    }
    let corrupted = BeliefState::from_entries(parsed.belief.entries().map(|sv| {
        SlotValue::new(sv.domain(), sv.slot(), &format!("not {}", sv.value()))
            .expect("negating a valid value keeps it valid")
    }));
    corrupted.linearize()
}

impl GenerativeModel for ToyGenerativeModel {
    fn generate(&self, input_text: &str, max_len: usize) -> Result<GenerationResult, ModelError> {
        if !self.trained {
            return Err(ModelError::NotTrained);
        }
        let Some((mut text, profile, similarity)) = self.retrieve(input_text) else {
            return Ok(GenerationResult::empty());
        };
        if self.config.noise_rate > 0.0 && !text.is_empty() {
            let fp = fnv1a64(input_text.as_bytes());
            let mut noise_rng = rng(mix(self.config.seed, &[hash_str("noise"), fp]));
            if noise_rng.gen::<f64>() < self.config.noise_rate {
                text = corrupt_belief_text(&text);
            }
        }
        let mut tokens = tokenize_belief_text(&text);
        tokens.truncate(max_len);
        let token_probs = profile.probs(&tokens, similarity);
        let raw_text = detokenize_belief(&tokens);
        Ok(GenerationResult {
            tokens,
            token_probs,
            raw_text,
        })
    }

    fn train(
        &mut self,
        examples: &[Example],
        validation: &[Example],
        schedule: &TrainSchedule,
    ) -> Result<TrainHistory, ModelError> {
        if examples.is_empty() {
            return Err(ModelError::EmptyTrainingSet);
        }
        let mut pairs = Vec::with_capacity(examples.len());
        for ex in examples {
            let target = ex
                .target()
                .ok_or_else(|| ModelError::UnlabeledExample(ex.example_id.clone()))?;
            pairs.push((ex.model_input(), target.linearize()));
        }
        let mut history = Vec::new();
        let mut best: Option<(usize, f64, std::collections::BTreeMap<u64, MemoryEntry>)> = None;
        let mut stale_epochs = 0usize;
        for epoch in 1..=schedule.max_epochs.max(1) {
            for (input, target) in &pairs {
                self.memorize(input, target);
            }
            self.trained = true;
            let jga = validation_jga(self, validation, DEFAULT_MAX_LEN)?;
            history.push(EpochReport {
                epoch,
                validation_jga: jga,
            });
            let improved = best.as_ref().is_none_or(|(_, best_jga, _)| jga > *best_jga);
            if improved {
                best = Some((epoch, jga, self.memory.clone()));
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if stale_epochs >= schedule.early_stop_patience {
                    break;
                }
            }
        }
        let (best_epoch, best_jga, best_memory) = best.expect("at least one epoch ran");
        self.memory = best_memory;
        Ok(TrainHistory {
            epochs: history,
            best_epoch,
            best_validation_jga: best_jga,
            n_examples: examples.len(),
        })
    }
}

/// Stamps out fresh untrained toy models sharing one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyFactory {
    pub config: ToyModelConfig,
}

impl ToyFactory {
    pub fn new(config: ToyModelConfig) -> Self {
        ToyFactory { config }
    }
}

impl ModelFactory for ToyFactory {
    type Model = ToyGenerativeModel;

    fn fresh(&self) -> ToyGenerativeModel {
        ToyGenerativeModel::new(self.config.clone())
    }
}

/// Masked infilling from a synonym table: each masked token is replaced by a
/// seeded uniform pick among the synonyms listed for its normalized form.
/// Tokens with no table entry pass through unchanged, so the identity table
/// makes every infill a no-op.
#[derive(Debug, Clone)]
pub struct ToyInfiller {
    table: std::collections::BTreeMap<String, Vec<String>>,
    seed: u64,
}

impl ToyInfiller {
    pub fn new(table: std::collections::BTreeMap<String, Vec<String>>, seed: u64) -> Self {
        ToyInfiller { table, seed }
    }

    /// No synonyms at all: infilling returns the input verbatim.
    pub fn identity() -> Self {
        ToyInfiller {
            table: std::collections::BTreeMap::new(),
            seed: 0,
        }
    }

    /// Synonyms covering the verbs, fillers, and slot values the synthetic
    /// corpus emits, so both augmentation families produce real variation.
    pub fn with_default_table(seed: u64) -> Self {
        let entries: &[(&str, &[&str])] = &[
            ("looking", &["searching", "hunting"]),
            ("searching", &["looking"]),
            ("find", &["locate", "get"]),
            ("need", &["want", "require"]),
            ("want", &["need"]),
            ("like", &["prefer"]),
            ("place", &["spot", "venue"]),
            ("please", &["kindly"]),
            ("book", &["reserve"]),
            ("something", &["anything"]),
            ("about", &["regarding"]),
            ("east", &["west", "north"]),
            ("west", &["east", "south"]),
            ("north", &["south", "east"]),
            ("south", &["north", "west"]),
            ("centre", &["east", "north"]),
            ("cheap", &["expensive", "moderate"]),
            ("expensive", &["cheap", "moderate"]),
            ("moderate", &["cheap", "expensive"]),
            ("monday", &["tuesday", "friday"]),
            ("tuesday", &["wednesday", "monday"]),
            ("friday", &["saturday", "sunday"]),
            ("sunday", &["monday", "friday"]),
            ("chinese", &["italian", "indian"]),
            ("italian", &["chinese", "british"]),
            ("indian", &["chinese", "italian"]),
            ("british", &["italian", "indian"]),
            ("hotel", &["guest"]),
            ("cinema", &["museum", "theatre"]),
            ("museum", &["cinema", "park"]),
            ("park", &["museum", "theatre"]),
            ("theatre", &["cinema", "museum"]),
            ("cambridge", &["london", "norwich"]),
            ("london", &["cambridge", "norwich"]),
            ("norwich", &["london", "cambridge"]),
            ("airport", &["station", "harbour"]),
            ("station", &["airport", "harbour"]),
            ("harbour", &["museum", "station"]),
        ];
        let table = entries
            .iter()
            .map(|(k, vs)| (k.to_string(), vs.iter().map(|v| v.to_string()).collect()))
            .collect();
        ToyInfiller { table, seed }
    }
}

impl MaskedInfiller for ToyInfiller {
    fn infill(
        &self,
        tokens: &[Token],
        mask_indices: &BTreeSet<usize>,
    ) -> Result<Vec<Token>, ModelError> {
        if let Some(&index) = mask_indices.iter().find(|&&i| i >= tokens.len()) {
            return Err(ModelError::MaskIndexOutOfRange {
                index,
                len: tokens.len(),
            });
        }
        let mut out = tokens.to_vec();
        for &i in mask_indices {
            let norm = &tokens[i].norm;
            let Some(candidates) = self.table.get(norm) else {
                continue;
            };
            if candidates.is_empty() {
                continue;
            }
            let mut pick_rng = rng(mix(self.seed, &[i as u64, hash_str(norm)]));
            let choice = candidates
                .choose(&mut pick_rng)
                .expect("non-empty candidates");
            out[i] = Token::new(choice.clone());
        }
        Ok(out)
    }
}

/// Template-based conditional generation: every candidate utterance embeds
/// all belief values verbatim in canonical order, so value mentions survive
/// verbatim in the new surface form.
#[derive(Debug, Clone, Default)]
pub struct ToyUtteranceGenerator;

impl ToyUtteranceGenerator {
    pub fn new() -> Self {
        ToyUtteranceGenerator
    }
}

const UTTERANCE_TEMPLATES: &[&str] = &[
    "i am looking for {} .",
    "i want {} please .",
    "can you find {} for me ?",
    "i need {} .",
    "how about {} ?",
];

const EMPTY_BELIEF_UTTERANCES: &[&str] = &[
    "anything will do .",
    "no preference at all .",
    "surprise me please .",
];

impl ConditionalGenerator for ToyUtteranceGenerator {
    fn generate_conditioned(
        &self,
        _context: &str,
        belief: &BeliefState,
        beam_width: usize,
    ) -> Vec<String> {
        if belief.is_empty() {
            return EMPTY_BELIEF_UTTERANCES
                .iter()
                .take(beam_width)
                .map(|s| s.to_string())
                .collect();
        }
        let joined = belief
            .entries()
            .map(|sv| sv.value().to_string())
            .collect::<Vec<_>>()
            .join(" ");
        UTTERANCE_TEMPLATES
            .iter()
            .take(beam_width)
            .map(|t| t.replace("{}", &joined))
            .collect()
    }
}
