//! Dialogue corpus model: tokenization, turns, training examples, few-shot
//! splitting, value partitioning, and the JSON-lines file format.
//!
//! One corpus line is one dialogue:
//! `{"dialogue_id": ..., "turns": [{"system": ..., "user": ..., "belief": [...]}]}`
//! where `system` is null on the first turn and `belief` is null for turns
//! without a gold annotation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefError, BeliefState, SlotValue};
use crate::util::{ceil_frac, hash_str, mix, rng};

/// Prompt prepended to every flattened dialogue history before generation.
pub const DEFAULT_PROMPT: &str = "translate dialogue to belief state :";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("example {0} has no gold label")]
    UnlabeledInput(String),
    #[error("fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("held-out fractions leave no training dialogues")]
    NothingToTrainOn,
    #[error("dialogue {id}: {reason}")]
    InvalidDialogue { id: String, reason: String },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Belief(#[from] BeliefError),
}

/// A surface token plus its normalized (lowercase, alphanumeric-only) form
/// used for matching. The norm of a pure-punctuation token is empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct Token {
    pub surface: String,
    pub norm: String,
}

impl Token {
    pub fn new(surface: impl Into<String>) -> Self {
        let surface = surface.into();
        let norm = normalize_token(&surface);
        Token { surface, norm }
    }
}

impl From<String> for Token {
    fn from(s: String) -> Self {
        Token::new(s)
    }
}

impl From<Token> for String {
    fn from(t: Token) -> Self {
        t.surface
    }
}

/// Lowercased, punctuation-stripped matching form of a token.
pub fn normalize_token(surface: &str) -> String {
    surface
        .chars()
        .filter(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase()
}

/// Whitespace tokenization with terminal punctuation split off as its own
/// tokens. Interior punctuation stays put, so clock times like `16:00` and
/// contractions survive as single tokens.
pub fn tokenize(text: &str) -> Vec<Token> {
    tokenize_with_spans(text)
        .into_iter()
        .map(|(t, _)| t)
        .collect()
}

/// Like `tokenize`, but each token carries its byte range in `text`, which
/// lets augmentation splice replacements without disturbing spacing.
pub fn tokenize_with_spans(text: &str) -> Vec<(Token, Range<usize>)> {
    let mut out = Vec::new();
    let mut chunk_start = None;
    let push_chunk = |start: usize, end: usize, out: &mut Vec<(Token, Range<usize>)>| {
        let chunk = &text[start..end];
        let alnum: Vec<usize> = chunk
            .char_indices()
            .filter(|(_, c)| c.is_alphanumeric())
            .map(|(i, _)| i)
            .collect();
        match (alnum.first(), alnum.last()) {
            (Some(&first), Some(&last)) => {
                let core_end = last + chunk[last..].chars().next().unwrap().len_utf8();
                for (i, c) in chunk[..first].char_indices() {
                    let s = start + i;
                    out.push((Token::new(c.to_string()), s..s + c.len_utf8()));
                }
                out.push((
                    Token::new(&chunk[first..core_end]),
                    start + first..start + core_end,
                ));
                for (i, c) in chunk[core_end..].char_indices() {
                    let s = start + core_end + i;
                    out.push((Token::new(c.to_string()), s..s + c.len_utf8()));
                }
            }
            _ => {
                for (i, c) in chunk.char_indices() {
                    let s = start + i;
                    out.push((Token::new(c.to_string()), s..s + c.len_utf8()));
                }
            }
        }
    };
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(start) = chunk_start.take() {
                push_chunk(start, i, &mut out);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    if let Some(start) = chunk_start {
        push_chunk(start, text.len(), &mut out);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

/// One utterance; `tokens` is always `tokenize(text)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "UtteranceRepr", into = "UtteranceRepr")]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub tokens: Vec<Token>,
}

#[derive(Serialize, Deserialize)]
struct UtteranceRepr {
    speaker: Speaker,
    text: String,
}

impl From<UtteranceRepr> for Utterance {
    fn from(r: UtteranceRepr) -> Self {
        Utterance::new(r.speaker, r.text)
    }
}

impl From<Utterance> for UtteranceRepr {
    fn from(u: Utterance) -> Self {
        UtteranceRepr {
            speaker: u.speaker,
            text: u.text,
        }
    }
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Utterance {
            speaker,
            text,
            tokens,
        }
    }
}

/// One dialogue turn: optional system utterance, user utterance, and an
/// optional gold belief annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub system: Option<Utterance>,
    pub user: Utterance,
    pub gold_belief: Option<BeliefState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn new(dialogue_id: impl Into<String>, turns: Vec<Turn>) -> Result<Self, DataError> {
        let dialogue_id = dialogue_id.into();
        if let Some(first) = turns.first() {
            if first.system.is_some() {
                return Err(DataError::InvalidDialogue {
                    id: dialogue_id,
                    reason: "first turn has a system utterance".into(),
                });
            }
        }
        Ok(Dialogue { dialogue_id, turns })
    }
}

/// Label attached to a training example. Pseudo-labels always carry the
/// confidence they were selected with; gold labels never do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Label {
    Gold {
        target: BeliefState,
    },
    Pseudo {
        target: BeliefState,
        confidence: f64,
    },
}

impl Label {
    pub fn target(&self) -> &BeliefState {
        match self {
            Label::Gold { target } | Label::Pseudo { target, .. } => target,
        }
    }

    pub fn is_gold(&self) -> bool {
        matches!(self, Label::Gold { .. })
    }

    pub fn confidence(&self) -> Option<f64> {
        match self {
            Label::Gold { .. } => None,
            Label::Pseudo { confidence, .. } => Some(*confidence),
        }
    }
}

/// One training example: the full dialogue history up to and including the
/// current user utterance, plus the target belief state when labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub example_id: String,
    pub dialogue_id: String,
    pub prompt: String,
    pub context: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    /// Gold target kept aside when the example sits in the unlabeled pool.
    /// Evaluation harnesses only; never visible to training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_gold: Option<BeliefState>,
}

impl Example {
    pub fn target(&self) -> Option<&BeliefState> {
        self.label.as_ref().map(Label::target)
    }

    pub fn is_labeled(&self) -> bool {
        self.label.is_some()
    }

    /// Speaker-tagged flattening of the history, without the prompt.
    pub fn context_text(&self) -> String {
        utterances_text(&self.context)
    }

    /// The text handed to a generative model: prompt first, then history.
    pub fn model_input(&self) -> String {
        format!("{} {}", self.prompt, self.context_text())
    }

    /// The utterance augmentation rewrites: the latest user utterance.
    pub fn final_user_utterance(&self) -> Option<&Utterance> {
        self.context
            .iter()
            .rev()
            .find(|u| u.speaker == Speaker::User)
    }
}

/// Speaker-tagged flattening of an utterance sequence, the shared format for
/// model inputs and generator conditioning.
pub fn utterances_text(utterances: &[Utterance]) -> String {
    let mut out = String::new();
    for u in utterances {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(match u.speaker {
            Speaker::User => "user:",
            Speaker::System => "system:",
        });
        out.push(' ');
        out.push_str(&u.text);
    }
    out
}

/// Turns dialogues into per-turn examples with nested contexts: a three-turn
/// dialogue yields contexts of 1, 3, and 5 utterances.
pub fn build_examples(dialogues: &[Dialogue], prompt: &str) -> Vec<Example> {
    let mut out = Vec::new();
    for d in dialogues {
        let mut context: Vec<Utterance> = Vec::new();
        for (i, turn) in d.turns.iter().enumerate() {
            if let Some(sys) = &turn.system {
                context.push(sys.clone());
            }
            context.push(turn.user.clone());
            out.push(Example {
                example_id: format!("{}:t{:02}", d.dialogue_id, i + 1),
                dialogue_id: d.dialogue_id.clone(),
                prompt: prompt.to_string(),
                context: context.clone(),
                label: turn
                    .gold_belief
                    .clone()
                    .map(|target| Label::Gold { target }),
                hidden_gold: None,
            });
        }
    }
    out
}

/// The four pools an experiment runs on. `labeled` and `unlabeled` together
/// cover the training portion exactly.
#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub labeled: Vec<Example>,
    pub unlabeled: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

/// Few-shot split at dialogue granularity: `ceil(fraction * n_dialogues)`
/// dialogues keep their labels, the rest move to the unlabeled pool with
/// their gold targets hidden away for evaluation harnesses.
pub fn split_few_shot(
    examples: &[Example],
    fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, DataError> {
    if examples.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::InvalidFraction(fraction));
    }
    for e in examples {
        match &e.label {
            Some(l) if l.is_gold() => {}
            _ => return Err(DataError::UnlabeledInput(e.example_id.clone())),
        }
    }
    let mut dialogue_ids: Vec<&str> = Vec::new();
    let mut seen = BTreeSet::new();
    for e in examples {
        if seen.insert(e.dialogue_id.as_str()) {
            dialogue_ids.push(&e.dialogue_id);
        }
    }
    let mut shuffled = dialogue_ids.clone();
    shuffled.shuffle(&mut rng(seed));
    let n_labeled = ceil_frac(fraction, shuffled.len());
    let labeled_ids: BTreeSet<&str> = shuffled.into_iter().take(n_labeled).collect();

    let mut split = DatasetSplit::default();
    for e in examples {
        if labeled_ids.contains(e.dialogue_id.as_str()) {
            split.labeled.push(e.clone());
        } else {
            let mut hidden = e.clone();
            hidden.hidden_gold = hidden.label.take().map(|l| l.target().clone());
            split.unlabeled.push(hidden);
        }
    }
    Ok(split)
}

/// Dialogue-level corpus partition produced by `prepare_corpus`.
#[derive(Debug, Clone, Default)]
pub struct CorpusSplit {
    pub labeled: Vec<Dialogue>,
    pub unlabeled: Vec<Dialogue>,
    pub validation: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
}

/// Carves held-out validation and test dialogues, then applies the few-shot
/// split to the remaining training portion. All draws are seeded.
pub fn prepare_corpus(
    dialogues: &[Dialogue],
    fraction: f64,
    val_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<CorpusSplit, DataError> {
    if dialogues.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    for f in [val_fraction, test_fraction] {
        if !(0.0..1.0).contains(&f) {
            return Err(DataError::InvalidFraction(f));
        }
    }
    let mut order: Vec<usize> = (0..dialogues.len()).collect();
    order.shuffle(&mut rng(mix(seed, &[hash_str("carve")])));
    let n_test = ceil_frac(test_fraction, dialogues.len());
    let n_val = ceil_frac(val_fraction, dialogues.len());
    if n_test + n_val >= dialogues.len() {
        return Err(DataError::NothingToTrainOn);
    }
    let test_ids: BTreeSet<usize> = order[..n_test].iter().copied().collect();
    let val_ids: BTreeSet<usize> = order[n_test..n_test + n_val].iter().copied().collect();

    let mut split = CorpusSplit::default();
    let mut train = Vec::new();
    for (i, d) in dialogues.iter().enumerate() {
        if test_ids.contains(&i) {
            split.test.push(d.clone());
        } else if val_ids.contains(&i) {
            split.validation.push(d.clone());
        } else {
            train.push(d.clone());
        }
    }
    let train_examples = build_examples(&train, DEFAULT_PROMPT);
    let few = split_few_shot(&train_examples, fraction, mix(seed, &[hash_str("fewshot")]))?;
    let labeled_ids: BTreeSet<&str> = few.labeled.iter().map(|e| e.dialogue_id.as_str()).collect();
    for d in train {
        if labeled_ids.contains(d.dialogue_id.as_str()) {
            split.labeled.push(d);
        } else {
            split.unlabeled.push(d);
        }
    }
    Ok(split)
}

/// Test-set values split by whether the full (domain, slot, value) triple
/// occurs anywhere in the training labels.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValuePartition {
    pub in_train: BTreeSet<SlotValue>,
    pub unseen: BTreeSet<SlotValue>,
}

pub fn partition_test_values(
    train_labels: &[BeliefState],
    test_labels: &[BeliefState],
) -> ValuePartition {
    let train_values: BTreeSet<SlotValue> = train_labels.iter().flat_map(|b| b.entries()).collect();
    let mut partition = ValuePartition::default();
    for b in test_labels {
        for sv in b.entries() {
            if train_values.contains(&sv) {
                partition.in_train.insert(sv);
            } else {
                partition.unseen.insert(sv);
            }
        }
    }
    partition
}

#[derive(Serialize, Deserialize)]
struct TurnLine {
    system: Option<String>,
    user: String,
    belief: Option<Vec<SlotValue>>,
}

#[derive(Serialize, Deserialize)]
struct DialogueLine {
    dialogue_id: String,
    turns: Vec<TurnLine>,
}

fn dialogue_from_line(line: DialogueLine) -> Result<Dialogue, DataError> {
    let turns = line
        .turns
        .into_iter()
        .map(|t| Turn {
            system: t.system.map(|s| Utterance::new(Speaker::System, s)),
            user: Utterance::new(Speaker::User, t.user),
            gold_belief: t.belief.map(BeliefState::from_entries),
        })
        .collect();
    Dialogue::new(line.dialogue_id, turns)
}

fn dialogue_to_line(d: &Dialogue) -> DialogueLine {
    DialogueLine {
        dialogue_id: d.dialogue_id.clone(),
        turns: d
            .turns
            .iter()
            .map(|t| TurnLine {
                system: t.system.as_ref().map(|u| u.text.clone()),
                user: t.user.text.clone(),
                belief: t.gold_belief.as_ref().map(|b| b.entries().collect()),
            })
            .collect(),
    }
}

/// Reads a JSON-lines dialogue corpus. Blank lines are skipped.
pub fn read_corpus(path: &Path) -> Result<Vec<Dialogue>, DataError> {
    let file = fs::File::open(path).map_err(|source| DataError::File {
        path: path.into(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DataError::File {
            path: path.into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DialogueLine =
            serde_json::from_str(&line).map_err(|source| DataError::MalformedLine {
                path: path.into(),
                line: i + 1,
                source,
            })?;
        out.push(dialogue_from_line(parsed)?);
    }
    Ok(out)
}

/// Serializes one dialogue as its JSON-lines record.
pub fn dialogue_line_json(d: &Dialogue) -> String {
    serde_json::to_string(&dialogue_to_line(d)).expect("dialogue serializes")
}

/// Writes a JSON-lines dialogue corpus, one dialogue per line.
pub fn write_corpus(path: &Path, dialogues: &[Dialogue]) -> Result<(), DataError> {
    let mut file = fs::File::create(path).map_err(|source| DataError::File {
        path: path.into(),
        source,
    })?;
    for d in dialogues {
        writeln!(file, "{}", dialogue_line_json(d)).map_err(|source| DataError::File {
            path: path.into(),
            source,
        })?;
    }
    Ok(())
}

const SPLIT_FILES: [&str; 4] = [
    "labeled.jsonl",
    "unlabeled.jsonl",
    "validation.jsonl",
    "test.jsonl",
];

/// Writes the four split files into `dir`, creating it if needed. The
/// unlabeled file keeps gold beliefs on disk; loaders decide what a model
/// may see.
pub fn write_split_files(dir: &Path, split: &CorpusSplit) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|source| DataError::File {
        path: dir.into(),
        source,
    })?;
    let pools = [
        &split.labeled,
        &split.unlabeled,
        &split.validation,
        &split.test,
    ];
    for (name, pool) in SPLIT_FILES.iter().zip(pools) {
        write_corpus(&dir.join(name), pool)?;
    }
    Ok(())
}

/// Reads the four split files written by [`write_split_files`].
pub fn read_split_files(dir: &Path) -> Result<CorpusSplit, DataError> {
    Ok(CorpusSplit {
        labeled: read_corpus(&dir.join(SPLIT_FILES[0]))?,
        unlabeled: read_corpus(&dir.join(SPLIT_FILES[1]))?,
        validation: read_corpus(&dir.join(SPLIT_FILES[2]))?,
        test: read_corpus(&dir.join(SPLIT_FILES[3]))?,
    })
}

/// Groups per-turn predictions back into the corpus line format so predicted
/// belief states can be written next to the gold files.
pub fn predictions_to_dialogues(
    examples: &[Example],
    predictions: &[BeliefState],
) -> Vec<Dialogue> {
    assert_eq!(
        examples.len(),
        predictions.len(),
        "one prediction per example"
    );
    let mut by_dialogue: BTreeMap<&str, Vec<(usize, &Example, &BeliefState)>> = BTreeMap::new();
    for (i, (e, p)) in examples.iter().zip(predictions).enumerate() {
        by_dialogue
            .entry(&e.dialogue_id)
            .or_default()
            .push((i, e, p));
    }
    let mut out = Vec::new();
    for (dialogue_id, mut turns) in by_dialogue {
        turns.sort_by_key(|(i, _, _)| *i);
        let rebuilt: Vec<Turn> = turns
            .iter()
            .map(|(_, e, p)| {
                let n = e.context.len();
                let system = if n >= 2 {
                    Some(e.context[n - 2].clone())
                } else {
                    None
                };
                let system = system.filter(|u| u.speaker == Speaker::System);
                Turn {
                    system,
                    user: e.context[n - 1].clone(),
                    gold_belief: Some((*p).clone()),
                }
            })
            .collect();
        out.push(Dialogue {
            dialogue_id: dialogue_id.to_string(),
            turns: rebuilt,
        });
    }
    out
}
