//! Belief states: sets of (domain, slot, value) triples with a canonical
//! linear text form and a tolerant parser for model output.
//!
//! The linear form is `[domain][slot] value [slot] value`, domains and slots
//! in lexicographic order, so equal states always serialize identically.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Token;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BeliefError {
    #[error("{field} is empty after normalization")]
    EmptyField { field: &'static str },
    #[error("{field} contains a bracket")]
    BracketInField { field: &'static str },
}

/// Lowercases, collapses whitespace, and rejects empty or bracketed fields.
/// Values additionally lose trailing commas so the parser's comma tolerance
/// cannot produce a state that no longer round-trips.
fn normalize_field(
    s: &str,
    field: &'static str,
    strip_trailing_commas: bool,
) -> Result<String, BeliefError> {
    if s.contains('[') || s.contains(']') {
        return Err(BeliefError::BracketInField { field });
    }
    let mut norm = s
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    if strip_trailing_commas {
        while norm.ends_with(',') {
            norm.pop();
            norm = norm.trim_end().to_string();
        }
    }
    if norm.is_empty() {
        return Err(BeliefError::EmptyField { field });
    }
    Ok(norm)
}

/// One (domain, slot, value) triple. Fields are normalized on construction:
/// lowercase, single-spaced, non-empty, bracket-free.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSlotValue", into = "RawSlotValue")]
pub struct SlotValue {
    domain: String,
    slot: String,
    value: String,
}

#[derive(Serialize, Deserialize)]
struct RawSlotValue {
    domain: String,
    slot: String,
    value: String,
}

impl TryFrom<RawSlotValue> for SlotValue {
    type Error = BeliefError;
    fn try_from(raw: RawSlotValue) -> Result<Self, Self::Error> {
        SlotValue::new(&raw.domain, &raw.slot, &raw.value)
    }
}

impl From<SlotValue> for RawSlotValue {
    fn from(sv: SlotValue) -> Self {
        RawSlotValue {
            domain: sv.domain,
            slot: sv.slot,
            value: sv.value,
        }
    }
}

impl SlotValue {
    pub fn new(domain: &str, slot: &str, value: &str) -> Result<Self, BeliefError> {
        Ok(SlotValue {
            domain: normalize_field(domain, "domain", false)?,
            slot: normalize_field(slot, "slot", false)?,
            value: normalize_field(value, "value", true)?,
        })
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn slot(&self) -> &str {
        &self.slot
    }

    pub fn value(&self) -> &str {
        &self.value
    }
}

/// A belief state: at most one value per (domain, slot), kept in canonical
/// domain-then-slot order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<SlotValue>", into = "Vec<SlotValue>")]
pub struct BeliefState {
    entries: BTreeMap<(String, String), String>,
}

impl From<Vec<SlotValue>> for BeliefState {
    fn from(list: Vec<SlotValue>) -> Self {
        let mut b = BeliefState::new();
        for sv in list {
            b.insert(sv);
        }
        b
    }
}

impl From<BeliefState> for Vec<SlotValue> {
    fn from(b: BeliefState) -> Self {
        b.entries().collect()
    }
}

impl BeliefState {
    pub fn new() -> Self {
        BeliefState::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = SlotValue>) -> Self {
        let mut b = BeliefState::new();
        for sv in entries {
            b.insert(sv);
        }
        b
    }

    /// Inserts a triple; a previous value for the same (domain, slot) is
    /// returned (last write wins).
    pub fn insert(&mut self, sv: SlotValue) -> Option<SlotValue> {
        let key = (sv.domain.clone(), sv.slot.clone());
        self.entries
            .insert(key.clone(), sv.value)
            .map(|old| SlotValue {
                domain: key.0,
                slot: key.1,
                value: old,
            })
    }

    pub fn get(&self, domain: &str, slot: &str) -> Option<&str> {
        self.entries
            .get(&(domain.to_string(), slot.to_string()))
            .map(String::as_str)
    }

    pub fn contains(&self, sv: &SlotValue) -> bool {
        self.get(&sv.domain, &sv.slot) == Some(sv.value.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Triples in canonical order (domain lexicographic, then slot).
    pub fn entries(&self) -> impl Iterator<Item = SlotValue> + '_ {
        self.entries.iter().map(|((d, s), v)| SlotValue {
            domain: d.clone(),
            slot: s.clone(),
            value: v.clone(),
        })
    }

    pub fn to_set(&self) -> BTreeSet<SlotValue> {
        self.entries().collect()
    }

    /// Canonical linear form: `[domain][slot] value [slot] value`; the
    /// empty state serializes to the empty string.
    pub fn linearize(&self) -> String {
        let mut out = String::new();
        let mut current_domain: Option<&str> = None;
        for ((domain, slot), value) in &self.entries {
            if current_domain != Some(domain.as_str()) {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push('[');
                out.push_str(domain);
                out.push(']');
                current_domain = Some(domain);
            } else {
                out.push(' ');
            }
            out.push('[');
            out.push_str(slot);
            out.push(']');
            out.push(' ');
            out.push_str(value);
        }
        out
    }

    /// Parses the linear form. Tolerant: commas between slot entries are
    /// accepted, unparseable text yields the longest valid prefix plus an
    /// issue, duplicate slots keep the last value and are flagged.
    pub fn parse(text: &str) -> BeliefParse {
        Parser::new(text).run()
    }
}

/// Parser outcome: the recovered state plus any issues encountered.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefParse {
    pub belief: BeliefState,
    pub issues: Vec<ParseIssue>,
}

impl BeliefParse {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseIssue {
    /// Text at the byte offset does not continue the grammar; parsing stopped.
    Malformed { at: usize },
    /// A (domain, slot) pair appeared more than once; the last value won.
    DuplicateSlot { domain: String, slot: String },
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
    belief: BeliefState,
    issues: Vec<ParseIssue>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            text,
            pos: 0,
            belief: BeliefState::new(),
            issues: Vec::new(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.text.len() - trimmed.len();
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.text.len()
    }

    fn peek_is(&mut self, c: char) -> bool {
        self.skip_ws();
        self.rest().starts_with(c)
    }

    /// Reads `[name]`; the cursor must already sit on `[`.
    fn read_bracketed(&mut self) -> Option<String> {
        debug_assert!(self.rest().starts_with('['));
        let inner_start = self.pos + 1;
        let close = self.text[inner_start..].find(']')?;
        let name = &self.text[inner_start..inner_start + close];
        self.pos = inner_start + close + 1;
        if name.trim().is_empty() || name.contains('[') {
            return None;
        }
        Some(name.to_string())
    }

    /// Value text runs to the next `[` or end of input; trailing commas are
    /// separators, not part of the value.
    fn read_value(&mut self) -> String {
        self.skip_ws();
        let end = self
            .rest()
            .find('[')
            .map_or(self.text.len(), |i| self.pos + i);
        let mut raw = self.text[self.pos..end].trim().to_string();
        self.pos = end;
        while raw.ends_with(',') {
            raw.pop();
            raw = raw.trim_end().to_string();
        }
        raw
    }

    fn malformed(&mut self) {
        self.issues.push(ParseIssue::Malformed { at: self.pos });
    }

    fn run(mut self) -> BeliefParse {
        let mut current_domain: Option<String> = None;
        let mut slots_in_domain = 0usize;
        loop {
            if self.at_end() {
                break;
            }
            if !self.peek_is('[') {
                self.malformed();
                break;
            }
            let name = match self.read_bracketed() {
                Some(n) => n,
                None => {
                    self.malformed();
                    break;
                }
            };
            if self.peek_is('[') || self.at_end() {
                // A bracket (or nothing) follows: `name` opens a new domain.
                if current_domain.is_some() && slots_in_domain == 0 {
                    // The previous domain never received a slot.
                    self.malformed();
                }
                if self.at_end() {
                    // A trailing domain with no slots is malformed.
                    self.malformed();
                    break;
                }
                current_domain = Some(name);
                slots_in_domain = 0;
            } else {
                let domain = match &current_domain {
                    Some(d) => d.clone(),
                    None => {
                        // A slot before any domain: the text never fit the
                        // `[domain][slot] value` shape.
                        self.malformed();
                        break;
                    }
                };
                let value = self.read_value();
                let sv = match SlotValue::new(&domain, &name, &value) {
                    Ok(sv) => sv,
                    Err(_) => {
                        self.malformed();
                        break;
                    }
                };
                let (d, s) = (sv.domain().to_string(), sv.slot().to_string());
                if self.belief.insert(sv).is_some() {
                    self.issues
                        .push(ParseIssue::DuplicateSlot { domain: d, slot: s });
                }
                slots_in_domain += 1;
            }
        }
        BeliefParse {
            belief: self.belief,
            issues: self.issues,
        }
    }
}

/// Splits linearized belief text into `[...]` markers and value words.
/// `[hotel][area] east` becomes three tokens: `[hotel]`, `[area]`, `east`.
pub fn tokenize_belief_text(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = text[i..].chars().next().unwrap();
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        if c == '[' {
            let end = text[i..].find(']').map_or(text.len(), |j| i + j + 1);
            out.push(Token::new(&text[i..end]));
            i = end;
        } else {
            let mut j = i;
            for ch in text[i..].chars() {
                if ch.is_whitespace() || ch == '[' {
                    break;
                }
                j += ch.len_utf8();
            }
            out.push(Token::new(&text[i..j]));
            i = j;
        }
    }
    out
}

/// Inverse of `tokenize_belief_text` for canonical text: tokens are joined
/// with single spaces except that `][` junctions stay glued, so
/// `[train]` + `[time]` + `16:00` prints as `[train][time] 16:00`.
pub fn detokenize_belief(tokens: &[Token]) -> String {
    let mut out = String::new();
    for t in tokens {
        if !out.is_empty() && !(out.ends_with(']') && t.surface.starts_with('[')) {
            out.push(' ');
        }
        out.push_str(&t.surface);
    }
    out
}

/// True for tokens a generative decoder emits regardless of its input:
/// `[domain]`/`[slot]` markers and bare punctuation.
pub fn is_structural_token(t: &Token) -> bool {
    (t.surface.starts_with('[') && t.surface.ends_with(']')) || t.norm.is_empty()
}
