//! Seeded synthetic dialogue corpora over a small multi-domain catalog.
//! Every user utterance surfaces its newest slot value verbatim, so the
//! corpora exercise value overlap, retrieval, and augmentation end to end.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::belief::{BeliefState, SlotValue};
use crate::data::{Dialogue, Speaker, Turn, Utterance};
use crate::util::{mix, rng};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthConfig {
    pub n_dialogues: usize,
    pub seed: u64,
    /// Turns per dialogue are drawn from `1..=max_turns`.
    pub max_turns: usize,
}

impl SynthConfig {
    pub fn new(n_dialogues: usize, seed: u64) -> Self {
        SynthConfig {
            n_dialogues,
            seed,
            max_turns: 3,
        }
    }
}

struct DomainSpec {
    domain: &'static str,
    slots: &'static [(&'static str, &'static [&'static str])],
}

const CATALOG: &[DomainSpec] = &[
    DomainSpec {
        domain: "hotel",
        slots: &[
            ("area", &["east", "west", "north", "south", "centre"]),
            ("price", &["cheap", "moderate", "expensive"]),
            ("type", &["guest house", "hotel"]),
        ],
    },
    DomainSpec {
        domain: "restaurant",
        slots: &[
            ("food", &["chinese", "italian", "indian", "british"]),
            ("price", &["cheap", "moderate", "expensive"]),
            ("area", &["east", "west", "centre"]),
        ],
    },
    DomainSpec {
        domain: "train",
        slots: &[
            ("day", &["monday", "tuesday", "friday", "sunday"]),
            ("time", &["16:00", "16:45", "09:15", "11:30"]),
            ("destination", &["cambridge", "london", "norwich"]),
        ],
    },
    DomainSpec {
        domain: "attraction",
        slots: &[
            ("type", &["cinema", "museum", "park", "theatre"]),
            ("area", &["east", "west", "centre"]),
        ],
    },
    DomainSpec {
        domain: "taxi",
        slots: &[
            ("departure", &["airport", "station", "city square"]),
            ("destination", &["museum", "cinema", "harbour"]),
        ],
    },
];

const USER_TEMPLATES: &[&str] = &[
    "i am looking for {} please",
    "i would really like {}",
    "can you find {} for me",
    "{} would be great",
    "how about {} today",
    "i need {} if possible",
];

const SYSTEM_LINES: &[&str] = &[
    "okay , anything else ?",
    "sure , what other preference do you have ?",
    "noted , is there more ?",
];

/// Generates `config.n_dialogues` dialogues deterministically. Belief states
/// grow cumulatively: each turn introduces one new slot of a single domain
/// and mentions its value verbatim.
pub fn synthetic_corpus(config: &SynthConfig) -> Vec<Dialogue> {
    (0..config.n_dialogues)
        .map(|i| {
            let mut dlg_rng = rng(mix(config.seed, &[i as u64]));
            let spec = &CATALOG[dlg_rng.gen_range(0..CATALOG.len())];
            let n_turns = dlg_rng
                .gen_range(1..=config.max_turns.max(1))
                .min(spec.slots.len());
            let mut slot_order: Vec<usize> = (0..spec.slots.len()).collect();
            slot_order.shuffle(&mut dlg_rng);
            let mut entries: Vec<SlotValue> = Vec::new();
            let mut turns = Vec::new();
            for (t, &slot_idx) in slot_order.iter().take(n_turns).enumerate() {
                let (slot, values) = spec.slots[slot_idx];
                let value = values[dlg_rng.gen_range(0..values.len())];
                entries.push(
                    SlotValue::new(spec.domain, slot, value).expect("catalog entries are valid"),
                );
                let template = USER_TEMPLATES[dlg_rng.gen_range(0..USER_TEMPLATES.len())];
                let user = Utterance::new(Speaker::User, template.replace("{}", value));
                let system = (t > 0).then(|| {
                    Utterance::new(
                        Speaker::System,
                        SYSTEM_LINES[dlg_rng.gen_range(0..SYSTEM_LINES.len())],
                    )
                });
                turns.push(Turn {
                    system,
                    user,
                    gold_belief: Some(BeliefState::from_entries(entries.iter().cloned())),
                });
            }
            Dialogue::new(format!("dlg-{i:04}"), turns).expect("first turn has no system utterance")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn corpus_is_deterministic_and_sized() {
        let cfg = SynthConfig::new(25, 7);
        let a = synthetic_corpus(&cfg);
        let b = synthetic_corpus(&cfg);
        assert_eq!(a.len(), 25);
        assert_eq!(a, b);
        let other = synthetic_corpus(&SynthConfig::new(25, 8));
        assert_ne!(a, other);
    }

    #[test]
    fn dialogue_ids_are_unique() {
        let corpus = synthetic_corpus(&SynthConfig::new(50, 1));
        let ids: BTreeSet<&String> = corpus.iter().map(|d| &d.dialogue_id).collect();
        assert_eq!(ids.len(), corpus.len());
    }

    #[test]
    fn beliefs_grow_cumulatively() {
        for d in synthetic_corpus(&SynthConfig::new(40, 3)) {
            let mut prev: BTreeSet<SlotValue> = BTreeSet::new();
            for turn in &d.turns {
                let current = turn.gold_belief.as_ref().unwrap().to_set();
                assert!(
                    prev.is_subset(&current),
                    "belief shrank in {}",
                    d.dialogue_id
                );
                assert_eq!(current.len(), prev.len() + 1, "one new slot per turn");
                prev = current;
            }
        }
    }

    #[test]
    fn every_turn_mentions_its_newest_value_verbatim() {
        for d in synthetic_corpus(&SynthConfig::new(60, 11)) {
            let mut prev: BTreeSet<SlotValue> = BTreeSet::new();
            for turn in &d.turns {
                let current = turn.gold_belief.as_ref().unwrap().to_set();
                let newest: Vec<&SlotValue> = current.difference(&prev).collect();
                assert_eq!(newest.len(), 1);
                assert!(
                    turn.user.text.contains(newest[0].value()),
                    "utterance {:?} lacks value {:?}",
                    turn.user.text,
                    newest[0].value()
                );
                prev = current;
            }
        }
    }

    #[test]
    fn single_domain_per_dialogue() {
        for d in synthetic_corpus(&SynthConfig::new(40, 5)) {
            let last = d.turns.last().unwrap().gold_belief.as_ref().unwrap();
            let domains: BTreeSet<String> =
                last.entries().map(|sv| sv.domain().to_string()).collect();
            assert_eq!(domains.len(), 1, "dialogue {} mixes domains", d.dialogue_id);
        }
    }
}
