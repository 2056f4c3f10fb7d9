use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use super::PairExample;
use crate::error::{Error, Result};

/// Evaluation protocol the split is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Evaluation speakers also train, but on other utterances and pairings.
    Seen,
    /// Evaluation speakers never appear in training.
    Unseen,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "seen" => Ok(Protocol::Seen),
            "unseen" => Ok(Protocol::Unseen),
            other => Err(Error::input(format!("unknown protocol '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    /// Unordered speaker pair present in both sets (names sorted).
    SharedSpeakerPair(String, String),
    SharedUtterance(String),
    SharedSpeaker(String),
    /// Utterance with no known speaker, so the pair cannot be checked.
    UnknownUtterance(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SharedSpeakerPair(a, b) => write!(f, "speaker pair ({a}, {b}) in both sets"),
            Violation::SharedUtterance(u) => write!(f, "utterance {u} in both sets"),
            Violation::SharedSpeaker(s) => write!(f, "speaker {s} in both sets"),
            Violation::UnknownUtterance(u) => write!(f, "utterance {u} has no speaker"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitReport {
    pub violations: Vec<Violation>,
}

impl SplitReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Default)]
struct SetIndex {
    pairs: BTreeSet<(String, String)>,
    utterances: BTreeSet<String>,
    speakers: BTreeSet<String>,
}

fn index(pairs: &[PairExample], speaker_of: &HashMap<String, String>, unknown: &mut BTreeSet<String>) -> SetIndex {
    let mut idx = SetIndex::default();
    for p in pairs {
        let spk = |u: &String, unknown: &mut BTreeSet<String>| match speaker_of.get(u) {
            Some(s) => Some(s.clone()),
            None => {
                unknown.insert(u.clone());
                None
            }
        };
        idx.utterances.insert(p.utt_a.clone());
        idx.utterances.insert(p.utt_b.clone());
        let (Some(a), Some(b)) = (spk(&p.utt_a, unknown), spk(&p.utt_b, unknown)) else {
            continue;
        };
        idx.speakers.insert(a.clone());
        idx.speakers.insert(b.clone());
        idx.pairs.insert(if a <= b { (a, b) } else { (b, a) });
    }
    idx
}

/// Report every way the evaluation set leaks into the training set.
///
/// Unordered speaker pairs are always checked; `Seen` also checks shared
/// utterances and `Unseen` shared speakers. Violations are sorted.
pub fn split_check(
    train: &[PairExample],
    eval: &[PairExample],
    speaker_of: &HashMap<String, String>,
    protocol: Protocol,
) -> SplitReport {
    let mut unknown = BTreeSet::new();
    let t = index(train, speaker_of, &mut unknown);
    let e = index(eval, speaker_of, &mut unknown);
    let mut violations: Vec<Violation> = unknown.into_iter().map(Violation::UnknownUtterance).collect();
    violations.extend(
        t.pairs
            .intersection(&e.pairs)
            .map(|(a, b)| Violation::SharedSpeakerPair(a.clone(), b.clone())),
    );
    match protocol {
        Protocol::Seen => violations.extend(
            t.utterances
                .intersection(&e.utterances)
                .cloned()
                .map(Violation::SharedUtterance),
        ),
        Protocol::Unseen => violations.extend(
            t.speakers
                .intersection(&e.speakers)
                .cloned()
                .map(Violation::SharedSpeaker),
        ),
    }
    violations.sort();
    SplitReport { violations }
}
