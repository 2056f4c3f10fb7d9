//! Utterance manifests, speaker-pair annotations, utterance-pair expansion and
//! train/eval split hygiene.

mod pairs;
mod records;
mod registry;
mod split;

pub use pairs::{build_pairs, parse_pairs, read_pairs, render_pairs, write_pairs, Grouping, PairExample, PairOptions};
pub use records::{
    parse_annotations, parse_manifest, read_annotations, read_manifest, write_annotations, write_manifest, Direction,
    SpeakerPairAnnotation, UtteranceRecord,
};
pub use registry::{AttributeRegistry, Gender, DEFAULT_DESCRIPTORS, NUM_ATTRIBUTES, NUM_DESCRIPTORS};
pub use split::{split_check, Protocol, SplitReport, Violation};

use std::collections::HashMap;

/// `utterance_id -> speaker_id` lookup from a manifest.
pub fn speaker_map(records: &[UtteranceRecord]) -> HashMap<String, String> {
    records
        .iter()
        .map(|r| (r.utterance_id.clone(), r.speaker_id.clone()))
        .collect()
}
