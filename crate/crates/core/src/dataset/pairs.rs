use std::collections::HashMap;
use std::path::Path;

use rand::seq::index;
use rand::Rng;

use super::{AttributeRegistry, Gender, SpeakerPairAnnotation, UtteranceRecord, NUM_ATTRIBUTES};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::tsv;

/// Ordered utterance pair with per-attribute targets.
///
/// `labels` and `mask` are bit sets over the 34 attributes; a label bit is
/// only meaningful where the mask bit is set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PairExample {
    pub utt_a: String,
    pub utt_b: String,
    pub gender: Gender,
    pub labels: u64,
    pub mask: u64,
}

impl PairExample {
    pub fn new(utt_a: String, utt_b: String, gender: Gender, labels: u64, mask: u64) -> Result<Self> {
        let ex = Self {
            utt_a,
            utt_b,
            gender,
            labels,
            mask,
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask == 0 {
            return Err(Error::input(format!(
                "pair ({}, {}) has an empty mask",
                self.utt_a, self.utt_b
            )));
        }
        if self.mask & !self.gender.block_mask() != 0 {
            return Err(Error::input(format!(
                "pair ({}, {}) masks attributes outside the {} block",
                self.utt_a, self.utt_b, self.gender
            )));
        }
        if self.labels & !self.mask != 0 {
            return Err(Error::input(format!(
                "pair ({}, {}) has labels on unmasked attributes",
                self.utt_a, self.utt_b
            )));
        }
        Ok(())
    }

    pub fn is_masked(&self, attribute: usize) -> bool {
        self.mask >> attribute & 1 == 1
    }

    pub fn label(&self, attribute: usize) -> bool {
        self.labels >> attribute & 1 == 1
    }

    pub fn masked_attributes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_ATTRIBUTES).filter(|&i| self.is_masked(i))
    }

    pub fn label_vector(&self) -> [f64; NUM_ATTRIBUTES] {
        std::array::from_fn(|i| if self.label(i) { 1.0 } else { 0.0 })
    }

    pub fn mask_vector(&self) -> [f64; NUM_ATTRIBUTES] {
        std::array::from_fn(|i| if self.is_masked(i) { 1.0 } else { 0.0 })
    }

    /// Same pair in the opposite order, with every masked label flipped.
    pub fn reversed(&self) -> Self {
        Self {
            utt_a: self.utt_b.clone(),
            utt_b: self.utt_a.clone(),
            gender: self.gender,
            labels: !self.labels & self.mask,
            mask: self.mask,
        }
    }
}

/// How annotation rows are grouped before utterance pairs are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Grouping {
    /// All descriptors of a speaker pair share one label/mask vector.
    #[default]
    SpeakerPair,
    /// Each (speaker pair, descriptor) is its own group with a single mask bit.
    SpeakerPairDescriptor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairOptions {
    pub pairs_per_speaker_pair: usize,
    pub include_reverse: bool,
    pub seed: u64,
    pub grouping: Grouping,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            pairs_per_speaker_pair: 40,
            include_reverse: true,
            seed: crate::seed::DEFAULT_SEED,
            grouping: Grouping::SpeakerPair,
        }
    }
}

struct Group<'a> {
    speaker_a: &'a str,
    speaker_b: &'a str,
    gender: Gender,
    labels: u64,
    mask: u64,
}

fn collect_groups<'a>(
    annotations: &'a [SpeakerPairAnnotation],
    speakers: &HashMap<&str, (Gender, Vec<&str>)>,
    registry: &AttributeRegistry,
    grouping: Grouping,
) -> Result<Vec<Group<'a>>> {
    let mut groups: Vec<Group<'a>> = Vec::new();
    let mut index: HashMap<(&str, &str, Option<usize>), usize> = HashMap::new();
    for ann in annotations {
        let lookup = |s: &str| {
            speakers
                .get(s)
                .ok_or_else(|| Error::input(format!("annotated speaker '{s}' has no utterances")))
        };
        let (ga, _) = lookup(&ann.speaker_a)?;
        let (gb, _) = lookup(&ann.speaker_b)?;
        if ga != gb {
            return Err(Error::input(format!(
                "speakers '{}' ({ga}) and '{}' ({gb}) differ in gender",
                ann.speaker_a, ann.speaker_b
            )));
        }
        if ann.speaker_a == ann.speaker_b {
            return Err(Error::input(format!("speaker '{}' paired with itself", ann.speaker_a)));
        }
        let attr = registry.attribute_index(&ann.descriptor, *ga)?;
        let desc_key = match grouping {
            Grouping::SpeakerPair => None,
            Grouping::SpeakerPairDescriptor => Some(attr),
        };
        let (a, b) = (ann.speaker_a.as_str(), ann.speaker_b.as_str());
        let (slot, direction) = if let Some(&g) = index.get(&(a, b, desc_key)) {
            (g, ann.direction)
        } else if let Some(&g) = index.get(&(b, a, desc_key)) {
            (g, ann.direction.flipped())
        } else {
            index.insert((a, b, desc_key), groups.len());
            groups.push(Group {
                speaker_a: a,
                speaker_b: b,
                gender: *ga,
                labels: 0,
                mask: 0,
            });
            (groups.len() - 1, ann.direction)
        };
        let group = &mut groups[slot];
        let bit = 1u64 << attr;
        let label = if direction.label() { bit } else { 0 };
        if group.mask & bit != 0 {
            if group.labels & bit != label {
                return Err(Error::input(format!(
                    "conflicting annotations for ({}, {}) on '{}'",
                    group.speaker_a, group.speaker_b, ann.descriptor
                )));
            }
            continue;
        }
        group.mask |= bit;
        group.labels |= label;
    }
    Ok(groups)
}

/// Expand speaker-pair annotations into utterance-pair examples.
///
/// Each group yields `pairs_per_speaker_pair` examples. Utterance pairs are drawn
/// uniformly without replacement from the cross product of the two speakers'
/// utterances (with replacement only when the cross product is too small).
/// With `include_reverse`, half the budget is sampled and every sampled pair is
/// followed by its reversal. Group `g` draws from its own stream keyed by
/// `(seed, g)`.
pub fn build_pairs(
    annotations: &[SpeakerPairAnnotation],
    utterances: &[UtteranceRecord],
    registry: &AttributeRegistry,
    opts: &PairOptions,
) -> Result<Vec<PairExample>> {
    let per = opts.pairs_per_speaker_pair;
    if per == 0 {
        return Err(Error::config("pairs_per_speaker_pair must be positive"));
    }
    if opts.include_reverse && !per.is_multiple_of(2) {
        return Err(Error::config(format!(
            "pairs_per_speaker_pair must be even when reverse pairs are included, got {per}"
        )));
    }
    let mut speakers: HashMap<&str, (Gender, Vec<&str>)> = HashMap::new();
    for rec in utterances {
        let entry = speakers
            .entry(rec.speaker_id.as_str())
            .or_insert((rec.gender, Vec::new()));
        if entry.0 != rec.gender {
            return Err(Error::input(format!(
                "speaker '{}' listed with both genders",
                rec.speaker_id
            )));
        }
        entry.1.push(rec.utterance_id.as_str());
    }
    let groups = collect_groups(annotations, &speakers, registry, opts.grouping)?;
    let draws = if opts.include_reverse { per / 2 } else { per };
    let mut out = Vec::with_capacity(groups.len() * per);
    for (g, group) in groups.iter().enumerate() {
        let ua = &speakers[group.speaker_a].1;
        let ub = &speakers[group.speaker_b].1;
        let cross = ua.len() * ub.len();
        let mut rng = rng_for(opts.seed, &format!("pairs:{g}"));
        let picks: Vec<usize> = if cross >= draws {
            index::sample(&mut rng, cross, draws).into_vec()
        } else {
            (0..draws).map(|_| rng.random_range(0..cross)).collect()
        };
        for k in picks {
            let ex = PairExample {
                utt_a: ua[k / ub.len()].to_owned(),
                utt_b: ub[k % ub.len()].to_owned(),
                gender: group.gender,
                labels: group.labels,
                mask: group.mask,
            };
            if opts.include_reverse {
                let rev = ex.reversed();
                out.push(ex);
                out.push(rev);
            } else {
                out.push(ex);
            }
        }
    }
    Ok(out)
}

fn label_columns() -> Vec<String> {
    let mut cols = vec!["utt_a".to_owned(), "utt_b".to_owned(), "gender".to_owned()];
    cols.extend((0..NUM_ATTRIBUTES).map(|i| format!("label_{i:02}")));
    cols.extend((0..NUM_ATTRIBUTES).map(|i| format!("mask_{i:02}")));
    cols
}

pub fn render_pairs(pairs: &[PairExample], comments: &[String]) -> String {
    let rows: Vec<Vec<String>> = pairs
        .iter()
        .map(|p| {
            let mut row = vec![p.utt_a.clone(), p.utt_b.clone(), p.gender.to_string()];
            row.extend((0..NUM_ATTRIBUTES).map(|i| u8::from(p.label(i)).to_string()));
            row.extend((0..NUM_ATTRIBUTES).map(|i| u8::from(p.is_masked(i)).to_string()));
            row
        })
        .collect();
    tsv::render(comments, &label_columns(), &rows)
}

pub fn write_pairs(path: &Path, pairs: &[PairExample], comments: &[String]) -> Result<()> {
    std::fs::write(path, render_pairs(pairs, comments)).map_err(|e| Error::io(path, e))
}

pub fn parse_pairs(text: &str, path: &Path) -> Result<Vec<PairExample>> {
    let table = tsv::parse(text, path)?;
    if table.header != label_columns() {
        return Err(Error::format(path, "unexpected pair-list header"));
    }
    let bit = |s: &str, line: usize| -> Result<u64> {
        match s {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::format(
                path,
                format!("line {line}: expected 0/1, found '{other}'"),
            )),
        }
    };
    table
        .rows
        .iter()
        .zip(&table.lines)
        .map(|(row, &line)| {
            let mut labels = 0u64;
            let mut mask = 0u64;
            for i in 0..NUM_ATTRIBUTES {
                labels |= bit(&row[3 + i], line)? << i;
                mask |= bit(&row[3 + NUM_ATTRIBUTES + i], line)? << i;
            }
            let gender = row[2]
                .parse()
                .map_err(|e: Error| Error::format(path, format!("line {line}: {e}")))?;
            PairExample::new(row[0].clone(), row[1].clone(), gender, labels, mask)
                .map_err(|e| Error::format(path, format!("line {line}: {e}")))
        })
        .collect()
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text, path)
}
