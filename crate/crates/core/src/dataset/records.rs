use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::Gender;
use crate::error::{Error, Result};
use crate::tsv;

/// One row of an utterance manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub gender: Gender,
    /// Audio file (or feature file) location, as written in the manifest.
    pub path: String,
}

pub const MANIFEST_COLUMNS: [&str; 4] = ["utterance_id", "speaker_id", "gender", "path"];

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<UtteranceRecord>> {
    let table = tsv::parse(text, path)?;
    let cols: Vec<usize> = MANIFEST_COLUMNS
        .iter()
        .map(|c| table.column(c, path))
        .collect::<Result<_>>()?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(table.rows.len());
    for (row, line) in table.rows.iter().zip(&table.lines) {
        let rec = UtteranceRecord {
            utterance_id: row[cols[0]].clone(),
            speaker_id: row[cols[1]].clone(),
            gender: row[cols[2]]
                .parse()
                .map_err(|e: Error| Error::format(path, format!("line {line}: {e}")))?,
            path: row[cols[3]].clone(),
        };
        if rec.utterance_id.is_empty() || rec.speaker_id.is_empty() {
            return Err(Error::format(path, format!("line {line}: empty id")));
        }
        if !seen.insert(rec.utterance_id.clone()) {
            return Err(Error::format(
                path,
                format!("line {line}: duplicate utterance id '{}'", rec.utterance_id),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<UtteranceRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

pub fn write_manifest(path: &Path, records: &[UtteranceRecord], comments: &[String]) -> Result<()> {
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.utterance_id.clone(),
                r.speaker_id.clone(),
                r.gender.to_string(),
                r.path.clone(),
            ]
        })
        .collect();
    tsv::write(path, comments, &MANIFEST_COLUMNS, &rows)
}

/// Which utterance of the pair is stronger in the descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    BStronger,
    AStronger,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::BStronger => Direction::AStronger,
            Direction::AStronger => Direction::BStronger,
        }
    }

    /// Training target: 1 when the second utterance is stronger.
    pub fn label(self) -> bool {
        self == Direction::BStronger
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::BStronger => "b_stronger",
            Direction::AStronger => "a_stronger",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "b_stronger" => Ok(Direction::BStronger),
            "a_stronger" => Ok(Direction::AStronger),
            other => Err(Error::input(format!("unknown direction '{other}'"))),
        }
    }
}

/// Judgement that, for one descriptor, one speaker is stronger than the other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerPairAnnotation {
    pub speaker_a: String,
    pub speaker_b: String,
    pub descriptor: String,
    pub direction: Direction,
}

pub const ANNOTATION_COLUMNS: [&str; 4] = ["speaker_a", "speaker_b", "descriptor", "direction"];

pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<SpeakerPairAnnotation>> {
    let table = tsv::parse(text, path)?;
    let cols: Vec<usize> = ANNOTATION_COLUMNS
        .iter()
        .map(|c| table.column(c, path))
        .collect::<Result<_>>()?;
    table
        .rows
        .iter()
        .zip(&table.lines)
        .map(|(row, line)| {
            let ann = SpeakerPairAnnotation {
                speaker_a: row[cols[0]].clone(),
                speaker_b: row[cols[1]].clone(),
                descriptor: row[cols[2]].clone(),
                direction: row[cols[3]]
                    .parse()
                    .map_err(|e: Error| Error::format(path, format!("line {line}: {e}")))?,
            };
            if ann.speaker_a == ann.speaker_b {
                return Err(Error::format(
                    path,
                    format!("line {line}: speaker '{}' paired with itself", ann.speaker_a),
                ));
            }
            Ok(ann)
        })
        .collect()
}

pub fn read_annotations(path: &Path) -> Result<Vec<SpeakerPairAnnotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path)
}

pub fn write_annotations(path: &Path, annotations: &[SpeakerPairAnnotation], comments: &[String]) -> Result<()> {
    let rows: Vec<Vec<String>> = annotations
        .iter()
        .map(|a| {
            vec![
                a.speaker_a.clone(),
                a.speaker_b.clone(),
                a.descriptor.clone(),
                a.direction.to_string(),
            ]
        })
        .collect();
    tsv::write(path, comments, &ANNOTATION_COLUMNS, &rows)
}
