//! Small synthetic corpus whose annotations agree with the synthetic feature
//! backend: speaker `s` has latent intensities `speaker_signal(seed, s, gender)`
//! and a pair is annotated `b_stronger` on a descriptor exactly when B's
//! intensity exceeds A's by at least `margin`.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::audio::{write_wav, Waveform};
use crate::dataset::{
    write_annotations, write_manifest, AttributeRegistry, Direction, Gender, SpeakerPairAnnotation, UtteranceRecord,
    NUM_DESCRIPTORS,
};
use crate::error::{Error, Result};
use crate::features::speaker_signal;
use crate::seed::rng_for;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const ANNOTATIONS_FILE: &str = "annotations.tsv";
pub const AUDIO_DIR: &str = "wav";

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub seed: u64,
    pub speakers_per_gender: usize,
    pub utterances_per_speaker: usize,
    /// Annotated descriptors per speaker pair (fewer if not enough clear margins).
    pub descriptors_per_pair: usize,
    /// Minimum latent intensity gap for a descriptor to be annotated.
    pub margin: f64,
    /// Restrict annotations to these descriptors (all when empty).
    pub descriptors: Vec<String>,
    pub sample_rate: u32,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            seed: crate::seed::DEFAULT_SEED,
            speakers_per_gender: 4,
            utterances_per_speaker: 6,
            descriptors_per_pair: 3,
            margin: 0.25,
            descriptors: Vec::new(),
            sample_rate: 16_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub records: Vec<UtteranceRecord>,
    pub annotations: Vec<SpeakerPairAnnotation>,
}

pub fn speaker_id(gender: Gender, i: usize) -> String {
    format!("spk_{}{i:02}", gender.as_str().chars().next().unwrap_or('x'))
}

pub fn utterance_id(speaker: &str, k: usize) -> String {
    format!("{speaker}_u{k}")
}

/// Build manifest records and annotations (no audio).
pub fn synth_fixture(spec: &FixtureSpec, registry: &AttributeRegistry) -> Result<Fixture> {
    if spec.speakers_per_gender < 2 || spec.utterances_per_speaker == 0 || spec.descriptors_per_pair == 0 {
        return Err(Error::config(
            "fixture needs >= 2 speakers per gender, >= 1 utterance and >= 1 descriptor per pair",
        ));
    }
    let allowed: Vec<usize> = if spec.descriptors.is_empty() {
        (0..NUM_DESCRIPTORS).collect()
    } else {
        spec.descriptors
            .iter()
            .map(|d| registry.descriptor_index(d))
            .collect::<Result<_>>()?
    };
    let mut records = Vec::new();
    let mut annotations = Vec::new();
    for gender in [Gender::Male, Gender::Female] {
        let speakers: Vec<String> = (0..spec.speakers_per_gender).map(|i| speaker_id(gender, i)).collect();
        for s in &speakers {
            for k in 0..spec.utterances_per_speaker {
                let u = utterance_id(s, k);
                records.push(UtteranceRecord {
                    path: format!("{AUDIO_DIR}/{u}.wav"),
                    utterance_id: u,
                    speaker_id: s.clone(),
                    gender,
                });
            }
        }
        let offset = gender.block_offset();
        for i in 0..speakers.len() {
            for j in i + 1..speakers.len() {
                let (a, b) = (&speakers[i], &speakers[j]);
                let sa = speaker_signal(spec.seed, a, gender);
                let sb = speaker_signal(spec.seed, b, gender);
                let mut clear: Vec<usize> = allowed
                    .iter()
                    .copied()
                    .filter(|&d| (sb[offset + d] - sa[offset + d]).abs() >= spec.margin)
                    .collect();
                clear.shuffle(&mut rng_for(spec.seed, &format!("fixture-descriptors:{a}:{b}")));
                clear.truncate(spec.descriptors_per_pair);
                clear.sort_unstable();
                for d in clear {
                    annotations.push(SpeakerPairAnnotation {
                        speaker_a: a.clone(),
                        speaker_b: b.clone(),
                        descriptor: registry.names()[d].clone(),
                        direction: if sb[offset + d] > sa[offset + d] {
                            Direction::BStronger
                        } else {
                            Direction::AStronger
                        },
                    });
                }
            }
        }
    }
    Ok(Fixture { records, annotations })
}

/// A tone burst between two silences; pitch varies by speaker, phase by utterance.
pub fn fixture_waveform(speaker_index: usize, utterance_index: usize, sample_rate: u32) -> Result<Waveform> {
    let sr = sample_rate as f64;
    let lead = (0.25 * sr) as usize + 160 * utterance_index;
    let tone = (0.8 * sr) as usize;
    let tail = (0.3 * sr) as usize;
    let freq = 140.0 + 23.0 * speaker_index as f64;
    let phase = 0.7 * utterance_index as f64;
    let mut samples = vec![0.0f32; lead + tone + tail];
    for (n, s) in samples[lead..lead + tone].iter_mut().enumerate() {
        let t = n as f64 / sr;
        *s = (0.4 * (2.0 * std::f64::consts::PI * freq * t + phase).sin()) as f32;
    }
    Waveform::new(samples, sample_rate)
}

/// Write `wav/*.wav`, `manifest.tsv` and `annotations.tsv` under `dir`.
pub fn write_fixture(
    dir: &Path,
    spec: &FixtureSpec,
    registry: &AttributeRegistry,
    comments: &[String],
) -> Result<Fixture> {
    let fixture = synth_fixture(spec, registry)?;
    let audio = dir.join(AUDIO_DIR);
    std::fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    for r in &fixture.records {
        let speaker_index: usize =
            r.speaker_id[5..].parse().unwrap_or(0) + if r.gender == Gender::Female { 50 } else { 0 };
        let k: usize = r
            .utterance_id
            .rsplit("_u")
            .next()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0);
        write_wav(
            &fixture_waveform(speaker_index, k, spec.sample_rate)?,
            &dir.join(&r.path),
        )?;
    }
    write_manifest(&dir.join(MANIFEST_FILE), &fixture.records, comments)?;
    write_annotations(&dir.join(ANNOTATIONS_FILE), &fixture.annotations, comments)?;
    Ok(fixture)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_pairs, PairOptions};

    #[test]
    fn annotations_follow_latent_signal() {
        let spec = FixtureSpec::default();
        let reg = AttributeRegistry::default();
        let f = synth_fixture(&spec, &reg).unwrap();
        assert_eq!(f.records.len(), 2 * 4 * 6);
        assert!(!f.annotations.is_empty());
        for a in &f.annotations {
            let g = if a.speaker_a.starts_with("spk_m") {
                Gender::Male
            } else {
                Gender::Female
            };
            let idx = reg.attribute_index(&a.descriptor, g).unwrap();
            let d = speaker_signal(spec.seed, &a.speaker_b, g)[idx] - speaker_signal(spec.seed, &a.speaker_a, g)[idx];
            assert!(d.abs() >= spec.margin);
            assert_eq!(a.direction.label(), d > 0.0);
        }
        let pairs = build_pairs(
            &f.annotations,
            &f.records,
            &reg,
            &PairOptions {
                pairs_per_speaker_pair: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(pairs.len(), 12 * 4);
    }

    #[test]
    fn descriptor_restriction() {
        let reg = AttributeRegistry::default();
        let spec = FixtureSpec {
            descriptors: vec!["bright".into()],
            ..FixtureSpec::default()
        };
        let f = synth_fixture(&spec, &reg).unwrap();
        assert!(!f.annotations.is_empty());
        assert!(f.annotations.iter().all(|a| a.descriptor == "Bright"));
        let bad = FixtureSpec {
            descriptors: vec!["Loud".into()],
            ..FixtureSpec::default()
        };
        assert!(synth_fixture(&bad, &reg).is_err());
    }

    #[test]
    fn deterministic() {
        let reg = AttributeRegistry::default();
        let spec = FixtureSpec::default();
        assert_eq!(synth_fixture(&spec, &reg).unwrap(), synth_fixture(&spec, &reg).unwrap());
    }

    #[test]
    fn waveform_is_tone_between_silences() {
        let w = fixture_waveform(1, 2, 16_000).unwrap();
        let s = w.samples();
        assert_eq!(s[0], 0.0);
        assert_eq!(*s.last().unwrap(), 0.0);
        assert!(s.iter().any(|v| v.abs() > 0.3));
    }
}
