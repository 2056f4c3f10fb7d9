//! Pair scoring, per-attribute accuracy and EER, and macro-averaged reports.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::Provenance;
use crate::dataset::{AttributeRegistry, Gender, PairExample, NUM_ATTRIBUTES};
use crate::error::{Error, Result};
use crate::model::{StackCache, VtadModel};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredTrial {
    /// Probability that the second utterance is stronger.
    pub score: f64,
    pub label: bool,
    pub attribute: usize,
}

/// One trial per masked attribute of every pair, in pair order.
///
/// Each pair is scored alone, so scores do not depend on how pairs are
/// batched or on the number of worker threads.
pub fn score_pairs(model: &VtadModel, pairs: &[PairExample], stacks: &StackCache) -> Result<Vec<ScoredTrial>> {
    let per_pair: Vec<Vec<ScoredTrial>> = pairs
        .par_iter()
        .map(|p| {
            let get = |id: &str| {
                stacks
                    .get(id)
                    .ok_or_else(|| Error::input(format!("no layer stack for utterance '{id}'")))
            };
            let y = model.predict_stacks(get(&p.utt_a)?.view(), get(&p.utt_b)?.view())?;
            Ok(p.masked_attributes()
                .map(|a| ScoredTrial {
                    score: y[a],
                    label: p.label(a),
                    attribute: a,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_pair.into_iter().flatten().collect())
}

/// Percentage of trials on the correct side of `threshold` (positive iff `score >= threshold`).
pub fn accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::input("accuracy needs a non-empty, aligned trial set"));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= threshold) == l)
        .count();
    Ok(100.0 * correct as f64 / scores.len() as f64)
}

/// Equal error rate in percent.
///
/// Operating points are taken at every distinct score (and above the maximum):
/// `FAR(t)` = share of negatives with score >= t, `FRR(t)` = share of positives
/// with score < t. The first point with `FAR <= FRR` is the crossing; when the
/// two are not exactly equal there, the EER is interpolated linearly between
/// it and the previous point.
pub fn eer(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::input("scores and labels differ in length"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::input("non-finite score"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::input("EER needs both positive and negative trials"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // walking thresholds upward: below the first score FAR = 1, FRR = 0
    let (mut neg_below, mut pos_below) = (0usize, 0usize);
    let mut prev = (1.0f64, 0.0f64);
    let mut i = 0;
    loop {
        let far = (neg - neg_below) as f64 / neg as f64;
        let frr = pos_below as f64 / pos as f64;
        let d = far - frr;
        if d <= 0.0 {
            if d == 0.0 {
                return Ok(100.0 * far);
            }
            let d_prev = prev.0 - prev.1;
            let t = d_prev / (d_prev - d);
            return Ok(100.0 * (prev.0 + t * (far - prev.0)));
        }
        prev = (far, frr);
        if i == idx.len() {
            unreachable!("FAR reaches 0 and FRR 1 above the highest score");
        }
        // move the threshold past every trial sharing this score
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeResult {
    pub attribute: usize,
    pub descriptor: String,
    pub gender: Gender,
    pub n_trials: usize,
    /// `None` when the attribute has no trials.
    pub acc: Option<f64>,
    /// `None` when the trials hold only one class.
    pub eer: Option<f64>,
}

impl AttributeResult {
    pub fn evaluable(&self) -> bool {
        self.acc.is_some() && self.eer.is_some()
    }
}

/// Macro averages over one gender's attributes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenderAverage {
    pub gender: Gender,
    pub acc: Option<f64>,
    pub eer: Option<f64>,
    pub n_attributes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub attributes: Vec<AttributeResult>,
    pub male: GenderAverage,
    pub female: GenderAverage,
    pub overall_acc: Option<f64>,
    pub overall_eer: Option<f64>,
    /// Human-readable notes on excluded attributes and gender fallbacks.
    pub flags: Vec<String>,
}

/// Per-attribute metrics for every attribute that received trials.
pub fn attribute_results(trials: &[ScoredTrial], registry: &AttributeRegistry, threshold: f64) -> Vec<AttributeResult> {
    let mut by_attr: Vec<(Vec<f64>, Vec<bool>)> = vec![(Vec::new(), Vec::new()); NUM_ATTRIBUTES];
    for t in trials {
        by_attr[t.attribute].0.push(t.score);
        by_attr[t.attribute].1.push(t.label);
    }
    by_attr
        .into_iter()
        .enumerate()
        .filter(|(_, (s, _))| !s.is_empty())
        .map(|(a, (s, l))| {
            let (descriptor, gender) = registry.attribute(a).expect("attribute index in range");
            AttributeResult {
                attribute: a,
                descriptor: descriptor.to_owned(),
                gender,
                n_trials: s.len(),
                acc: accuracy(&s, &l, threshold).ok(),
                eer: eer(&s, &l).ok(),
            }
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Gender macro averages and their mean. Accuracy and EER are averaged
/// independently over the attributes where each is defined.
pub fn aggregate(attributes: Vec<AttributeResult>) -> EvalReport {
    let mut flags = Vec::new();
    for a in &attributes {
        if a.acc.is_none() {
            flags.push(format!("{} ({}): no trials, excluded", a.descriptor, a.gender));
        } else if a.eer.is_none() {
            flags.push(format!(
                "{} ({}): single-class trials, EER not evaluable",
                a.descriptor, a.gender
            ));
        }
    }
    let avg = |g: Gender| {
        let of_g = || attributes.iter().filter(move |a| a.gender == g);
        GenderAverage {
            gender: g,
            acc: mean(of_g().filter_map(|a| a.acc)),
            eer: mean(of_g().filter_map(|a| a.eer)),
            n_attributes: of_g().filter(|a| a.acc.is_some()).count(),
        }
    };
    let (male, female) = (avg(Gender::Male), avg(Gender::Female));
    let combine = |m: Option<f64>, f: Option<f64>| match (m, f) {
        (Some(m), Some(f)) => Some((m + f) / 2.0),
        (one, other) => one.or(other),
    };
    for g in [&male, &female] {
        if g.acc.is_none() {
            flags.push(format!(
                "no evaluated {} attributes; overall uses the other gender only",
                g.gender
            ));
        } else if g.eer.is_none() {
            flags.push(format!(
                "no {} attribute has an EER; overall EER uses the other gender only",
                g.gender
            ));
        }
    }
    EvalReport {
        overall_acc: combine(male.acc, female.acc),
        overall_eer: combine(male.eer, female.eer),
        attributes,
        male,
        female,
        flags,
    }
}

/// Round half away from zero to 2 decimals. The 1e-9 nudge keeps values whose
/// binary form sits just under a half (e.g. 94.415) rounding as written.
pub fn round2(x: f64) -> f64 {
    let nudged = x * 100.0 + x.signum() * 1e-9;
    nudged.round() / 100.0
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{:.2}", round2(v))).unwrap_or_else(|| "-".into())
}

impl EvalReport {
    /// Provenance record, one record per attribute, the two gender averages
    /// and the overall record, one JSON object per line. Values are full precision.
    pub fn to_jsonl(&self, provenance: &Provenance) -> String {
        let mut out = String::new();
        let mut line = |v: serde_json::Value| {
            out.push_str(&v.to_string());
            out.push('\n');
        };
        line(provenance.to_json());
        for a in &self.attributes {
            line(serde_json::json!({
                "record": "attribute",
                "attribute": a.attribute,
                "gender": a.gender,
                "descriptor": a.descriptor,
                "acc": a.acc,
                "eer": a.eer,
                "n_trials": a.n_trials,
                "evaluable": a.evaluable(),
            }));
        }
        for g in [&self.male, &self.female] {
            line(serde_json::json!({
                "record": "gender_average",
                "gender": g.gender,
                "acc": g.acc,
                "eer": g.eer,
                "n_attributes": g.n_attributes,
            }));
        }
        line(serde_json::json!({
            "record": "overall",
            "acc": self.overall_acc,
            "eer": self.overall_eer,
            "flags": self.flags,
        }));
        out
    }

    /// Descriptor rows with male and female Acc/EER columns, then averages.
    pub fn to_table(&self, registry: &AttributeRegistry, provenance: &Provenance) -> String {
        let mut out = String::new();
        for c in provenance.comment_lines() {
            let _ = writeln!(out, "# {c}");
        }
        let _ = writeln!(
            out,
            "{:<14} {:>9} {:>9} {:>9} {:>9}",
            "Descriptor", "M Acc%", "M EER%", "F Acc%", "F EER%"
        );
        for (d, name) in registry.names().iter().enumerate() {
            let find = |g: Gender| self.attributes.iter().find(|a| a.attribute == g.block_offset() + d);
            let (m, f) = (find(Gender::Male), find(Gender::Female));
            if m.is_none() && f.is_none() {
                continue;
            }
            let _ = writeln!(
                out,
                "{:<14} {:>9} {:>9} {:>9} {:>9}",
                name,
                cell(m.and_then(|a| a.acc)),
                cell(m.and_then(|a| a.eer)),
                cell(f.and_then(|a| a.acc)),
                cell(f.and_then(|a| a.eer)),
            );
        }
        let _ = writeln!(
            out,
            "{:<14} {:>9} {:>9} {:>9} {:>9}",
            "Average",
            cell(self.male.acc),
            cell(self.male.eer),
            cell(self.female.acc),
            cell(self.female.eer)
        );
        let _ = writeln!(
            out,
            "Overall Acc {}%  EER {}%",
            cell(self.overall_acc),
            cell(self.overall_eer)
        );
        for f in &self.flags {
            let _ = writeln!(out, "note: {f}");
        }
        out
    }
}
