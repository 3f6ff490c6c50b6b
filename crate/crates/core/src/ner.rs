//! Rule-override merging and span-level evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::rules::{EntityLabel, EntitySpan, RuleSet, SpanSource};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedUtterance {
    pub text: String,
    pub gold: Vec<EntitySpan>,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    text: String,
    #[serde(default)]
    entities: Vec<(usize, usize, EntityLabel)>,
}

/// Parses `[{text, entities: [[start, end, label], ...]}, ...]`.
///
/// Spans are validated against their text and must not overlap each other.
pub fn parse_annotated(json: &str, origin: &str) -> Result<Vec<AnnotatedUtterance>> {
    let raw: Vec<RawRecord> = serde_json::from_str(json).map_err(|e| Error::malformed(origin, e))?;
    raw.into_iter()
        .map(|r| {
            let mut gold = r
                .entities
                .iter()
                .map(|&(s, e, l)| EntitySpan::external(&r.text, s, e, l))
                .collect::<Result<Vec<_>>>()?;
            gold.sort_by_key(|s| (s.start, s.end));
            check_disjoint(&gold, "annotation")?;
            Ok(AnnotatedUtterance { text: r.text, gold })
        })
        .collect()
}

pub fn load_annotated(path: &Path) -> Result<Vec<AnnotatedUtterance>> {
    parse_annotated(&read_to_string(path)?, &path.display().to_string())
}

/// Serializes utterances with the given per-utterance spans in the same format
/// [`parse_annotated`] reads.
pub fn to_annotated_json(texts: &[&str], spans: &[Vec<EntitySpan>]) -> String {
    let records: Vec<RawRecord> = texts
        .iter()
        .zip(spans)
        .map(|(t, s)| RawRecord {
            text: t.to_string(),
            entities: s.iter().map(|e| (e.start, e.end, e.label)).collect(),
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("records serialize")
}

fn check_disjoint(sorted: &[EntitySpan], which: &'static str) -> Result<()> {
    if sorted.windows(2).any(|w| w[0].end > w[1].start) {
        return Err(Error::OverlappingInput(which));
    }
    Ok(())
}

fn sorted_checked(spans: &[EntitySpan], which: &'static str) -> Result<Vec<EntitySpan>> {
    let mut v = spans.to_vec();
    v.sort_by_key(|s| (s.start, s.end));
    check_disjoint(&v, which)?;
    Ok(v)
}

/// Keeps every rule span and those external spans that touch no rule span.
pub fn merge_override(external: &[EntitySpan], rule: &[EntitySpan]) -> Result<Vec<EntitySpan>> {
    let external = sorted_checked(external, "external")?;
    let rule = sorted_checked(rule, "rule")?;
    let mut out: Vec<EntitySpan> = external
        .into_iter()
        .filter(|e| !rule.iter().any(|r| r.overlaps(e)))
        .collect();
    out.extend(rule);
    out.sort_by_key(|s| (s.start, s.end));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricsReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MetricsReport {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// Micro-averaged exact-match scoring: a prediction is a true positive when
/// its start, end and label all equal an unmatched gold span.
pub fn score(gold: &[AnnotatedUtterance], predicted: &[Vec<EntitySpan>]) -> Result<MetricsReport> {
    if gold.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            gold: gold.len(),
            predicted: predicted.len(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (g, p) in gold.iter().zip(predicted) {
        let mut unmatched: Vec<(usize, usize, EntityLabel)> =
            g.gold.iter().map(|s| (s.start, s.end, s.label)).collect();
        for s in p {
            match unmatched.iter().position(|&k| k == (s.start, s.end, s.label)) {
                Some(i) => {
                    unmatched.swap_remove(i);
                    tp += 1;
                }
                None => fp += 1,
            }
        }
        fn_ += unmatched.len() as u64;
    }
    Ok(MetricsReport::from_counts(tp, fp, fn_))
}

/// Rule matches for every utterance in order.
pub fn predict_with_rules(rules: &RuleSet, utterances: &[AnnotatedUtterance]) -> Vec<Vec<EntitySpan>> {
    utterances.iter().map(|u| rules.match_rules(&u.text)).collect()
}

/// Overrides each utterance's external predictions with its rule matches.
pub fn merge_corpus(
    external: &[Vec<EntitySpan>],
    rule: &[Vec<EntitySpan>],
) -> Result<Vec<Vec<EntitySpan>>> {
    if external.len() != rule.len() {
        return Err(Error::LengthMismatch {
            gold: rule.len(),
            predicted: external.len(),
        });
    }
    external
        .iter()
        .zip(rule)
        .map(|(e, r)| merge_override(e, r))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: String,
    pub total: usize,
    pub counts: BTreeMap<EntityLabel, usize>,
    pub percentages: BTreeMap<EntityLabel, f64>,
}

/// Entity counts and shares per label for each named split.
pub fn corpus_stats(datasets: &[(String, Vec<AnnotatedUtterance>)]) -> Vec<SplitStats> {
    datasets
        .iter()
        .map(|(name, utts)| {
            let mut counts: BTreeMap<EntityLabel, usize> =
                EntityLabel::ALL.iter().map(|&l| (l, 0)).collect();
            for s in utts.iter().flat_map(|u| &u.gold) {
                *counts.get_mut(&s.label).expect("all labels present") += 1;
            }
            let total: usize = counts.values().sum();
            let percentages = counts
                .iter()
                .map(|(&l, &c)| {
                    let pct = if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 };
                    (l, pct)
                })
                .collect();
            SplitStats {
                split: name.clone(),
                total,
                counts,
                percentages,
            }
        })
        .collect()
}

/// Simulates a weaker external model: removes `delete_frac` of all gold
/// entities and relabels `mislabel_frac` of them (disjoint sets, rounded to
/// whole entities), chosen by a seeded shuffle.
pub fn degrade_gold(
    gold: &[AnnotatedUtterance],
    delete_frac: f64,
    mislabel_frac: f64,
    seed: u64,
) -> Result<Vec<Vec<EntitySpan>>> {
    for (name, f) in [("delete_frac", delete_frac), ("mislabel_frac", mislabel_frac)] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::invalid(name, format!("must be in [0, 1], got {f}")));
        }
    }
    if delete_frac + mislabel_frac > 1.0 {
        return Err(Error::invalid("mislabel_frac", "fractions sum above 1"));
    }
    let index: Vec<(usize, usize)> = gold
        .iter()
        .enumerate()
        .flat_map(|(u, g)| (0..g.gold.len()).map(move |s| (u, s)))
        .collect();
    let n = index.len();
    let n_delete = (delete_frac * n as f64).round() as usize;
    let n_mislabel = ((mislabel_frac * n as f64).round() as usize).min(n - n_delete);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fate = vec![0u8; n];
    for &i in &order[..n_delete] {
        fate[i] = 1;
    }
    for &i in &order[n_delete..n_delete + n_mislabel] {
        fate[i] = 2;
    }

    let mut out: Vec<Vec<EntitySpan>> = vec![Vec::new(); gold.len()];
    for (k, &(u, s)) in index.iter().enumerate() {
        let mut span = gold[u].gold[s].clone();
        span.source = SpanSource::External;
        span.rule_id = None;
        match fate[k] {
            1 => continue,
            2 => span.label = next_label(span.label),
            _ => {}
        }
        out[u].push(span);
    }
    Ok(out)
}

fn next_label(l: EntityLabel) -> EntityLabel {
    match l {
        EntityLabel::Callsign => EntityLabel::AcState,
        EntityLabel::AcState => EntityLabel::Destination,
        EntityLabel::Destination => EntityLabel::Callsign,
    }
}
