//! Phraseology rule engine.
//!
//! Rules are compiled into case-insensitive regular expressions that run over
//! a whitespace-normalized copy of the utterance. Matches are mapped back to
//! character offsets in the original text, so every span's `surface` is an
//! exact slice of the input.
//!
//! Rule bodies may use the placeholders `{NUM}` (digits or spoken number
//! words), `{PHONETIC}` (a phonetic-alphabet word) and `{TELEPHONY}` (a
//! telephony designator); these expand from the rule set's [`Tables`].
//! A regular-expression rule that defines a capture group named `span` emits
//! only that group, which lets a rule require context it does not label
//! (`via (?P<span>{PHONETIC})`).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};

const BUNDLED_RULES: &str = include_str!("../fixtures/rules/default_rules.json");
const BUNDLED_TABLES: &str = include_str!("../fixtures/rules/default_tables.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityLabel {
    #[serde(rename = "CALLSIGN")]
    Callsign,
    #[serde(rename = "ACSTATE")]
    AcState,
    #[serde(rename = "DESTINATION")]
    Destination,
}

impl EntityLabel {
    pub const ALL: [EntityLabel; 3] = [
        EntityLabel::Callsign,
        EntityLabel::AcState,
        EntityLabel::Destination,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityLabel::Callsign => "CALLSIGN",
            EntityLabel::AcState => "ACSTATE",
            EntityLabel::Destination => "DESTINATION",
        }
    }
}

impl fmt::Display for EntityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EntityLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CALLSIGN" => Ok(EntityLabel::Callsign),
            "ACSTATE" => Ok(EntityLabel::AcState),
            "DESTINATION" => Ok(EntityLabel::Destination),
            other => Err(Error::invalid("label", format!("unknown entity label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PatternKind {
    /// Whitespace-separated literal tokens (or placeholders), matched on word
    /// boundaries.
    TokenSequence,
    RegularExpression,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RulePattern {
    pub id: String,
    pub label: EntityLabel,
    pub kind: PatternKind,
    pub body: String,
    #[serde(default)]
    pub priority: u32,
}

/// Lookup tables used for placeholder expansion and callsign normalization.
/// Keys are lowercase with single spaces.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tables {
    #[serde(default)]
    pub telephony: BTreeMap<String, String>,
    #[serde(default)]
    pub phonetic: BTreeMap<String, String>,
    #[serde(default)]
    pub numbers: BTreeMap<String, String>,
}

impl Tables {
    pub fn bundled() -> Tables {
        Tables::from_json(BUNDLED_TABLES, "<bundled tables>")
            .expect("bundled tables are well-formed")
    }

    pub fn from_json(json: &str, origin: &str) -> Result<Tables> {
        let raw: Tables = serde_json::from_str(json).map_err(|e| Error::malformed(origin, e))?;
        Ok(Tables {
            telephony: normalize_keys(raw.telephony),
            phonetic: normalize_keys(raw.phonetic),
            numbers: normalize_keys(raw.numbers),
        })
    }

    pub fn load(path: &Path) -> Result<Tables> {
        Tables::from_json(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn phonetic_letter(&self, word: &str) -> Option<&str> {
        self.phonetic.get(word).map(String::as_str)
    }

    pub fn number_digit(&self, word: &str) -> Option<&str> {
        self.numbers.get(word).map(String::as_str)
    }
}

fn normalize_keys(map: BTreeMap<String, String>) -> BTreeMap<String, String> {
    map.into_iter()
        .map(|(k, v)| (collapse_whitespace(&k.to_lowercase()), v))
        .collect()
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SpanSource {
    Rule,
    External,
}

/// A labeled slice of an utterance. Offsets are in characters, end exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub label: EntityLabel,
    pub surface: String,
    pub source: SpanSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<String>,
}

impl EntitySpan {
    /// Builds an externally-predicted span, checking it against `text`.
    pub fn external(text: &str, start: usize, end: usize, label: EntityLabel) -> Result<Self> {
        let surface = char_slice(text, start, end).ok_or_else(|| Error::InvalidSpan {
            start,
            end,
            reason: format!("text has {} characters", text.chars().count()),
        })?;
        Ok(EntitySpan {
            start,
            end,
            label,
            surface,
            source: SpanSource::External,
            rule_id: None,
            normalized: None,
        })
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Returns `text[start..end]` in character offsets, or `None` when the range
/// is empty or out of bounds.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<String> {
    if start >= end {
        return None;
    }
    let mut out = String::new();
    let mut count = 0;
    for (i, c) in text.chars().enumerate() {
        count = i + 1;
        if i >= end {
            break;
        }
        if i >= start {
            out.push(c);
        }
    }
    if end > count {
        return None;
    }
    Some(out)
}

#[derive(Debug, Clone)]
struct CompiledRule {
    pattern: RulePattern,
    regex: Regex,
    has_span_group: bool,
}

/// An immutable, compiled collection of rules plus its lookup tables.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<CompiledRule>,
    tables: Tables,
}

impl RuleSet {
    pub fn compile(patterns: Vec<RulePattern>, tables: Tables) -> Result<RuleSet> {
        let mut seen = HashSet::new();
        let mut rules = Vec::with_capacity(patterns.len());
        for pattern in patterns {
            if !seen.insert(pattern.id.clone()) {
                return Err(Error::DuplicateId(pattern.id));
            }
            let source = expand_body(&pattern, &tables);
            let regex = RegexBuilder::new(&source)
                .case_insensitive(true)
                .build()
                .map_err(|e| Error::BadPattern {
                    id: pattern.id.clone(),
                    reason: e.to_string(),
                })?;
            let has_span_group = regex.capture_names().any(|n| n == Some("span"));
            rules.push(CompiledRule {
                pattern,
                regex,
                has_span_group,
            });
        }
        Ok(RuleSet { rules, tables })
    }

    pub fn from_json(rules_json: &str, tables: Tables, origin: &str) -> Result<RuleSet> {
        let patterns: Vec<RulePattern> =
            serde_json::from_str(rules_json).map_err(|e| Error::malformed(origin, e))?;
        RuleSet::compile(patterns, tables)
    }

    /// The starter rule set covering the bundled case-study transcripts.
    pub fn bundled() -> RuleSet {
        RuleSet::from_json(BUNDLED_RULES, Tables::bundled(), "<bundled rules>")
            .expect("bundled rules compile")
    }

    pub fn patterns(&self) -> impl Iterator<Item = &RulePattern> {
        self.rules.iter().map(|r| &r.pattern)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn tables(&self) -> &Tables {
        &self.tables
    }

    pub fn counts_by_label(&self) -> BTreeMap<EntityLabel, usize> {
        let mut counts: BTreeMap<EntityLabel, usize> =
            EntityLabel::ALL.iter().map(|&l| (l, 0)).collect();
        for rule in &self.rules {
            *counts.entry(rule.pattern.label).or_default() += 1;
        }
        counts
    }

    /// Runs every rule over `text` and resolves overlaps.
    ///
    /// Among overlapping candidates the longest span wins, then the higher
    /// priority, then the earlier rule, then the leftmost start. Output is
    /// sorted by start offset.
    pub fn match_rules(&self, text: &str) -> Vec<EntitySpan> {
        let normalized = NormalizedText::new(text);
        if normalized.text.is_empty() {
            return Vec::new();
        }

        struct Candidate {
            start: usize,
            end: usize,
            rule: usize,
        }

        let mut candidates = Vec::new();
        for (index, rule) in self.rules.iter().enumerate() {
            for caps in rule.regex.captures_iter(&normalized.text) {
                let m = if rule.has_span_group {
                    match caps.name("span") {
                        Some(m) => m,
                        None => continue,
                    }
                } else {
                    caps.get(0).expect("group 0 always participates")
                };
                if m.start() == m.end() {
                    continue;
                }
                let (start, end) = normalized.original_range(m.start(), m.end());
                candidates.push(Candidate {
                    start,
                    end,
                    rule: index,
                });
            }
        }

        candidates.sort_by(|a, b| {
            (b.end - b.start)
                .cmp(&(a.end - a.start))
                .then_with(|| {
                    self.rules[b.rule]
                        .pattern
                        .priority
                        .cmp(&self.rules[a.rule].pattern.priority)
                })
                .then_with(|| a.rule.cmp(&b.rule))
                .then_with(|| a.start.cmp(&b.start))
        });

        let mut accepted: Vec<Candidate> = Vec::new();
        for c in candidates {
            if accepted.iter().all(|a| c.end <= a.start || a.end <= c.start) {
                accepted.push(c);
            }
        }
        accepted.sort_by_key(|c| c.start);

        accepted
            .into_iter()
            .map(|c| {
                let pattern = &self.rules[c.rule].pattern;
                EntitySpan {
                    start: c.start,
                    end: c.end,
                    label: pattern.label,
                    surface: normalized.original_slice(c.start, c.end),
                    source: SpanSource::Rule,
                    rule_id: Some(pattern.id.clone()),
                    normalized: None,
                }
            })
            .collect()
    }
}

/// Loads a rules file, using `tables_file` or the bundled tables.
pub fn compile_ruleset(rules_file: &Path, tables_file: Option<&Path>) -> Result<RuleSet> {
    let tables = match tables_file {
        Some(p) => Tables::load(p)?,
        None => Tables::bundled(),
    };
    RuleSet::from_json(
        &read_to_string(rules_file)?,
        tables,
        &rules_file.display().to_string(),
    )
}

fn alternation<'a>(keys: impl Iterator<Item = &'a String>) -> String {
    // Longest first so leftmost-first alternation prefers the longest key.
    let mut keys: Vec<&String> = keys.collect();
    keys.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    let alts: Vec<String> = keys
        .iter()
        .map(|k| {
            k.split(' ')
                .map(regex::escape)
                .collect::<Vec<_>>()
                .join(r"\s+")
        })
        .collect();
    if alts.is_empty() {
        // Matches nothing.
        return r"[^\s\S]".to_string();
    }
    format!("(?:{})", alts.join("|"))
}

fn expand_placeholders(body: &str, tables: &Tables) -> String {
    let number_word = alternation(tables.numbers.keys());
    let num = format!(r"(?:(?:\d+|{number_word})(?:\s+(?:\d+|{number_word}))*)");
    body.replace("{NUM}", &num)
        .replace("{PHONETIC}", &alternation(tables.phonetic.keys()))
        .replace("{TELEPHONY}", &alternation(tables.telephony.keys()))
}

fn expand_body(pattern: &RulePattern, tables: &Tables) -> String {
    match pattern.kind {
        PatternKind::RegularExpression => expand_placeholders(&pattern.body, tables),
        PatternKind::TokenSequence => {
            let tokens: Vec<&str> = pattern.body.split_whitespace().collect();
            if tokens.is_empty() {
                // Surfaces as BAD_PATTERN through the regex compiler.
                return "(".to_string();
            }
            let parts: Vec<String> = tokens
                .iter()
                .map(|t| {
                    if t.starts_with('{') && t.ends_with('}') {
                        expand_placeholders(t, tables)
                    } else {
                        regex::escape(t)
                    }
                })
                .collect();
            let first_word = tokens[0]
                .chars()
                .next()
                .is_some_and(|c| c.is_alphanumeric() || c == '{');
            let last_word = tokens[tokens.len() - 1]
                .chars()
                .last()
                .is_some_and(|c| c.is_alphanumeric() || c == '}');
            format!(
                "{}{}{}",
                if first_word { r"\b" } else { "" },
                parts.join(r"\s+"),
                if last_word { r"\b" } else { "" }
            )
        }
    }
}

/// Whitespace-collapsed text with a byte-to-character offset map back into
/// the original.
struct NormalizedText<'a> {
    original: &'a str,
    text: String,
    /// For each byte of `text`, the character index in `original` it came from.
    origin: Vec<usize>,
}

impl<'a> NormalizedText<'a> {
    fn new(original: &'a str) -> Self {
        let mut text = String::with_capacity(original.len());
        let mut origin = Vec::with_capacity(original.len());
        let mut pending_space: Option<usize> = None;
        for (ci, c) in original.chars().enumerate() {
            if c.is_whitespace() {
                if pending_space.is_none() && !text.is_empty() {
                    pending_space = Some(ci);
                }
                continue;
            }
            if let Some(si) = pending_space.take() {
                text.push(' ');
                origin.push(si);
            }
            let before = text.len();
            text.push(c);
            origin.extend(std::iter::repeat_n(ci, text.len() - before));
        }
        NormalizedText {
            original,
            text,
            origin,
        }
    }

    fn original_range(&self, byte_start: usize, byte_end: usize) -> (usize, usize) {
        (self.origin[byte_start], self.origin[byte_end - 1] + 1)
    }

    fn original_slice(&self, start: usize, end: usize) -> String {
        self.original
            .chars()
            .skip(start)
            .take(end - start)
            .collect()
    }
}

/// Canonical form of a callsign span: a leading telephony designator becomes
/// its ICAO code, number words become digits, phonetic words become letters,
/// and whitespace is removed. Unknown tokens pass through unchanged.
pub fn normalize_callsign(span: &EntitySpan, rules: &RuleSet) -> Result<String> {
    if span.label != EntityLabel::Callsign {
        return Err(Error::WrongLabel(span.label.to_string()));
    }
    Ok(normalize_callsign_text(&span.surface, rules.tables()))
}

pub fn normalize_callsign_text(surface: &str, tables: &Tables) -> String {
    let tokens: Vec<String> = surface
        .split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric() && c != '-')
                .to_string()
        })
        .filter(|t| !t.is_empty())
        .collect();
    let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();

    let mut out = String::new();
    let mut i = 0;
    if let Some((code, used)) = leading_designator(&lower, tables) {
        out.push_str(code);
        i = used;
    }
    while i < tokens.len() {
        let word = lower[i].as_str();
        if let Some(d) = tables.number_digit(word) {
            out.push_str(d);
        } else if let Some(l) = tables.phonetic_letter(word) {
            out.push_str(l);
        } else {
            out.push_str(&tokens[i]);
        }
        i += 1;
    }
    out
}

fn leading_designator<'t>(lower: &[String], tables: &'t Tables) -> Option<(&'t str, usize)> {
    let max_words = tables
        .telephony
        .keys()
        .map(|k| k.split(' ').count())
        .max()
        .unwrap_or(0);
    (1..=max_words.min(lower.len())).rev().find_map(|n| {
        let key = lower[..n].join(" ");
        tables.telephony.get(&key).map(|code| (code.as_str(), n))
    })
}
