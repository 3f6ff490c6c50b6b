//! Transcript to information table.

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::graph::{link_destination_with, runway_entry, AirportGraph, NodeId, StringSimilarity};
use crate::ner::merge_override;
use crate::rules::{normalize_callsign_text, EntityLabel, EntitySpan, RuleSet, Tables};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub time: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    pub text: String,
}

/// Seconds from `HH:MM:SS`, `MM:SS` or `M:SS`.
pub fn parse_time(s: &str) -> Result<f64> {
    let bad = || Error::BadTime(s.to_string());
    let parts: Vec<&str> = s.trim().split(':').collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(bad());
    }
    let mut fields = Vec::with_capacity(3);
    for (i, p) in parts.iter().enumerate() {
        let last = i == parts.len() - 1;
        if p.is_empty() || (!last && !p.chars().all(|c| c.is_ascii_digit())) {
            return Err(bad());
        }
        let v: f64 = p.parse().map_err(|_| bad())?;
        if !v.is_finite() || v < 0.0 {
            return Err(bad());
        }
        fields.push(v);
    }
    let (h, m, sec) = match fields[..] {
        [m, s] => (0.0, m, s),
        [h, m, s] => {
            if m >= 60.0 {
                return Err(bad());
            }
            (h, m, s)
        }
        _ => unreachable!(),
    };
    if sec >= 60.0 {
        return Err(bad());
    }
    Ok(h * 3600.0 + m * 60.0 + sec)
}

/// Reads a JSON Lines transcript and checks that times never decrease.
pub fn parse_transcript(jsonl: &str, origin: &str) -> Result<Vec<Utterance>> {
    let mut out: Vec<Utterance> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (i, line) in jsonl.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let u: Utterance = serde_json::from_str(line)
            .map_err(|e| Error::malformed(origin, format!("line {}: {e}", i + 1)))?;
        let t = parse_time(&u.time)?;
        if t < last {
            return Err(Error::NonMonotoneTime(format!("{} follows a later time", u.time)));
        }
        last = t;
        out.push(u);
    }
    Ok(out)
}

pub fn load_transcript(path: &Path) -> Result<Vec<Utterance>> {
    parse_transcript(&read_to_string(path)?, &path.display().to_string())
}

fn runway_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^(?:(?P<kw>runway)\s+)?(?P<num>\d{1,2}|[a-z]+(?:\s+[a-z]+)?)\s*(?P<side>left|right|center|centre|l|r|c)?$",
        )
        .expect("runway regex compiles")
    })
}

/// Runway designator in a destination phrase (`"runway 08 right"` gives
/// `"08R"`), or `None` when the phrase is not runway phraseology.
pub fn classify_dest_runway(text: &str) -> Option<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let cleaned = cleaned.split_whitespace().collect::<Vec<_>>().join(" ");
    let caps = runway_regex().captures(&cleaned)?;
    let keyword = caps.name("kw").is_some();
    let side = caps.name("side").map(|m| m.as_str());
    let raw_num = caps.name("num")?.as_str();

    let number: u32 = if raw_num.chars().all(|c| c.is_ascii_digit()) {
        if raw_num.len() == 1 && !keyword && side.is_none() {
            return None;
        }
        if raw_num.len() == 2 && !keyword && side.is_none() && raw_num.starts_with('0') {
            return None;
        }
        raw_num.parse().ok()?
    } else {
        if !keyword {
            return None;
        }
        let tables = bundled_tables();
        let digits: Option<String> = raw_num
            .split(' ')
            .map(|w| tables.number_digit(w).map(str::to_string))
            .collect();
        digits?.parse().ok()?
    };
    if !(1..=36).contains(&number) {
        return None;
    }
    let side = match side {
        Some("left" | "l") => "L",
        Some("right" | "r") => "R",
        Some("center" | "centre" | "c") => "C",
        _ => "",
    };
    Some(format!("{number:02}{side}"))
}

fn bundled_tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(Tables::bundled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoRow {
    /// Time as written in the transcript.
    pub time: String,
    pub time_s: f64,
    /// Canonical callsign (`JAL516`); rows are keyed on this.
    pub callsign: String,
    /// Callsign as spoken (`Japan Air 516`).
    pub callsign_surface: String,
    pub ac_state: Vec<String>,
    pub dest_runway: Option<String>,
    pub destination_raw: Option<String>,
    pub destination_node: Option<NodeId>,
    pub remarks: Vec<String>,
}

impl InfoRow {
    /// Destination column: a runway phrase shows its entry node, other
    /// resolved phrases show `phrase(node)`, unresolved ones the phrase.
    pub fn destination_display(&self) -> String {
        match (&self.destination_raw, &self.destination_node) {
            (None, _) => String::new(),
            (Some(raw), None) => raw.clone(),
            (Some(raw), Some(node)) => {
                if classify_dest_runway(raw).is_some() {
                    node.clone()
                } else {
                    format!("{raw}({node})")
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedUtterance {
    pub index: usize,
    pub time: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoTable {
    pub rows: Vec<InfoRow>,
    pub skipped: Vec<SkippedUtterance>,
}

/// One row per utterance that names a callsign. Rule matches override any
/// external predictions; the first callsign keys the row and any others are
/// kept as remarks. With a graph, destinations are linked to nodes.
pub fn build_info_table(
    transcript: &[Utterance],
    rules: &RuleSet,
    external: Option<&[Vec<EntitySpan>]>,
    graph: Option<&AirportGraph>,
) -> Result<InfoTable> {
    if let Some(ext) = external {
        if ext.len() != transcript.len() {
            return Err(Error::LengthMismatch {
                gold: transcript.len(),
                predicted: ext.len(),
            });
        }
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (i, u) in transcript.iter().enumerate() {
        let rule_spans = rules.match_rules(&u.text);
        let spans = match external {
            Some(ext) => merge_override(&ext[i], &rule_spans)?,
            None => rule_spans,
        };
        let mut callsigns = spans.iter().filter(|s| s.label == EntityLabel::Callsign);
        let Some(first) = callsigns.next() else {
            skipped.push(SkippedUtterance {
                index: i,
                time: u.time.clone(),
                text: u.text.clone(),
            });
            continue;
        };
        let remarks = callsigns
            .map(|s| normalize_callsign_text(&s.surface, rules.tables()))
            .collect();

        let mut ac_state: Vec<String> = Vec::new();
        for s in spans.iter().filter(|s| s.label == EntityLabel::AcState) {
            if !ac_state.iter().any(|a| a.eq_ignore_ascii_case(&s.surface)) {
                ac_state.push(s.surface.clone());
            }
        }
        let dests: Vec<&EntitySpan> = spans
            .iter()
            .filter(|s| s.label == EntityLabel::Destination)
            .collect();
        let dest_runway = dests.iter().find_map(|s| classify_dest_runway(&s.surface));
        let destination_raw = dests.last().map(|s| s.surface.clone());
        let destination_node = match (graph, &destination_raw) {
            (Some(g), Some(raw)) => link_phrase(g, rules.tables(), raw),
            _ => None,
        };

        rows.push(InfoRow {
            time: u.time.clone(),
            time_s: parse_time(&u.time)?,
            callsign: normalize_callsign_text(&first.surface, rules.tables()),
            callsign_surface: first.surface.clone(),
            ac_state,
            dest_runway,
            destination_raw,
            destination_node,
            remarks,
        });
    }
    Ok(InfoTable { rows, skipped })
}

fn link_phrase(graph: &AirportGraph, tables: &Tables, phrase: &str) -> Option<NodeId> {
    if let Some(rwy) = classify_dest_runway(phrase) {
        return runway_entry(graph, &rwy, None).ok();
    }
    link_destination_with(&StringSimilarity, tables, phrase, graph, 1)
        .ok()?
        .into_iter()
        .next()
        .map(|(id, _)| id)
}

/// Fills a missing runway from the same callsign's most recent earlier row.
pub fn carry_forward(rows: &[InfoRow]) -> Vec<InfoRow> {
    let mut last: HashMap<&str, String> = HashMap::new();
    let mut out = rows.to_vec();
    for (row, orig) in out.iter_mut().zip(rows) {
        match &orig.dest_runway {
            Some(r) => {
                last.insert(&orig.callsign, r.clone());
            }
            None => {
                if let Some(r) = last.get(orig.callsign.as_str()) {
                    row.dest_runway = Some(r.clone());
                }
            }
        }
    }
    out
}

pub const CSV_HEADER: [&str; 6] = ["TIME", "CALLSIGN", "ACSTATE", "DEST_RUNWAY", "DESTINATION", "DEST_NODE"];

/// RFC 4180 CSV with the spoken callsign and the display destination.
pub fn to_csv(rows: &[InfoRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Internal(format!("csv write: {e}"));
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.time.as_str(),
            r.callsign_surface.as_str(),
            r.ac_state.join(",").as_str(),
            r.dest_runway.as_deref().unwrap_or(""),
            r.destination_display().as_str(),
            r.destination_node.as_deref().unwrap_or(""),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

#[derive(Serialize)]
struct JsonRow<'a> {
    time: &'a str,
    time_s: f64,
    callsign: &'a str,
    callsign_surface: &'a str,
    ac_state: &'a [String],
    dest_runway: Option<&'a str>,
    destination: String,
    destination_raw: Option<&'a str>,
    destination_node: Option<&'a str>,
    remarks: &'a [String],
}

pub fn to_json(rows: &[InfoRow]) -> String {
    let out: Vec<JsonRow> = rows
        .iter()
        .map(|r| JsonRow {
            time: &r.time,
            time_s: r.time_s,
            callsign: &r.callsign,
            callsign_surface: &r.callsign_surface,
            ac_state: &r.ac_state,
            dest_runway: r.dest_runway.as_deref(),
            destination: r.destination_display(),
            destination_raw: r.destination_raw.as_deref(),
            destination_node: r.destination_node.as_deref(),
            remarks: &r.remarks,
        })
        .collect();
    serde_json::to_string_pretty(&out).expect("rows serialize")
}

/// Reads rows written by [`to_json`].
pub fn parse_info_json(json: &str, origin: &str) -> Result<Vec<InfoRow>> {
    #[derive(Deserialize)]
    struct Row {
        time: String,
        time_s: f64,
        callsign: String,
        callsign_surface: String,
        #[serde(default)]
        ac_state: Vec<String>,
        dest_runway: Option<String>,
        destination_raw: Option<String>,
        destination_node: Option<String>,
        #[serde(default)]
        remarks: Vec<String>,
    }
    let rows: Vec<Row> = serde_json::from_str(json).map_err(|e| Error::malformed(origin, e))?;
    Ok(rows
        .into_iter()
        .map(|r| InfoRow {
            time: r.time,
            time_s: r.time_s,
            callsign: r.callsign,
            callsign_surface: r.callsign_surface,
            ac_state: r.ac_state,
            dest_runway: r.dest_runway,
            destination_raw: r.destination_raw,
            destination_node: r.destination_node,
            remarks: r.remarks,
        })
        .collect())
}
