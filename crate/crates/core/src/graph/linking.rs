use std::collections::HashSet;

use super::{AirportGraph, Node, NodeId, NodeKind};
use crate::error::{Error, Result};
use crate::rules::Tables;
use crate::transcript::classify_dest_runway;

/// Matches below this score are dropped.
pub const LINK_THRESHOLD: f64 = 0.35;

/// Phraseology words that carry no information about which node is meant.
const STOPWORDS: &[&str] = &[
    "and", "at", "hold", "holding", "join", "of", "on", "point", "position", "runway", "short",
    "taxi", "taxiway", "the", "to", "via",
];

/// Scores how well a normalized query names a node. Implementations must
/// return values in `[0, 1]` and be deterministic.
pub trait DestinationScorer {
    fn score(&self, query: &[String], node: &Node) -> f64;
}

/// Token overlap and character-trigram Dice similarity; the larger wins.
#[derive(Debug, Clone, Copy, Default)]
pub struct StringSimilarity;

impl DestinationScorer for StringSimilarity {
    fn score(&self, query: &[String], node: &Node) -> f64 {
        if query.is_empty() {
            return 0.0;
        }
        let id_tokens = target_tokens(&node.id);
        let name_tokens = target_tokens(&node.name);
        let all: HashSet<&str> = id_tokens
            .iter()
            .chain(&name_tokens)
            .map(String::as_str)
            .collect();
        let shared = query.iter().filter(|t| all.contains(t.as_str())).count();
        let token_score = shared as f64 / query.len() as f64;

        let q = trigrams(&query.join(" "));
        let tri = [id_tokens, name_tokens]
            .iter()
            .map(|t| dice(&q, &trigrams(&t.join(" "))))
            .fold(0.0, f64::max);
        token_score.max(tri)
    }
}

fn target_tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn trigrams(s: &str) -> HashSet<String> {
    let padded: Vec<char> = format!(" {s} ").chars().collect();
    padded.windows(3).map(|w| w.iter().collect()).collect()
}

fn dice(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    2.0 * a.intersection(b).count() as f64 / (a.len() + b.len()) as f64
}

/// Lowercases, strips punctuation, spells phonetic words as letters and
/// number words as digits, drops phraseology stopwords, and joins a lone
/// letter with the digits after it (`"c five"` becomes `["c5"]`).
pub fn normalize_query(query: &str, tables: &Tables) -> Vec<String> {
    let words: Vec<String> = query
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .filter(|t| !STOPWORDS.contains(t))
        .map(|t| {
            tables
                .number_digit(t)
                .or_else(|| tables.phonetic_letter(t))
                .map(str::to_lowercase)
                .unwrap_or_else(|| t.to_string())
        })
        .collect();

    let mut out: Vec<String> = Vec::new();
    for w in words {
        let is_digits = w.chars().all(|c| c.is_ascii_digit());
        if let Some(prev) = out.last_mut() {
            let prev_digits = prev.chars().all(|c| c.is_ascii_digit());
            let prev_letter = prev.chars().count() == 1 && prev.chars().all(|c| c.is_alphabetic());
            let prev_letter_digits = prev
                .chars()
                .next()
                .is_some_and(|c| c.is_alphabetic())
                && prev.chars().skip(1).all(|c| c.is_ascii_digit())
                && prev.len() > 1;
            if is_digits && (prev_digits || prev_letter || prev_letter_digits) {
                prev.push_str(&w);
                continue;
            }
        }
        out.push(w);
    }
    out
}

pub fn link_destination(query: &str, graph: &AirportGraph, k: usize) -> Result<Vec<(NodeId, f64)>> {
    link_destination_with(&StringSimilarity, &Tables::bundled(), query, graph, k)
}

/// Ranks nodes by `scorer`, best first, ties by node id; drops scores below
/// [`LINK_THRESHOLD`] and keeps at most `k`.
pub fn link_destination_with(
    scorer: &dyn DestinationScorer,
    tables: &Tables,
    query: &str,
    graph: &AirportGraph,
    k: usize,
) -> Result<Vec<(NodeId, f64)>> {
    if !query.chars().any(char::is_alphanumeric) {
        return Err(Error::EmptyQuery);
    }
    let q = normalize_query(query, tables);
    let mut ranked: Vec<(NodeId, f64)> = graph
        .nodes()
        .iter()
        .map(|n| (n.id.clone(), scorer.score(&q, n)))
        .filter(|&(_, s)| s >= LINK_THRESHOLD)
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

fn runway_nodes<'g>(graph: &'g AirportGraph, designator: &str) -> Vec<&'g Node> {
    let Some(want) = classify_dest_runway(designator) else {
        return Vec::new();
    };
    graph
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Runway)
        .filter(|n| {
            target_tokens(&n.name)
                .iter()
                .any(|t| classify_dest_runway(t).as_deref() == Some(want.as_str()))
        })
        .collect()
}

/// Entry node of a runway: the runway node nearest `reference`, or the lowest
/// node id when no reference is given.
pub fn runway_entry(graph: &AirportGraph, designator: &str, reference: Option<&str>) -> Result<NodeId> {
    let mut nodes = runway_nodes(graph, designator);
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    let pick = match reference {
        None => nodes.first().copied(),
        Some(r) => {
            let r = graph.node(r)?;
            nodes.into_iter().min_by(|a, b| {
                let da = (a.x - r.x).hypot(a.y - r.y);
                let db = (b.x - r.x).hypot(b.y - r.y);
                da.total_cmp(&db).then_with(|| a.id.cmp(&b.id))
            })
        }
    };
    pick.map(|n| n.id.clone())
        .ok_or_else(|| Error::UnresolvedDestination(format!("runway {designator}")))
}

/// Far end of a runway: the node of that runway farthest from its entry
/// (lowest id).
pub fn runway_end(graph: &AirportGraph, designator: &str) -> Result<NodeId> {
    let entry = graph.node(&runway_entry(graph, designator, None)?)?;
    let mut nodes = runway_nodes(graph, designator);
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    nodes
        .into_iter()
        .max_by(|a, b| {
            let da = (a.x - entry.x).hypot(a.y - entry.y);
            let db = (b.x - entry.x).hypot(b.y - entry.y);
            da.total_cmp(&db).then_with(|| b.id.cmp(&a.id))
        })
        .map(|n| n.id.clone())
        .ok_or_else(|| Error::UnresolvedDestination(format!("runway {designator}")))
}

/// Resolves a destination phrase: runway phraseology maps to the runway entry,
/// anything else to the best similarity match.
pub fn resolve_destination(
    graph: &AirportGraph,
    tables: &Tables,
    phrase: &str,
    reference: Option<&str>,
) -> Result<NodeId> {
    if let Some(rwy) = classify_dest_runway(phrase) {
        return runway_entry(graph, &rwy, reference);
    }
    link_destination_with(&StringSimilarity, tables, phrase, graph, 1)?
        .into_iter()
        .next()
        .map(|(id, _)| id)
        .ok_or_else(|| Error::UnresolvedDestination(phrase.to_string()))
}
