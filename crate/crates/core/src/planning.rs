//! Taxi plans reconstructed from an extracted information table.
//!
//! Landing aircraft roll from the runway threshold to its far end. Departing
//! aircraft taxi from a given start node to their last cleared destination,
//! enter the active runway at the node nearest that point, and roll out.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{runway_end, runway_entry, shortest_taxi_plan, AirportGraph, NodeId, TaxiPlan};
use crate::transcript::InfoRow;

/// Aircraft states that mark a landing aircraft.
const LANDING_STATES: &[&str] = &["approach", "land", "landing", "final"];

fn has_state(row: &InfoRow, states: &[&str]) -> bool {
    row.ac_state
        .iter()
        .any(|s| states.iter().any(|w| s.eq_ignore_ascii_case(w)))
}

fn same_aircraft(row: &InfoRow, callsign: &str) -> bool {
    row.callsign.eq_ignore_ascii_case(callsign) || row.callsign_surface.eq_ignore_ascii_case(callsign)
}

/// Callsigns of rows whose state includes `collision`, in table order.
pub fn collision_callsigns(rows: &[InfoRow]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in rows.iter().filter(|r| has_state(r, &["collision"])) {
        if !out.contains(&r.callsign) {
            out.push(r.callsign.clone());
        }
    }
    out
}

/// Builds one plan per aircraft. `starts` maps callsigns to start nodes for
/// departing aircraft; without one, a departure starts at its cleared
/// destination. Start times are the last clearance with a resolved
/// destination, relative to the earliest of them.
pub fn plans_from_table(
    rows: &[InfoRow],
    graph: &AirportGraph,
    aircraft: &[String],
    starts: &BTreeMap<String, NodeId>,
) -> Result<Vec<TaxiPlan>> {
    let active = rows
        .iter()
        .rev()
        .find_map(|r| r.dest_runway.clone())
        .ok_or_else(|| Error::UnresolvedDestination("no runway named in the table".into()))?;

    let mut drafts = Vec::with_capacity(aircraft.len());
    for cs in aircraft {
        let own: Vec<&InfoRow> = rows.iter().filter(|r| same_aircraft(r, cs)).collect();
        let Some(last) = own.last() else {
            return Err(Error::invalid("aircraft", format!("{cs} does not appear in the table")));
        };
        let cleared = own.iter().rev().find(|r| r.destination_node.is_some());
        let clearance_time = cleared.unwrap_or(last).time_s;
        let runway = own
            .iter()
            .rev()
            .find_map(|r| r.dest_runway.clone())
            .unwrap_or_else(|| active.clone());

        let (from, to, via) = if own.iter().any(|r| has_state(r, LANDING_STATES)) {
            (runway_entry(graph, &runway, None)?, runway_end(graph, &runway)?, Vec::new())
        } else {
            let hold = cleared
                .and_then(|r| r.destination_node.clone())
                .ok_or_else(|| Error::UnresolvedDestination(format!("no cleared destination for {cs}")))?;
            let entry = runway_entry(graph, &active, Some(&hold))?;
            let start = starts
                .iter()
                .find(|(k, _)| own.iter().any(|r| same_aircraft(r, k)))
                .map(|(_, v)| v.clone())
                .unwrap_or_else(|| hold.clone());
            let mut via = Vec::new();
            if start != hold {
                via.push(hold.clone());
            }
            if entry != hold {
                via.push(entry);
            }
            (start, runway_end(graph, &active)?, via)
        };
        drafts.push((last.callsign.clone(), from, to, via, clearance_time));
    }
    let t0 = drafts.iter().map(|d| d.4).fold(f64::INFINITY, f64::min);
    drafts
        .into_iter()
        .map(|(cs, from, to, via, t)| {
            let via: Vec<NodeId> = via.into_iter().filter(|v| *v != to).collect();
            shortest_taxi_plan(graph, &cs, &from, &to, &via, t - t0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph() -> AirportGraph {
        AirportGraph::from_json(
            r#"{"nodes": [
                {"id": "R1", "name": "Runway 34R/16L", "x": 0, "y": 0, "kind": "RUNWAY"},
                {"id": "R2", "name": "Runway 34R/16L", "x": 0, "y": 300, "kind": "RUNWAY"},
                {"id": "R3", "name": "Runway 34R/16L", "x": 0, "y": 600, "kind": "RUNWAY"},
                {"id": "H", "name": "Holding point C5", "x": -90, "y": 300, "kind": "HOLD"},
                {"id": "T", "name": "Taxiway C", "x": -180, "y": 300, "kind": "TAXIWAY"}],
              "links": [{"a": "R1", "b": "R2"}, {"a": "R2", "b": "R3"},
                        {"a": "H", "b": "R2"}, {"a": "T", "b": "H"}]}"#,
            "t",
        )
        .unwrap()
    }

    fn row(t: f64, cs: &str, state: &str, rwy: Option<&str>, node: Option<&str>) -> InfoRow {
        InfoRow {
            time: t.to_string(),
            time_s: t,
            callsign: cs.into(),
            callsign_surface: cs.into(),
            ac_state: vec![state.into()],
            dest_runway: rwy.map(Into::into),
            destination_raw: node.map(Into::into),
            destination_node: node.map(Into::into),
            remarks: vec![],
        }
    }

    #[test]
    fn landing_and_departure() {
        let g = graph();
        let rows = vec![
            row(10.0, "JAL1", "approach", Some("34R"), Some("R1")),
            row(25.0, "JA2", "taxi", None, Some("H")),
            row(40.0, "JAL1", "collision", Some("34R"), None),
            row(40.0, "JA2", "collision", None, None),
        ];
        let cs = collision_callsigns(&rows);
        assert_eq!(cs, vec!["JAL1", "JA2"]);
        let mut starts = BTreeMap::new();
        starts.insert("JA2".to_string(), "T".to_string());
        let plans = plans_from_table(&rows, &g, &cs, &starts).unwrap();
        assert_eq!(plans[0].nodes, vec!["R1", "R2", "R3"]);
        assert_eq!(plans[0].start_time, 0.0);
        assert_eq!(plans[1].nodes, vec!["T", "H", "R2", "R3"]);
        assert_eq!(plans[1].start_time, 15.0);

        let no_start = plans_from_table(&rows, &g, &cs, &BTreeMap::new()).unwrap();
        assert_eq!(no_start[1].nodes, vec!["H", "R2", "R3"]);
        assert!(plans_from_table(&rows, &g, &["XYZ".into()], &starts).is_err());
    }
}
