use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use super::{AirportGraph, Link, NodeId};
use crate::error::{Error, Result};

/// Relative slack when comparing path costs for tie-breaking.
const COST_EPS: f64 = 1e-9;

/// An ordered node path for one aircraft. `links[i]` joins `nodes[i]` and
/// `nodes[i + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxiPlan {
    pub callsign: String,
    pub nodes: Vec<NodeId>,
    pub links: Vec<String>,
    pub start_time: f64,
}

impl TaxiPlan {
    /// Builds a plan from a node sequence, choosing the shortest link between
    /// each consecutive pair.
    pub fn from_nodes(
        graph: &AirportGraph,
        callsign: &str,
        nodes: Vec<NodeId>,
        start_time: f64,
    ) -> Result<TaxiPlan> {
        if nodes.is_empty() {
            return Err(Error::EmptyPlan);
        }
        let mut links = Vec::with_capacity(nodes.len() - 1);
        for n in &nodes {
            graph.node(n)?;
        }
        for w in nodes.windows(2) {
            let link = graph.link_between(&w[0], &w[1]).ok_or_else(|| {
                Error::InvalidPlan(format!("{} and {} are not adjacent", w[0], w[1]))
            })?;
            links.push(link.id.clone());
        }
        let plan = TaxiPlan {
            callsign: callsign.to_string(),
            nodes,
            links,
            start_time,
        };
        plan.validate(graph)?;
        Ok(plan)
    }

    /// Checks connectivity and that no link is traversed twice in a row.
    pub fn validate(&self, graph: &AirportGraph) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyPlan);
        }
        if self.nodes.len() != self.links.len() + 1 {
            return Err(Error::InvalidPlan(format!(
                "{} nodes but {} links",
                self.nodes.len(),
                self.links.len()
            )));
        }
        if !self.start_time.is_finite() {
            return Err(Error::InvalidPlan("start time is not finite".into()));
        }
        for (i, lid) in self.links.iter().enumerate() {
            let link = graph.link(lid)?;
            let (u, v) = (&self.nodes[i], &self.nodes[i + 1]);
            if !((&link.a == u && &link.b == v) || (&link.a == v && &link.b == u)) {
                return Err(Error::InvalidPlan(format!("link {lid} does not join {u} and {v}")));
            }
            if i > 0 && self.links[i - 1] == *lid {
                return Err(Error::InvalidPlan(format!("link {lid} repeated in sequence")));
            }
        }
        Ok(())
    }

    pub fn resolved_links<'g>(&self, graph: &'g AirportGraph) -> Result<Vec<&'g Link>> {
        self.links.iter().map(|l| graph.link(l)).collect()
    }

    pub fn position(&self, node: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == node)
    }
}

fn dijkstra_to(graph: &AirportGraph, target: usize) -> Vec<f64> {
    let n = graph.nodes().len();
    let mut dist = vec![f64::INFINITY; n];
    dist[target] = 0.0;
    // Costs are positive finite f64, so their bit patterns order like the values.
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0.0f64.to_bits(), target)));
    while let Some(Reverse((bits, u))) = heap.pop() {
        let d = f64::from_bits(bits);
        if d > dist[u] {
            continue;
        }
        for &(v, l) in graph.adjacency(u) {
            let nd = d + graph.link_at(l).length;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((nd.to_bits(), v)));
            }
        }
    }
    dist
}

fn segment(graph: &AirportGraph, from: usize, to: usize) -> Result<Vec<(usize, usize)>> {
    let dist = dijkstra_to(graph, to);
    if !dist[from].is_finite() {
        return Err(Error::NoPath {
            from: graph.node_at(from).id.clone(),
            to: graph.node_at(to).id.clone(),
        });
    }
    let mut steps = Vec::new();
    let mut u = from;
    while u != to {
        // Adjacency is sorted by neighbor id, so the first admissible
        // neighbor is the lexicographically smallest.
        let (v, l) = graph
            .adjacency(u)
            .iter()
            .copied()
            .find(|&(v, l)| {
                let via = graph.link_at(l).length + dist[v];
                via <= dist[u] * (1.0 + COST_EPS) && dist[v] < dist[u]
            })
            .ok_or_else(|| Error::Internal("shortest-path walk stalled".into()))?;
        steps.push((v, l));
        u = v;
    }
    Ok(steps)
}

/// Concatenates shortest paths `from -> via[0] -> ... -> to`. Among equal-cost
/// continuations the smallest next-node id is taken.
pub fn shortest_taxi_plan(
    graph: &AirportGraph,
    callsign: &str,
    from: &str,
    to: &str,
    via: &[NodeId],
    start_time: f64,
) -> Result<TaxiPlan> {
    let mut stops = vec![graph.idx(from)?];
    for v in via {
        stops.push(graph.idx(v)?);
    }
    stops.push(graph.idx(to)?);

    let mut nodes = vec![graph.node_at(stops[0]).id.clone()];
    let mut links: Vec<String> = Vec::new();
    for w in stops.windows(2) {
        for (v, l) in segment(graph, w[0], w[1])? {
            nodes.push(graph.node_at(v).id.clone());
            links.push(graph.link_at(l).id.clone());
        }
    }
    let plan = TaxiPlan {
        callsign: callsign.to_string(),
        nodes,
        links,
        start_time,
    };
    plan.validate(graph)?;
    Ok(plan)
}

/// Nodes present in both plans, in `p1` traversal order.
pub fn plan_overlap(p1: &TaxiPlan, p2: &TaxiPlan) -> Vec<NodeId> {
    let other: HashSet<&NodeId> = p2.nodes.iter().collect();
    let mut seen = HashSet::new();
    p1.nodes
        .iter()
        .filter(|n| other.contains(n) && seen.insert(*n))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> AirportGraph {
        AirportGraph::from_json(
            r#"{"nodes": [
                {"id": "A", "x": 0, "y": 0, "kind": "TAXIWAY"},
                {"id": "B", "x": 1, "y": 0, "kind": "TAXIWAY"},
                {"id": "C", "x": 2, "y": 0, "kind": "TAXIWAY"},
                {"id": "D", "x": 1, "y": 5, "kind": "TAXIWAY"},
                {"id": "E", "x": 9, "y": 9, "kind": "GATE"}],
              "links": [
                {"a": "A", "b": "B", "length": 1},
                {"a": "B", "b": "C", "length": 1},
                {"a": "A", "b": "C", "length": 3},
                {"a": "B", "b": "D", "length": 4},
                {"a": "D", "b": "C", "length": 4}]}"#,
            "t",
        )
        .unwrap()
    }

    #[test]
    fn same_node() {
        let p = shortest_taxi_plan(&triangle(), "X", "A", "A", &[], 0.0).unwrap();
        assert_eq!(p.nodes, vec!["A"]);
        assert!(p.links.is_empty());
    }

    #[test]
    fn two_hops_beat_direct() {
        let p = shortest_taxi_plan(&triangle(), "X", "A", "C", &[], 0.0).unwrap();
        assert_eq!(p.nodes, vec!["A", "B", "C"]);
        assert_eq!(p.links, vec!["A->B", "B->C"]);
    }

    #[test]
    fn via_is_visited_and_reversal_rejected() {
        let g = triangle();
        let p = shortest_taxi_plan(&g, "X", "A", "C", &["D".into()], 0.0).unwrap();
        assert_eq!(p.nodes, vec!["A", "B", "D", "C"]);
        let err = shortest_taxi_plan(&g, "X", "A", "A", &["B".into()], 0.0).unwrap_err();
        assert!(matches!(err, Error::InvalidPlan(_)));
    }

    #[test]
    fn unreachable_and_unknown() {
        let g = triangle();
        assert!(matches!(shortest_taxi_plan(&g, "X", "A", "E", &[], 0.0), Err(Error::NoPath { .. })));
        assert!(matches!(shortest_taxi_plan(&g, "X", "A", "Q", &[], 0.0), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn tie_break_is_lexicographic() {
        let g = AirportGraph::from_json(
            r#"{"nodes": [
                {"id": "S", "x": 0, "y": 0, "kind": "TAXIWAY"},
                {"id": "M2", "x": 1, "y": 1, "kind": "TAXIWAY"},
                {"id": "M1", "x": 1, "y": -1, "kind": "TAXIWAY"},
                {"id": "T", "x": 2, "y": 0, "kind": "TAXIWAY"}],
              "links": [{"a": "S", "b": "M2"}, {"a": "M2", "b": "T"},
                        {"a": "S", "b": "M1"}, {"a": "M1", "b": "T"}]}"#,
            "t",
        )
        .unwrap();
        let p = shortest_taxi_plan(&g, "X", "S", "T", &[], 0.0).unwrap();
        assert_eq!(p.nodes, vec!["S", "M1", "T"]);
    }

    #[test]
    fn overlap_order() {
        let g = triangle();
        let p1 = TaxiPlan::from_nodes(&g, "a", vec!["A".into(), "B".into(), "C".into()], 0.0).unwrap();
        let p2 = TaxiPlan::from_nodes(&g, "b", vec!["D".into(), "B".into()], 0.0).unwrap();
        let p3 = TaxiPlan::from_nodes(&g, "c", vec!["E".into()], 0.0).unwrap();
        assert_eq!(plan_overlap(&p1, &p2), vec!["B"]);
        assert_eq!(plan_overlap(&p1, &p1), p1.nodes);
        assert!(plan_overlap(&p1, &p3).is_empty());
        assert!(TaxiPlan::from_nodes(&g, "d", vec!["A".into(), "D".into()], 0.0).is_err());
    }
}
