//! Airport node-link layout: loading, link speed classes, destination
//! linking and taxi-plan routing.

mod linking;
mod routing;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::travel_time::{from_knots, LogNormalParams};

pub use linking::{
    link_destination, link_destination_with, normalize_query, resolve_destination,
    runway_end, runway_entry, DestinationScorer, StringSimilarity,
};
pub use routing::{plan_overlap, shortest_taxi_plan, TaxiPlan};

pub type NodeId = String;

const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NodeKind {
    Runway,
    Taxiway,
    Taxilane,
    Ramp,
    Gate,
    Hold,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub kind: NodeKind,
    /// `(lon, lat)` in degrees when the layout was loaded from geodetic input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geo: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpeedClass {
    RwyRwy,
    RwyTxy,
    TxyTxy,
    Other,
}

impl SpeedClass {
    /// Default physical speed `(mean, std)` in knots.
    pub fn default_knots(self) -> (f64, f64) {
        match self {
            SpeedClass::RwyRwy => (30.0, 10.0),
            SpeedClass::RwyTxy => (25.0, 5.0),
            SpeedClass::TxyTxy => (20.0, 5.0),
            SpeedClass::Other => (10.0, 5.0),
        }
    }

    pub fn default_speed(self) -> LogNormalParams {
        let (m, s) = self.default_knots();
        from_knots(m, s).expect("class defaults are positive")
    }
}

impl fmt::Display for SpeedClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpeedClass::RwyRwy => "RWY_RWY",
            SpeedClass::RwyTxy => "RWY_TXY",
            SpeedClass::TxyTxy => "TXY_TXY",
            SpeedClass::Other => "OTHER",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Link {
    pub id: String,
    pub a: NodeId,
    pub b: NodeId,
    pub length: f64,
    pub speed_class: SpeedClass,
    pub speed_override: Option<LogNormalParams>,
}

impl Link {
    /// Speed law in m/s: the override when present, else the class default.
    pub fn speed(&self) -> LogNormalParams {
        self.speed_override
            .unwrap_or_else(|| self.speed_class.default_speed())
    }
}

#[derive(Debug, Clone)]
pub struct AirportGraph {
    nodes: Vec<Node>,
    index: BTreeMap<NodeId, usize>,
    links: Vec<Link>,
    link_index: BTreeMap<String, usize>,
    /// Per node: `(neighbor, link)` pairs sorted by neighbor id.
    adjacency: Vec<Vec<(usize, usize)>>,
    geodetic: bool,
    /// Projection origin `(lat, lon)` for geodetic input.
    origin: Option<(f64, f64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    #[serde(default)]
    crs: Option<String>,
    nodes: Vec<RawNode>,
    #[serde(default)]
    links: Vec<RawLink>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    x: Option<f64>,
    #[serde(default)]
    y: Option<f64>,
    #[serde(default)]
    lat: Option<f64>,
    #[serde(default)]
    lon: Option<f64>,
    kind: NodeKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    #[serde(default)]
    id: Option<String>,
    a: String,
    b: String,
    #[serde(default)]
    length: Option<f64>,
    #[serde(default)]
    speed_class: Option<SpeedClass>,
    #[serde(default)]
    speed_mean_kt: Option<f64>,
    #[serde(default)]
    speed_std_kt: Option<f64>,
}

/// Speed class implied by the kinds of a link's endpoints.
pub fn classify_kinds(a: NodeKind, b: NodeKind) -> SpeedClass {
    use NodeKind::*;
    match (a, b) {
        (Runway, Runway) => SpeedClass::RwyRwy,
        (Runway, _) | (_, Runway) => SpeedClass::RwyTxy,
        (Taxiway, Taxiway) => SpeedClass::TxyTxy,
        _ => SpeedClass::Other,
    }
}

pub fn classify_link(link: &Link, graph: &AirportGraph) -> Result<SpeedClass> {
    let a = graph.node(&link.a)?;
    let b = graph.node(&link.b)?;
    Ok(classify_kinds(a.kind, b.kind))
}

fn equirectangular((lat0, lon0): (f64, f64), lat: f64, lon: f64) -> (f64, f64) {
    let x = EARTH_RADIUS_M * (lon - lon0).to_radians() * lat0.to_radians().cos();
    let y = EARTH_RADIUS_M * (lat - lat0).to_radians();
    (x, y)
}

pub fn load_graph(path: &Path) -> Result<AirportGraph> {
    AirportGraph::from_json(&read_to_string(path)?, &path.display().to_string())
}

impl AirportGraph {
    /// Parses the graph JSON format. Nodes carry planar `x`/`y` meters, or
    /// `lat`/`lon` degrees when the top-level `crs` is `"latlon"`; geodetic
    /// input is projected equirectangularly about the node centroid.
    pub fn from_json(json: &str, origin: &str) -> Result<AirportGraph> {
        let raw: RawGraph = serde_json::from_str(json).map_err(|e| Error::malformed(origin, e))?;
        let geodetic = match raw.crs.as_deref() {
            None | Some("planar") => false,
            Some("latlon") => true,
            Some(other) => return Err(Error::malformed(origin, format!("unknown crs {other:?}"))),
        };

        let mut nodes = Vec::with_capacity(raw.nodes.len());
        let mut index = BTreeMap::new();
        let centroid = if geodetic {
            let mut lat0 = 0.0;
            let mut lon0 = 0.0;
            for n in &raw.nodes {
                let (Some(lat), Some(lon)) = (n.lat, n.lon) else {
                    return Err(Error::malformed(origin, format!("node {} lacks lat/lon", n.id)));
                };
                lat0 += lat;
                lon0 += lon;
            }
            let k = raw.nodes.len().max(1) as f64;
            Some((lat0 / k, lon0 / k))
        } else {
            None
        };

        for n in raw.nodes {
            if index.contains_key(&n.id) {
                return Err(Error::DuplicateNode(n.id));
            }
            let (x, y, geo) = match centroid {
                Some(c) => {
                    let (lat, lon) = (n.lat.unwrap_or(f64::NAN), n.lon.unwrap_or(f64::NAN));
                    let (x, y) = equirectangular(c, lat, lon);
                    (x, y, Some((lon, lat)))
                }
                None => match (n.x, n.y) {
                    (Some(x), Some(y)) => (x, y, None),
                    _ => return Err(Error::malformed(origin, format!("node {} lacks x/y", n.id))),
                },
            };
            if !(x.is_finite() && y.is_finite()) {
                return Err(Error::malformed(origin, format!("node {} has non-finite coordinates", n.id)));
            }
            index.insert(n.id.clone(), nodes.len());
            nodes.push(Node {
                name: n.name.unwrap_or_else(|| n.id.clone()),
                id: n.id,
                x,
                y,
                kind: n.kind,
                geo,
            });
        }

        let mut links = Vec::with_capacity(raw.links.len());
        let mut link_index = BTreeMap::new();
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for l in raw.links {
            let ia = *index.get(&l.a).ok_or_else(|| Error::UnknownNode(l.a.clone()))?;
            let ib = *index.get(&l.b).ok_or_else(|| Error::UnknownNode(l.b.clone()))?;
            if ia == ib {
                return Err(Error::malformed(origin, format!("link {}->{} is a self-loop", l.a, l.b)));
            }
            let length = match l.length {
                Some(d) => d,
                None => (nodes[ia].x - nodes[ib].x).hypot(nodes[ia].y - nodes[ib].y),
            };
            if !(length.is_finite() && length > 0.0) {
                return Err(Error::NonpositiveDistance(length));
            }
            let speed_override = match (l.speed_mean_kt, l.speed_std_kt) {
                (None, None) => None,
                (Some(m), Some(s)) => Some(from_knots(m, s)?),
                _ => {
                    return Err(Error::malformed(
                        origin,
                        format!("link {}->{} needs both speed_mean_kt and speed_std_kt", l.a, l.b),
                    ))
                }
            };
            let id = l.id.unwrap_or_else(|| format!("{}->{}", l.a, l.b));
            if link_index.contains_key(&id) {
                return Err(Error::malformed(origin, format!("duplicate link id {id}")));
            }
            let speed_class = l
                .speed_class
                .unwrap_or_else(|| classify_kinds(nodes[ia].kind, nodes[ib].kind));
            let li = links.len();
            link_index.insert(id.clone(), li);
            links.push(Link {
                id,
                a: l.a,
                b: l.b,
                length,
                speed_class,
                speed_override,
            });
            adjacency[ia].push((ib, li));
            adjacency[ib].push((ia, li));
        }
        for adj in &mut adjacency {
            adj.sort_by(|&(n1, l1), &(n2, l2)| {
                nodes[n1]
                    .id
                    .cmp(&nodes[n2].id)
                    .then(links[l1].length.total_cmp(&links[l2].length))
                    .then(l1.cmp(&l2))
            });
        }

        Ok(AirportGraph {
            nodes,
            index,
            links,
            link_index,
            adjacency,
            geodetic,
            origin: centroid,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    /// Planar coordinates of a geodetic point in this graph's projection;
    /// `None` for planar graphs.
    pub fn project(&self, lat: f64, lon: f64) -> Option<(f64, f64)> {
        self.origin.map(|c| equirectangular(c, lat, lon))
    }

    pub fn is_geodetic(&self) -> bool {
        self.geodetic
    }

    pub fn node(&self, id: &str) -> Result<&Node> {
        self.index
            .get(id)
            .map(|&i| &self.nodes[i])
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn link(&self, id: &str) -> Result<&Link> {
        self.link_index
            .get(id)
            .map(|&i| &self.links[i])
            .ok_or_else(|| Error::InvalidPlan(format!("unknown link {id}")))
    }

    /// Shortest link joining `a` and `b`, if any.
    pub fn link_between(&self, a: &str, b: &str) -> Option<&Link> {
        let ia = *self.index.get(a)?;
        let ib = *self.index.get(b)?;
        self.adjacency[ia]
            .iter()
            .find(|&&(n, _)| n == ib)
            .map(|&(_, l)| &self.links[l])
    }

    pub(crate) fn idx(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub(crate) fn adjacency(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub(crate) fn node_at(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub(crate) fn link_at(&self, i: usize) -> &Link {
        &self.links[i]
    }

    pub fn distance(&self, a: &str, b: &str) -> Result<f64> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        Ok((na.x - nb.x).hypot(na.y - nb.y))
    }

    /// Node ids in lexicographic order.
    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"{"nodes": [
        {"id": "A", "x": 0, "y": 0, "kind": "TAXIWAY"},
        {"id": "B", "x": 3, "y": 4, "kind": "HOLD"}],
      "links": [{"a": "A", "b": "B"}]}"#;

    #[test]
    fn euclidean_default_length() {
        let g = AirportGraph::from_json(TWO, "t").unwrap();
        assert_eq!(g.links()[0].length, 5.0);
        assert_eq!(g.links()[0].id, "A->B");
        assert_eq!(g.links()[0].speed_class, SpeedClass::Other);
        assert_eq!(g.node("B").unwrap().name, "B");
    }

    #[test]
    fn errors() {
        let dangling = r#"{"nodes": [{"id": "A", "x": 0, "y": 0, "kind": "GATE"}],
            "links": [{"a": "A", "b": "Z"}]}"#;
        assert!(matches!(AirportGraph::from_json(dangling, "t"), Err(Error::UnknownNode(ref n)) if n == "Z"));
        let dup = r#"{"nodes": [{"id": "A", "x": 0, "y": 0, "kind": "GATE"},
            {"id": "A", "x": 1, "y": 0, "kind": "GATE"}]}"#;
        assert!(matches!(AirportGraph::from_json(dup, "t"), Err(Error::DuplicateNode(_))));
        assert_eq!(AirportGraph::from_json("{", "t").unwrap_err().code(), "MALFORMED_FILE");
        let zero = r#"{"nodes": [{"id": "A", "x": 0, "y": 0, "kind": "GATE"},
            {"id": "B", "x": 0, "y": 0, "kind": "GATE"}], "links": [{"a": "A", "b": "B"}]}"#;
        assert!(matches!(AirportGraph::from_json(zero, "t"), Err(Error::NonpositiveDistance(_))));
    }

    #[test]
    fn classes() {
        use NodeKind::*;
        assert_eq!(classify_kinds(Runway, Runway), SpeedClass::RwyRwy);
        assert_eq!(classify_kinds(Hold, Runway), SpeedClass::RwyTxy);
        assert_eq!(classify_kinds(Taxiway, Taxiway), SpeedClass::TxyTxy);
        assert_eq!(classify_kinds(Taxiway, Hold), SpeedClass::Other);
        assert_eq!(classify_kinds(Ramp, Gate), SpeedClass::Other);
        assert_eq!(SpeedClass::RwyRwy.default_knots(), (30.0, 10.0));
        let p = SpeedClass::TxyTxy.default_speed();
        assert!((p.mean() - 20.0 * crate::travel_time::KNOT).abs() < 1e-12);
    }

    #[test]
    fn geodetic_projection() {
        let json = r#"{"crs": "latlon", "nodes": [
            {"id": "A", "lat": 33.64, "lon": -84.43, "kind": "TAXIWAY"},
            {"id": "B", "lat": 33.641, "lon": -84.43, "kind": "TAXIWAY"}],
          "links": [{"a": "A", "b": "B"}]}"#;
        let g = AirportGraph::from_json(json, "t").unwrap();
        assert!(g.is_geodetic());
        // 0.001 degree of latitude is about 111.2 m.
        assert!((g.links()[0].length - 111.195).abs() < 0.01);
    }
}
