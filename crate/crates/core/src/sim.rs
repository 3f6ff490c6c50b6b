//! Seeded Monte Carlo sampling of taxi plans: route times, a collision-event
//! oracle, and replay frames for plotting.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::graph::{load_graph, AirportGraph, Link, NodeId, TaxiPlan};
use crate::travel_time::{link_time_dist, time_moments, LogNormalParams};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    graph: PathBuf,
    aircraft: Vec<AircraftEntry>,
    r_c: f64,
    seed: u64,
    samples: usize,
    #[serde(default)]
    spot: Option<NodeId>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct AircraftEntry {
    callsign: String,
    nodes: Vec<NodeId>,
    #[serde(default)]
    start_time: f64,
}

/// A graph, two or more planned aircraft, and sampling settings.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub graph_path: PathBuf,
    pub graph: AirportGraph,
    pub aircraft: Vec<TaxiPlan>,
    pub r_c: f64,
    pub seed: u64,
    pub samples: usize,
    pub spot: Option<NodeId>,
}

impl ScenarioConfig {
    pub fn new(graph: AirportGraph, aircraft: Vec<TaxiPlan>, r_c: f64, seed: u64, samples: usize) -> Result<Self> {
        if aircraft.is_empty() {
            return Err(Error::invalid("aircraft", "scenario lists no aircraft"));
        }
        for p in &aircraft {
            p.validate(&graph)?;
        }
        if !(r_c.is_finite() && r_c > 0.0) {
            return Err(Error::invalid("r_c", format!("must be positive, got {r_c}")));
        }
        if samples == 0 {
            return Err(Error::invalid("samples", "must be at least 1"));
        }
        Ok(ScenarioConfig {
            graph_path: PathBuf::new(),
            graph,
            aircraft,
            r_c,
            seed,
            samples,
            spot: None,
        })
    }

    /// Parses a scenario; the graph path is taken relative to `base`.
    pub fn from_json(json: &str, origin: &str, base: &Path) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(json).map_err(|e| Error::malformed(origin, e))?;
        let graph_path = base.join(&file.graph);
        let graph = load_graph(&graph_path)?;
        let aircraft = file
            .aircraft
            .into_iter()
            .map(|a| TaxiPlan::from_nodes(&graph, &a.callsign, a.nodes, a.start_time))
            .collect::<Result<Vec<_>>>()?;
        let mut cfg = ScenarioConfig::new(graph, aircraft, file.r_c, file.seed, file.samples)?;
        if let Some(s) = &file.spot {
            cfg.graph.node(s)?;
        }
        cfg.graph_path = graph_path;
        cfg.spot = file.spot;
        Ok(cfg)
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    ScenarioConfig::from_json(&text, &path.display().to_string(), base)
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for one aircraft in one sample.
fn substream(seed: u64, aircraft: usize, sample: usize) -> ChaCha8Rng {
    let key = mix(mix(mix(seed) ^ aircraft as u64) ^ sample as u64);
    ChaCha8Rng::seed_from_u64(key)
}

fn draw_speed(rng: &mut ChaCha8Rng, p: &LogNormalParams) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (p.mu_log + p.sigma_log * z).exp()
}

/// Per-link traversal times for one aircraft in one sample, drawn in plan
/// order.
fn draw_link_times(links: &[&Link], seed: u64, aircraft: usize, sample: usize, out: &mut Vec<f64>) {
    let mut rng = substream(seed, aircraft, sample);
    out.clear();
    out.extend(links.iter().map(|l| l.length / draw_speed(&mut rng, &l.speed())));
}

/// Total route times (s), one per sample, excluding the start time.
pub fn sample_route_times(plan: &TaxiPlan, graph: &AirportGraph, n: usize, seed: u64) -> Result<Vec<f64>> {
    if plan.links.is_empty() {
        return Err(Error::EmptyPlan);
    }
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let links = plan.resolved_links(graph)?;
    Ok((0..n)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            draw_link_times(&links, seed, 0, i, buf);
            buf.iter().sum()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub p_hat: f64,
    pub standard_error: f64,
    pub samples: usize,
    pub hits: usize,
}

struct Track<'g> {
    links: Vec<&'g Link>,
    start: f64,
    /// Index of the spot in the plan's node list.
    k: usize,
    /// Along-path distance from the plan origin to the spot.
    x_c: f64,
}

fn mean_arrival(t: &Track) -> Result<f64> {
    let mut m = t.start;
    for l in &t.links[..t.k] {
        m += time_moments(&link_time_dist(l.length, l.speed())?).0;
    }
    Ok(m)
}

/// Along-path distance covered `tau` seconds after the start.
fn position_at(links: &[&Link], times: &[f64], tau: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    let mut elapsed = 0.0;
    let mut x = 0.0;
    for (l, &dt) in links.iter().zip(times) {
        if tau < elapsed + dt {
            return x + l.length * (tau - elapsed) / dt;
        }
        elapsed += dt;
        x += l.length;
    }
    x
}

/// Fraction of samples in which, when one aircraft reaches `spot`, the other
/// is within `r_c` of it along its own path. The aircraft with the later mean
/// arrival is the one whose position is tested.
pub fn mc_collision_oracle(scenario: &ScenarioConfig, spot: &str) -> Result<OracleEstimate> {
    if scenario.aircraft.len() < 2 {
        return Err(Error::invalid("aircraft", "collision estimation needs two aircraft"));
    }
    let g = &scenario.graph;
    let tracks = scenario.aircraft[..2]
        .iter()
        .map(|p| {
            let k = p.position(spot).ok_or_else(|| Error::SpotNotShared(spot.to_string()))?;
            let links = p.resolved_links(g)?;
            let x_c = links[..k].iter().map(|l| l.length).sum();
            Ok(Track {
                links,
                start: p.start_time,
                k,
                x_c,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (first, second) = if mean_arrival(&tracks[1])? >= mean_arrival(&tracks[0])? {
        (0, 1)
    } else {
        (1, 0)
    };
    let (a, b) = (&tracks[first], &tracks[second]);
    let (seed, r_c, n) = (scenario.seed, scenario.r_c, scenario.samples);

    let hits: usize = (0..n)
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(ta, tb), i| {
                draw_link_times(&a.links, seed, first, i, ta);
                draw_link_times(&b.links, seed, second, i, tb);
                let arrive = a.start + ta[..a.k].iter().sum::<f64>();
                let x = position_at(&b.links, tb, arrive - b.start);
                usize::from((x - b.x_c).abs() <= r_c)
            },
        )
        .sum();
    let p_hat = hits as f64 / n as f64;
    Ok(OracleEstimate {
        p_hat,
        standard_error: (p_hat * (1.0 - p_hat) / n as f64).sqrt(),
        samples: n,
        hits,
    })
}

/// Gaussian kernel density of `G_a - G_b` at zero, with `G_k` log-normal
/// arrival times shifted by their offsets and Silverman's bandwidth.
pub fn overlap_density_mc(
    a: &LogNormalParams,
    off_a: f64,
    b: &LogNormalParams,
    off_b: f64,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let diffs: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, 0, i);
            off_a + draw_speed(&mut rng, a) - off_b - draw_speed(&mut rng, b)
        })
        .collect();
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let h = 1.06 * var.sqrt() * nf.powf(-0.2);
    let norm = 1.0 / (nf * h * (2.0 * std::f64::consts::PI).sqrt());
    // Summed in index order so the result does not depend on thread count.
    let kernels: Vec<f64> = diffs.par_iter().map(|d| (-0.5 * (d / h).powi(2)).exp()).collect();
    let sum: f64 = kernels.iter().sum();
    Ok(sum * norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AircraftPosition {
    pub callsign: String,
    /// Link currently occupied; `None` only for single-node plans.
    pub link: Option<String>,
    pub fraction: f64,
    pub completed: bool,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFrame {
    pub time: f64,
    pub positions: Vec<AircraftPosition>,
}

/// Which link times drive a replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayPath {
    /// Mean traversal time on every link.
    Mean,
    /// The draws of one Monte Carlo sample.
    Sample(usize),
}

fn locate(plan: &TaxiPlan, graph: &AirportGraph, links: &[&Link], times: &[f64], t: f64) -> Result<AircraftPosition> {
    let at = |i: usize| graph.node(&plan.nodes[i]);
    let mut pos = AircraftPosition {
        callsign: plan.callsign.clone(),
        link: None,
        fraction: 0.0,
        completed: false,
        x: 0.0,
        y: 0.0,
    };
    if links.is_empty() {
        let n = at(0)?;
        pos.completed = true;
        (pos.x, pos.y) = (n.x, n.y);
        return Ok(pos);
    }
    let tau = t - plan.start_time;
    let mut elapsed = 0.0;
    let mut leg = links.len() - 1;
    let mut fraction = 1.0;
    if tau <= 0.0 {
        leg = 0;
        fraction = 0.0;
    } else {
        for (i, &dt) in times.iter().enumerate() {
            if tau < elapsed + dt {
                leg = i;
                fraction = ((tau - elapsed) / dt).clamp(0.0, 1.0);
                break;
            }
            elapsed += dt;
        }
        pos.completed = tau >= elapsed && fraction == 1.0;
    }
    let (from, to) = (at(leg)?, at(leg + 1)?);
    pos.link = Some(plan.links[leg].clone());
    pos.fraction = fraction;
    pos.x = from.x + fraction * (to.x - from.x);
    pos.y = from.y + fraction * (to.y - from.y);
    Ok(pos)
}

/// Frames every `step` seconds from the earliest start until the last aircraft
/// completes its plan: `ceil(span / step) + 1` frames.
pub fn replay(scenario: &ScenarioConfig, path: ReplayPath, step: f64) -> Result<Vec<SnapshotFrame>> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid("step", format!("must be positive, got {step}")));
    }
    let g = &scenario.graph;
    let mut tracks = Vec::with_capacity(scenario.aircraft.len());
    for (i, plan) in scenario.aircraft.iter().enumerate() {
        let links = plan.resolved_links(g)?;
        let mut times = Vec::new();
        match path {
            ReplayPath::Sample(s) => draw_link_times(&links, scenario.seed, i, s, &mut times),
            ReplayPath::Mean => {
                for l in &links {
                    times.push(time_moments(&link_time_dist(l.length, l.speed())?).0);
                }
            }
        }
        tracks.push((plan, links, times));
    }
    let t0 = scenario
        .aircraft
        .iter()
        .map(|p| p.start_time)
        .fold(f64::INFINITY, f64::min);
    let t1 = tracks
        .iter()
        .map(|(p, _, t)| p.start_time + t.iter().sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    let frames = ((t1 - t0) / step).ceil().max(0.0) as usize + 1;
    (0..frames)
        .map(|i| {
            let time = t0 + i as f64 * step;
            let positions = tracks
                .iter()
                .map(|(p, l, t)| locate(p, g, l, t, time))
                .collect::<Result<Vec<_>>>()?;
            Ok(SnapshotFrame { time, positions })
        })
        .collect()
}

pub fn frames_to_jsonl(frames: &[SnapshotFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        out.push_str(&serde_json::to_string(f).expect("frames serialize"));
        out.push('\n');
    }
    out
}

pub fn frames_to_csv(frames: &[SnapshotFrame]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Internal(format!("csv write: {e}"));
    w.write_record(["time", "callsign", "x", "y"]).map_err(err)?;
    for f in frames {
        for p in &f.positions {
            w.write_record([f.time.to_string(), p.callsign.clone(), p.x.to_string(), p.y.to_string()])
                .map_err(err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::travel_time::fw_compose;

    fn line(sigma: f64) -> AirportGraph {
        AirportGraph::from_json(
            &format!(
                r#"{{"nodes": [
                    {{"id": "A", "x": 0, "y": 0, "kind": "TAXIWAY"}},
                    {{"id": "B", "x": 100, "y": 0, "kind": "TAXIWAY"}},
                    {{"id": "C", "x": 300, "y": 0, "kind": "TAXIWAY"}},
                    {{"id": "D", "x": 100, "y": 100, "kind": "TAXIWAY"}}],
                  "links": [
                    {{"a": "A", "b": "B", "length": 100, "speed_mean_kt": {m}, "speed_std_kt": {s}}},
                    {{"a": "B", "b": "C", "length": 200, "speed_mean_kt": {m}, "speed_std_kt": {s}}},
                    {{"a": "D", "b": "B", "length": 100, "speed_mean_kt": {m}, "speed_std_kt": {s}}}]}}"#,
                m = 10.0 / crate::travel_time::KNOT,
                s = 10.0 * sigma / crate::travel_time::KNOT,
            ),
            "t",
        )
        .unwrap()
    }

    fn plan(g: &AirportGraph, cs: &str, nodes: &[&str], start: f64) -> TaxiPlan {
        TaxiPlan::from_nodes(g, cs, nodes.iter().map(|s| s.to_string()).collect(), start).unwrap()
    }

    #[test]
    fn deterministic_single_link() {
        let g = line(1e-9);
        let p = plan(&g, "X", &["A", "B"], 0.0);
        let t = sample_route_times(&p, &g, 100, 3).unwrap();
        assert!(t.iter().all(|x| (x - 10.0).abs() < 1e-6));
        assert_eq!(t, sample_route_times(&p, &g, 100, 3).unwrap());
        assert!(matches!(sample_route_times(&plan(&g, "X", &["A"], 0.0), &g, 1, 0), Err(Error::EmptyPlan)));
    }

    #[test]
    fn two_link_mean() {
        let g = line(0.3);
        let p = plan(&g, "X", &["A", "B", "C"], 0.0);
        let n = 100_000;
        let t = sample_route_times(&p, &g, n, 11).unwrap();
        let links = p.resolved_links(&g).unwrap();
        let r = fw_compose(
            &links
                .iter()
                .map(|l| link_time_dist(l.length, l.speed()).unwrap())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let mean = t.iter().sum::<f64>() / n as f64;
        assert!((mean - r.m).abs() < 3.0 * (r.v / n as f64).sqrt());
    }

    fn scenario(g: AirportGraph, plans: Vec<TaxiPlan>, r_c: f64, n: usize) -> ScenarioConfig {
        ScenarioConfig::new(g, plans, r_c, 42, n).unwrap()
    }

    #[test]
    fn oracle_extremes() {
        let g = line(1e-6);
        let s = scenario(
            g.clone(),
            vec![plan(&g, "a", &["A", "B"], 0.0), plan(&g, "b", &["D", "B"], 0.0)],
            5.0,
            2000,
        );
        let e = mc_collision_oracle(&s, "B").unwrap();
        assert_eq!(e.p_hat, 1.0);
        let s = scenario(
            g.clone(),
            vec![plan(&g, "a", &["A", "B"], 0.0), plan(&g, "b", &["D", "B"], 1e6)],
            5.0,
            2000,
        );
        assert_eq!(mc_collision_oracle(&s, "B").unwrap().p_hat, 0.0);
        assert!(matches!(mc_collision_oracle(&s, "C"), Err(Error::SpotNotShared(_))));
    }

    #[test]
    fn substreams_are_order_free() {
        let g = line(0.2);
        let p = plan(&g, "X", &["A", "B", "C"], 0.0);
        let all = sample_route_times(&p, &g, 64, 9).unwrap();
        let head = sample_route_times(&p, &g, 16, 9).unwrap();
        assert_eq!(&all[..16], &head[..]);
    }

    #[test]
    fn replay_positions() {
        let g = line(1e-9);
        let s = scenario(
            g.clone(),
            vec![plan(&g, "a", &["A", "B", "C"], 5.0), plan(&g, "b", &["D", "B"], 0.0)],
            5.0,
            1,
        );
        let frames = replay(&s, ReplayPath::Mean, 1.0).unwrap();
        // Span runs from t=0 to a's completion at 5 + 30 s.
        assert_eq!(frames.len(), 36);
        let first = &frames[0].positions[0];
        assert_eq!((first.link.as_deref(), first.fraction, first.completed), (Some("A->B"), 0.0, false));
        let at7 = &frames[7].positions[0];
        assert!((at7.fraction - 0.2).abs() < 1e-6);
        assert!((at7.x - 20.0).abs() < 1e-4);
        let b_done = &frames[20].positions[1];
        assert!(b_done.completed);
        assert_eq!((b_done.x, b_done.y), (100.0, 0.0));
        assert!(frames.last().unwrap().positions[0].completed);
        let csv = frames_to_csv(&frames).unwrap();
        assert!(csv.starts_with("time,callsign,x,y\n0,a,0,0\n"));
        assert_eq!(frames_to_jsonl(&frames).lines().count(), 36);
        assert!(replay(&s, ReplayPath::Mean, 0.0).is_err());
    }

    #[test]
    fn kde_density() {
        let a = LogNormalParams::new(3.0, 0.2).unwrap();
        let b = LogNormalParams::new(3.1, 0.3).unwrap();
        let q = crate::collision::overlap_density_quadrature(&a, 0.0, &b, 0.0).unwrap();
        let mc = overlap_density_mc(&a, 0.0, &b, 0.0, 200_000, 5).unwrap();
        assert!(((mc - q) / q).abs() < 0.05);
    }
}
