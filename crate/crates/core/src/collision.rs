//! Collision probability at nodes shared by two taxi plans.
//!
//! With arrival times `G1`, `G2` at a node and `F = G1 - G2`, the probability
//! that the trailing aircraft is within `r_c` of the node when the other one
//! arrives is approximately `2 r_c E[1/v] f_F(0)`, where
//! `f_F(0) = integral of f_G1(t) f_G2(t) dt` is the temporal overlap density.

use std::f64::consts::PI;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{plan_overlap, AirportGraph, NodeId, SpeedClass, TaxiPlan};
use crate::quadrature::{integrate, QuadOptions};
use crate::travel_time::{fw_compose, link_time_dist, LogNormalParams, RouteTimeDist};

/// Half-width of the integration window in units of the larger log-sigma.
const QUAD_SPAN_SIGMAS: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionSpot {
    pub node: NodeId,
    pub r_c: f64,
}

impl CollisionSpot {
    pub fn new(node: impl Into<NodeId>, r_c: f64) -> Result<Self> {
        if !(r_c.is_finite() && r_c > 0.0) {
            return Err(Error::invalid("r_c", format!("must be positive, got {r_c}")));
        }
        Ok(CollisionSpot {
            node: node.into(),
            r_c,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskScore {
    pub node: NodeId,
    pub probability: f64,
    /// Overlap density at zero, 1/s.
    pub overlap_density: f64,
    /// `E[1/v]` of the trailing aircraft's entry link, s/m.
    pub inv_speed_expectation: f64,
    pub clamped: bool,
}

/// `E[1/v]` for `v ~ LN(mu, sigma^2)`; `1/v` is log-normal with mean `-mu`.
pub fn expected_inverse_speed(speed: &LogNormalParams) -> f64 {
    (-speed.mu_log + 0.5 * speed.sigma_log * speed.sigma_log).exp()
}

/// `ln f_F(0)` for two log-normal arrival laws with a common origin.
///
/// In `u = ln t` the integrand is a product of two Gaussians times `e^-u`;
/// completing the square gives a Gaussian in `u` with mean
/// `m = (mu1 s2^2 + mu2 s1^2) / S^2` and variance `v = s1^2 s2^2 / S^2`,
/// `S^2 = s1^2 + s2^2`, scaled by `N(mu1; mu2, S^2)`, so the integral is
/// `N(mu1; mu2, S^2) exp(-m + v / 2)`.
pub fn ln_overlap_density_closed(a: &LogNormalParams, b: &LogNormalParams) -> f64 {
    let (s1, s2) = (a.sigma_log * a.sigma_log, b.sigma_log * b.sigma_log);
    let total = s1 + s2;
    let m = (a.mu_log * s2 + b.mu_log * s1) / total;
    let v = s1 * s2 / total;
    let d = a.mu_log - b.mu_log;
    -d * d / (2.0 * total) - 0.5 * (2.0 * PI * total).ln() - m + 0.5 * v
}

pub fn overlap_density_closed(a: &LogNormalParams, b: &LogNormalParams) -> f64 {
    ln_overlap_density_closed(a, b).exp()
}

/// `ln(e^a + e^b)`.
fn ln_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Log density of `ln T` for `T ~ LN(mu, sigma^2)`, evaluated at `u`.
fn ln_gauss(u: f64, p: &LogNormalParams) -> f64 {
    let z = (u - p.mu_log) / p.sigma_log;
    -0.5 * z * z - (p.sigma_log * (2.0 * PI).sqrt()).ln()
}

/// Maximizes a unimodal-near-peak function on a grid, then refines the best
/// cell by golden-section search.
fn locate_peak<F: Fn(f64) -> f64>(g: &F, lo: f64, hi: f64, cells: usize) -> (f64, f64, usize) {
    let h = (hi - lo) / cells as f64;
    let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
    for i in 0..=cells {
        let val = g(lo + h * i as f64);
        if val > best {
            best = val;
            best_i = i;
        }
    }
    let (mut a, mut b) = (
        lo + h * best_i.saturating_sub(1) as f64,
        lo + h * (best_i + 1).min(cells) as f64,
    );
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..100 {
        if (b - a).abs() < 1e-12 * (1.0 + a.abs()) {
            break;
        }
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - inv_phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + inv_phi * (b - a);
            gd = g(d);
        }
    }
    let u = 0.5 * (a + b);
    let gu = g(u);
    if gu >= best {
        (u, gu, best_i)
    } else {
        (lo + h * best_i as f64, best, best_i)
    }
}

/// `ln` of `integral f_a(t - off_a) f_b(t - off_b) dt` by adaptive
/// Gauss–Kronrod in log time, scaled by the integrand's peak so the absolute
/// tolerance acts as a relative one.
pub fn ln_overlap_density_quadrature(
    a: &LogNormalParams,
    off_a: f64,
    b: &LogNormalParams,
    off_b: f64,
) -> Result<f64> {
    for off in [off_a, off_b] {
        if !(off >= 0.0 && off.is_finite()) {
            return Err(Error::NegativeOffset(off));
        }
    }
    // Measure time from the later start; the earlier aircraft has had `delta`
    // seconds of head start.
    let (late, early, delta) = if off_a >= off_b {
        (a, b, off_a - off_b)
    } else {
        (b, a, off_b - off_a)
    };
    let ln_delta = if delta > 0.0 { delta.ln() } else { f64::NEG_INFINITY };
    let early_norm = (early.sigma_log * (2.0 * PI).sqrt()).ln();
    let g = |u: f64| {
        let ln_x = ln_add_exp(u, ln_delta);
        let z = (ln_x - early.mu_log) / early.sigma_log;
        ln_gauss(u, late) - 0.5 * z * z - ln_x - early_norm
    };

    let sigma_bar = late.sigma_log.max(early.sigma_log);
    let mut lo = late.mu_log.min(early.mu_log) - QUAD_SPAN_SIGMAS * sigma_bar;
    let mut hi = late.mu_log.max(early.mu_log) + QUAD_SPAN_SIGMAS * sigma_bar;
    let cells = 800;
    let (mut u_star, mut g_star, mut idx) = locate_peak(&g, lo, hi, cells);
    for _ in 0..8 {
        if idx == 0 {
            lo -= QUAD_SPAN_SIGMAS * sigma_bar;
        } else if idx == cells {
            hi += QUAD_SPAN_SIGMAS * sigma_bar;
        } else {
            break;
        }
        (u_star, g_star, idx) = locate_peak(&g, lo, hi, cells);
    }
    if !g_star.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    lo = lo.min(u_star - QUAD_SPAN_SIGMAS * sigma_bar);
    hi = hi.max(u_star + QUAD_SPAN_SIGMAS * sigma_bar);

    let narrow = late.sigma_log.min(early.sigma_log);
    let mut points: Vec<f64> = (0..=32).map(|i| lo + (hi - lo) * i as f64 / 32.0).collect();
    for k in [-3.0, -1.0, 0.0, 1.0, 3.0] {
        let p = u_star + k * narrow;
        if p > lo && p < hi {
            points.push(p);
        }
    }
    let res = integrate(
        |u| (g(u) - g_star).exp(),
        &points,
        QuadOptions {
            abs_tol: 1e-14,
            rel_tol: 1e-13,
            max_subintervals: 4000,
        },
    );
    if !res.converged {
        warn!("overlap quadrature stopped at error estimate {:.3e}", res.error);
    }
    Ok(g_star + res.value.ln())
}

pub fn overlap_density_quadrature(
    a: &LogNormalParams,
    off_a: f64,
    b: &LogNormalParams,
    off_b: f64,
) -> Result<f64> {
    Ok(ln_overlap_density_quadrature(a, off_a, b, off_b)?.exp())
}

/// `f_F(0)` for two route laws shifted by deterministic start offsets. Equal
/// offsets use the closed form, otherwise quadrature.
pub fn overlap_density(r1: &RouteTimeDist, r2: &RouteTimeDist, offset1: f64, offset2: f64) -> Result<f64> {
    for off in [offset1, offset2] {
        if !(off >= 0.0 && off.is_finite()) {
            return Err(Error::NegativeOffset(off));
        }
    }
    if offset1 == offset2 {
        Ok(overlap_density_closed(&r1.params(), &r2.params()))
    } else {
        overlap_density_quadrature(&r1.params(), offset1, &r2.params(), offset2)
    }
}

fn score(node: &str, r_c: f64, density: f64, trailing: &LogNormalParams) -> RiskScore {
    let inv = expected_inverse_speed(trailing);
    let raw = 2.0 * r_c * inv * density;
    RiskScore {
        node: node.to_string(),
        probability: raw.min(1.0),
        overlap_density: density,
        inv_speed_expectation: inv,
        clamped: raw > 1.0,
    }
}

pub fn collision_probability(
    r1: &RouteTimeDist,
    r2: &RouteTimeDist,
    spot: &CollisionSpot,
    trailing_link_speed: &LogNormalParams,
    offsets: (f64, f64),
) -> Result<RiskScore> {
    let spot = CollisionSpot::new(spot.node.clone(), spot.r_c)?;
    let density = overlap_density(r1, r2, offsets.0, offsets.1)?;
    Ok(score(&spot.node, spot.r_c, density, trailing_link_speed))
}

/// Arrival law of one aircraft at position `k` of its plan.
enum Arrival {
    /// Deterministic: the aircraft starts at the node.
    At(f64),
    Route { dist: RouteTimeDist, offset: f64 },
}

impl Arrival {
    fn mean(&self) -> f64 {
        match self {
            Arrival::At(t) => *t,
            Arrival::Route { dist, offset } => offset + dist.m,
        }
    }
}

fn arrival(plan: &TaxiPlan, graph: &AirportGraph, k: usize, offset: f64) -> Result<Arrival> {
    if k == 0 {
        return Ok(Arrival::At(offset));
    }
    let links = plan.resolved_links(graph)?;
    let dists = links[..k]
        .iter()
        .map(|l| link_time_dist(l.length, l.speed()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Arrival::Route {
        dist: fw_compose(&dists)?,
        offset,
    })
}

/// Entry link of `plan` into position `k`, else its exit link from there.
fn adjacent_link<'g>(plan: &TaxiPlan, graph: &'g AirportGraph, k: usize) -> Result<Option<&'g crate::graph::Link>> {
    if k > 0 {
        return graph.link(&plan.links[k - 1]).map(Some);
    }
    match plan.links.first() {
        Some(l) => graph.link(l).map(Some),
        None => Ok(None),
    }
}

/// Scores every node shared by both plans, in `p1` order. Start offsets come
/// from the plans' start times relative to the earlier one.
pub fn risk_map(p1: &TaxiPlan, p2: &TaxiPlan, graph: &AirportGraph, r_c: f64) -> Result<Vec<RiskScore>> {
    p1.validate(graph)?;
    p2.validate(graph)?;
    if !(r_c.is_finite() && r_c > 0.0) {
        return Err(Error::invalid("r_c", format!("must be positive, got {r_c}")));
    }
    let t0 = p1.start_time.min(p2.start_time);
    let (o1, o2) = (p1.start_time - t0, p2.start_time - t0);
    let shared = plan_overlap(p1, p2);
    shared
        .par_iter()
        .map(|node| {
            let k1 = p1.position(node).expect("overlap node is on plan 1");
            let k2 = p2.position(node).expect("overlap node is on plan 2");
            let a1 = arrival(p1, graph, k1, o1)?;
            let a2 = arrival(p2, graph, k2, o2)?;

            let (trail_plan, trail_k, other_plan, other_k) = if a2.mean() >= a1.mean() {
                (p2, k2, p1, k1)
            } else {
                (p1, k1, p2, k2)
            };
            let trailing = match (trail_k, other_k) {
                (0, k) if k > 0 => adjacent_link(other_plan, graph, k)?,
                _ => adjacent_link(trail_plan, graph, trail_k)?,
            };
            let trailing_speed = match trailing {
                Some(l) => {
                    if r_c > 0.5 * l.length {
                        warn!(
                            "r_c {r_c} m exceeds half of link {} ({:.1} m); the point approximation is coarse",
                            l.id, l.length
                        );
                    }
                    l.speed()
                }
                None => SpeedClass::Other.default_speed(),
            };

            let density = match (&a1, &a2) {
                (Arrival::At(t1), Arrival::At(t2)) => {
                    if t1 == t2 {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                }
                (Arrival::At(t), Arrival::Route { dist, offset })
                | (Arrival::Route { dist, offset }, Arrival::At(t)) => {
                    let lag = t - offset;
                    if lag > 0.0 {
                        dist.params().pdf(lag)
                    } else {
                        0.0
                    }
                }
                (
                    Arrival::Route { dist: d1, offset: off1 },
                    Arrival::Route { dist: d2, offset: off2 },
                ) => overlap_density(d1, d2, *off1, *off2)?,
            };
            Ok(score(node, r_c, density, &trailing_speed))
        })
        .collect()
}

/// Highest-probability entry; ties go to the earlier node in plan order.
pub fn argmax(scores: &[RiskScore]) -> Option<&RiskScore> {
    scores
        .iter()
        .fold(None, |best: Option<&RiskScore>, s| match best {
            Some(b) if b.probability >= s.probability => Some(b),
            _ => Some(s),
        })
}

pub fn to_csv(scores: &[RiskScore], graph: &AirportGraph) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Internal(format!("csv write: {e}"));
    w.write_record(["node", "x", "y", "probability", "overlap_density", "inv_speed_expectation", "clamped"])
        .map_err(err)?;
    for s in scores {
        let n = graph.node(&s.node)?;
        w.write_record([
            s.node.clone(),
            n.x.to_string(),
            n.y.to_string(),
            s.probability.to_string(),
            s.overlap_density.to_string(),
            s.inv_speed_expectation.to_string(),
            s.clamped.to_string(),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

/// Point features for nodes with geodetic coordinates; `None` for planar
/// layouts.
pub fn to_geojson(scores: &[RiskScore], graph: &AirportGraph) -> Result<Option<String>> {
    if !graph.is_geodetic() {
        return Ok(None);
    }
    let mut features = Vec::with_capacity(scores.len());
    for s in scores {
        let n = graph.node(&s.node)?;
        let (lon, lat) = n.geo.expect("geodetic graphs keep coordinates");
        features.push(serde_json::json!({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [lon, lat]},
            "properties": {
                "node": s.node,
                "probability": s.probability,
                "overlap_density": s.overlap_density,
                "inv_speed_expectation": s.inv_speed_expectation,
                "clamped": s.clamped,
            },
        }));
    }
    let doc = serde_json::json!({"type": "FeatureCollection", "features": features});
    Ok(Some(serde_json::to_string_pretty(&doc).expect("geojson serializes")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(mu: f64, s: f64) -> LogNormalParams {
        LogNormalParams::new(mu, s).unwrap()
    }

    fn route(mu: f64, s: f64) -> RouteTimeDist {
        RouteTimeDist {
            mu_star: mu,
            sigma_star: s,
            m: (mu + s * s / 2.0).exp(),
            v: 0.0,
            n_links: 1,
        }
    }

    #[test]
    fn inverse_speed() {
        assert!((expected_inverse_speed(&p(10f64.ln(), 1e-9)) - 0.1).abs() < 1e-12);
        let v = expected_inverse_speed(&p(10f64.ln(), 0.2462));
        assert!((v - (-10f64.ln() + 0.2462f64.powi(2) / 2.0).exp()).abs() < 1e-15);
        assert!((v - 0.1031).abs() < 1e-4);
        let q = p(1.3, 0.7);
        assert!(expected_inverse_speed(&q) * q.mean() >= 1.0);
    }

    #[test]
    fn closed_form_equal_parameters() {
        for &(mu, s) in &[(0.0f64, 0.3f64), (3.0, 0.2), (5.5, 0.8)] {
            let want = (s * s / 4.0 - mu).exp() / (2.0 * s * PI.sqrt());
            let got = overlap_density_closed(&p(mu, s), &p(mu, s));
            assert!(((got - want) / want).abs() < 1e-13);
        }
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let cases = [(3.0, 0.2, 3.1, 0.3), (0.0, 0.05, 6.0, 0.8), (4.0, 0.5, 4.0, 0.5), (1.0, 0.05, 1.02, 0.06)];
        for &(m1, s1, m2, s2) in &cases {
            let c = ln_overlap_density_closed(&p(m1, s1), &p(m2, s2));
            let q = ln_overlap_density_quadrature(&p(m1, s1), 0.0, &p(m2, s2), 0.0).unwrap();
            assert!((c.exp() - q.exp()).abs() <= 1e-9 * c.exp() || (c - q).abs() < 1e-9, "{c} vs {q}");
        }
    }

    #[test]
    fn offsets_shift_the_overlap() {
        let a = p(3.0, 0.1);
        let shifted = overlap_density_quadrature(&a, 5.0, &a, 5.0).unwrap();
        let base = overlap_density_closed(&a, &a);
        assert!(((shifted - base) / base).abs() < 1e-9);
        // Delaying one aircraft by its mean time separates the arrivals.
        let apart = overlap_density_quadrature(&a, 0.0, &a, 3f64.exp()).unwrap();
        assert!(apart < 1e-6 * base);
        assert!(matches!(overlap_density(&route(3.0, 0.1), &route(3.0, 0.1), -1.0, 0.0), Err(Error::NegativeOffset(_))));
    }

    #[test]
    fn symmetric() {
        let (a, b) = (p(3.0, 0.2), p(3.3, 0.4));
        let ab = overlap_density_quadrature(&a, 2.0, &b, 7.0).unwrap();
        let ba = overlap_density_quadrature(&b, 7.0, &a, 2.0).unwrap();
        assert!(((ab - ba) / ab).abs() < 1e-12);
    }

    #[test]
    fn vanishing_overlap() {
        // Log-means 20 sigma apart.
        let d = overlap_density_closed(&p(2.0, 0.1), &p(2.0 + 20.0 * 0.1 * 2f64.sqrt(), 0.1));
        assert!(d < 1e-30);
    }

    #[test]
    fn compact_expression_arithmetic() {
        let s = score("N", 30.0, 0.01, &p(-(0.1f64.ln()) - 0.0, 1e-12));
        assert!((s.inv_speed_expectation - 0.1).abs() < 1e-12);
        assert!((s.probability - 0.06).abs() < 1e-12);
        assert!(!s.clamped);
        let s = score("N", 3000.0, 0.01, &p(10f64.ln(), 1e-12));
        assert_eq!(s.probability, 1.0);
        assert!(s.clamped);
    }

    #[test]
    fn linear_in_r_c() {
        let (r1, r2) = (route(3.0, 0.2), route(3.1, 0.25));
        let v = p(2.0, 0.2);
        let a = collision_probability(&r1, &r2, &CollisionSpot::new("N", 1.0).unwrap(), &v, (0.0, 0.0)).unwrap();
        let b = collision_probability(&r1, &r2, &CollisionSpot::new("N", 2.5).unwrap(), &v, (0.0, 0.0)).unwrap();
        assert!((b.probability - 2.5 * a.probability).abs() < 1e-15);
        assert!(CollisionSpot::new("N", 0.0).is_err());
    }
}
