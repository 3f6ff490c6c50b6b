//! Link-speed fitting from surface tracks and the goodness-of-fit and
//! group-comparison tests used on them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal};

use crate::error::{read_to_string, Error, Result};
use crate::graph::AirportGraph;
use crate::travel_time::{std_normal_cdf, LogNormalParams};

/// Pairs farther than this from every link are not map-matched.
pub const MATCH_GATE_M: f64 = 50.0;
pub const DEFAULT_STATIONARY_CUTOFF: f64 = 0.5;
/// Fewest samples a K-S test accepts.
pub const KS_MIN_SAMPLES: usize = 5;

/// Wake-turbulence weight classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WeightClass {
    Small,
    Large,
    Heavy,
    Super,
}

impl WeightClass {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightClass::Small => "SMALL",
            WeightClass::Large => "LARGE",
            WeightClass::Heavy => "HEAVY",
            WeightClass::Super => "SUPER",
        }
    }
}

impl fmt::Display for WeightClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SMALL" => Ok(WeightClass::Small),
            "LARGE" => Ok(WeightClass::Large),
            "HEAVY" => Ok(WeightClass::Heavy),
            "SUPER" => Ok(WeightClass::Super),
            _ => Err(Error::invalid("weight_class", format!("unknown class {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedSample {
    pub link: String,
    pub time: f64,
    /// m/s
    pub speed: f64,
    pub weight_class: Option<WeightClass>,
}

/// Reference distribution for goodness-of-fit checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hypothesis {
    LogNormal(LogNormalParams),
    Normal { mean: f64, std: f64 },
}

impl Hypothesis {
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Hypothesis::LogNormal(p) => p.cdf(x),
            Hypothesis::Normal { mean, std } => std_normal_cdf((x - mean) / std),
        }
    }

    pub fn quantile(&self, q: f64) -> f64 {
        let z = Normal::standard().inverse_cdf(q);
        match self {
            Hypothesis::LogNormal(p) => (p.mu_log + p.sigma_log * z).exp(),
            Hypothesis::Normal { mean, std } => mean + std * z,
        }
    }
}

fn check_speeds(xs: &[f64]) -> Result<()> {
    match xs.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        Some(&v) => Err(Error::NonpositiveSpeed(v)),
        None => Ok(()),
    }
}

/// Maximum-likelihood log-normal: mean and population standard deviation of
/// the logs.
pub fn fit_lognormal(speeds: &[f64]) -> Result<LogNormalParams> {
    if speeds.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: speeds.len(),
        });
    }
    check_speeds(speeds)?;
    let logs: Vec<f64> = speeds.iter().map(|v| v.ln()).collect();
    let n = logs.len() as f64;
    let mu = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    // Identical logs can still leave a rounding residue in the mean.
    if sigma <= 1e-12 * mu.abs().max(1.0) {
        return Err(Error::ZeroVariance);
    }
    LogNormalParams::new(mu, sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Asymptotic Kolmogorov survival function `Q(lambda)`.
///
/// The alternating series converges slowly for small `lambda`, where the
/// equivalent Jacobi-theta form is used instead.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let sum = if lambda < 1.0 {
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for k in 1.. {
            let term = (-((2 * k - 1) as f64).powi(2) * c).exp();
            s += term;
            if term < 1e-12 {
                break;
            }
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        let mut s = 0.0;
        for k in 1.. {
            let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-12 {
                break;
            }
        }
        2.0 * s
    };
    sum.clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_test(samples: &[f64], hypothesis: &Hypothesis) -> Result<KsResult> {
    let n = samples.len();
    if n < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: KS_MIN_SAMPLES,
            got: n,
        });
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let nf = n as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = hypothesis.cdf(x);
            ((i + 1) as f64 / nf - f).abs().max((f - i as f64 / nf).abs())
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf(nf.sqrt() * d),
    })
}

/// `(F^-1((i - 0.5) / n), x_(i))` for the sorted samples.
pub fn qq_points(samples: &[f64], hypothesis: &Hypothesis) -> Result<Vec<(f64, f64)>> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    Ok(xs
        .into_iter()
        .enumerate()
        .map(|(i, x)| (hypothesis.quantile((i as f64 + 0.5) / n as f64), x))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df: (f64, f64),
}

fn group_shape(groups: &[Vec<f64>], min_each: usize) -> Result<usize> {
    if groups.len() < 2 {
        return Err(Error::invalid("groups", format!("need at least 2 groups, got {}", groups.len())));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < min_each) {
        return Err(Error::TooFewSamples {
            needed: min_each,
            got: g.len(),
        });
    }
    if let Some(x) = groups.iter().flatten().find(|x| !x.is_finite()) {
        return Err(Error::invalid("groups", format!("non-finite observation {x}")));
    }
    Ok(groups.iter().map(Vec::len).sum())
}

/// One-way ANOVA F statistic with its F-distribution p-value.
pub fn anova_f(groups: &[Vec<f64>]) -> Result<TestResult> {
    let total = group_shape(groups, 2)?;
    let k = groups.len();
    let n = total as f64;
    let grand = groups.iter().flatten().sum::<f64>() / n;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    if ssw == 0.0 {
        return Err(Error::DegenerateGroups);
    }
    let (d1, d2) = ((k - 1) as f64, (total - k) as f64);
    let f = (ssb / d1) / (ssw / d2);
    let dist = FisherSnedecor::new(d1, d2).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(TestResult {
        statistic: f,
        p_value: dist.sf(f).clamp(0.0, 1.0),
        df: (d1, d2),
    })
}

/// Kruskal–Wallis H with mid-ranks and the tie correction; chi-square p-value.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult> {
    let total = group_shape(groups, 1)?;
    let mut all: Vec<(f64, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(j, g)| g.iter().map(move |&x| (x, j)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let n = total as f64;
    let mut rank_sums = vec![0.0; groups.len()];
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        for &(_, g) in &all[i..j] {
            rank_sums[g] += mid;
        }
        let t = (j - i) as f64;
        tie_sum += t * t * t - t;
        i = j;
    }
    let divisor = 1.0 - tie_sum / (n * n * n - n);
    if divisor <= 0.0 {
        return Err(Error::AllTied);
    }
    if total < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: total });
    }
    let sum: f64 = rank_sums
        .iter()
        .zip(groups)
        .map(|(r, g)| r * r / g.len() as f64)
        .sum();
    let h = (12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / divisor;
    let df = (groups.len() - 1) as f64;
    let dist = ChiSquared::new(df).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(TestResult {
        statistic: h,
        p_value: dist.sf(h.max(0.0)).clamp(0.0, 1.0),
        df: (df, 0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub time: f64,
    pub callsign: String,
    pub x: f64,
    pub y: f64,
    pub weight_class: Option<WeightClass>,
}

/// Reads `time,callsign,x,y[,weight_class]` or `time,callsign,lat,lon[,...]`.
/// Geodetic rows are projected with the graph's projection.
pub fn parse_tracks(text: &str, origin: &str, graph: Option<&AirportGraph>) -> Result<Vec<TrackPoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::malformed(origin, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let time = col("time").ok_or_else(|| Error::malformed(origin, "missing time column"))?;
    let callsign = col("callsign").ok_or_else(|| Error::malformed(origin, "missing callsign column"))?;
    let weight = col("weight_class");
    let (cx, cy, geodetic) = match (col("x"), col("y"), col("lat"), col("lon")) {
        (Some(x), Some(y), _, _) => (x, y, false),
        (_, _, Some(lat), Some(lon)) => (lat, lon, true),
        _ => return Err(Error::malformed(origin, "need x,y or lat,lon columns")),
    };
    if geodetic && !graph.is_some_and(AirportGraph::is_geodetic) {
        return Err(Error::malformed(origin, "lat/lon tracks need a geodetic graph"));
    }

    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::malformed(origin, e))?;
        let num = |i: usize| -> Result<f64> {
            let s = rec.get(i).unwrap_or("");
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::malformed(origin, format!("row {}: bad number {s:?}", row + 2)))
        };
        let (a, b) = (num(cx)?, num(cy)?);
        let (x, y) = if geodetic {
            graph.and_then(|g| g.project(a, b)).expect("checked geodetic above")
        } else {
            (a, b)
        };
        let weight_class = match weight.and_then(|i| rec.get(i)).filter(|s| !s.is_empty()) {
            Some(s) => Some(s.parse()?),
            None => None,
        };
        out.push(TrackPoint {
            time: num(time)?,
            callsign: rec.get(callsign).unwrap_or("").to_string(),
            x,
            y,
            weight_class,
        });
    }
    Ok(out)
}

pub fn load_tracks(path: &Path, graph: Option<&AirportGraph>) -> Result<Vec<TrackPoint>> {
    parse_tracks(&read_to_string(path)?, &path.display().to_string(), graph)
}

fn segment_distance(px: f64, py: f64, (ax, ay): (f64, f64), (bx, by): (f64, f64)) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (px - ax - t * dx).hypot(py - ay - t * dy)
}

/// Speeds between consecutive points of each callsign, map-matched to the
/// link nearest the pair's midpoint. Slow pairs and pairs beyond
/// [`MATCH_GATE_M`] are dropped.
pub fn link_speed_extract(points: &[TrackPoint], graph: &AirportGraph, stationary_cutoff: f64) -> Result<Vec<SpeedSample>> {
    let segments: Vec<(&str, (f64, f64), (f64, f64))> = graph
        .links()
        .iter()
        .map(|l| {
            let (a, b) = (graph.node(&l.a)?, graph.node(&l.b)?);
            Ok((l.id.as_str(), (a.x, a.y), (b.x, b.y)))
        })
        .collect::<Result<_>>()?;

    let mut by_callsign: BTreeMap<&str, Vec<&TrackPoint>> = BTreeMap::new();
    for p in points {
        by_callsign.entry(&p.callsign).or_default().push(p);
    }
    let mut out = Vec::new();
    for (cs, track) in by_callsign {
        for w in track.windows(2) {
            let (p, q) = (w[0], w[1]);
            let dt = q.time - p.time;
            if dt < 0.0 {
                return Err(Error::NonMonotoneTime(format!("{cs} at t={}", q.time)));
            }
            if dt == 0.0 {
                continue;
            }
            let speed = (q.x - p.x).hypot(q.y - p.y) / dt;
            if speed < stationary_cutoff {
                continue;
            }
            let (mx, my) = ((p.x + q.x) / 2.0, (p.y + q.y) / 2.0);
            let nearest = segments
                .iter()
                .map(|&(id, a, b)| (id, segment_distance(mx, my, a, b)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
            if let Some((id, _)) = nearest.filter(|&(_, d)| d <= MATCH_GATE_M) {
                out.push(SpeedSample {
                    link: id.to_string(),
                    time: p.time,
                    speed,
                    weight_class: p.weight_class.or(q.weight_class),
                });
            }
        }
    }
    out.sort_by(|a, b| a.link.cmp(&b.link).then(a.time.total_cmp(&b.time)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub link: String,
    pub n: usize,
    pub params: LogNormalParams,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

/// Log-normal fit and K-S check per link, sorted by link id. Links with too
/// few or degenerate samples are skipped with a warning.
pub fn fit_links(samples: &[SpeedSample]) -> Vec<FitReport> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in samples {
        groups.entry(&s.link).or_default().push(s.speed);
    }
    let groups: Vec<(&str, Vec<f64>)> = groups.into_iter().collect();
    groups
        .par_iter()
        .filter_map(|(link, speeds)| {
            let fit = fit_lognormal(speeds)
                .and_then(|p| ks_test(speeds, &Hypothesis::LogNormal(p)).map(|ks| (p, ks)));
            match fit {
                Ok((params, ks)) => Some(FitReport {
                    link: link.to_string(),
                    n: speeds.len(),
                    params,
                    ks_statistic: ks.statistic,
                    ks_p_value: ks.p_value,
                }),
                Err(e) => {
                    warn!("link {link}: not fitted ({e})");
                    None
                }
            }
        })
        .collect()
}

/// Speeds grouped by weight class in class order; unlabeled samples are left
/// out.
pub fn group_by_weight_class(samples: &[SpeedSample]) -> Vec<(WeightClass, Vec<f64>)> {
    let mut groups: BTreeMap<WeightClass, Vec<f64>> = BTreeMap::new();
    for s in samples {
        if let Some(w) = s.weight_class {
            groups.entry(w).or_default().push(s.speed);
        }
    }
    groups.into_iter().collect()
}

pub fn samples_to_csv(samples: &[SpeedSample]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Internal(format!("csv write: {e}"));
    w.write_record(["link", "time", "speed", "weight_class"]).map_err(err)?;
    for s in samples {
        w.write_record([
            s.link.clone(),
            s.time.to_string(),
            s.speed.to_string(),
            s.weight_class.map(|c| c.as_str().to_string()).unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

/// Reads the `link,time,speed[,weight_class]` sample format.
pub fn parse_samples(text: &str, origin: &str) -> Result<Vec<SpeedSample>> {
    #[derive(Deserialize)]
    struct Row {
        link: String,
        time: f64,
        speed: f64,
        #[serde(default)]
        weight_class: Option<String>,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|e| Error::malformed(origin, e))?;
        if !(row.speed.is_finite() && row.speed > 0.0) {
            return Err(Error::NonpositiveSpeed(row.speed));
        }
        let weight_class = match row.weight_class.as_deref().filter(|s| !s.is_empty()) {
            Some(s) => Some(s.parse()?),
            None => None,
        };
        out.push(SpeedSample {
            link: row.link,
            time: row.time,
            speed: row.speed,
            weight_class,
        });
    }
    Ok(out)
}

pub fn load_samples(path: &Path) -> Result<Vec<SpeedSample>> {
    parse_samples(&read_to_string(path)?, &path.display().to_string())
}
