//! Log-normal link speeds, link travel times, and Fenton–Wilkinson route sums.
//!
//! A speed `v ~ LN(mu, sigma^2)` over a link of length `d` gives a travel time
//! `d / v ~ LN(ln d - mu, sigma^2)`. A route's total time is the sum of its
//! independent link times, approximated by the single log-normal that matches
//! its mean and variance.

use std::f64::consts::{PI, SQRT_2};

use log::warn;
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};

/// Meters per second in one knot.
pub const KNOT: f64 = 0.514444;

/// Above this log-scale spread the two-moment approximation degrades.
pub const FW_SIGMA_WARN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu_log: f64,
    pub sigma_log: f64,
}

impl LogNormalParams {
    pub fn new(mu_log: f64, sigma_log: f64) -> Result<Self> {
        if !mu_log.is_finite() {
            return Err(Error::invalid("mu_log", format!("must be finite, got {mu_log}")));
        }
        if !(sigma_log.is_finite() && sigma_log > 0.0) {
            return Err(Error::invalid(
                "sigma_log",
                format!("must be positive and finite, got {sigma_log}"),
            ));
        }
        Ok(LogNormalParams { mu_log, sigma_log })
    }

    pub fn mean(&self) -> f64 {
        (self.mu_log + 0.5 * self.sigma_log * self.sigma_log).exp()
    }

    pub fn variance(&self) -> f64 {
        let s2 = self.sigma_log * self.sigma_log;
        (2.0 * self.mu_log + s2).exp() * s2.exp_m1()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        lognormal_pdf(x, self.mu_log, self.sigma_log)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        std_normal_cdf((x.ln() - self.mu_log) / self.sigma_log)
    }
}

pub(crate) fn lognormal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let z = (x.ln() - mu) / sigma;
    (-0.5 * z * z).exp() / (x * sigma * (2.0 * PI).sqrt())
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Log-normal parameters whose physical mean and standard deviation equal the
/// arguments.
pub fn from_physical_moments(mean: f64, std: f64) -> Result<LogNormalParams> {
    if !(mean.is_finite() && std.is_finite() && mean > 0.0 && std > 0.0) {
        return Err(Error::NonpositiveMoment { mean, std });
    }
    let cv = std / mean;
    let s2 = (cv * cv).ln_1p();
    LogNormalParams::new(mean.ln() - 0.5 * s2, s2.sqrt())
}

/// Same as [`from_physical_moments`] with inputs in knots and output in m/s.
pub fn from_knots(mean_kt: f64, std_kt: f64) -> Result<LogNormalParams> {
    from_physical_moments(mean_kt * KNOT, std_kt * KNOT)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkTimeDist {
    /// Travel-time law in seconds.
    pub params: LogNormalParams,
    pub d: f64,
}

impl LinkTimeDist {
    pub fn speed(&self) -> LogNormalParams {
        LogNormalParams {
            mu_log: self.d.ln() - self.params.mu_log,
            sigma_log: self.params.sigma_log,
        }
    }
}

pub fn link_time_dist(d: f64, speed: LogNormalParams) -> Result<LinkTimeDist> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::NonpositiveDistance(d));
    }
    Ok(LinkTimeDist {
        params: LogNormalParams {
            mu_log: d.ln() - speed.mu_log,
            sigma_log: speed.sigma_log,
        },
        d,
    })
}

/// Mean (s) and variance (s^2) of a link traversal time.
pub fn time_moments(t: &LinkTimeDist) -> (f64, f64) {
    let sp = t.speed();
    let s2 = sp.sigma_log * sp.sigma_log;
    let mean = t.d * (-sp.mu_log + 0.5 * s2).exp();
    let var = t.d * t.d * (-2.0 * sp.mu_log + s2).exp() * s2.exp_m1();
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteTimeDist {
    pub mu_star: f64,
    pub sigma_star: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "V")]
    pub v: f64,
    pub n_links: usize,
}

impl RouteTimeDist {
    pub fn params(&self) -> LogNormalParams {
        LogNormalParams {
            mu_log: self.mu_star,
            sigma_log: self.sigma_star,
        }
    }
}

/// Moment-matched log-normal for the sum of independent link times.
pub fn fw_compose(links: &[LinkTimeDist]) -> Result<RouteTimeDist> {
    if links.is_empty() {
        return Err(Error::EmptyRoute);
    }
    if let Some(l) = links.iter().find(|l| l.params.sigma_log > FW_SIGMA_WARN) {
        warn!(
            "link sigma_log {:.3} exceeds {FW_SIGMA_WARN}; Fenton-Wilkinson accuracy degrades",
            l.params.sigma_log
        );
    }
    let (m, v) = links.iter().map(time_moments).fold((0.0, 0.0), |(m, v), (a, b)| (m + a, v + b));
    let s2 = (v / (m * m)).ln_1p();
    if !(s2 > 0.0 && s2.is_finite()) {
        return Err(Error::Internal(format!(
            "degenerate route variance (M={m}, V={v})"
        )));
    }
    Ok(RouteTimeDist {
        mu_star: m.ln() - 0.5 * s2,
        sigma_star: s2.sqrt(),
        m,
        v,
        n_links: links.len(),
    })
}

pub fn route_pdf(r: &RouteTimeDist, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(lognormal_pdf(t, r.mu_star, r.sigma_star))
}

pub fn route_cdf(r: &RouteTimeDist, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(r.params().cdf(t))
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && !t.is_nan() {
        Ok(())
    } else {
        Err(Error::NonpositiveTime(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn physical_moments_identity() {
        let mean = 0.5f64.exp();
        let std = mean * (std::f64::consts::E - 1.0).sqrt();
        let p = from_physical_moments(mean, std).unwrap();
        assert!(p.mu_log.abs() < 1e-12);
        assert!((p.sigma_log - 1.0).abs() < 1e-12);
    }

    #[test]
    fn twenty_knots() {
        let p = from_physical_moments(20.0 * KNOT, 5.0 * KNOT).unwrap();
        assert!((p.sigma_log - 1.0625f64.ln().sqrt()).abs() < 1e-12);
        assert!((p.sigma_log - 0.2462).abs() < 1e-4);
        assert!((p.mu_log - 2.3008).abs() < 1e-4);
        assert!(close(p.mean(), 20.0 * KNOT, 1e-12));
        assert!(close(p.variance().sqrt(), 5.0 * KNOT, 1e-12));
    }

    #[test]
    fn zero_std_rejected() {
        assert!(matches!(from_physical_moments(10.0, 0.0), Err(Error::NonpositiveMoment { .. })));
        assert!(matches!(from_physical_moments(-1.0, 1.0), Err(Error::NonpositiveMoment { .. })));
    }

    #[test]
    fn link_time_shift() {
        let sp = LogNormalParams::new(1.7, 0.3).unwrap();
        assert_eq!(link_time_dist(1.0, sp).unwrap().params.mu_log, -1.7);
        let sp = LogNormalParams::new(10f64.ln(), 0.2).unwrap();
        let lt = link_time_dist(100.0, sp).unwrap();
        assert!((lt.params.mu_log - 10f64.ln()).abs() < 1e-14);
        assert!(matches!(link_time_dist(0.0, sp), Err(Error::NonpositiveDistance(_))));
    }

    #[test]
    fn moments_hand_values() {
        let sp = LogNormalParams::new(10f64.ln(), 0.2).unwrap();
        let (m, v) = time_moments(&link_time_dist(100.0, sp).unwrap());
        assert!((m - 10.0 * 0.02f64.exp()).abs() < 1e-12);
        assert!((m - 10.202).abs() < 1e-3);
        assert!((v - 100.0 * 0.04f64.exp() * 0.04f64.exp_m1()).abs() < 1e-12);
        assert!((v - 4.247).abs() < 1e-3);

        let (m2, v2) = time_moments(&link_time_dist(200.0, sp).unwrap());
        assert!(close(m2, 2.0 * m, 1e-14));
        assert!(close(v2, 4.0 * v, 1e-14));
    }

    #[test]
    fn tiny_sigma_is_deterministic() {
        let sp = LogNormalParams::new(10f64.ln(), 1e-8).unwrap();
        let (m, v) = time_moments(&link_time_dist(100.0, sp).unwrap());
        assert!((m - 10.0).abs() < 1e-9);
        assert!(v < 1e-12);
    }

    #[test]
    fn singleton_composition_is_exact() {
        let sp = LogNormalParams::new(2.1, 0.37).unwrap();
        let lt = link_time_dist(312.5, sp).unwrap();
        let r = fw_compose(&[lt]).unwrap();
        assert!((r.mu_star - lt.params.mu_log).abs() < 1e-12);
        assert!((r.sigma_star - lt.params.sigma_log).abs() < 1e-12);
    }

    #[test]
    fn two_identical_links() {
        // A link with time mean 10 and variance 4.
        let s2 = 0.04f64.ln_1p();
        let time = LogNormalParams::new(10f64.ln() - s2 / 2.0, s2.sqrt()).unwrap();
        let d: f64 = 50.0;
        let speed = LogNormalParams::new(d.ln() - time.mu_log, time.sigma_log).unwrap();
        let lt = link_time_dist(d, speed).unwrap();
        let r = fw_compose(&[lt, lt]).unwrap();
        assert!((r.m - 20.0).abs() < 1e-12);
        assert!((r.v - 8.0).abs() < 1e-12);
        assert!((r.sigma_star.powi(2) - 1.02f64.ln()).abs() < 1e-14);
        assert!(close(r.params().mean(), r.m, 1e-13));
        assert!(close(r.params().variance(), r.v, 1e-12));
    }

    #[test]
    fn empty_route() {
        assert!(matches!(fw_compose(&[]), Err(Error::EmptyRoute)));
    }

    #[test]
    fn cdf_values() {
        let r = RouteTimeDist {
            mu_star: 3.0,
            sigma_star: 0.25,
            m: 0.0,
            v: 0.0,
            n_links: 1,
        };
        assert!((route_cdf(&r, 3f64.exp()).unwrap() - 0.5).abs() < 1e-15);
        assert!(route_cdf(&r, 1e-6).unwrap() < 1e-12);
        assert!(route_cdf(&r, 1e6).unwrap() > 1.0 - 1e-12);
        assert!(matches!(route_cdf(&r, 0.0), Err(Error::NonpositiveTime(_))));
        assert!(matches!(route_pdf(&r, -1.0), Err(Error::NonpositiveTime(_))));
    }
}
