//! Per-round transmission times for the star and ring schemes, plus the
//! analytic expectations and bounds over a Poisson field of devices.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::radio::{
    allocate_bandwidth, allocate_bandwidth_for_payloads, rate, snr, spectral_efficiency, Link,
    Placement, ScenarioConfig, BASE_STATION,
};
use crate::topology::{validate_ring, RingTopology};

/// Relative tolerance of every analytic quadrature.
pub const QUADRATURE_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundTiming {
    pub t_total: f64,
    /// Scatter-reduce time; zero for the star scheme.
    pub t_sr: f64,
    /// Upload-to-BS time (the whole round for star).
    pub t_ag: f64,
    /// Slowest link of the first phase: the ring link for MRAR, the uplink for star.
    pub bottleneck_link: Link,
    /// Slowest uplink of the upload phase.
    pub ag_bottleneck_link: Link,
}

fn uplinks(k: usize) -> Vec<Link> {
    (1..=k).map(|i| (i, BASE_STATION)).collect()
}

fn rates_under(
    links: &[Link],
    alloc: &crate::radio::BandwidthAllocation,
    placement: &Placement,
    config: &ScenarioConfig,
) -> Result<Vec<f64>> {
    links
        .iter()
        .map(|&(tx, rx)| {
            let bw = alloc.get(tx).expect("allocation covers every transmitter");
            rate(bw, snr(placement, config, tx, rx)?)
        })
        .collect()
}

fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty")
}

/// Star round: every device uploads the full model, `T = M / min_i R_{i,0}`.
pub fn t_star(placement: &Placement, config: &ScenarioConfig) -> Result<RoundTiming> {
    let links = uplinks(placement.device_count());
    let alloc = allocate_bandwidth(&links, placement, config)?;
    let rates = rates_under(&links, &alloc, placement, config)?;
    let slowest = argmin(&rates);
    let t = config.model_size / rates[slowest];
    Ok(RoundTiming {
        t_total: t,
        t_sr: 0.0,
        t_ag: t,
        bottleneck_link: links[slowest],
        ag_bottleneck_link: links[slowest],
    })
}

/// Scatter-reduce time over `ring`: `(K-1) M / (K min_i R_{i,r(i)})` with the
/// bandwidth shared by all K ring links. Returns the time and the slowest link.
pub fn t_scatter_reduce(
    placement: &Placement,
    config: &ScenarioConfig,
    ring: &RingTopology,
) -> Result<(f64, Link)> {
    let k = placement.device_count();
    if k < 2 {
        return Err(Error::invalid("scatter-reduce needs at least two devices"));
    }
    if !validate_ring(ring, k) {
        return Err(Error::invalid(format!("not a single {k}-device ring: {:?}", ring.next_slice())));
    }
    let links: Vec<Link> = ring.edges().collect();
    let alloc = allocate_bandwidth(&links, placement, config)?;
    let rates = rates_under(&links, &alloc, placement, config)?;
    let slowest = argmin(&rates);
    let n = k as f64;
    Ok(((n - 1.0) * config.model_size / (n * rates[slowest]), links[slowest]))
}

/// Upload time of the all-gather phase given fixed uplink rates:
/// `max_i (I_i + 1) * chunk_bits / R_{i,0}`. Returns the time and the index of
/// the slowest uplink.
pub fn all_gather_time(uplink_rates: &[f64], failure_counts: &[u32], chunk_bits: f64) -> (f64, usize) {
    assert_eq!(uplink_rates.len(), failure_counts.len());
    uplink_rates
        .iter()
        .zip(failure_counts)
        .map(|(&r, &i)| (f64::from(i) + 1.0) * chunk_bits / r)
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, t)| (t, i))
        .expect("non-empty")
}

/// Full MRAR round time. `failure_counts[k - 1]` is `I_k`, the number of
/// recovery chunks device `k` uploads on top of its own reduced chunk.
///
/// The upload phase splits the bandwidth in proportion to each device's
/// payload `(I_k + 1) M / K`, so with failures present every uplink still
/// finishes at the same instant.
pub fn t_mrar(
    placement: &Placement,
    config: &ScenarioConfig,
    ring: &RingTopology,
    failure_counts: &[u32],
) -> Result<RoundTiming> {
    let k = placement.device_count();
    if failure_counts.len() != k {
        return Err(Error::invalid(format!(
            "expected {k} failure counts, got {}",
            failure_counts.len()
        )));
    }
    let (t_sr, sr_link) = t_scatter_reduce(placement, config, ring)?;

    let links = uplinks(k);
    let payloads: Vec<f64> = failure_counts.iter().map(|&i| f64::from(i) + 1.0).collect();
    let alloc = allocate_bandwidth_for_payloads(&links, &payloads, placement, config)?;
    let rates = rates_under(&links, &alloc, placement, config)?;
    let chunk_bits = config.model_size / k as f64;
    let (t_ag, slowest) = all_gather_time(&rates, failure_counts, chunk_bits);

    Ok(RoundTiming {
        t_total: t_sr + t_ag,
        t_sr,
        t_ag,
        bottleneck_link: sr_link,
        ag_bottleneck_link: links[slowest],
    })
}

/// Inverse spectral efficiency of a link of length `x` (floored).
fn inverse_efficiency(config: &ScenarioConfig, x: f64) -> f64 {
    1.0 / spectral_efficiency(config.snr_at(x))
}

fn check_disc(config: &ScenarioConfig, lambda: f64, disc_radius: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be > 0, got {lambda}")));
    }
    if !(disc_radius > config.min_distance && disc_radius.is_finite()) {
        return Err(Error::invalid(format!(
            "disc radius {disc_radius} must exceed min_distance {}",
            config.min_distance
        )));
    }
    Ok(())
}

/// `∫_{d0}^{R} x / log2(1 + SNR(x)) dx`.
fn radial_moment(config: &ScenarioConfig, disc_radius: f64) -> Result<f64> {
    quadrature::integrate(
        |x| x * inverse_efficiency(config, x),
        config.min_distance,
        disc_radius,
        QUADRATURE_REL_TOL,
    )
}

/// Mean of `1 / log2(1 + SNR)` for a device uniform in the disc around the BS.
fn mean_inverse_efficiency(config: &ScenarioConfig, disc_radius: f64) -> Result<f64> {
    Ok(2.0 / (disc_radius * disc_radius) * radial_moment(config, disc_radius)?)
}

/// Expected star round time over a PPP of intensity `lambda` (devices/m²) in
/// a disc of radius `disc_radius` around the BS:
/// `λπR² · (M/B) · (2/R²) ∫ x / log2(1 + p x^-α / N0) dx`.
pub fn expected_t_star(config: &ScenarioConfig, lambda: f64, disc_radius: f64) -> Result<f64> {
    check_disc(config, lambda, disc_radius)?;
    let mean_count = lambda * PI * disc_radius * disc_radius;
    Ok(mean_count * config.model_size / config.total_bandwidth
        * mean_inverse_efficiency(config, disc_radius)?)
}

/// The `C` term of the scatter-reduce bound,
/// `(M/B) λπR² ∫ e^{-λπx²} / log2(1 + p x^-α / N0) dx`.
pub fn t_sr_bound_chain_term(config: &ScenarioConfig, lambda: f64, disc_radius: f64) -> Result<f64> {
    check_disc(config, lambda, disc_radius)?;
    let lpi = lambda * PI;
    let integral = quadrature::integrate(
        |x| (-lpi * x * x).exp() * inverse_efficiency(config, x),
        config.min_distance,
        disc_radius,
        QUADRATURE_REL_TOL,
    )?;
    Ok(config.model_size / config.total_bandwidth * lpi * disc_radius * disc_radius * integral)
}

/// The closing-link constant `b = (M/B) / log2(1 + p (2R)^-α / N0)`.
pub fn t_sr_bound_closing_term(config: &ScenarioConfig, disc_radius: f64) -> f64 {
    config.model_size / config.total_bandwidth * inverse_efficiency(config, 2.0 * disc_radius)
}

/// Upper bound on the expected greedy-ring scatter-reduce time: chain term plus closing link.
pub fn expected_t_sr_upper_bound(
    config: &ScenarioConfig,
    lambda: f64,
    disc_radius: f64,
) -> Result<f64> {
    Ok(t_sr_bound_chain_term(config, lambda, disc_radius)?
        + t_sr_bound_closing_term(config, disc_radius))
}

/// Expected all-gather time, `(E[ΣI] + 1) (M/B) (2/R²) ∫ x / log2(1 + p x^-α / N0) dx`.
/// Independent of the device intensity.
pub fn expected_t_ag(
    config: &ScenarioConfig,
    lambda: f64,
    disc_radius: f64,
    expected_recovery: f64,
) -> Result<f64> {
    check_disc(config, lambda, disc_radius)?;
    if !(expected_recovery >= 0.0 && expected_recovery.is_finite()) {
        return Err(Error::invalid("expected recovery count must be >= 0"));
    }
    Ok((expected_recovery + 1.0) * config.model_size / config.total_bandwidth
        * mean_inverse_efficiency(config, disc_radius)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticRow {
    pub lambda: f64,
    pub expected_t_star: f64,
    pub t_sr_upper_bound: f64,
    pub expected_t_ag: f64,
}

/// Analytic expectations for every `lambda`, with no recovery traffic.
pub fn analytic_sweep(
    config: &ScenarioConfig,
    lambdas: &[f64],
    disc_radius: f64,
) -> Result<Vec<AnalyticRow>> {
    lambdas
        .iter()
        .map(|&lambda| {
            Ok(AnalyticRow {
                lambda,
                expected_t_star: expected_t_star(config, lambda, disc_radius)?,
                t_sr_upper_bound: expected_t_sr_upper_bound(config, lambda, disc_radius)?,
                expected_t_ag: expected_t_ag(config, lambda, disc_radius, 0.0)?,
            })
        })
        .collect()
}

/// CSV with columns `lambda,expected_t_star,t_sr_upper_bound,expected_t_ag`.
pub fn write_analytic_csv<W: Write>(rows: &[AnalyticRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
