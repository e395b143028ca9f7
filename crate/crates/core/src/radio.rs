//! Link budget: path-loss SNR, Shannon rates and the equal-time bandwidth split.
//!
//! Device indices run `1..=K`; index [`BASE_STATION`] (0) is the base station.
//! SNR is deterministic from geometry (no fading) and rates are in bits per
//! second, so they combine directly with a model size given in bits.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved index of the base station.
pub const BASE_STATION: usize = 0;

/// Directed radio link `(transmitter, receiver)`.
pub type Link = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Converts a power level in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Physical and protocol constants of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScenarioConfig")]
pub struct ScenarioConfig {
    /// Side of the square deployment area, meters.
    pub area_side: f64,
    pub bs_position: Point,
    pub path_loss_exponent: f64,
    /// Watts.
    pub noise_power: f64,
    /// Watts, identical for every device.
    pub tx_power: f64,
    /// Hz.
    pub total_bandwidth: f64,
    /// Bits.
    pub model_size: f64,
    /// Distance floor applied to every pair, meters.
    pub min_distance: f64,
    /// Per-transmission failure probability on D2D links.
    pub failure_prob: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            area_side: 400.0,
            bs_position: Point::new(200.0, 200.0),
            path_loss_exponent: 4.0,
            noise_power: dbm_to_watts(-90.0),
            tx_power: 0.1,
            total_bandwidth: 100e6,
            model_size: 10e6,
            min_distance: 1.0,
            failure_prob: 0.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("area_side", self.area_side),
            ("path_loss_exponent", self.path_loss_exponent),
            ("noise_power", self.noise_power),
            ("tx_power", self.tx_power),
            ("total_bandwidth", self.total_bandwidth),
            ("model_size", self.model_size),
            ("min_distance", self.min_distance),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and > 0, got {value}")));
            }
        }
        if !(0.0..=1.0).contains(&self.failure_prob) {
            return Err(Error::invalid(format!(
                "failure_prob must lie in [0, 1], got {}",
                self.failure_prob
            )));
        }
        if !(self.bs_position.x.is_finite() && self.bs_position.y.is_finite()) {
            return Err(Error::invalid("bs_position must be finite"));
        }
        Ok(())
    }

    /// Signal-to-noise ratio at distance `d`, with the distance floor applied.
    pub fn snr_at(&self, d: f64) -> f64 {
        d.max(self.min_distance).powf(-self.path_loss_exponent) * self.tx_power / self.noise_power
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenarioConfig {
    area_side: Option<f64>,
    bs_position: Option<Point>,
    path_loss_exponent: Option<f64>,
    noise_power: Option<f64>,
    noise_power_dbm: Option<f64>,
    tx_power: Option<f64>,
    total_bandwidth: Option<f64>,
    model_size: Option<f64>,
    min_distance: Option<f64>,
    failure_prob: Option<f64>,
}

impl TryFrom<RawScenarioConfig> for ScenarioConfig {
    type Error = Error;

    fn try_from(raw: RawScenarioConfig) -> Result<Self> {
        let d = ScenarioConfig::default();
        let noise_power = match (raw.noise_power, raw.noise_power_dbm) {
            (Some(_), Some(_)) => {
                return Err(Error::invalid("give either noise_power or noise_power_dbm, not both"))
            }
            (Some(w), None) => w,
            (None, Some(dbm)) => dbm_to_watts(dbm),
            (None, None) => d.noise_power,
        };
        let area_side = raw.area_side.unwrap_or(d.area_side);
        let cfg = ScenarioConfig {
            area_side,
            bs_position: raw
                .bs_position
                .unwrap_or(Point::new(area_side / 2.0, area_side / 2.0)),
            path_loss_exponent: raw.path_loss_exponent.unwrap_or(d.path_loss_exponent),
            noise_power,
            tx_power: raw.tx_power.unwrap_or(d.tx_power),
            total_bandwidth: raw.total_bandwidth.unwrap_or(d.total_bandwidth),
            model_size: raw.model_size.unwrap_or(d.model_size),
            min_distance: raw.min_distance.unwrap_or(d.min_distance),
            failure_prob: raw.failure_prob.unwrap_or(d.failure_prob),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Base station plus `K` device positions, with all pairwise distances
/// precomputed and floored at the minimum distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    positions: Vec<Point>,
    distances: Vec<f64>,
}

impl Placement {
    pub fn new(bs_position: Point, devices: Vec<Point>, min_distance: f64) -> Result<Self> {
        if devices.is_empty() {
            return Err(Error::invalid("a placement needs at least one device"));
        }
        if !(min_distance > 0.0) {
            return Err(Error::invalid("min_distance must be > 0"));
        }
        if devices.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::invalid("device positions must be finite"));
        }
        let mut positions = Vec::with_capacity(devices.len() + 1);
        positions.push(bs_position);
        positions.extend(devices);
        let n = positions.len();
        let mut distances = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = positions[i].distance(&positions[j]).max(min_distance);
                distances[i * n + j] = d;
                distances[j * n + i] = d;
            }
        }
        Ok(Placement { positions, distances })
    }

    /// Placement around the configured base station.
    pub fn with_config(config: &ScenarioConfig, devices: Vec<Point>) -> Result<Self> {
        Placement::new(config.bs_position, devices, config.min_distance)
    }

    /// Number of devices `K` (the base station is not counted).
    pub fn device_count(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn bs_position(&self) -> Point {
        self.positions[BASE_STATION]
    }

    pub fn devices(&self) -> &[Point] {
        &self.positions[1..]
    }

    pub fn position(&self, index: usize) -> Result<Point> {
        self.check_index(index)?;
        Ok(self.positions[index])
    }

    /// Floored distance between two indices (0 is the base station).
    pub fn distance(&self, i: usize, j: usize) -> Result<f64> {
        self.check_index(i)?;
        self.check_index(j)?;
        Ok(self.distance_unchecked(i, j))
    }

    pub(crate) fn distance_unchecked(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.positions.len() + j]
    }

    pub(crate) fn check_index(&self, index: usize) -> Result<()> {
        if index < self.positions.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { index, max: self.device_count() })
        }
    }
}

/// Uplink/D2D SNR from `i` to `j`.
pub fn snr(placement: &Placement, config: &ScenarioConfig, i: usize, j: usize) -> Result<f64> {
    let d = placement.distance(i, j)?;
    if i == j {
        return Err(Error::invalid(format!("snr needs two distinct endpoints, got {i} -> {i}")));
    }
    Ok(config.snr_at(d))
}

/// Bits per second per Hz, `log2(1 + snr)`.
pub fn spectral_efficiency(snr: f64) -> f64 {
    snr.ln_1p() / LN_2
}

/// Shannon rate `bandwidth * log2(1 + snr)` in bits per second.
pub fn rate(bandwidth: f64, snr: f64) -> Result<f64> {
    if !(bandwidth > 0.0) {
        return Err(Error::invalid(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    if !(snr >= 0.0) {
        return Err(Error::invalid(format!("snr must be >= 0, got {snr}")));
    }
    Ok(bandwidth * spectral_efficiency(snr))
}

/// Spectral efficiency of every device pair, `K x K`, row-major, zero diagonal.
/// Row/column `k - 1` holds device `k`.
pub fn unit_rate_matrix(placement: &Placement, config: &ScenarioConfig) -> Vec<f64> {
    let k = placement.device_count();
    let mut out = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                out[i * k + j] =
                    spectral_efficiency(config.snr_at(placement.distance_unchecked(i + 1, j + 1)));
            }
        }
    }
    out
}

/// Bandwidth share of each simultaneously active transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthAllocation {
    pub per_link_bandwidth: BTreeMap<usize, f64>,
}

impl BandwidthAllocation {
    pub fn total(&self) -> f64 {
        self.per_link_bandwidth.values().sum()
    }

    pub fn get(&self, transmitter: usize) -> Option<f64> {
        self.per_link_bandwidth.get(&transmitter).copied()
    }
}

/// Min-max allocation for equal payloads: `B_i ∝ 1 / log2(1 + SNR_i)`.
pub fn allocate_bandwidth(
    links: &[Link],
    placement: &Placement,
    config: &ScenarioConfig,
) -> Result<BandwidthAllocation> {
    let payloads = vec![1.0; links.len()];
    allocate_bandwidth_for_payloads(links, &payloads, placement, config)
}

/// Min-max allocation for per-link payloads: `B_i ∝ payload_i / log2(1 + SNR_i)`.
///
/// Every link then finishes its payload at the same instant, which is the
/// unique minimiser of the slowest link's completion time under `Σ B_i = B`.
pub fn allocate_bandwidth_for_payloads(
    links: &[Link],
    payloads: &[f64],
    placement: &Placement,
    config: &ScenarioConfig,
) -> Result<BandwidthAllocation> {
    if links.is_empty() {
        return Err(Error::invalid("cannot allocate bandwidth over zero links"));
    }
    if payloads.len() != links.len() {
        return Err(Error::invalid("one payload per link is required"));
    }
    let mut weights = BTreeMap::new();
    for (&(tx, rx), &payload) in links.iter().zip(payloads) {
        if !(payload > 0.0 && payload.is_finite()) {
            return Err(Error::invalid(format!("payload of link {tx} -> {rx} must be > 0")));
        }
        let efficiency = spectral_efficiency(snr(placement, config, tx, rx)?);
        if !(efficiency > 0.0) {
            return Err(Error::Infeasible { transmitter: tx, receiver: rx });
        }
        if weights.insert(tx, payload / efficiency).is_some() {
            return Err(Error::invalid(format!("device {tx} transmits on more than one link")));
        }
    }
    let sum: f64 = weights.values().sum();
    let per_link_bandwidth = weights
        .into_iter()
        .map(|(tx, w)| (tx, config.total_bandwidth * w / sum))
        .collect();
    Ok(BandwidthAllocation { per_link_bandwidth })
}
