//! Placement sampling, seeded Monte Carlo sweeps and trend fitting.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aco::{optimize_ring, AcoParams};
use crate::aggregation::{run_scatter_reduce, FailureSchedule, ParameterSet};
use crate::error::{Error, Result};
use crate::radio::{Placement, Point, ScenarioConfig};
use crate::timing::{t_mrar, t_star, RoundTiming};
use crate::topology::{greedy_ring, RingTopology};

/// Gives up on a Poisson draw after this many `K < 2` rejections in a row.
const MAX_REJECTIONS: usize = 100_000;

/// Mixes `parts` into `base` (splitmix64 finaliser per part).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlacementModel {
    /// Devices uniform in the configured square area.
    UniformSquare,
    /// Devices uniform in a disc of this radius centred on the base station.
    PppDisc { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlacementSize {
    /// Exactly this many devices.
    Count(usize),
    /// Poisson number of devices with this intensity (devices per m²).
    Intensity(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledPlacement {
    pub placement: Placement,
    /// Poisson draws discarded for having fewer than two devices.
    pub rejections: usize,
}

fn uniform_point<R: Rng + ?Sized>(model: PlacementModel, config: &ScenarioConfig, rng: &mut R) -> Point {
    match model {
        PlacementModel::UniformSquare => {
            Point::new(rng.random::<f64>() * config.area_side, rng.random::<f64>() * config.area_side)
        }
        PlacementModel::PppDisc { radius } => {
            let r = radius * rng.random::<f64>().sqrt();
            let theta = 2.0 * PI * rng.random::<f64>();
            let bs = config.bs_position;
            Point::new(bs.x + r * theta.cos(), bs.y + r * theta.sin())
        }
    }
}

/// Draws device positions; pairwise and BS distances are floored at
/// `config.min_distance` by [`Placement`].
pub fn sample_placement<R: Rng + ?Sized>(
    model: PlacementModel,
    config: &ScenarioConfig,
    size: PlacementSize,
    rng: &mut R,
) -> Result<SampledPlacement> {
    if let PlacementModel::PppDisc { radius } = model {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("disc radius must be > 0, got {radius}")));
        }
    }
    let (count, rejections) = match size {
        PlacementSize::Count(k) => {
            if k < 1 {
                return Err(Error::invalid("device count must be >= 1"));
            }
            (k, 0)
        }
        PlacementSize::Intensity(lambda) => {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::invalid(format!("intensity must be > 0, got {lambda}")));
            }
            let area = match model {
                PlacementModel::UniformSquare => config.area_side * config.area_side,
                PlacementModel::PppDisc { radius } => PI * radius * radius,
            };
            let poisson = Poisson::new(lambda * area)
                .map_err(|e| Error::invalid(format!("poisson mean {}: {e}", lambda * area)))?;
            let mut rejections = 0;
            loop {
                let n = poisson.sample(rng) as usize;
                if n >= 2 {
                    break (n, rejections);
                }
                rejections += 1;
                if rejections >= MAX_REJECTIONS {
                    return Err(Error::invalid(format!(
                        "intensity {lambda} almost never yields two devices"
                    )));
                }
            }
        }
    };
    let devices = (0..count).map(|_| uniform_point(model, config, rng)).collect();
    Ok(SampledPlacement { placement: Placement::with_config(config, devices)?, rejections })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    DeviceCount,
    FailureProb,
    Lambda,
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepVariable::DeviceCount => "device_count",
            SweepVariable::FailureProb => "failure_prob",
            SweepVariable::Lambda => "lambda",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementKind {
    UniformSquare,
    PppDisc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Star,
    Greedy,
    Aco,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Star => "star",
            Scheme::Greedy => "greedy",
            Scheme::Aco => "aco",
        })
    }
}

fn default_replications() -> usize {
    50
}

fn default_schemes() -> Vec<Scheme> {
    vec![Scheme::Star, Scheme::Greedy, Scheme::Aco]
}

fn default_device_count() -> usize {
    50
}

fn default_disc_radius() -> f64 {
    200.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub placement_model: PlacementKind,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub base_seed: u64,
    /// Devices per round when the swept variable is not the device count.
    #[serde(default = "default_device_count")]
    pub device_count: usize,
    /// Radius of the `ppp_disc` model, meters.
    #[serde(default = "default_disc_radius")]
    pub disc_radius: f64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("sweep values must not be empty"));
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("sweep values must be strictly increasing"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("replications must be >= 1"));
        }
        if self.schemes.is_empty() {
            return Err(Error::invalid("at least one scheme is required"));
        }
        if self.device_count < 2 {
            return Err(Error::invalid("device_count must be >= 2"));
        }
        if !(self.disc_radius > 0.0 && self.disc_radius.is_finite()) {
            return Err(Error::invalid("disc_radius must be > 0"));
        }
        for &v in &self.values {
            let ok = match self.variable {
                SweepVariable::DeviceCount => v >= 2.0 && v.fract() == 0.0,
                SweepVariable::FailureProb => (0.0..=1.0).contains(&v),
                SweepVariable::Lambda => v > 0.0 && v.is_finite(),
            };
            if !ok {
                return Err(Error::invalid(format!("{v} is not a valid {} value", self.variable)));
            }
        }
        Ok(())
    }

    pub fn placement_model(&self) -> PlacementModel {
        match self.placement_model {
            PlacementKind::UniformSquare => PlacementModel::UniformSquare,
            PlacementKind::PppDisc => PlacementModel::PppDisc { radius: self.disc_radius },
        }
    }

    fn unique_schemes(&self) -> Vec<Scheme> {
        let mut s = self.schemes.clone();
        s.sort();
        s.dedup();
        s
    }
}

/// One scheme's timing in one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub scheme: Scheme,
    pub value_index: usize,
    pub sweep_value: f64,
    pub replication: usize,
    pub device_count: usize,
    pub t_sr: f64,
    pub t_ag: f64,
    pub t_total: f64,
    pub failures_total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub sweep_value: f64,
    pub replications: usize,
    pub mean_t_total: f64,
    pub std_t_total: f64,
    pub mean_t_sr: f64,
    pub mean_t_ag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    /// Ordered by value index, replication, then scheme.
    pub records: Vec<SweepRecord>,
    /// Ordered by scheme, then value.
    pub summary: Vec<SummaryRow>,
    pub ppp_rejections: usize,
}

impl SweepResult {
    /// Mean total times of `scheme`, one per sweep value.
    pub fn means(&self, scheme: Scheme) -> Vec<f64> {
        self.summary.iter().filter(|r| r.scheme == scheme).map(|r| r.mean_t_total).collect()
    }

    pub fn records_for(&self, scheme: Scheme) -> impl Iterator<Item = &SweepRecord> + '_ {
        self.records.iter().filter(move |r| r.scheme == scheme)
    }

    pub fn schemes(&self) -> Vec<Scheme> {
        let mut s: Vec<Scheme> = self.summary.iter().map(|r| r.scheme).collect();
        s.dedup();
        s
    }
}

/// Sample mean and (n - 1) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct Replication<'a> {
    spec: &'a SweepSpec,
    config: &'a ScenarioConfig,
    aco: &'a AcoParams,
    schemes: &'a [Scheme],
}

impl Replication<'_> {
    fn run(&self, value_index: usize, replication: usize) -> Result<(Vec<SweepRecord>, usize)> {
        let spec = self.spec;
        let value = spec.values[value_index];
        // failure sweeps share placement and failure draws across probabilities
        let seed = match spec.variable {
            SweepVariable::FailureProb => derive_seed(spec.base_seed, &[u64::MAX, replication as u64]),
            _ => derive_seed(spec.base_seed, &[value_index as u64, replication as u64]),
        };
        let (size, failure_prob) = match spec.variable {
            SweepVariable::DeviceCount => (PlacementSize::Count(value as usize), self.config.failure_prob),
            SweepVariable::Lambda => (PlacementSize::Intensity(value), self.config.failure_prob),
            SweepVariable::FailureProb => (PlacementSize::Count(spec.device_count), value),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
        let sampled = sample_placement(spec.placement_model(), self.config, size, &mut rng)?;
        let placement = &sampled.placement;
        let k = placement.device_count();
        let failures = if failure_prob > 0.0 {
            FailureSchedule::Bernoulli { p: failure_prob, seed: derive_seed(seed, &[1]) }
        } else {
            FailureSchedule::none()
        };

        let mut out = Vec::with_capacity(self.schemes.len());
        for &scheme in self.schemes {
            let (timing, failures_total) = match scheme {
                Scheme::Star => (t_star(placement, self.config)?, 0),
                Scheme::Greedy => {
                    let ring = greedy_ring(placement, self.config)?;
                    self.mrar(placement, &ring, &failures)?
                }
                Scheme::Aco => {
                    let params = AcoParams {
                        rng_seed: derive_seed(seed, &[2, self.aco.rng_seed]),
                        ..self.aco.clone()
                    };
                    let ring = optimize_ring(placement, self.config, &params)?.ring;
                    self.mrar(placement, &ring, &failures)?
                }
            };
            out.push(SweepRecord {
                scheme,
                value_index,
                sweep_value: value,
                replication,
                device_count: k,
                t_sr: timing.t_sr,
                t_ag: timing.t_ag,
                t_total: timing.t_total,
                failures_total,
            });
        }
        Ok((out, sampled.rejections))
    }

    fn mrar(
        &self,
        placement: &Placement,
        ring: &RingTopology,
        failures: &FailureSchedule,
    ) -> Result<(RoundTiming, u64)> {
        let k = placement.device_count();
        let counts = if matches!(failures, FailureSchedule::Events(e) if e.is_empty()) {
            vec![0; k]
        } else {
            // unit parameters are enough to drive the failure bookkeeping
            let params = ParameterSet::new(vec![vec![1.0; k]; k], vec![1; k])?;
            run_scatter_reduce(&params, ring, failures)?.failure_counts
        };
        let total = counts.iter().map(|&c| u64::from(c)).sum();
        Ok((t_mrar(placement, self.config, ring, &counts)?, total))
    }
}

/// Runs every `(value, replication)` pair; results do not depend on thread count.
pub fn run_sweep(spec: &SweepSpec, config: &ScenarioConfig, aco: &AcoParams) -> Result<SweepResult> {
    spec.validate()?;
    config.validate()?;
    aco.validate()?;
    let schemes = spec.unique_schemes();
    let job = Replication { spec, config, aco, schemes: &schemes };
    let tasks: Vec<(usize, usize)> = (0..spec.values.len())
        .flat_map(|v| (0..spec.replications).map(move |r| (v, r)))
        .collect();
    let results: Vec<(Vec<SweepRecord>, usize)> = tasks
        .par_iter()
        .map(|&(v, r)| {
            job.run(v, r).map_err(|e| Error::Scenario {
                value_index: v,
                replication: r,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(results.len() * schemes.len());
    let mut ppp_rejections = 0;
    for (recs, rej) in results {
        records.extend(recs);
        ppp_rejections += rej;
    }
    let summary = summarize(&records, &schemes, &spec.values);
    Ok(SweepResult { variable: spec.variable, values: spec.values.clone(), records, summary, ppp_rejections })
}

fn summarize(records: &[SweepRecord], schemes: &[Scheme], values: &[f64]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &scheme in schemes {
        for (vi, &value) in values.iter().enumerate() {
            let sel: Vec<&SweepRecord> =
                records.iter().filter(|r| r.scheme == scheme && r.value_index == vi).collect();
            let totals: Vec<f64> = sel.iter().map(|r| r.t_total).collect();
            let (mean, std) = mean_std(&totals);
            let n = sel.len() as f64;
            rows.push(SummaryRow {
                scheme,
                sweep_value: value,
                replications: sel.len(),
                mean_t_total: mean,
                std_t_total: std,
                mean_t_sr: sel.iter().map(|r| r.t_sr).sum::<f64>() / n,
                mean_t_ag: sel.iter().map(|r| r.t_ag).sum::<f64>() / n,
            });
        }
    }
    rows
}

#[derive(Serialize)]
struct RawCsvRow<'a> {
    scheme: Scheme,
    sweep_variable: &'a str,
    sweep_value: f64,
    replication: usize,
    t_sr_seconds: f64,
    t_ag_seconds: f64,
    t_total_seconds: f64,
    failures_total: u64,
}

#[derive(Serialize)]
struct SummaryCsvRow<'a> {
    scheme: Scheme,
    sweep_variable: &'a str,
    sweep_value: f64,
    replications: usize,
    mean_t_total_seconds: f64,
    std_t_total_seconds: f64,
    mean_t_sr_seconds: f64,
    mean_t_ag_seconds: f64,
}

/// One row per (scheme, value, replication).
pub fn write_raw_csv<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let var = result.variable.to_string();
    let mut w = csv::Writer::from_writer(out);
    for r in &result.records {
        w.serialize(RawCsvRow {
            scheme: r.scheme,
            sweep_variable: &var,
            sweep_value: r.sweep_value,
            replication: r.replication,
            t_sr_seconds: r.t_sr,
            t_ag_seconds: r.t_ag,
            t_total_seconds: r.t_total,
            failures_total: r.failures_total,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// One row per (scheme, value) with mean and standard deviation.
pub fn write_summary_csv<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let var = result.variable.to_string();
    let mut w = csv::Writer::from_writer(out);
    for r in &result.summary {
        w.serialize(SummaryCsvRow {
            scheme: r.scheme,
            sweep_variable: &var,
            sweep_value: r.sweep_value,
            replications: r.replications,
            mean_t_total_seconds: r.mean_t_total,
            std_t_total_seconds: r.std_t_total,
            mean_t_sr_seconds: r.mean_t_sr,
            mean_t_ag_seconds: r.mean_t_ag,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("line fit needs two or more paired points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("x values are all equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LineFit { slope, intercept, r_squared })
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::invalid("log-log fit needs three or more paired points"));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("log-log fit needs positive finite data"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    Ok(fit_line(&lx, &ly)?.slope)
}
