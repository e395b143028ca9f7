//! Ant colony search for the ring with the shortest scatter-reduce time.
//!
//! Ants pick successors with probability `∝ h^β R^γ`, where `R` is the
//! link's spectral efficiency (rate at unit bandwidth). After each iteration
//! every traversed edge gains `1/T_SR` of each ant that used it, all edges
//! decay by `ρ`, and the best-so-far ring's edges receive an extra
//! `(1 - ρ)/T*`. The best ring starts as the greedy ring, so the search
//! never returns anything slower than the greedy baseline.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radio::{unit_rate_matrix, Placement, ScenarioConfig};
use crate::timing::t_scatter_reduce;
use crate::topology::{greedy_ring, validate_ring, RingTopology};

/// Relative margin an ant's ring must beat the incumbent by to replace it.
/// Keeps float reordering (e.g. the reversed ring) from counting as progress.
const IMPROVEMENT_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcoParams {
    /// Pheromone exponent.
    pub beta: f64,
    /// Rate exponent.
    pub gamma: f64,
    /// Persistence factor.
    pub rho: f64,
    pub ants_per_device: usize,
    pub max_iterations: usize,
    pub rng_seed: u64,
}

impl Default for AcoParams {
    fn default() -> Self {
        AcoParams {
            beta: 2.0,
            gamma: 2.0,
            rho: 0.8,
            ants_per_device: 10,
            max_iterations: 30,
            rng_seed: 0,
        }
    }
}

impl AcoParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta must be finite and >= 0"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma must be finite and >= 0"));
        }
        // rho = 0 would wipe every edge outside the best ring to zero
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::invalid(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if self.ants_per_device == 0 || self.max_iterations == 0 {
            return Err(Error::invalid("ants_per_device and max_iterations must be >= 1"));
        }
        Ok(())
    }
}

/// Dense `K x K` matrix addressed by device ids `1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    k: usize,
    values: Vec<f64>,
}

impl SquareMatrix {
    pub fn filled(k: usize, value: f64) -> Self {
        SquareMatrix { k, values: vec![value; k * k] }
    }

    /// Builds from row-major values where index `(i-1) * K + (j-1)` holds `(i, j)`.
    pub fn from_row_major(k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != k * k {
            return Err(Error::invalid(format!("expected {} entries, got {}", k * k, values.len())));
        }
        Ok(SquareMatrix { k, values })
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i - 1) * self.k + (j - 1)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[(i - 1) * self.k + (j - 1)] = v;
    }

    /// Smallest off-diagonal entry.
    pub fn min_off_diagonal(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i in 1..=self.k {
            for j in 1..=self.k {
                if i != j {
                    m = m.min(self.get(i, j));
                }
            }
        }
        m
    }
}

pub type PheromoneMatrix = SquareMatrix;

/// Spectral efficiency `log2(1 + SNR)` of every device pair.
pub type RateMatrix = SquareMatrix;

impl SquareMatrix {
    pub fn pheromone(k: usize) -> PheromoneMatrix {
        SquareMatrix::filled(k, 1.0)
    }

    pub fn unit_rates(placement: &Placement, config: &ScenarioConfig) -> RateMatrix {
        SquareMatrix {
            k: placement.device_count(),
            values: unit_rate_matrix(placement, config),
        }
    }
}

fn log_weight(h: f64, r: f64, params: &AcoParams) -> f64 {
    let term = |exp: f64, base: f64| if exp == 0.0 { 0.0 } else { exp * base.ln() };
    term(params.beta, h) + term(params.gamma, r)
}

/// Probability of moving from `current` to each device in `unvisited`,
/// proportional to `h^β R^γ`. Falls back to uniform when every weight vanishes.
pub fn transition_probabilities(
    pheromone: &PheromoneMatrix,
    rates: &RateMatrix,
    current: usize,
    unvisited: &[usize],
    params: &AcoParams,
) -> Result<Vec<f64>> {
    if unvisited.is_empty() {
        return Err(Error::invalid("no unvisited device to move to"));
    }
    if unvisited.contains(&current) {
        return Err(Error::invalid(format!("current device {current} is marked unvisited")));
    }
    let logs: Vec<f64> = unvisited
        .iter()
        .map(|&j| log_weight(pheromone.get(current, j), rates.get(current, j), params))
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|&l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Ok(vec![1.0 / unvisited.len() as f64; unvisited.len()]);
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    // rounding left target at the very top; take the last positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Edge weights `h^β R^γ` scaled per row by the row maximum.
struct WeightTable {
    k: usize,
    values: Vec<f64>,
}

impl WeightTable {
    fn new(pheromone: &PheromoneMatrix, rates: &RateMatrix, params: &AcoParams) -> Self {
        let k = pheromone.size();
        let mut values = vec![0.0; k * k];
        for i in 1..=k {
            let row = &mut values[(i - 1) * k..i * k];
            let mut top = f64::NEG_INFINITY;
            for j in 1..=k {
                if i != j {
                    let l = log_weight(pheromone.get(i, j), rates.get(i, j), params);
                    row[j - 1] = l;
                    top = top.max(l);
                }
            }
            for j in 1..=k {
                row[j - 1] = if i == j { 0.0 } else { (row[j - 1] - top).exp() };
            }
        }
        WeightTable { k, values }
    }
}

fn construct_with_table<R: Rng + ?Sized>(
    table: &WeightTable,
    pheromone: &PheromoneMatrix,
    rates: &RateMatrix,
    start: usize,
    params: &AcoParams,
    rng: &mut R,
) -> Result<RingTopology> {
    let k = table.k;
    let mut unvisited: Vec<usize> = (1..=k).filter(|&d| d != start).collect();
    let mut order = Vec::with_capacity(k);
    order.push(start);
    let mut current = start;
    let mut weights = Vec::with_capacity(k);
    while !unvisited.is_empty() {
        weights.clear();
        let row = &table.values[(current - 1) * k..current * k];
        weights.extend(unvisited.iter().map(|&j| row[j - 1]));
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            sample_index(&weights, total, rng)
        } else {
            // row scaling underflowed for this subset: renormalise exactly
            let probs = transition_probabilities(pheromone, rates, current, &unvisited, params)?;
            sample_index(&probs, 1.0, rng)
        };
        current = unvisited.remove(pick);
        order.push(current);
    }
    RingTopology::from_order(&order)
}

/// Builds one ant's ring from `start`, sampling each hop from
/// [`transition_probabilities`].
pub fn construct_tour<R: Rng + ?Sized>(
    pheromone: &PheromoneMatrix,
    rates: &RateMatrix,
    start: usize,
    params: &AcoParams,
    rng: &mut R,
) -> Result<RingTopology> {
    let k = pheromone.size();
    if k < 2 || rates.size() != k {
        return Err(Error::invalid("tour construction needs K >= 2 and matching matrices"));
    }
    if start == 0 || start > k {
        return Err(Error::IndexOutOfRange { index: start, max: k });
    }
    let table = WeightTable::new(pheromone, rates, params);
    construct_with_table(&table, pheromone, rates, start, params, rng)
}

/// Applies one iteration's deposits and decay. `tours` pairs each ant's ring
/// with its scatter-reduce time.
pub fn update_pheromone(
    pheromone: &PheromoneMatrix,
    tours: &[(RingTopology, f64)],
    best_ring: &RingTopology,
    best_time: f64,
    params: &AcoParams,
) -> Result<PheromoneMatrix> {
    if !(best_time > 0.0 && best_time.is_finite()) {
        return Err(Error::invalid(format!("best time must be > 0, got {best_time}")));
    }
    let k = pheromone.size();
    let mut deposit = SquareMatrix::filled(k, 0.0);
    for (ring, t) in tours {
        if !(*t > 0.0 && t.is_finite()) {
            return Err(Error::invalid(format!("tour time must be > 0, got {t}")));
        }
        if ring.device_count() != k {
            return Err(Error::invalid("tour size does not match the pheromone matrix"));
        }
        for (i, j) in ring.edges() {
            deposit.set(i, j, deposit.get(i, j) + 1.0 / t);
        }
    }
    let mut out = pheromone.clone();
    for i in 1..=k {
        for j in 1..=k {
            if i != j {
                out.set(i, j, params.rho * (pheromone.get(i, j) + deposit.get(i, j)));
            }
        }
    }
    let elite = (1.0 - params.rho) / best_time;
    for (i, j) in best_ring.edges() {
        out.set(i, j, out.get(i, j) + elite);
    }
    Ok(out)
}

/// Scatter-reduce time under the equal-time split, from inverse efficiencies:
/// `(K-1)/K * (M/B) * Σ_links 1/log2(1+SNR)`.
fn ring_time(inverse: &[f64], k: usize, scale: f64, ring: &RingTopology) -> f64 {
    scale * ring.edges().map(|(i, j)| inverse[(i - 1) * k + (j - 1)]).sum::<f64>()
}

fn ant_rng(seed: u64, iteration: usize, ant: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 32) | ant as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcoOutcome {
    pub ring: RingTopology,
    /// Scatter-reduce time of `ring`, seconds.
    pub t_sr: f64,
    pub greedy_ring: RingTopology,
    pub greedy_t_sr: f64,
    /// Best T_SR after each iteration; entry 0 is the greedy warm start.
    pub trace: Vec<f64>,
}

impl AcoOutcome {
    /// Relative improvement over the greedy ring, in percent.
    pub fn improvement_percent(&self) -> f64 {
        100.0 * (self.greedy_t_sr - self.t_sr) / self.greedy_t_sr
    }
}

/// Runs the colony: `a * K` ants per iteration for `t` iterations.
pub fn optimize_ring(
    placement: &Placement,
    config: &ScenarioConfig,
    params: &AcoParams,
) -> Result<AcoOutcome> {
    params.validate()?;
    let k = placement.device_count();
    let greedy = greedy_ring(placement, config)?;
    let (greedy_t_sr, _) = t_scatter_reduce(placement, config, &greedy)?;
    if k == 2 {
        return Ok(AcoOutcome {
            ring: greedy.clone(),
            t_sr: greedy_t_sr,
            greedy_ring: greedy,
            greedy_t_sr,
            trace: vec![greedy_t_sr],
        });
    }

    let rates = SquareMatrix::unit_rates(placement, config);
    if let Some((i, j)) = (1..=k)
        .flat_map(|i| (1..=k).map(move |j| (i, j)))
        .find(|&(i, j)| i != j && !(rates.get(i, j) > 0.0))
    {
        return Err(Error::Infeasible { transmitter: i, receiver: j });
    }
    let inverse: Vec<f64> = rates.values.iter().map(|&r| if r > 0.0 { 1.0 / r } else { 0.0 }).collect();
    let scale = (k as f64 - 1.0) / k as f64 * config.model_size / config.total_bandwidth;

    let mut pheromone = SquareMatrix::pheromone(k);
    let mut best = greedy.clone();
    let mut best_time = ring_time(&inverse, k, scale, &best);
    let mut trace = Vec::with_capacity(params.max_iterations + 1);
    trace.push(greedy_t_sr);
    let ants = params.ants_per_device * k;

    for iteration in 0..params.max_iterations {
        let table = WeightTable::new(&pheromone, &rates, params);
        let tours: Vec<(RingTopology, f64)> = (0..ants)
            .into_par_iter()
            .map(|ant| {
                let start = ant / params.ants_per_device + 1;
                let mut rng = ant_rng(params.rng_seed, iteration, ant);
                let ring = construct_with_table(&table, &pheromone, &rates, start, params, &mut rng)?;
                let t = ring_time(&inverse, k, scale, &ring);
                Ok((ring, t))
            })
            .collect::<Result<_>>()?;
        for (ring, t) in &tours {
            if *t < best_time * (1.0 - IMPROVEMENT_MARGIN) {
                best = ring.clone();
                best_time = *t;
            }
        }
        pheromone = update_pheromone(&pheromone, &tours, &best, best_time, params)?;
        trace.push(if best == greedy { greedy_t_sr } else { t_scatter_reduce(placement, config, &best)?.0 });
    }
    debug_assert!(validate_ring(&best, k));
    let t_sr = *trace.last().expect("trace is non-empty");
    Ok(AcoOutcome { ring: best, t_sr, greedy_ring: greedy, greedy_t_sr, trace })
}

/// CSV with columns `iteration,best_t_sr_seconds`.
pub fn write_trace_csv<W: Write>(trace: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "best_t_sr_seconds"])?;
    for (i, t) in trace.iter().enumerate() {
        w.serialize((i, t))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::Point;

    fn uniform_params() -> AcoParams {
        AcoParams::default()
    }

    #[test]
    fn symmetric_choice_is_even() {
        let h = SquareMatrix::pheromone(3);
        let r = SquareMatrix::filled(3, 5.0);
        let p = transition_probabilities(&h, &r, 1, &[2, 3], &uniform_params()).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn forced_move() {
        let h = SquareMatrix::pheromone(3);
        let r = SquareMatrix::filled(3, 5.0);
        let p = transition_probabilities(&h, &r, 1, &[3], &uniform_params()).unwrap();
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn hand_evaluated_weights() {
        let mut h = SquareMatrix::pheromone(3);
        h.set(1, 3, 2.0);
        let mut r = SquareMatrix::filled(3, 1.0);
        r.set(1, 2, 4.0);
        let p = transition_probabilities(&h, &r, 1, &[2, 3], &uniform_params()).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-12 && (p[1] - 0.2).abs() < 1e-12, "{p:?}");
    }

    #[test]
    fn zero_rates_fall_back_to_uniform() {
        let h = SquareMatrix::pheromone(4);
        let r = SquareMatrix::filled(4, 0.0);
        let p = transition_probabilities(&h, &r, 1, &[2, 3, 4], &uniform_params()).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn transition_preconditions() {
        let h = SquareMatrix::pheromone(3);
        let r = SquareMatrix::filled(3, 1.0);
        assert!(transition_probabilities(&h, &r, 1, &[], &uniform_params()).is_err());
        assert!(transition_probabilities(&h, &r, 1, &[1, 2], &uniform_params()).is_err());
    }

    #[test]
    fn pure_decay_off_the_best_ring() {
        let h = SquareMatrix::pheromone(3);
        let best = RingTopology::from_order(&[1, 2, 3]).unwrap();
        let out = update_pheromone(&h, &[], &best, 1.0, &uniform_params()).unwrap();
        assert!((out.get(1, 3) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn single_deposit() {
        let h = SquareMatrix::pheromone(3);
        let best = RingTopology::from_order(&[1, 2, 3]).unwrap();
        let ant = RingTopology::from_order(&[1, 3, 2]).unwrap();
        let out = update_pheromone(&h, &[(ant, 2.0)], &best, 1.0, &uniform_params()).unwrap();
        assert!((out.get(1, 3) - 1.2).abs() < 1e-15);
    }

    #[test]
    fn elite_term_on_best_edges() {
        let h = SquareMatrix::pheromone(3);
        let best = RingTopology::from_order(&[1, 2, 3]).unwrap();
        let out = update_pheromone(&h, &[], &best, 1.0, &uniform_params()).unwrap();
        assert!((out.get(1, 2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn update_rejects_nonpositive_times() {
        let h = SquareMatrix::pheromone(3);
        let best = RingTopology::from_order(&[1, 2, 3]).unwrap();
        assert!(update_pheromone(&h, &[], &best, 0.0, &uniform_params()).is_err());
        assert!(update_pheromone(&h, &[(best.clone(), -1.0)], &best, 1.0, &uniform_params()).is_err());
    }

    #[test]
    fn two_device_tour_is_forced() {
        let h = SquareMatrix::pheromone(2);
        let r = SquareMatrix::filled(2, 3.0);
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ring = construct_tour(&h, &r, 2, &uniform_params(), &mut rng).unwrap();
            assert_eq!(ring.next_slice(), &[2, 1]);
        }
    }

    #[test]
    fn params_validation() {
        assert!(AcoParams::default().validate().is_ok());
        assert!(AcoParams { rho: 0.0, ..AcoParams::default() }.validate().is_err());
        assert!(AcoParams { rho: 1.5, ..AcoParams::default() }.validate().is_err());
        assert!(AcoParams { ants_per_device: 0, ..AcoParams::default() }.validate().is_err());
        assert!(AcoParams { beta: -1.0, ..AcoParams::default() }.validate().is_err());
        let p: AcoParams = serde_json::from_str(r#"{"rng_seed": 9}"#).unwrap();
        assert_eq!(p.rng_seed, 9);
        assert_eq!(p.max_iterations, 30);
        assert!(serde_json::from_str::<AcoParams>(r#"{"alpha": 1}"#).is_err());
    }

    #[test]
    fn closed_form_matches_allocated_time() {
        let c = ScenarioConfig::default();
        let devices: Vec<Point> = (0..6).map(|i| Point::new(20.0 * i as f64, (i * i) as f64 * 9.0)).collect();
        let p = Placement::with_config(&c, devices).unwrap();
        let rates = SquareMatrix::unit_rates(&p, &c);
        let inverse: Vec<f64> = rates.values.iter().map(|&r| if r > 0.0 { 1.0 / r } else { 0.0 }).collect();
        let ring = RingTopology::from_order(&[1, 4, 2, 6, 3, 5]).unwrap();
        let scale = 5.0 / 6.0 * c.model_size / c.total_bandwidth;
        let fast = ring_time(&inverse, 6, scale, &ring);
        let (slow, _) = t_scatter_reduce(&p, &c, &ring).unwrap();
        assert!((fast - slow).abs() / slow < 1e-13);
    }

    #[test]
    fn trace_csv_layout() {
        let mut buf = Vec::new();
        write_trace_csv(&[3.0, 2.5], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,best_t_sr_seconds\n0,3.0\n1,2.5\n");
    }
}
