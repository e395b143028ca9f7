//! MRAR on explicit parameter vectors.
//!
//! Devices are renumbered by ring position (position 1 is device 1, then
//! along `r(·)`). Each device splits its weighted model into `K` chunks; at
//! scatter-reduce step `n` position `k` sends its running sum for chunk
//! `k - n + 1` to position `k + 1`, which adds its own share of that chunk.
//! After `K - 1` steps position `k` holds chunk `k + 1` (indices wrap into
//! `1..=K`) summed over every device.
//!
//! A failed hop sends the in-flight partial sum to the recovery queue (it is
//! uploaded to the base station during all-gather) and the receiver restarts
//! the chain from its own contribution. Every chunk's contributors therefore
//! stay partitioned between the final holder and recovery uploads, and the
//! base station can splice an exact result.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radio::{Placement, ScenarioConfig};
use crate::timing::{t_mrar, RoundTiming};
use crate::topology::{validate_ring, RingTopology};

/// Per-device model vectors `w_k` with local dataset sizes `|D_k|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    vectors: Vec<Vec<f64>>,
    data_sizes: Vec<u64>,
}

impl ParameterSet {
    pub fn new(vectors: Vec<Vec<f64>>, data_sizes: Vec<u64>) -> Result<Self> {
        let k = vectors.len();
        if k == 0 {
            return Err(Error::invalid("at least one device is required"));
        }
        if data_sizes.len() != k {
            return Err(Error::invalid(format!("{k} vectors but {} data sizes", data_sizes.len())));
        }
        let len = vectors[0].len();
        if vectors.iter().any(|v| v.len() != len) {
            return Err(Error::invalid("all parameter vectors must have the same length"));
        }
        if len < k {
            return Err(Error::invalid(format!("vector length {len} is shorter than K = {k}")));
        }
        if data_sizes.contains(&0) {
            return Err(Error::invalid("data sizes must be >= 1"));
        }
        Ok(ParameterSet { vectors, data_sizes })
    }

    /// Uniform weights in `[-1, 1)` and data sizes in `1..=1000`.
    pub fn random<R: Rng + ?Sized>(k: usize, len: usize, rng: &mut R) -> Result<Self> {
        let vectors = (0..k)
            .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let data_sizes = (0..k).map(|_| rng.random_range(1..=1000)).collect();
        ParameterSet::new(vectors, data_sizes)
    }

    pub fn device_count(&self) -> usize {
        self.vectors.len()
    }

    pub fn vector_len(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn total_data(&self) -> u64 {
        self.data_sizes.iter().sum()
    }

    /// `|D_k| / |D|` for device `k` in `1..=K`.
    pub fn weight(&self, k: usize) -> f64 {
        self.data_sizes[k - 1] as f64 / self.total_data() as f64
    }

    /// `(|D_k| / |D|) w_k`.
    pub fn weighted(&self, k: usize) -> Vec<f64> {
        let w = self.weight(k);
        self.vectors[k - 1].iter().map(|x| w * x).collect()
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k - 1]
    }

    /// Element range of chunk `j` (1-based): the first `L mod K` chunks are one longer.
    pub fn chunk_range(&self, j: usize) -> std::ops::Range<usize> {
        let (len, k) = (self.vector_len(), self.device_count());
        let (base, extra) = (len / k, len % k);
        let start = (j - 1) * base + (j - 1).min(extra);
        let size = base + usize::from(j <= extra);
        start..start + size
    }
}

/// A (partial) sum of one chunk index, with the devices folded into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkState {
    /// Device currently holding (or, in the recovery queue, uploading) the chunk.
    pub owner: usize,
    /// Chunk index in `1..=K`.
    pub chunk_index: usize,
    pub payload: Vec<f64>,
    pub contributors: BTreeSet<usize>,
}

/// Splits device `k`'s weighted model into `K` chunks, each contributed by `k` alone.
pub fn chunk_split(params: &ParameterSet, k: usize) -> Result<Vec<ChunkState>> {
    let n = params.device_count();
    if k == 0 || k > n {
        return Err(Error::IndexOutOfRange { index: k, max: n });
    }
    let weighted = params.weighted(k);
    Ok((1..=n)
        .map(|j| ChunkState {
            owner: k,
            chunk_index: j,
            payload: weighted[params.chunk_range(j)].to_vec(),
            contributors: BTreeSet::from([k]),
        })
        .collect())
}

/// Which scatter-reduce transmissions fail. Events are `(step, transmitter)`
/// with `step` in `1..K` and `transmitter` a device id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum FailureSchedule {
    Events(Vec<(usize, usize)>),
    Bernoulli { p: f64, seed: u64 },
}

impl Default for FailureSchedule {
    fn default() -> Self {
        FailureSchedule::Events(Vec::new())
    }
}

impl FailureSchedule {
    pub fn none() -> Self {
        FailureSchedule::default()
    }

    /// Concrete failed `(step, transmitter)` pairs for a `k`-device ring.
    /// Bernoulli draws run over steps, then transmitters, in ascending order.
    pub fn resolve(&self, k: usize) -> Result<BTreeSet<(usize, usize)>> {
        match self {
            FailureSchedule::Events(events) => {
                for &(step, tx) in events {
                    if step == 0 || step >= k {
                        return Err(Error::invalid(format!("failure step {step} outside 1..{k}")));
                    }
                    if tx == 0 || tx > k {
                        return Err(Error::invalid(format!("failure transmitter {tx} outside 1..={k}")));
                    }
                }
                Ok(events.iter().copied().collect())
            }
            &FailureSchedule::Bernoulli { p, seed } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::invalid(format!("failure probability {p} outside [0, 1]")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut out = BTreeSet::new();
                for step in 1..k {
                    for tx in 1..=k {
                        if rng.random::<f64>() < p {
                            out.insert((step, tx));
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterOutput {
    /// Final running chunk of each device, indexed by `device - 1`.
    pub held: Vec<ChunkState>,
    /// Partial sums stranded by failed hops, in failure order.
    pub recovery_queue: Vec<ChunkState>,
    /// `I_k`, indexed by `device - 1`.
    pub failure_counts: Vec<u32>,
}

fn wrap(x: isize, k: usize) -> usize {
    (x - 1).rem_euclid(k as isize) as usize + 1
}

/// Runs the `K - 1` scatter-reduce steps.
pub fn run_scatter_reduce(
    params: &ParameterSet,
    ring: &RingTopology,
    failures: &FailureSchedule,
) -> Result<ScatterOutput> {
    run_scatter_reduce_observed(params, ring, failures, |_, _, _| {})
}

/// As [`run_scatter_reduce`], calling `observe(step, running, recovery)` after
/// every step, with `running` ordered by ring position.
pub fn run_scatter_reduce_observed<F>(
    params: &ParameterSet,
    ring: &RingTopology,
    failures: &FailureSchedule,
    mut observe: F,
) -> Result<ScatterOutput>
where
    F: FnMut(usize, &[ChunkState], &[ChunkState]),
{
    let k = params.device_count();
    if !validate_ring(ring, k) {
        return Err(Error::invalid(format!("ring {:?} is not valid for {k} devices", ring.next_slice())));
    }
    let failed = failures.resolve(k)?;
    let order = ring.order();
    let chunks: Vec<Vec<ChunkState>> =
        (1..=k).map(|d| chunk_split(params, d)).collect::<Result<_>>()?;
    let own = |device: usize, j: usize| chunks[device - 1][j - 1].clone();

    // running[p - 1]: what position p sends next; initially its own chunk p
    let mut running: Vec<ChunkState> = (1..=k).map(|p| own(order[p - 1], p)).collect();
    let mut recovery_queue = Vec::new();
    let mut failure_counts = vec![0u32; k];

    for step in 1..k {
        let mut next_running = Vec::with_capacity(k);
        for q in 1..=k {
            let receiver = order[q - 1];
            let p = if q == 1 { k } else { q - 1 };
            let sender = order[p - 1];
            let j = wrap(q as isize - step as isize, k);
            let incoming = &running[p - 1];
            debug_assert_eq!(incoming.chunk_index, j);
            let mut state = own(receiver, j);
            if failed.contains(&(step, sender)) {
                recovery_queue.push(incoming.clone());
                failure_counts[sender - 1] += 1;
            } else {
                for (acc, x) in state.payload.iter_mut().zip(&incoming.payload) {
                    *acc += x;
                }
                state.contributors.extend(incoming.contributors.iter().copied());
            }
            next_running.push(state);
        }
        running = next_running;
        observe(step, &running, &recovery_queue);
    }

    let mut held: Vec<Option<ChunkState>> = vec![None; k];
    for (pos, state) in running.into_iter().enumerate() {
        held[order[pos] - 1] = Some(state);
    }
    Ok(ScatterOutput {
        held: held.into_iter().map(|s| s.expect("every device holds a chunk")).collect(),
        recovery_queue,
        failure_counts,
    })
}

/// Base-station side of all-gather: splices final chunks and folds in
/// recovery uploads. A payload is used only when none of its contributors
/// has been counted for that chunk yet, so no device is ever counted twice.
pub fn run_all_gather(
    scatter: &ScatterOutput,
    ring: &RingTopology,
    params: &ParameterSet,
) -> Result<Vec<f64>> {
    let k = params.device_count();
    if ring.device_count() != k || scatter.held.len() != k {
        return Err(Error::invalid("scatter output, ring and parameters disagree on K"));
    }
    let mut out = vec![0.0; params.vector_len()];
    for j in 1..=k {
        let range = params.chunk_range(j);
        let mut covered = BTreeSet::new();
        let mut sum = vec![0.0; range.len()];
        let uploads = scatter.held.iter().chain(&scatter.recovery_queue).filter(|c| c.chunk_index == j);
        for chunk in uploads {
            if chunk.payload.len() != range.len() {
                return Err(Error::invalid(format!("chunk {j} payload has the wrong length")));
            }
            if chunk.contributors.is_disjoint(&covered) {
                for (acc, x) in sum.iter_mut().zip(&chunk.payload) {
                    *acc += x;
                }
                covered.extend(chunk.contributors.iter().copied());
            }
        }
        if covered.len() != k {
            let missing = (1..=k).filter(|d| !covered.contains(d)).collect();
            return Err(Error::IncompleteAggregation { chunk: j, missing });
        }
        out[range].copy_from_slice(&sum);
    }
    Ok(out)
}

/// Centralised weighted average `Σ_k (|D_k|/|D|) w_k`, summed in device order.
pub fn aggregate_oracle(params: &ParameterSet) -> Vec<f64> {
    let mut out = vec![0.0; params.vector_len()];
    for k in 1..=params.device_count() {
        for (acc, x) in out.iter_mut().zip(params.weighted(k)) {
            *acc += x;
        }
    }
    out
}

/// `max |a - b| / max |b|` (infinity-norm relative error).
pub fn max_relative_error(actual: &[f64], expected: &[f64]) -> f64 {
    let scale = expected.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = actual.iter().zip(expected).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Outcome of one simulated MRAR round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub device_count: usize,
    pub vector_len: usize,
    pub ring: RingTopology,
    pub failed_transmissions: Vec<(usize, usize)>,
    pub failure_counts: Vec<u32>,
    pub recovery_chunks: usize,
    pub max_relative_error: f64,
    pub timing: Option<RoundTiming>,
    pub aggregated: Vec<f64>,
}

/// Scatter-reduce, all-gather and oracle comparison in one go; when a
/// placement is given the round is also timed.
pub fn run_round(
    params: &ParameterSet,
    ring: &RingTopology,
    failures: &FailureSchedule,
    radio: Option<(&Placement, &ScenarioConfig)>,
) -> Result<RoundReport> {
    let k = params.device_count();
    let scatter = run_scatter_reduce(params, ring, failures)?;
    let aggregated = run_all_gather(&scatter, ring, params)?;
    let oracle = aggregate_oracle(params);
    let timing = match radio {
        Some((placement, config)) => Some(t_mrar(placement, config, ring, &scatter.failure_counts)?),
        None => None,
    };
    Ok(RoundReport {
        device_count: k,
        vector_len: params.vector_len(),
        ring: ring.clone(),
        failed_transmissions: failures.resolve(k)?.into_iter().collect(),
        failure_counts: scatter.failure_counts.clone(),
        recovery_chunks: scatter.recovery_queue.len(),
        max_relative_error: max_relative_error(&aggregated, &oracle),
        timing,
        aggregated,
    })
}
