//! Ring-topology federated aggregation over a shared wireless band.
//!
//! Devices `1..=K` each hold a parameter vector. A round either uploads every
//! vector straight to the base station (star) or runs a ring all-reduce with
//! failure recovery, whose upload order is chosen by [`aco::optimize_ring`].

pub mod aco;
pub mod aggregation;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod quadrature;
pub mod radio;
pub mod timing;
pub mod topology;

pub use aco::{optimize_ring, AcoOutcome, AcoParams, PheromoneMatrix, RateMatrix};
pub use aggregation::{
    aggregate_oracle, run_all_gather, run_round, run_scatter_reduce, ChunkState, FailureSchedule,
    ParameterSet, RoundReport, ScatterOutput,
};
pub use error::{Error, Result};
pub use experiments::{run_sweep, Scheme, SweepResult, SweepSpec, SweepVariable};
pub use radio::{allocate_bandwidth, snr, BandwidthAllocation, Link, Placement, Point, ScenarioConfig};
pub use timing::{t_mrar, t_scatter_reduce, t_star, RoundTiming};
pub use topology::{brute_force_ring, greedy_ring, validate_ring, RingTopology};
