use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use ringfl_core::aco::{construct_tour, optimize_ring, update_pheromone, AcoParams, SquareMatrix};
use ringfl_core::aggregation::{
    aggregate_oracle, max_relative_error, run_all_gather, run_scatter_reduce,
    run_scatter_reduce_observed, FailureSchedule, ParameterSet,
};
use ringfl_core::experiments::{sample_placement, PlacementModel, PlacementSize};
use ringfl_core::radio::{allocate_bandwidth, snr, spectral_efficiency, Placement, ScenarioConfig};
use ringfl_core::timing::{t_mrar, t_scatter_reduce};
use ringfl_core::topology::{brute_force_ring, greedy_ring, validate_ring, RingTopology};

fn placement(k: usize, seed: u64) -> Placement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_placement(PlacementModel::UniformSquare, &ScenarioConfig::default(), PlacementSize::Count(k), &mut rng)
        .unwrap()
        .placement
}

fn shuffled_ring(k: usize, seed: u64) -> RingTopology {
    let mut order: Vec<usize> = (1..=k).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    RingTopology::from_order(&order).unwrap()
}

fn params(k: usize, l: usize, seed: u64) -> ParameterSet {
    ParameterSet::random(k, l, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn uplinks(k: usize) -> Vec<(usize, usize)> {
    (1..=k).map(|i| (i, 0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn snr_is_symmetric(k in 1usize..12, seed: u64) {
        let p = placement(k, seed);
        let c = ScenarioConfig::default();
        for i in 0..=k {
            for j in 0..=k {
                if i != j {
                    prop_assert_eq!(snr(&p, &c, i, j).unwrap(), snr(&p, &c, j, i).unwrap());
                }
            }
        }
    }

    #[test]
    fn allocation_equalizes_and_spends_the_budget(k in 1usize..=20, seed: u64, ring_links: bool) {
        let p = placement(k.max(2), seed);
        let k = p.device_count();
        let c = ScenarioConfig::default();
        let links: Vec<(usize, usize)> = if ring_links {
            shuffled_ring(k, seed).edges().collect()
        } else {
            uplinks(k)
        };
        let a = allocate_bandwidth(&links, &p, &c).unwrap();
        prop_assert!((a.total() - c.total_bandwidth).abs() <= 1e-9 * c.total_bandwidth);
        let times: Vec<f64> = links
            .iter()
            .map(|&(tx, rx)| 1.0 / (a.get(tx).unwrap() * spectral_efficiency(snr(&p, &c, tx, rx).unwrap())))
            .collect();
        let max = times.iter().cloned().fold(f64::MIN, f64::max);
        let min = times.iter().cloned().fold(f64::MAX, f64::min);
        prop_assert!(a.per_link_bandwidth.values().all(|&b| b > 0.0));
        prop_assert!((max - min) <= 1e-6 * max);
    }

    #[test]
    fn allocation_beats_random_splits(k in 2usize..=20, seed: u64) {
        let p = placement(k, seed);
        let c = ScenarioConfig::default();
        let links = uplinks(k);
        let se: Vec<f64> = links.iter().map(|&(tx, rx)| spectral_efficiency(snr(&p, &c, tx, rx).unwrap())).collect();
        let a = allocate_bandwidth(&links, &p, &c).unwrap();
        let best = links
            .iter()
            .zip(&se)
            .map(|(&(tx, _), s)| 1.0 / (a.get(tx).unwrap() * s))
            .fold(0.0, f64::max);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
        for _ in 0..20 {
            let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            let worst = draws
                .iter()
                .zip(&se)
                .map(|(d, s)| 1.0 / (c.total_bandwidth * d / total * s))
                .fold(0.0, f64::max);
            prop_assert!(worst >= best * (1.0 - 1e-9));
        }
    }

    #[test]
    fn greedy_ring_is_valid(k in 2usize..=50, seed: u64) {
        let ring = greedy_ring(&placement(k, seed), &ScenarioConfig::default()).unwrap();
        prop_assert!(validate_ring(&ring, k));
    }

    #[test]
    fn tours_are_valid_rings(k in 2usize..=20, seed: u64, start_frac in 0.0f64..1.0) {
        let p = placement(k, seed);
        let rates = SquareMatrix::unit_rates(&p, &ScenarioConfig::default());
        let start = 1 + ((start_frac * k as f64) as usize).min(k - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ring = construct_tour(&SquareMatrix::pheromone(k), &rates, start, &AcoParams::default(), &mut rng).unwrap();
        prop_assert!(validate_ring(&ring, k));
    }

    #[test]
    fn failure_free_rounds_match_oracle(k in 2usize..=16, extra in 0usize..=240, seed: u64) {
        let l = (k + extra).min(256);
        let ps = params(k, l, seed);
        let ring = shuffled_ring(k, seed);
        let out = run_scatter_reduce(&ps, &ring, &FailureSchedule::none()).unwrap();
        prop_assert!(out.recovery_queue.is_empty());
        let agg = run_all_gather(&out, &ring, &ps).unwrap();
        prop_assert!(max_relative_error(&agg, &aggregate_oracle(&ps)) <= 1e-9);
    }

    #[test]
    fn failure_counts_match_the_schedule(k in 2usize..=12, p in 0.0f64..=1.0, seed: u64) {
        let ps = params(k, k + 3, seed);
        let ring = shuffled_ring(k, seed);
        let schedule = FailureSchedule::Bernoulli { p, seed };
        let failed = schedule.resolve(k).unwrap();
        let out = run_scatter_reduce(&ps, &ring, &schedule).unwrap();
        let total: u32 = out.failure_counts.iter().sum();
        prop_assert_eq!(total as usize, failed.len());
        prop_assert_eq!(out.recovery_queue.len(), failed.len());
        for (i, &count) in out.failure_counts.iter().enumerate() {
            prop_assert_eq!(count as usize, failed.iter().filter(|&&(_, tx)| tx == i + 1).count());
        }
        let agg = run_all_gather(&out, &ring, &ps).unwrap();
        prop_assert!(max_relative_error(&agg, &aggregate_oracle(&ps)) <= 1e-9);
    }

    #[test]
    fn more_recovery_never_speeds_up_all_gather(k in 2usize..=20, seed: u64, who_frac in 0.0f64..1.0, base in 0u32..4) {
        let p = placement(k, seed);
        let c = ScenarioConfig::default();
        let ring = greedy_ring(&p, &c).unwrap();
        let counts = vec![base; k];
        let mut more = counts.clone();
        more[((who_frac * k as f64) as usize).min(k - 1)] += 1;
        let a = t_mrar(&p, &c, &ring, &counts).unwrap();
        let b = t_mrar(&p, &c, &ring, &more).unwrap();
        prop_assert!(b.t_ag >= a.t_ag);
        prop_assert_eq!(a.t_sr, b.t_sr);
        prop_assert_eq!(a.t_total, a.t_sr + a.t_ag);
        prop_assert_eq!(b.t_total, b.t_sr + b.t_ag);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn single_failures_need_one_recovery_chunk(k in 2usize..=10, l_extra in 0usize..20, seed: u64, step_frac in 0.0f64..1.0, tx_frac in 0.0f64..1.0) {
        let ps = params(k, k + l_extra, seed);
        let ring = shuffled_ring(k, seed);
        let step = 1 + ((step_frac * (k - 1) as f64) as usize).min(k - 2);
        let tx = 1 + ((tx_frac * k as f64) as usize).min(k - 1);
        let out = run_scatter_reduce(&ps, &ring, &FailureSchedule::Events(vec![(step, tx)])).unwrap();
        prop_assert_eq!(out.recovery_queue.len(), 1);
        let agg = run_all_gather(&out, &ring, &ps).unwrap();
        prop_assert!(max_relative_error(&agg, &aggregate_oracle(&ps)) <= 1e-9);
    }

    #[test]
    fn contributions_are_conserved(k in 2usize..=10, seed: u64, p in 0.0f64..0.6) {
        let ps = params(k, k, seed);
        let ring = shuffled_ring(k, seed);
        let schedule = FailureSchedule::Bernoulli { p, seed };
        let mut violations = Vec::new();
        let out = run_scatter_reduce_observed(&ps, &ring, &schedule, |step, running, recovery| {
            let mut seen = BTreeSet::new();
            for c in running.iter().chain(recovery) {
                for &who in &c.contributors {
                    if !seen.insert((c.chunk_index, who)) {
                        violations.push((step, c.chunk_index, who));
                    }
                }
            }
        })
        .unwrap();
        prop_assert!(violations.is_empty(), "duplicated pairs {:?}", violations);
        let mut covered = BTreeSet::new();
        for c in out.held.iter().chain(&out.recovery_queue) {
            for &who in &c.contributors {
                covered.insert((c.chunk_index, who));
            }
        }
        prop_assert_eq!(covered.len(), k * k);
    }

    #[test]
    fn brute_force_dominates_greedy_and_is_orientation_free(k in 2usize..=7, seed: u64) {
        let p = placement(k, seed);
        let c = ScenarioConfig::default();
        let (ring, best) = brute_force_ring(&p, &c).unwrap();
        let (greedy, _) = t_scatter_reduce(&p, &c, &greedy_ring(&p, &c).unwrap()).unwrap();
        prop_assert!(best <= greedy);
        let (rev, _) = t_scatter_reduce(&p, &c, &ring.reversed()).unwrap();
        prop_assert!((rev - best).abs() <= 1e-12 * best);
    }

    #[test]
    fn pheromone_stays_positive(k in 2usize..=12, seed: u64, rounds in 1usize..40) {
        let params = AcoParams::default();
        let mut h = SquareMatrix::pheromone(k);
        let best = shuffled_ring(k, seed);
        for r in 0..rounds {
            let tours: Vec<(RingTopology, f64)> = (0..3)
                .map(|a| (shuffled_ring(k, seed ^ ((r * 3 + a) as u64)), 1e3 * (1.0 + a as f64)))
                .collect();
            h = update_pheromone(&h, &tours, &best, 1e3, &params).unwrap();
            prop_assert!(h.min_off_diagonal() > 0.0);
            prop_assert!(h.min_off_diagonal().is_finite());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn aco_is_anytime_and_deterministic(k in 2usize..=60, seed: u64) {
        let p = placement(k, seed);
        let c = ScenarioConfig::default();
        let params = AcoParams { rng_seed: seed, ..AcoParams::default() };
        let out = optimize_ring(&p, &c, &params).unwrap();
        prop_assert!(validate_ring(&out.ring, k));
        prop_assert!(out.t_sr <= out.greedy_t_sr);
        prop_assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
        let again = optimize_ring(&p, &c, &params).unwrap();
        prop_assert_eq!(&out.ring, &again.ring);
        prop_assert_eq!(out.trace, again.trace);
    }
}
