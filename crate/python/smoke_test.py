"""Smoke test for the ringfl extension module.

Build and install first, e.g.  maturin build -m crates/py/Cargo.toml --release
followed by  pip install target/wheels/ringfl-*.whl
"""

import math

import ringfl


def main():
    cfg = ringfl.ScenarioConfig()
    assert cfg.model_size == 1e7
    assert math.isclose(ringfl.ScenarioConfig('{"noise_power_dbm": -90}').noise_power, 1e-12)

    placement = ringfl.Placement([(0, 0), (1, 0), (10, 0)], cfg)
    assert ringfl.greedy_ring(placement, cfg).next == [2, 3, 1]
    assert ringfl.validate_ring([2, 1, 4, 3], 4) is False

    alloc = ringfl.allocate_bandwidth([(1, 0), (2, 0), (3, 0)], placement, cfg)
    assert math.isclose(sum(alloc.values()), cfg.total_bandwidth, rel_tol=1e-9)

    field = ringfl.Placement.random(7, seed=42)
    ring, best = ringfl.brute_force_ring(field, cfg)
    out = ringfl.optimize_ring(field, cfg, ringfl.AcoParams(rng_seed=1))
    assert best <= out.t_sr <= out.greedy_t_sr
    assert all(b <= a for a, b in zip(out.trace, out.trace[1:]))
    assert ringfl.t_scatter_reduce(field, cfg, ring)[0] == best

    timing = ringfl.t_mrar(field, cfg, out.ring, [1, 0, 0, 0, 0, 0, 0])
    assert math.isclose(timing.t_total, timing.t_sr + timing.t_ag)
    assert ringfl.t_star(field, cfg).t_sr == 0.0

    vectors = [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]
    sizes = [1, 2, 3]
    report = ringfl.run_round(vectors, sizes, ringfl.RingTopology([2, 3, 1]), failures=[(1, 1)])
    assert report["recovery_chunks"] == 1
    assert report["max_relative_error"] <= 1e-9
    oracle = ringfl.aggregate_oracle(vectors, sizes)
    assert all(math.isclose(a, b, rel_tol=1e-9) for a, b in zip(report["aggregated"], oracle))

    lam = 10 / (math.pi * 200**2)
    assert math.isclose(ringfl.expected_t_star(cfg, 2 * lam, 200), 2 * ringfl.expected_t_star(cfg, lam, 200))
    assert ringfl.expected_t_sr_upper_bound(cfg, lam, 200) > 0
    assert math.isclose(ringfl.expected_t_ag(cfg, lam, 200, 1.0), 2 * ringfl.expected_t_ag(cfg, lam, 200))

    sweep = ringfl.run_sweep(
        '{"variable": "device_count", "values": [4, 8, 16], "replications": 2,'
        ' "placement_model": "uniform_square", "schemes": ["star", "greedy"]}'
    )
    star = [r["mean_t_total"] for r in sweep["summary"] if r["scheme"] == "star"]
    assert ringfl.fit_loglog_slope([4, 8, 16], star) > 0

    try:
        ringfl.RingTopology([2, 1, 4, 3])
    except ValueError:
        pass
    else:
        raise AssertionError("invalid ring accepted")

    try:
        ringfl.run_round(vectors, sizes, ringfl.RingTopology([2, 3, 1]), failures=[(5, 1)])
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-range failure accepted")

    print("ringfl smoke test passed")


if __name__ == "__main__":
    main()
