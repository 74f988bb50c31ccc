import json

import pytest
from pydantic import ValidationError

from dtlearn.hlscost import (ArrayAccess, ArrayPartition, Dependency, LoopSpec, PartitionSpec,
                             feasibility_table, hazard_check, load_specs, loop_latency,
                             min_feasible_ii, recurrence_bound, resource_bound,
                             throughput_estimate)

from .hls_oracle import random_loop, rng, simulate_hazards


def loop_with(*deps, trip=200, depth=10, accesses=()):
    return LoopSpec(trip_count=trip, depth=depth,
                    deps=[Dependency(kind="RAW", latency=lat, distance=dist) for lat, dist in deps],
                    array_accesses=list(accesses))


@pytest.mark.parametrize("deps,expected", [((), 1), (((2, 1),), 2), (((3, 1),), 3),
                                           (((3, 2),), 2), (((5, 2), (3, 1)), 3)])
def test_min_feasible_ii(deps, expected):
    assert min_feasible_ii(loop_with(*deps)) == expected


def test_loop_latency():
    assert loop_latency(loop_with(trip=200, depth=10), 1) == 209
    assert loop_latency(loop_with((2, 1), trip=200, depth=10), 2) == 408
    with pytest.raises(ValueError):
        loop_latency(loop_with((2, 1)), 1)


def test_throughput():
    assert throughput_estimate(loop_with(), 1, 173.0) == pytest.approx(173e6)
    assert throughput_estimate(loop_with(), 2, 173.0) == pytest.approx(86.5e6)
    with pytest.raises(ValueError):
        throughput_estimate(loop_with(), 1, 0.0)


def test_hazard_check_reports_dependency():
    loop = loop_with((2, 1))
    (v,) = hazard_check(loop, 1)
    assert v.kind == "RAW" and v.required_ii == 2
    assert hazard_check(loop, 2) == []


def test_port_limits_need_partition_argument():
    loop = loop_with(accesses=[ArrayAccess(array_id="A", reads_per_iter=3, writes_per_iter=1)])
    single = PartitionSpec(arrays={"A": ArrayPartition(partitioned="none", ports_per_bank=2)})
    assert hazard_check(loop, 1) == []
    assert [v.kind for v in hazard_check(loop, 1, single)] == ["resource"]
    assert resource_bound(loop, single) == 2
    assert min_feasible_ii(loop, single) == 2
    assert min_feasible_ii(loop, PartitionSpec()) == 1   # complete partitioning removes it


def test_dependency_beyond_last_iteration_is_inactive():
    loop = loop_with((6, 4), trip=3)
    assert recurrence_bound(loop) == 1
    assert hazard_check(loop, 1) == []


def test_schema_rejects_bad_specs():
    with pytest.raises(ValidationError):
        LoopSpec(trip_count=0, depth=1)
    with pytest.raises(ValidationError):
        Dependency(kind="RAR", latency=1)
    with pytest.raises(ValidationError):
        LoopSpec.model_validate({"trip_count": 4, "depth": 1, "bogus": 1})


def test_feasibility_table_covers_probing_range():
    rows = feasibility_table(loop_with((2, 1)))
    assert [r["ii"] for r in rows] == [1, 2, 3]
    assert [r["feasible"] for r in rows] == [False, True, True]
    assert rows[1]["latency_cycles"] == 10 + 199 * 2
    assert len(feasibility_table(loop_with((5, 1)))) == 5


def test_load_specs(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"loop": {"trip_count": 8, "depth": 3}, "clock_mhz": 100}))
    loop, part, clock = load_specs(p)
    assert loop.trip_count == 8 and part is None and clock == 100
    p.write_text(json.dumps({"trip_count": 8, "depth": 3}))
    assert load_specs(p)[0].depth == 3


def test_analytic_model_matches_cycle_stepped_oracle():
    gen = rng(7)
    for _ in range(300):
        loop, part = random_loop(gen)
        for ii in range(1, 10):
            dep_bad, port_bad = simulate_hazards(loop, ii, part)
            got = hazard_check(loop, ii, part)
            assert {v.kind for v in got if v.kind != "resource"} == \
                {loop.deps[k].kind for k in dep_bad}
            assert len([v for v in got if v.kind != "resource"]) == len(dep_bad)
            assert (len([v for v in got if v.kind == "resource"]) > 0) == bool(port_bad)
            assert (not got) == (ii >= min_feasible_ii(loop, part))
