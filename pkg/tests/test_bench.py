import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dtlearn.bench import (PlatformSample, RooflineSpec, dominance_matrix, load_roofline_fixtures,
                           load_table, measure_recovery, pareto_front, perf_per_watt, ratio_report,
                           read_samples_csv, roofline_attainable, roofline_curve,
                           samples_from_json, samples_to_json, write_samples_csv)

from .pareto_oracle import brute_front

OBJ4 = ["runtime_s", "avg_power_w", "dram_mb", "error"]


def sample(label, *vals):
    r, p, d, e = vals
    return PlatformSample(label=label, runtime_s=r, avg_power_w=p, dram_mb=d, error=e)


def test_sample_validation():
    with pytest.raises(ValueError):
        PlatformSample(label="x", runtime_s=0.0, dram_mb=1.0)
    with pytest.raises(ValueError):
        PlatformSample(label="x", runtime_s=1.0, dram_mb=1.0, avg_power_w=0.0)
    assert PlatformSample(label="x", runtime_s=1.0, dram_mb=1.0).avg_power_w is None


def test_measure_sleep_timing():
    m = measure_recovery(lambda: time.sleep(1.0))
    assert m.runtime_s == pytest.approx(1.0, abs=0.05)


def test_measure_allocation_probe():
    def touch():
        a = np.ones(100 * 2 ** 20 // 8)
        time.sleep(0.05)
        return float(a[-1])
    m = measure_recovery(touch)
    assert m.peak_memory_bytes - m.baseline_memory_bytes >= 100 * 2 ** 20 * 0.95
    assert m.result == 1.0


def test_measure_attaches_partial_timing_on_failure():
    def boom():
        time.sleep(0.02)
        raise RuntimeError("x")
    with pytest.raises(RuntimeError) as err:
        measure_recovery(boom)
    assert err.value.measurement.runtime_s >= 0.02


def test_trivial_closure_positive_runtime():
    runtime, peak = measure_recovery(lambda: None)
    assert runtime > 0 and peak > 0


def test_roofline_examples():
    fpga = RooflineSpec(1.0, 2.0)
    assert roofline_attainable(fpga, 0.5) == 1.0
    assert roofline_attainable(fpga, 0.1) == pytest.approx(0.2)
    assert roofline_attainable(fpga, 1e9) == 1.0
    assert fpga.ridge == 0.5
    with pytest.raises(ValueError):
        roofline_attainable(fpga, 0.0)


@given(st.floats(0.1, 100), st.floats(0.1, 100))
def test_roofline_curve_monotone_with_single_ridge(peak, bw):
    spec = RooflineSpec(peak, bw)
    curve = roofline_curve(spec, 1e-3, 1e3, 200)
    assert np.all(np.diff(curve[:, 1]) >= -1e-12)
    below = curve[curve[:, 0] < spec.ridge]
    above = curve[curve[:, 0] >= spec.ridge]
    np.testing.assert_allclose(below[:, 1], bw * below[:, 0])
    np.testing.assert_allclose(above[:, 1], peak)


def test_perf_per_watt_conventions():
    aid = {s.label: s for s in load_table("aid")}
    assert perf_per_watt(aid["FPGA"]) == pytest.approx(51.76, abs=0.01)
    assert perf_per_watt(aid["GPU"]) == pytest.approx(5.88, abs=0.01)
    assert perf_per_watt(aid["MGPU"]) == pytest.approx(101.74, abs=0.02)
    cardiac = {s.label: s for s in load_table("cardiac")}
    assert perf_per_watt(cardiac["FPGA"]) == 5.22
    assert perf_per_watt(PlatformSample(label="x", runtime_s=1.0, dram_mb=1.0)) is None


def test_ratio_report_self_is_one_and_unknown_baseline():
    rows = ratio_report(load_table("aid"), "FPGA")
    fpga = next(r for r in rows if r.label == "FPGA")
    assert (fpga.speedup, fpga.dram_reduction, fpga.perf_per_watt_ratio) == (1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        ratio_report(load_table("aid"), "TPU")


def test_ratio_report_without_power_gives_none():
    rows = ratio_report([PlatformSample(label="a", runtime_s=1, dram_mb=1),
                         PlatformSample(label="b", runtime_s=2, dram_mb=4)], "a")
    assert rows[1].speedup == 0.5 and rows[1].perf_per_watt_ratio is None


def test_pareto_table_examples():
    aid = load_table("aid")
    assert [s.label for s in pareto_front(aid, OBJ4[:3])] == ["FPGA"]
    assert [s.label for s in pareto_front(aid, OBJ4)] == ["FPGA", "MGPU", "GPU"]
    assert pareto_front(aid[:1], OBJ4) == aid[:1]


def test_pareto_keeps_ties_and_handles_maximise():
    a, b, c = sample("a", 1, 1, 1, 1), sample("b", 1, 1, 1, 1), sample("c", 2, 2, 2, 2)
    assert [s.label for s in pareto_front([a, b, c], OBJ4)] == ["a", "b"]
    assert [s.label for s in pareto_front([a, b, c], ["+runtime_s"])] == ["c"]


def test_pareto_missing_field_names_sample():
    s = PlatformSample(label="nopower", runtime_s=1.0, dram_mb=1.0)
    with pytest.raises(ValueError, match="nopower.*avg_power_w"):
        pareto_front([s], ["avg_power_w"])


@given(st.lists(st.tuples(*[st.integers(1, 6)] * 4), min_size=1, max_size=30))
def test_pareto_matches_brute_force(points):
    samples = [sample(str(i), *p) for i, p in enumerate(points)]
    got = [int(s.label) for s in pareto_front(samples, OBJ4)]
    assert got == brute_front(points)


@given(st.lists(st.tuples(*[st.floats(0.1, 10)] * 4), min_size=1, max_size=20))
def test_pareto_invariant_under_monotone_rescaling(points):
    samples = [sample(str(i), *p) for i, p in enumerate(points)]
    rescaled = [sample(str(i), p[0] ** 3, np.log(p[1] + 1), 5 * p[2] + 1, np.sqrt(p[3]))
                for i, p in enumerate(points)]
    assert ([s.label for s in pareto_front(samples, OBJ4)]
            == [s.label for s in pareto_front(rescaled, OBJ4)])


def test_dominance_matrix_table2():
    D = dominance_matrix(load_table("aid"), OBJ4[:3])
    assert D.tolist() == [[False, True, True], [False, False, False], [False, False, False]]


def test_csv_and_json_roundtrip(tmp_path):
    rows = load_table("aid") + load_table("cardiac")
    path = tmp_path / "r.csv"
    write_samples_csv(rows, path)
    assert read_samples_csv(path) == rows
    write_samples_csv(rows[:1], path, append=True)
    assert len(read_samples_csv(path)) == len(rows) + 1
    assert samples_from_json(samples_to_json(rows)) == rows


def test_csv_errors_carry_line(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("label,runtime_s,avg_power_w,dram_mb,error,freq_mhz,flops,bytes_moved\n"
                    "x,-1,,5,,,,\n")
    with pytest.raises(ValueError, match=":2:"):
        read_samples_csv(path)


def test_roofline_fixtures():
    specs = load_roofline_fixtures()
    assert specs["FPGA"].peak_gflops == 1.0 and specs["GPU"].peak_gflops == 10.0
    assert specs["GPU"].bandwidth_gbs < 20.0
