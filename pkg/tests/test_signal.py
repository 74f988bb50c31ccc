import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dtlearn.signal import (NoiseSpec, Trajectory, TrajectoryFormatError, corrupt, downsample,
                            empirical_snr_db, load_ohio_format, mask_hidden, read_trajectory_csv,
                            write_trajectory_csv)


def make_traj(N=50, n=2, m=1, seed=0):
    gen = np.random.Generator(np.random.PCG64(seed))
    t = np.linspace(0.0, 10.0, N)
    states = np.column_stack([np.sin(t + j) + 2.0 for j in range(n)])
    return Trajectory(times=t, states=states, inputs=gen.normal(size=(N, m)),
                      mask=np.ones(n, bool), state_names=tuple(f"s{j}" for j in range(n)),
                      input_names=tuple(f"u{j}" for j in range(m)))


def test_trajectory_validation():
    t = np.array([0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        Trajectory(times=np.array([0.0]), states=np.zeros((1, 1)), inputs=np.zeros((1, 0)),
                   mask=np.ones(1, bool))
    with pytest.raises(ValueError):
        Trajectory(times=np.array([0.0, 2.0, 1.0]), states=np.zeros((3, 1)),
                   inputs=np.zeros((3, 0)), mask=np.ones(1, bool))
    with pytest.raises(ValueError):
        Trajectory(times=t, states=np.zeros((3, 1)), inputs=np.zeros((3, 0)),
                   mask=np.zeros(1, bool))


@pytest.mark.parametrize("snr", [10.0, 20.0, 30.0, 40.0])
def test_snr_mode_hits_requested_level(snr):
    clean = make_traj(N=200)
    noisy = corrupt(clean, NoiseSpec(snr_db=snr, seed=4))
    for j in range(clean.n_states):
        assert math.isclose(empirical_snr_db(clean.states[:, j], noisy.states[:, j]), snr,
                            abs_tol=1e-9)


def test_infinite_snr_and_zero_sigma_are_identity():
    clean = make_traj()
    assert corrupt(clean, NoiseSpec(snr_db=math.inf)).equals(clean)
    assert corrupt(clean, NoiseSpec(sigma=0.0)).equals(clean)


def test_noise_touches_observed_channels_only():
    clean = mask_hidden(make_traj(n=3), [True, False, True])
    noisy = corrupt(clean, NoiseSpec(sigma=0.1, seed=1))
    assert np.array_equal(noisy.states[:, 1], clean.states[:, 1])
    assert not np.array_equal(noisy.states[:, 0], clean.states[:, 0])


def test_noise_is_seeded():
    clean = make_traj()
    a = corrupt(clean, NoiseSpec(snr_db=20, seed=9))
    b = corrupt(clean, NoiseSpec(snr_db=20, seed=9))
    c = corrupt(clean, NoiseSpec(snr_db=20, seed=10))
    assert a.equals(b) and not a.equals(c)


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec()
    with pytest.raises(ValueError):
        NoiseSpec(snr_db=10, sigma=1.0)
    with pytest.raises(ValueError):
        NoiseSpec(sigma=-1.0)


@given(st.integers(1, 30))
def test_downsample_keeps_every_kth(k):
    traj = make_traj(N=60)
    if math.ceil(60 / k) < 2:
        with pytest.raises(ValueError):
            downsample(traj, k)
        return
    d = downsample(traj, k)
    assert np.array_equal(d.times, traj.times[::k])


def test_downsample_rejects_non_integer():
    with pytest.raises(ValueError):
        downsample(make_traj(), 1.5)


def test_mask_hidden_needs_an_observable_channel():
    with pytest.raises(ValueError):
        mask_hidden(make_traj(), [False, False])


def test_csv_roundtrip_is_exact(tmp_path):
    traj = mask_hidden(make_traj(n=3, m=2), [False, True, True])
    path = tmp_path / "t.csv"
    write_trajectory_csv(traj, path)
    back = read_trajectory_csv(path)
    assert back.equals(traj)
    assert back.state_names == traj.state_names and back.input_names == traj.input_names


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False, allow_subnormal=False), min_size=2,
                max_size=20))
def test_csv_roundtrip_property(tmp_path_factory, values):
    N = len(values)
    traj = Trajectory(times=np.arange(N, dtype=float), states=np.array(values)[:, None],
                      inputs=np.zeros((N, 0)), mask=np.ones(1, bool))
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    write_trajectory_csv(traj, path)
    assert read_trajectory_csv(path).equals(traj)


def test_corrupted_csv_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,x,mask_x\n0.0,1.0,1\n1.0,oops,1\n")
    with pytest.raises(TrajectoryFormatError) as err:
        read_trajectory_csv(path)
    assert err.value.line == 3


def test_ohio_loader_segments_and_missing_values(tmp_path):
    path = tmp_path / "ohio.csv"
    rows = ["timestamp,glucose,basal_insulin,bolus_insulin,carbs"]
    for k in range(5):
        rows.append(f"{k * 300},{100 + k},0.5,,")
    rows.append(f"{5 * 300},,0.5,1.0,20")          # missing glucose: skipped
    for k in range(10, 14):                          # gap of > 2 spacings: new segment
        rows.append(f"{k * 300},{120 + k},0.5,2.0,")
    path.write_text("\n".join(rows) + "\n")
    segs = load_ohio_format(path)
    assert [s.n_samples for s in segs] == [5, 4]
    assert segs[0].state_names == ("glucose",)
    assert segs[1].inputs[0, 0] == pytest.approx(2.5)
    assert segs[0].inputs[0, 1] == 0.0


def test_ohio_loader_rejects_time_reversal(tmp_path):
    path = tmp_path / "ohio.csv"
    path.write_text("timestamp,glucose,basal_insulin,bolus_insulin,carbs\n600,1,0,0,0\n300,1,0,0,0\n")
    with pytest.raises(TrajectoryFormatError) as err:
        load_ohio_format(path)
    assert err.value.line == 3


def test_ohio_loader_iso_timestamps(tmp_path):
    path = tmp_path / "ohio.csv"
    path.write_text("timestamp,glucose,basal_insulin,bolus_insulin,carbs\n"
                    "2020-01-01T00:00:00,100,0.5,0,0\n2020-01-01T00:05:00,101,0.5,0,0\n")
    (seg,) = load_ohio_format(path)
    assert np.allclose(np.diff(seg.times), 300.0)
