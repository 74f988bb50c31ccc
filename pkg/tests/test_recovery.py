import json
import queue

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dtlearn.dynamics import BERGMAN, bergman_fixture, build_library, library_model
from dtlearn.errors import DivergenceError
from dtlearn.recovery import (RecoveryConfig, central_difference_weights, check_identifiability,
                              loss_and_grads, physics_residual, reconstruction_loss, recover,
                              time_derivative, total_loss)
from dtlearn.signal import Trajectory, mask_hidden


def decay_traj(N=50, T=2.0, rate=2.0):
    t = np.linspace(0.0, T, N)
    return Trajectory(times=t, states=np.exp(-rate * t)[:, None], inputs=np.zeros((N, 0)),
                      mask=np.ones(1, bool), state_names=("x",))


QUICK = RecoveryConfig(epochs=60, refit_epochs=10, sparsity_weight=1e-4, physics_warmup=20)


@given(st.lists(st.floats(0.05, 2.0), min_size=3, max_size=20), st.floats(-3, 3), st.floats(-3, 3))
def test_central_differences_exact_for_quadratics(steps, b, c):
    t = np.concatenate([[0.0], np.cumsum(steps)])
    Z = (1.0 + b * t + c * t ** 2)[:, None]
    np.testing.assert_allclose(time_derivative(Z, t)[:, 0], b + 2 * c * t[1:-1], rtol=1e-8,
                               atol=1e-8)


def test_central_difference_weights_sum_to_zero():
    t = np.array([0.0, 0.3, 1.0, 1.1, 2.5])
    a, b, c = central_difference_weights(t)
    np.testing.assert_allclose(a + b + c, 0.0, atol=1e-12)


def test_reconstruction_uses_observed_channels_only():
    traj = mask_hidden(Trajectory(times=np.arange(4.0), states=np.zeros((4, 2)),
                                  inputs=np.zeros((4, 0)), mask=np.ones(2, bool)), [True, False])
    Z = np.zeros((4, 2))
    Z[:, 1] = 100.0
    assert reconstruction_loss(Z, traj) == 0.0
    Z[:, 0] = 2.0
    assert reconstruction_loss(Z, traj) == 4.0


def test_physics_residual_zero_for_exact_linear_dynamics():
    # x(t) = 1 + 3t solves x' = 3 exactly, and central differences are exact for it
    t = np.linspace(0, 1, 11)
    traj = Trajectory(times=t, states=(1 + 3 * t)[:, None], inputs=np.zeros((11, 0)),
                      mask=np.ones(1, bool))
    model = library_model(build_library(1, M=1))
    assert physics_residual(traj.states, traj, np.array([3.0, 0.0]), model) == pytest.approx(0, abs=1e-20)
    assert physics_residual(traj.states, traj, np.array([0.0, 0.0]), model) == pytest.approx(9.0)


def test_loss_and_grads_match_finite_differences():
    gen = np.random.Generator(np.random.PCG64(5))
    fx = bergman_fixture()
    N = 12
    t = np.cumsum(gen.uniform(1, 6, N))
    traj = mask_hidden(Trajectory(times=t, states=gen.normal(size=(N, 3)),
                                  inputs=np.abs(gen.normal(size=(N, 4))), mask=np.ones(3, bool)),
                       [False, True, True])
    Z = gen.normal(size=(N, 3))
    th = fx["theta"].values + 0.01
    total, comps, dZ, dth = loss_and_grads(Z, traj, th, BERGMAN, 0.7, 1e-3)
    cfg = RecoveryConfig(physics_weight=0.7, sparsity_weight=1e-3)
    assert total == pytest.approx(total_loss(Z, traj, th, cfg, BERGMAN)[0], rel=1e-12)
    eps = 1e-6
    for idx in [(0, 0), (3, 1), (7, 2), (11, 0)]:
        E = np.zeros_like(Z)
        E[idx] = eps
        fd = (loss_and_grads(Z + E, traj, th, BERGMAN, 0.7, 1e-3)[0]
              - loss_and_grads(Z - E, traj, th, BERGMAN, 0.7, 1e-3)[0]) / (2 * eps)
        assert dZ[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)
    for i in range(th.size):
        e = np.zeros_like(th)
        e[i] = eps
        fd = (loss_and_grads(Z, traj, th + e, BERGMAN, 0.7, 1e-3)[0]
              - loss_and_grads(Z, traj, th - e, BERGMAN, 0.7, 1e-3)[0]) / (2 * eps)
        assert dth[i] == pytest.approx(fd, rel=1e-5, abs=1e-9)


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(physics_weight=-1), dict(epsilon=0),
                                dict(lr_decay=0), dict(prune_threshold=-1.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        RecoveryConfig(**kw)


def test_recover_shape_and_report_fields():
    lib = build_library(1, M=2)
    rep = recover(decay_traj(), lib, QUICK)
    assert rep.theta_recovered.p == 3
    assert rep.epochs_run == 70 and len(rep.loss_history) == 70
    assert rep.prediction.shape == (50, 1)
    assert rep.peak_memory_bytes > 0 and rep.wall_time_seconds > 0
    doc = rep.to_json()
    assert doc["format_version"] == 1
    assert rep.loss_history_csv().startswith("epoch,total,recon,physics,sparsity\n")


def test_pruned_coefficients_are_exact_zeros():
    cfg = RecoveryConfig(**{**QUICK.__dict__, "prune_threshold": 10.0})
    rep = recover(decay_traj(), build_library(1, M=2), cfg)
    vals = rep.theta_recovered.values
    assert rep.pruned == [0, 1, 2]
    assert all(vals[i] == 0.0 for i in rep.pruned)


def test_recover_is_deterministic():
    a = recover(decay_traj(), build_library(1, M=2), QUICK)
    b = recover(decay_traj(), build_library(1, M=2), QUICK)
    assert a.theta_json() == b.theta_json()
    json.loads(a.theta_json())


def test_progress_receives_every_epoch():
    q = queue.Queue()
    recover(decay_traj(), build_library(1, M=2), QUICK, progress=q)
    assert q.qsize() == 70
    seen = []
    recover(decay_traj(), build_library(1, M=2), QUICK, progress=seen.append)
    assert seen[0]["epoch"] == 0 and "physics" in seen[0]


def test_divergence_raises_with_partial_report():
    traj = decay_traj()
    cfg = RecoveryConfig(epochs=200, refit_epochs=0, learning_rate=1e6, theta_learning_rate=1e6,
                         optimizer="sgd", physics_weight=1e6)
    with pytest.raises(DivergenceError) as err:
        recover(traj, build_library(1, M=3), cfg)
    assert err.value.epoch is not None
    assert err.value.report.epochs_run == err.value.epoch


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        recover(decay_traj(), build_library(2, M=2), QUICK)


def test_bergman_p3_identifiable_from_glucose():
    fx = bergman_fixture()
    th = fx["theta"].values
    flags = check_identifiability(BERGMAN, th, fx["inputs"], fx["x0"], fx["T"], 0.1 * th, 0.01,
                                  observed=[False, False, True])
    assert flags[2]


def test_term_zero_along_trajectory_not_identifiable():
    # x(t) = 0 for x' = -x from x0 = 0, so x^2 (and x) have no effect
    model = library_model(build_library(1, M=2))
    flags = check_identifiability(model, np.array([0.0, -1.0, 0.0]), None, [0.0], 1.0, 0.1, 1e-6)
    assert not flags[2] and not flags[1]
    assert flags[0]   # the constant term moves x off zero


def test_identifiability_needs_positive_delta():
    model = library_model(build_library(1, M=1))
    with pytest.raises(ValueError):
        check_identifiability(model, np.zeros(2), None, [1.0], 1.0, 0.0, 1e-3)
