"""Finite-difference check of the hand-written gradients.

The checked scalar is the full training objective (reconstruction plus
physics residual) as a function of the flow weights, ``z0`` and ``theta``,
so one pass covers ``flow_backward`` and the loss gradients together.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import build_library, library_model
from .neuralflow import flow_backward, flow_forward, init_flow
from .recovery import loss_and_grads
from .signal import Trajectory, rng

MAX_HIDDEN = 32
MAX_STATES = 8
MAX_SAMPLES = 64


@dataclass
class GradcheckResult:
    seed: int
    coordinates: int
    max_rel_error: float
    worst_index: int
    passed: bool

    def to_json(self):
        return dict(self.__dict__)


@dataclass
class GradcheckSummary:
    results: list = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    @property
    def max_rel_error(self):
        return max((r.max_rel_error for r in self.results), default=0.0)


def _problem(H, n, m, N, seed):
    gen = rng(seed)
    lib = build_library(n, m, M=2)
    model = library_model(lib)
    times = np.sort(gen.uniform(0.0, 1.0, N))
    times[0], times[-1] = 0.0, 1.0
    mask = np.ones(n, bool)
    if n > 1:
        mask[-1] = False
    traj = Trajectory(times=times, states=gen.normal(size=(N, n)), inputs=gen.normal(size=(N, m)),
                      mask=mask)
    flow = init_flow(H, n, m, seed=seed, scale=1.0)
    # random biases and scales so no gradient is structurally zero
    flow = flow.map(lambda a: a + 0.3 * gen.normal(size=a.shape))
    z0 = gen.normal(size=n)
    theta = gen.normal(scale=0.5, size=model.p)
    return traj, model, flow, z0, theta


def check_seed(H=4, n=2, m=1, N=8, seed=0, coordinates=100, physics_weight=0.5,
               tolerance=1e-4, step=1e-6, corrupt=False) -> GradcheckResult:
    if H > MAX_HIDDEN or n > MAX_STATES or m > MAX_STATES or N > MAX_SAMPLES:
        raise ValueError(f"gradcheck dimensions too large (H<={MAX_HIDDEN}, n,m<={MAX_STATES}, "
                         f"N<={MAX_SAMPLES})")
    traj, model, flow, z0, theta = _problem(H, n, m, N, seed)
    n_flow = flow.n_params()

    def unpack(vec):
        return flow.from_flat(vec[:n_flow]), vec[n_flow:n_flow + n], vec[n_flow + n:]

    def objective(vec):
        f, z, th = unpack(vec)
        Z, _ = flow_forward(f, z, traj.inputs, traj.times)
        return loss_and_grads(Z, traj, th, model, physics_weight, 0.0)[0]

    vec = np.concatenate([flow.flat(), z0, theta])
    Z, tape = flow_forward(flow, z0, traj.inputs, traj.times)
    _, _, dZ, dtheta = loss_and_grads(Z, traj, theta, model, physics_weight, 0.0)
    g_flow, dz0 = flow_backward(flow, tape, dZ)
    analytic = np.concatenate([g_flow.flat(), dz0, dtheta])
    if corrupt:
        analytic = analytic * (1.0 + 1e-2)   # negative control

    count = min(coordinates, vec.size)
    picks = rng(seed + 10_007).choice(vec.size, size=count, replace=False)
    errors = np.empty(count)
    for i, j in enumerate(picks):
        h = step * max(1.0, abs(vec[j]))
        plus, minus = vec.copy(), vec.copy()
        plus[j] += h
        minus[j] -= h
        fd = (objective(plus) - objective(minus)) / (2 * h)
        errors[i] = abs(analytic[j] - fd) / max(abs(analytic[j]), abs(fd), 1e-6)
    worst = int(np.argmax(errors))
    return GradcheckResult(seed=seed, coordinates=count, max_rel_error=float(errors[worst]),
                           worst_index=int(picks[worst]), passed=bool(errors[worst] <= tolerance))


def run_gradcheck(H=4, n=2, m=1, N=8, seeds=(0, 1, 2, 3, 4), coordinates=100,
                  tolerance=1e-4, corrupt=False) -> GradcheckSummary:
    summary = GradcheckSummary(tolerance=tolerance)
    for s in seeds:
        summary.results.append(check_seed(H, n, m, N, seed=s, coordinates=coordinates,
                                          tolerance=tolerance, corrupt=corrupt))
    return summary
