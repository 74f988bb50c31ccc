"""Physics-guided sparse model recovery.

The trainer fits a neural flow to the measured channels while pushing the
flow trajectory (all channels, measured or not) to satisfy
``dX/dt = h(X, U, theta)``. Coefficients ``theta`` and the flow weights are
updated jointly by one optimiser.
"""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import psutil

from .dynamics import (CoefficientVector, OdeModel, TermLibrary, build_library,  # noqa: F401
                       InputSignal, library_model, simulate)
from .errors import DivergenceError, DomainError
from .neuralflow import (StepRule, apply_update, flow_backward, flow_forward, flow_from_dict,
                         flow_to_dict, init_flow)
from .signal import Trajectory

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class RecoveryConfig:
    epochs: int = 2000
    learning_rate: float = 1e-2
    physics_weight: float = 1.0
    sparsity_weight: float = 1e-3
    prune_threshold: Optional[float] = None   # None: 5% of max |theta|
    epsilon: float = 1e-2
    substeps: int = 10
    seed: int = 0
    hidden_dim: int = 16
    refit_epochs: int = 200
    theta_learning_rate: Optional[float] = None
    z0_learning_rate: Optional[float] = None
    optimizer: str = "adam"
    physics_warmup: int = 0          # epochs of reconstruction-only fitting first
    theta_warmup: int = 0            # then epochs updating theta only, flow frozen
    physics_ramp: int = 0            # then epochs over which the physics weight grows
    physics_ramp_start: float = 1e-3  # geometrically from this fraction to 1
    hidden_scale: float = 1.0        # initial flow scale for unmeasured channels
    lr_decay: float = 1.0            # final lr as a fraction of the initial lr
    theta_init: Optional[tuple] = None
    z0_init: Optional[tuple] = None
    hidden_prior: bool = False       # anchor unmeasured channels to a simulation from
                                     # theta_init while the physics term is off

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.refit_epochs < 0:
            raise ValueError("refit_epochs must be >= 0")
        if self.physics_weight < 0 or self.sparsity_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.prune_threshold is not None and self.prune_threshold < 0:
            raise ValueError("prune_threshold must be non-negative")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")


@dataclass
class RecoveryReport:
    theta_recovered: CoefficientVector
    reconstruction_error: float
    loss_history: list
    converged: bool
    epochs_run: int
    wall_time_seconds: float
    peak_memory_bytes: int
    z0: list = field(default_factory=list)
    pruned: list = field(default_factory=list)
    prediction: Optional[np.ndarray] = None

    def to_json(self):
        return {
            "format_version": FORMAT_VERSION,
            "theta_recovered": self.theta_recovered.to_json(),
            "reconstruction_error": self.reconstruction_error,
            "loss_history": [list(row) for row in self.loss_history],
            "converged": self.converged,
            "epochs_run": self.epochs_run,
            "wall_time_seconds": self.wall_time_seconds,
            "peak_memory_bytes": self.peak_memory_bytes,
            "z0": list(self.z0),
            "pruned": list(self.pruned),
        }

    def loss_history_csv(self):
        lines = ["epoch,total,recon,physics,sparsity"]
        for i, row in enumerate(self.loss_history):
            lines.append(",".join([str(i)] + [repr(float(v)) for v in row]))
        return "\n".join(lines) + "\n"

    def theta_json(self):
        doc = {"format_version": FORMAT_VERSION} | self.theta_recovered.to_json()
        return json.dumps(doc, indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# Loss terms


def _obs_mask(traj):
    return np.asarray(traj.mask, dtype=bool)


def reconstruction_loss(Z, traj: Trajectory):
    """Mean squared error over samples and observed channels only."""
    Z = np.asarray(Z, dtype=float)
    if Z.shape != traj.states.shape:
        raise ValueError(f"prediction shape {Z.shape} != data shape {traj.states.shape}")
    mask = _obs_mask(traj)
    if not mask.any():
        raise ValueError("no observed channels")
    diff = Z[:, mask] - traj.states[:, mask]
    return float(np.mean(diff ** 2))


def _reconstruction_grad(Z, traj):
    mask = _obs_mask(traj)
    dZ = np.zeros_like(Z, dtype=float)
    diff = Z[:, mask] - traj.states[:, mask]
    dZ[:, mask] = 2.0 * diff / diff.size
    return dZ


def central_difference_weights(times):
    """Three-point weights ``(a, b, c)`` for interior samples of a possibly
    non-uniform grid: ``dZ_k ~ a_k Z_{k-1} + b_k Z_k + c_k Z_{k+1}``."""
    t = np.asarray(times, dtype=float)
    h1 = t[1:-1] - t[:-2]
    h2 = t[2:] - t[1:-1]
    a = -h2 / (h1 * (h1 + h2))
    b = (h2 - h1) / (h1 * h2)
    c = h1 / (h2 * (h1 + h2))
    return a, b, c


def time_derivative(Z, times):
    a, b, c = central_difference_weights(times)
    return a[:, None] * Z[:-2] + b[:, None] * Z[1:-1] + c[:, None] * Z[2:]


def _theta_array(theta):
    return np.asarray(getattr(theta, "values", theta), dtype=float)


def _physics_parts(Z, traj, theta, model):
    if traj.n_samples < 3:
        raise ValueError("physics residual needs at least 3 samples")
    th = _theta_array(theta)
    inner = slice(1, -1)
    u = traj.inputs[inner]
    t = traj.times[inner]
    resid = time_derivative(Z, traj.times) - model.rhs(Z[inner], u, th, t)
    return resid, u, t, th


def physics_residual(Z, traj: Trajectory, theta, model: OdeModel):
    """Mean over interior samples of ``|D_t Z_k - h(Z_k, u_k, theta)|^2``,
    summed over all channels (hidden ones included)."""
    resid, *_ = _physics_parts(np.asarray(Z, dtype=float), traj, theta, model)
    return float(np.mean(np.sum(resid ** 2, axis=1)))


def _physics_grads(Z, traj, theta, model):
    resid, u, t, th = _physics_parts(Z, traj, theta, model)
    K = resid.shape[0]
    value = float(np.sum(resid ** 2) / K)
    dr = 2.0 * resid / K
    a, b, c = central_difference_weights(traj.times)
    dZ = np.zeros_like(Z)
    dZ[:-2] += a[:, None] * dr
    dZ[1:-1] += b[:, None] * dr
    dZ[2:] += c[:, None] * dr
    Jx = model.jac_state(Z[1:-1], u, th, t)
    dZ[1:-1] -= np.einsum("kjv,kj->kv", Jx, dr)
    Jt = model.jac_theta(Z[1:-1], u, th, t)
    dtheta = -np.einsum("kjp,kj->p", Jt, dr)
    return value, dZ, dtheta


def total_loss(Z, traj: Trajectory, theta, config: RecoveryConfig, model: OdeModel):
    """``recon + physics_weight * physics + sparsity_weight * |theta|_1``.

    Returns ``(total, {"recon", "physics", "sparsity"})`` where the components
    are the unweighted terms.
    """
    total, comps, _, _ = loss_and_grads(Z, traj, theta, model, config.physics_weight,
                                        config.sparsity_weight)
    return total, comps


def loss_and_grads(Z, traj, theta, model, physics_weight, sparsity_weight):
    """Total loss, its components, and gradients w.r.t. ``Z`` and ``theta``."""
    Z = np.asarray(Z, dtype=float)
    th = _theta_array(theta)
    recon = reconstruction_loss(Z, traj)
    dZ = _reconstruction_grad(Z, traj)
    dtheta = np.zeros_like(th)
    physics = 0.0
    if physics_weight > 0:
        physics, dZ_p, dth_p = _physics_grads(Z, traj, th, model)
        dZ = dZ + physics_weight * dZ_p
        dtheta = dtheta + physics_weight * dth_p
    sparsity = float(np.sum(np.abs(th)))
    dtheta = dtheta + sparsity_weight * np.sign(th)
    total = recon + physics_weight * physics + sparsity_weight * sparsity
    return total, {"recon": recon, "physics": physics, "sparsity": sparsity}, dZ, dtheta


# --------------------------------------------------------------------------
# Training


def as_model(library_or_model) -> OdeModel:
    if isinstance(library_or_model, OdeModel):
        return library_or_model
    if isinstance(library_or_model, TermLibrary):
        return library_model(library_or_model)
    raise TypeError(f"expected OdeModel or TermLibrary, got {type(library_or_model).__name__}")


def _initial_state(traj, config, model):
    mask = _obs_mask(traj)
    if config.z0_init is not None:
        z0 = np.asarray(config.z0_init, dtype=float)
    else:
        z0 = np.where(mask, traj.states[0], 0.0)
    # Z_k - z0 = tau_k * s * tanh(.), so s must exceed the largest mean slope
    # (X_k - X_0) / tau_k; skip the first few samples where noise dominates
    tau = (traj.times - traj.times[0]) / (traj.times[-1] - traj.times[0])
    k0 = max(1, traj.n_samples // 20)
    slope = np.max(np.abs(traj.states[k0:] - traj.states[0]) / tau[k0:, None], axis=0)
    spread = np.ptp(traj.states, axis=0)
    scale = np.where(mask, np.maximum(1.5 * slope, 2.0 * spread) + 1e-3, config.hidden_scale)
    theta0 = (np.zeros(model.p) if config.theta_init is None
              else np.asarray(config.theta_init, dtype=float))
    if theta0.shape != (model.p,):
        raise ValueError(f"theta_init must have {model.p} entries")
    return z0, scale, theta0


def _hidden_prior(traj, model, theta, z0):
    """Unmeasured channels of the model simulated from the initial guess,
    or None if that simulation blows up."""
    hidden = ~_obs_mask(traj)
    if not hidden.any():
        return None
    t0 = traj.times[0]
    inputs = InputSignal(model.input_names,
                         [(traj.times - t0, traj.inputs[:, j]) for j in range(model.m)])
    try:
        sim = simulate(model, theta, inputs, z0, traj.times[-1] - t0,
                       traj.n_samples)
    except (DivergenceError, DomainError):
        log.warning("hidden-channel prior diverged; training without it")
        return None
    states = np.column_stack([np.interp(traj.times - t0, sim.times, sim.states[:, i])
                              for i in range(model.n)])
    return states[:, hidden]


def _physics_weight(config, epoch):
    start = config.physics_warmup + config.theta_warmup
    if epoch < config.physics_warmup:
        return 0.0
    if epoch < start or config.physics_ramp == 0:
        w = config.physics_ramp_start if config.physics_ramp else 1.0
        return config.physics_weight * w
    frac = min((epoch - start) / config.physics_ramp, 1.0)
    return config.physics_weight * config.physics_ramp_start ** (1.0 - frac)


def _notify(progress, message):
    if progress is None:
        return
    if hasattr(progress, "put"):
        progress.put(message)
    else:
        progress(message)


def recover(traj: Trajectory, library_or_model, config: RecoveryConfig = RecoveryConfig(),
            progress=None) -> RecoveryReport:
    """Fit flow weights and sparse coefficients to a measured trajectory.

    ``progress`` may be a queue (anything with ``put``) or a callable; it
    receives one dict per epoch. On divergence a DivergenceError is raised;
    its ``report`` attribute holds the report up to the last finite epoch.
    """
    model = as_model(library_or_model)
    if traj.n_states != model.n or traj.n_inputs != model.m:
        raise ValueError(f"trajectory has {traj.n_states} states/{traj.n_inputs} inputs, "
                         f"model {model.name} expects {model.n}/{model.m}")
    start = time.perf_counter()
    proc = psutil.Process()
    peak_rss = proc.memory_info().rss

    z0, scale, theta = _initial_state(traj, config, model)
    flow = init_flow(config.hidden_dim, model.n, model.m, seed=config.seed, scale=scale)
    params = flow_to_dict(flow) | {"z0": z0, "theta": theta}
    lrs = {"theta": config.theta_learning_rate, "z0": config.z0_learning_rate}
    history = []
    pruned = np.zeros(model.p, dtype=bool)
    last_finite = None
    prior = _hidden_prior(traj, model, theta, z0) if config.hidden_prior else None
    total_epochs = config.epochs + config.refit_epochs

    def run_stage(params, n_epochs, sparsity_weight, epoch0, frozen):
        nonlocal last_finite, peak_rss
        opt = {}
        for i in range(n_epochs):
            epoch = epoch0 + i
            flow = flow_from_dict(params)
            Z, tape = flow_forward(flow, params["z0"], traj.inputs, traj.times)
            lam_p = _physics_weight(config, epoch)
            with np.errstate(over="ignore", invalid="ignore"):
                # a non-finite loss is reported below as a divergence
                total, comps, dZ, dtheta = loss_and_grads(Z, traj, params["theta"], model,
                                                          lam_p, sparsity_weight)
            if not np.isfinite(total):
                err = DivergenceError(f"loss became non-finite at epoch {epoch} "
                                      f"(last finite loss {last_finite})",
                                      epoch=epoch, last_finite_loss=last_finite)
                err.report = _report(params, Z, history, epoch)
                raise err
            last_finite = total
            history.append((total, comps["recon"], comps["physics"], comps["sparsity"]))
            _notify(progress, {"epoch": epoch, "total": total} | comps)

            if prior is not None and epoch < config.physics_warmup:
                hidden = ~_obs_mask(traj)
                dZ = dZ.copy()
                dZ[:, hidden] += 2.0 * (Z[:, hidden] - prior) / prior.size
            g_flow, dz0 = flow_backward(flow, tape, dZ)
            grads = flow_to_dict(g_flow) | {"z0": dz0, "theta": np.where(frozen, 0.0, dtheta)}
            if config.physics_warmup <= epoch < config.physics_warmup + config.theta_warmup:
                grads = {k: (v if k == "theta" else np.zeros_like(v)) for k, v in grads.items()}
            frac = i / max(n_epochs - 1, 1)
            decay = config.lr_decay ** frac
            params = _step(params, grads, opt, decay)
            params["theta"] = np.where(frozen, 0.0, params["theta"])
            if epoch % 50 == 0:
                peak_rss = max(peak_rss, proc.memory_info().rss)
        return params

    def _step(params, grads, opt, decay):
        new = {}
        for group in ("flow", "z0", "theta"):
            keys = [k for k in params if (k.startswith("flow.") if group == "flow" else k == group)]
            lr = (lrs.get(group) or config.learning_rate) * decay
            rule = StepRule(kind=config.optimizer, lr=lr)
            p_new, opt[group] = apply_update({k: params[k] for k in keys},
                                             {k: grads[k] for k in keys}, opt.get(group), rule)
            new.update(p_new)
        return new

    def _report(params, Z, history, epochs_run):
        mask = _obs_mask(traj)
        rmse = math.sqrt(reconstruction_loss(Z, traj))
        return RecoveryReport(
            theta_recovered=model.coefficients(params["theta"]),
            reconstruction_error=rmse, loss_history=list(history),
            converged=bool(rmse <= config.epsilon), epochs_run=epochs_run,
            wall_time_seconds=time.perf_counter() - start,
            peak_memory_bytes=int(max(peak_rss, proc.memory_info().rss)),
            z0=params["z0"].tolist(), pruned=np.flatnonzero(pruned).tolist(),
            prediction=Z)

    params = run_stage(params, config.epochs, config.sparsity_weight, 0, pruned)

    magnitude = np.abs(params["theta"])
    threshold = (config.prune_threshold if config.prune_threshold is not None
                 else 0.05 * (magnitude.max() if magnitude.size else 0.0))
    pruned = magnitude < threshold
    params["theta"] = np.where(pruned, 0.0, params["theta"])
    log.info("pruned %d of %d coefficients (threshold %.3g)", pruned.sum(), pruned.size, threshold)
    if config.refit_epochs:
        params = run_stage(params, config.refit_epochs, 0.0, config.epochs, pruned)

    Z, _ = flow_forward(flow_from_dict(params), params["z0"], traj.inputs, traj.times)
    return _report(params, Z, history, total_epochs)


def _recover_job(args):
    traj, model, config = args
    return recover(traj, model, config)


def recover_many(trajs: Sequence[Trajectory], library_or_model, config: RecoveryConfig,
                 workers: int = 1):
    """Independent recoveries over several series, optionally in worker processes."""
    jobs = [(t, library_or_model, config) for t in trajs]
    if workers <= 1 or len(jobs) <= 1:
        return [_recover_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_recover_job, jobs))


# --------------------------------------------------------------------------
# Identifiability


def check_identifiability(model: OdeModel, theta, inputs, x0, horizon, delta, tolerance,
                          observed=None, N=100, substeps=10):
    """Per-coefficient sensitivity test.

    Each coefficient is perturbed by ``delta`` (scalar or one per coefficient)
    and the model re-simulated over ``[0, horizon]``. A coefficient counts as
    identifiable when the largest deviation on observed channels, relative to
    the largest magnitude of those channels, exceeds ``tolerance``.
    """
    th = _theta_array(theta)
    delta = np.broadcast_to(np.asarray(delta, dtype=float), th.shape)
    if np.any(delta <= 0):
        raise ValueError("perturbation delta must be positive")
    observed = np.ones(model.n, bool) if observed is None else np.asarray(observed, bool)
    base = simulate(model, th, inputs, x0, horizon, N, substeps=substeps).states[:, observed]
    ref = max(float(np.max(np.abs(base))), np.finfo(float).tiny)
    flags = np.zeros(th.size, dtype=bool)
    for i in range(th.size):
        bumped = th.copy()
        bumped[i] += delta[i]
        other = simulate(model, bumped, inputs, x0, horizon, N, substeps=substeps).states[:, observed]
        flags[i] = np.max(np.abs(other - base)) / ref > tolerance
    return flags


def config_to_dict(config: RecoveryConfig):
    d = asdict(config)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
