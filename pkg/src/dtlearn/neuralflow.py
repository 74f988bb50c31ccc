"""GRU + dense neural-flow layer with hand-written backpropagation through time.

The flow maps an initial state estimate ``z0`` to a whole trajectory without
an ODE solve::

    h_0 = 0
    h_k = GRU(h_{k-1}, [z0; u_k; tau_k])
    Z_k = z0 + tau_k * s * tanh(W_out h_k + b_out)

with ``tau_k`` the sample time normalised to [0, 1] and ``s = exp(log_scale)``
a learnable positive per-channel scale. At ``tau = 0`` the map is exactly the
identity, whatever the weights.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import StructuralError

FORMAT_VERSION = 1
PARAM_NAMES = ("W_u", "W_r", "W_c", "b_u", "b_r", "b_c", "W_out", "b_out", "log_scale")


def sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


@dataclass(eq=False)
class FlowParams:
    W_u: np.ndarray
    W_r: np.ndarray
    W_c: np.ndarray
    b_u: np.ndarray
    b_r: np.ndarray
    b_c: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray
    log_scale: np.ndarray

    def __post_init__(self):
        H = self.b_u.shape[0]
        n = self.b_out.shape[0]
        d = self.W_u.shape[1] - H
        expected = {
            "W_u": (H, H + d), "W_r": (H, H + d), "W_c": (H, H + d),
            "b_u": (H,), "b_r": (H,), "b_c": (H,),
            "W_out": (n, H), "b_out": (n,), "log_scale": (n,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise StructuralError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def hidden_dim(self):
        return self.b_u.shape[0]

    @property
    def n(self):
        return self.b_out.shape[0]

    @property
    def input_dim(self):
        return self.W_u.shape[1] - self.hidden_dim

    @property
    def m(self):
        return self.input_dim - self.n - 1

    @property
    def dtype(self):
        return self.W_u.dtype

    def arrays(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def n_params(self):
        return sum(a.size for a in self.arrays().values())

    def copy(self):
        return FlowParams(**{k: v.copy() for k, v in self.arrays().items()})

    def zeros_like(self):
        return FlowParams(**{k: np.zeros_like(v) for k, v in self.arrays().items()})

    def map(self, fn, *others):
        return FlowParams(**{k: fn(v, *(o.arrays()[k] for o in others))
                             for k, v in self.arrays().items()})

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    def from_flat(self, vec):
        out, i = {}, 0
        for k, a in self.arrays().items():
            out[k] = np.asarray(vec[i:i + a.size], dtype=a.dtype).reshape(a.shape)
            i += a.size
        return FlowParams(**out)

    # serialisation ---------------------------------------------------------

    def to_json(self):
        return {"format_version": FORMAT_VERSION, "dtype": str(self.dtype),
                "arrays": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                           for k, v in self.arrays().items()}}

    @classmethod
    def from_json(cls, doc):
        _check_version(doc.get("format_version"))
        dtype = np.dtype(doc.get("dtype", "float64"))
        return cls(**{k: np.asarray(v["data"], dtype=dtype).reshape(v["shape"])
                      for k, v in doc["arrays"].items()})

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        np.savez(buf, format_version=np.array(FORMAT_VERSION), **self.arrays())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes):
        with np.load(io.BytesIO(data)) as npz:
            _check_version(int(npz["format_version"]))
            return cls(**{k: npz[k] for k in PARAM_NAMES})


def _check_version(version):
    if version != FORMAT_VERSION:
        raise StructuralError(f"unsupported flow format version {version!r}")


def param_count(H, n, m):
    """Number of scalars in a FlowParams: GRU + dense head + per-channel scale."""
    return 3 * H * (H + n + m + 1) + 3 * H + n * H + n + n


def init_flow(H, n, m, seed=0, scale=1.0, dtype=np.float64) -> FlowParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, head scale ``scale``."""
    gen = np.random.Generator(np.random.PCG64(seed))
    d = n + m + 1
    lim_gru = 1.0 / np.sqrt(H + d)
    lim_out = 1.0 / np.sqrt(H)

    def uni(shape, lim):
        return gen.uniform(-lim, lim, size=shape).astype(dtype)

    scale = np.broadcast_to(np.asarray(scale, dtype=float), (n,))
    return FlowParams(
        W_u=uni((H, H + d), lim_gru), W_r=uni((H, H + d), lim_gru), W_c=uni((H, H + d), lim_gru),
        b_u=np.zeros(H, dtype), b_r=np.zeros(H, dtype), b_c=np.zeros(H, dtype),
        W_out=uni((n, H), lim_out), b_out=np.zeros(n, dtype),
        log_scale=np.log(scale).astype(dtype),
    )


@dataclass(eq=False)
class FlowTape:
    """Everything the backward pass needs, one row per forward step."""

    z0: np.ndarray
    tau: np.ndarray        # (N,)
    x: np.ndarray          # (N, d) GRU inputs
    h: np.ndarray          # (N + 1, H); h[0] is the zero initial state
    g_u: np.ndarray        # (N, H)
    g_r: np.ndarray        # (N, H)
    cand: np.ndarray       # (N, H)
    q: np.ndarray          # (N, n) tanh head output
    Z: np.ndarray          # (N, n)

    def __len__(self):
        return self.tau.size


def normalized_time(times):
    times = np.asarray(times, dtype=float)
    return (times - times[0]) / (times[-1] - times[0])


def gru_step(params: FlowParams, h_prev, x):
    """One GRU update. Returns ``(h_next, record)`` with the gate values."""
    H = params.hidden_dim
    h_prev = np.asarray(h_prev, dtype=params.dtype)
    x = np.asarray(x, dtype=params.dtype)
    if h_prev.shape != (H,) or x.shape != (params.input_dim,):
        raise StructuralError(f"gru_step expects h of shape ({H},) and x of shape "
                              f"({params.input_dim},), got {h_prev.shape} and {x.shape}")
    v = np.concatenate([h_prev, x])
    g_u = sigmoid(params.W_u @ v + params.b_u)
    g_r = sigmoid(params.W_r @ v + params.b_r)
    cand = np.tanh(params.W_c @ np.concatenate([g_r * h_prev, x]) + params.b_c)
    h_next = (1.0 - g_u) * h_prev + g_u * cand
    return h_next, (g_u, g_r, cand)


def flow_forward(params: FlowParams, z0, inputs, times):
    """Run the flow over a sample grid.

    ``inputs`` is ``(N, m)``, ``times`` is ``(N,)``. Returns ``(Z, tape)``.
    """
    times = np.asarray(times, dtype=float)
    N = times.size
    if N < 2:
        raise ValueError("flow_forward needs at least 2 samples")
    n, H = params.n, params.hidden_dim
    dt = params.dtype
    z0 = np.asarray(z0, dtype=dt).reshape(-1)
    inputs = np.asarray(inputs, dtype=dt).reshape(N, -1) if np.size(inputs) else np.zeros((N, 0), dt)
    if z0.size != n or inputs.shape[1] != params.m:
        raise StructuralError(f"flow expects z0 of length {n} and {params.m} input channels")
    tau = normalized_time(times).astype(dt)
    x = np.concatenate([np.broadcast_to(z0, (N, n)), inputs, tau[:, None]], axis=1)
    # input projections do not depend on the recurrence: batch them
    Wuh, Wux = params.W_u[:, :H], params.W_u[:, H:]
    Wrh, Wrx = params.W_r[:, :H], params.W_r[:, H:]
    Wch, Wcx = params.W_c[:, :H], params.W_c[:, H:]
    pre_u = x @ Wux.T + params.b_u
    pre_r = x @ Wrx.T + params.b_r
    pre_c = x @ Wcx.T + params.b_c
    h = np.zeros((N + 1, H), dt)
    g_u = np.empty((N, H), dt)
    g_r = np.empty((N, H), dt)
    cand = np.empty((N, H), dt)
    for k in range(N):
        hk = h[k]
        g_u[k] = sigmoid(Wuh @ hk + pre_u[k])
        g_r[k] = sigmoid(Wrh @ hk + pre_r[k])
        cand[k] = np.tanh(Wch @ (g_r[k] * hk) + pre_c[k])
        h[k + 1] = hk + g_u[k] * (cand[k] - hk)
    q = np.tanh(h[1:] @ params.W_out.T + params.b_out)
    scale = np.exp(params.log_scale)
    Z = z0 + tau[:, None] * scale * q
    return Z, FlowTape(z0=z0, tau=tau, x=x, h=h, g_u=g_u, g_r=g_r, cand=cand, q=q, Z=Z)


def flow_backward(params: FlowParams, tape: FlowTape, dL_dZ):
    """Reverse-mode gradients of a loss through ``flow_forward``.

    Returns ``(grads, dL_dz0)`` where ``grads`` is a FlowParams of gradients.
    """
    dZ = np.asarray(dL_dZ, dtype=params.dtype)
    N, n, H = len(tape), params.n, params.hidden_dim
    if dZ.shape != (N, n) or tape.h.shape[1] != H or tape.x.shape[1] != params.input_dim:
        raise StructuralError("tape, gradient and params do not fit together")
    g = params.zeros_like()
    scale = np.exp(params.log_scale)

    dq = tape.tau[:, None] * scale * dZ
    g.log_scale[:] = np.sum(tape.tau[:, None] * tape.q * dZ, axis=0) * scale
    da_out = dq * (1.0 - tape.q ** 2)
    g.W_out[:] = da_out.T @ tape.h[1:]
    g.b_out[:] = da_out.sum(axis=0)
    dh_out = da_out @ params.W_out          # gradient arriving at each h_k from the head

    WuhT = params.W_u[:, :H].T.copy()
    WrhT = params.W_r[:, :H].T.copy()
    WchT = params.W_c[:, :H].T.copy()
    da_u = np.empty((N, H), params.dtype)
    da_r = np.empty((N, H), params.dtype)
    da_c = np.empty((N, H), params.dtype)
    dh = np.zeros(H, params.dtype)
    for k in range(N - 1, -1, -1):
        dh = dh + dh_out[k]
        h_prev, gu, gr, c = tape.h[k], tape.g_u[k], tape.g_r[k], tape.cand[k]
        da_c[k] = dh * gu * (1.0 - c * c)
        d_rh = WchT @ da_c[k]
        da_r[k] = d_rh * h_prev * gr * (1.0 - gr)
        da_u[k] = dh * (c - h_prev) * gu * (1.0 - gu)
        dh = dh * (1.0 - gu) + d_rh * gr + WrhT @ da_r[k] + WuhT @ da_u[k]

    h_prev = tape.h[:-1]
    x = tape.x
    g.W_u[:] = np.concatenate([da_u.T @ h_prev, da_u.T @ x], axis=1)
    g.W_r[:] = np.concatenate([da_r.T @ h_prev, da_r.T @ x], axis=1)
    g.W_c[:] = np.concatenate([da_c.T @ (tape.g_r * h_prev), da_c.T @ x], axis=1)
    g.b_u[:] = da_u.sum(axis=0)
    g.b_r[:] = da_r.sum(axis=0)
    g.b_c[:] = da_c.sum(axis=0)
    dx = da_u @ params.W_u[:, H:] + da_r @ params.W_r[:, H:] + da_c @ params.W_c[:, H:]
    dz0 = dZ.sum(axis=0) + dx[:, :n].sum(axis=0)
    return g, dz0


# --------------------------------------------------------------------------
# Optimiser


@dataclass(frozen=True)
class StepRule:
    """``kind`` is ``"sgd"`` (plain gradient descent) or ``"adam"``."""

    kind: str = "adam"
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown step rule {self.kind!r}")


def init_optimizer(params: dict) -> dict:
    return {"t": 0,
            "m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()}}


def apply_update(params: dict, grads: dict, state: Optional[dict], rule: StepRule):
    """One optimiser step over a dict of named arrays.

    Pure: inputs are not modified. Returns ``(new_params, new_state)``.
    """
    if params.keys() != grads.keys():
        raise StructuralError("params and grads have different keys")
    for k in params:
        if np.shape(params[k]) != np.shape(grads[k]):
            raise StructuralError(f"shape mismatch for {k}")
    if rule.kind == "sgd":
        return {k: params[k] - rule.lr * grads[k] for k in params}, state
    state = state or init_optimizer(params)
    t = state["t"] + 1
    new_m, new_v, new_p = {}, {}, {}
    c1 = 1.0 - rule.beta1 ** t
    c2 = 1.0 - rule.beta2 ** t
    for k in params:
        g = grads[k]
        new_m[k] = rule.beta1 * state["m"][k] + (1.0 - rule.beta1) * g
        new_v[k] = rule.beta2 * state["v"][k] + (1.0 - rule.beta2) * g * g
        step = rule.lr * (new_m[k] / c1) / (np.sqrt(new_v[k] / c2) + rule.eps)
        new_p[k] = params[k] - step
    return new_p, {"t": t, "m": new_m, "v": new_v}


def flow_to_dict(params: FlowParams, prefix="flow."):
    return {prefix + k: v for k, v in params.arrays().items()}


def flow_from_dict(d: dict, prefix="flow."):
    return FlowParams(**{k: d[prefix + k] for k in PARAM_NAMES})


def dumps_flow(params: FlowParams) -> str:
    return json.dumps(params.to_json())
