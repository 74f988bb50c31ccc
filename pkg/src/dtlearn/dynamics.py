"""Ground-truth ODE models and the fixed-step RK4 integrator.

Every model is exposed as an :class:`OdeModel` whose right-hand side is
vectorised over leading axes: ``x`` has shape ``(..., n)``, ``u`` has shape
``(..., m)``. Each model also provides analytic Jacobians with respect to the
state and the coefficient vector, which the recovery trainer needs for the
physics term.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DivergenceError, DomainError, StructuralError
from .signal import Trajectory, rng

BLOWUP_LIMIT = 1e12


# --------------------------------------------------------------------------
# Inputs and coefficients


@dataclass(frozen=True)
class InputSignal:
    """Named input channels evaluated as functions of time.

    A channel is a constant, a callable ``f(t)`` (vectorised over ``t``), or a
    sampled ``(times, values)`` pair interpolated linearly and held constant
    outside the sampled range.
    """

    names: tuple
    channels: tuple

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "channels", tuple(self.channels))
        if len(self.names) != len(self.channels):
            raise StructuralError("one name per input channel required")

    @classmethod
    def from_dict(cls, channels: dict) -> "InputSignal":
        return cls(tuple(channels), tuple(channels.values()))

    @property
    def m(self):
        return len(self.names)

    def at(self, t):
        t = np.asarray(t, dtype=float)
        cols = [_eval_channel(c, t) for c in self.channels]
        if not cols:
            return np.zeros(t.shape + (0,))
        return np.stack(cols, axis=-1)

    def channel(self, name):
        return self.channels[self.names.index(name)]


def _eval_channel(channel, t):
    if callable(channel):
        return np.broadcast_to(np.asarray(channel(t), dtype=float), t.shape).astype(float)
    if isinstance(channel, tuple) and len(channel) == 2:
        times, values = channel
        return np.interp(t, np.asarray(times, dtype=float), np.asarray(values, dtype=float))
    return np.full(t.shape, float(channel))


def _input_values(inputs, t):
    if inputs is None:
        return np.zeros(np.shape(t) + (0,))
    if isinstance(inputs, InputSignal):
        return inputs.at(t)
    return np.asarray(inputs, dtype=float)


@dataclass(frozen=True, eq=False)
class CoefficientVector:
    """Sparse coefficient set.

    For library models ``term_ids`` index the flattened ``(n, L)`` grid of
    (equation, library term) pairs, i.e. ``id = j * L + k``. For the hand
    written models they are ``0..p-1`` in the model's coefficient order.
    """

    values: np.ndarray
    term_ids: np.ndarray
    model_tag: str = ""
    names: tuple = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        term_ids = np.asarray(self.term_ids, dtype=int).reshape(-1)
        if values.shape != term_ids.shape:
            raise StructuralError("values and term_ids must have equal length")
        if np.unique(term_ids).size != term_ids.size:
            raise StructuralError("term_ids must be unique")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "term_ids", term_ids)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def p(self):
        return self.values.size

    def with_values(self, values) -> "CoefficientVector":
        return CoefficientVector(values, self.term_ids, self.model_tag, self.names)

    def as_dict(self):
        keys = self.names or tuple(str(i) for i in self.term_ids)
        return dict(zip(keys, self.values.tolist()))

    def to_json(self):
        return {"model_tag": self.model_tag, "term_ids": self.term_ids.tolist(),
                "names": list(self.names), "values": self.values.tolist()}

    @classmethod
    def from_json(cls, doc):
        return cls(doc["values"], doc["term_ids"], doc.get("model_tag", ""),
                   tuple(doc.get("names", ())))


def _theta_values(theta):
    return np.asarray(getattr(theta, "values", theta), dtype=float)


# --------------------------------------------------------------------------
# Term library


@dataclass(frozen=True, eq=False)
class TermLibrary:
    """Ordered monomials over ``n`` states and ``m`` inputs.

    ``terms`` holds exponent tuples of length ``n + m``; index 0 is the
    constant term.
    """

    order: int
    n: int
    m: int
    terms: tuple
    variable_names: tuple = ()

    def __post_init__(self):
        exps = np.asarray(self.terms, dtype=int).reshape(len(self.terms), self.n + self.m)
        if exps.shape[0] == 0 or exps[0].any():
            raise StructuralError("library must start with the constant term")
        object.__setattr__(self, "terms", tuple(tuple(int(e) for e in row) for row in exps))
        if not self.variable_names:
            names = tuple(f"x{i}" for i in range(self.n)) + tuple(f"u{i}" for i in range(self.m))
            object.__setattr__(self, "variable_names", names)
        object.__setattr__(self, "_exps", exps)

    def __len__(self):
        return len(self.terms)

    @property
    def exponents(self):
        return self._exps

    def term_names(self):
        out = []
        for row in self.terms:
            parts = [v if e == 1 else f"{v}^{e}" for v, e in zip(self.variable_names, row) if e]
            out.append("*".join(parts) or "1")
        return out

    def features(self, x, u=None):
        """Evaluate all monomials: returns shape ``(..., L)``."""
        w = self._stack(x, u)
        return np.prod(w[..., None, :] ** self._exps, axis=-1)

    def features_dx(self, x, u=None):
        """d features / d state, shape ``(..., L, n)``."""
        w = self._stack(x, u)
        exps = self._exps
        out = np.empty(w.shape[:-1] + (len(self), self.n))
        for v in range(self.n):
            reduced = exps.copy()
            reduced[:, v] = np.maximum(reduced[:, v] - 1, 0)
            out[..., v] = exps[:, v] * np.prod(w[..., None, :] ** reduced, axis=-1)
        return out

    def _stack(self, x, u):
        x = np.asarray(x, dtype=float)
        if self.m:
            u = np.broadcast_to(np.asarray(u, dtype=float), x.shape[:-1] + (self.m,))
            return np.concatenate([x, u], axis=-1)
        return x


def build_library(n: int, m: int = 0, M: int = 2, cap: int = 10_000,
                  variable_names: Sequence[str] = ()) -> TermLibrary:
    """All state monomials up to total degree ``M`` in graded lex order,
    followed by one linear term per input channel."""
    if n < 1 or M < 1 or m < 0:
        raise ValueError("need n >= 1, M >= 1, m >= 0")
    count = math.comb(M + n, n) + m
    if count > cap:
        raise ValueError(f"library would have {count} terms, cap is {cap}")
    terms = []
    for degree in range(M + 1):
        degree_terms = [e for e in itertools.product(range(degree + 1), repeat=n) if sum(e) == degree]
        terms.extend(sorted(degree_terms, reverse=True))
    rows = [tuple(e) + (0,) * m for e in terms]
    for i in range(m):
        rows.append((0,) * n + tuple(int(i == j) for j in range(m)))
    return TermLibrary(order=M, n=n, m=m, terms=tuple(rows), variable_names=tuple(variable_names))


# --------------------------------------------------------------------------
# Models


@dataclass(frozen=True, eq=False)
class OdeModel:
    """A parameterised vector field with analytic Jacobians.

    ``rhs(x, u, theta, t)``, ``jac_state`` -> ``(..., n, n)`` and
    ``jac_theta`` -> ``(..., n, p)`` all take ``theta`` as a flat array.
    """

    name: str
    state_names: tuple
    input_names: tuple
    theta_names: tuple
    rhs: Callable
    jac_state: Callable
    jac_theta: Callable
    time_unit: str = "s"
    library: Optional[TermLibrary] = None
    term_ids: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.state_names)

    @property
    def m(self):
        return len(self.input_names)

    @property
    def p(self):
        return len(self.theta_names)

    def coefficients(self, values) -> CoefficientVector:
        ids = self.term_ids if self.term_ids is not None else np.arange(self.p)
        return CoefficientVector(values, ids, self.name, self.theta_names)


def _check_finite(symbols, arrays):
    for sym, arr in zip(symbols, arrays):
        if not np.all(np.isfinite(arr)):
            raise DomainError(sym, f"non-finite value in {sym}")


# Bergman minimal model --------------------------------------------------------

BERGMAN_STATES = ("di", "dis", "dG")
BERGMAN_INPUTS = ("u1", "u2", "i_b", "G_b")
BERGMAN_THETA = ("p1", "p2", "p3", "p4", "n_coef", "invVoI")


def bergman_rhs(state, inputs, theta, t=0.0):
    """Glucose-insulin minimal model.

    States ``[di, dis, dG]``; inputs ``[u1, u2, i_b, G_b]``; coefficients
    ``[p1, p2, p3, p4, n_coef, invVoI]``. ``inputs`` may be an InputSignal
    (evaluated at ``t``) or already-evaluated values.
    """
    x = np.asarray(state, dtype=float)
    u = _input_values(inputs, t)
    th = _theta_values(theta)
    if th.shape[-1] != 6:
        raise StructuralError("Bergman model takes exactly 6 coefficients")
    _check_finite(BERGMAN_STATES, np.moveaxis(x, -1, 0))
    _check_finite(BERGMAN_THETA, th)
    di, dis, dG = x[..., 0], x[..., 1], x[..., 2]
    u1, u2, i_b, G_b = u[..., 0], u[..., 1], u[..., 2], u[..., 3]
    p1, p2, p3, p4, n_coef, inv_voi = th
    return np.stack([
        -n_coef * di + p4 * u1,
        -p1 * dis + p2 * (di - i_b),
        -dis * G_b - p3 * dG + u2 * inv_voi,
    ], axis=-1)


def _bergman_jac_state(x, u, th, t=0.0):
    x = np.asarray(x, dtype=float)
    p1, p2, p3, p4, n_coef, inv_voi = th
    G_b = np.asarray(u, dtype=float)[..., 3]
    J = np.zeros(np.broadcast_shapes(x.shape[:-1], G_b.shape) + (3, 3))
    J[..., 0, 0] = -n_coef
    J[..., 1, 0] = p2
    J[..., 1, 1] = -p1
    J[..., 2, 1] = -G_b
    J[..., 2, 2] = -p3
    return J


def _bergman_jac_theta(x, u, th, t=0.0):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    J = np.zeros(x.shape[:-1] + (3, 6))
    J[..., 1, 0] = -x[..., 1]
    J[..., 1, 1] = x[..., 0] - u[..., 2]
    J[..., 2, 2] = -x[..., 2]
    J[..., 0, 3] = u[..., 0]
    J[..., 0, 4] = -x[..., 0]
    J[..., 2, 5] = u[..., 1]
    return J


BERGMAN = OdeModel("bergman", BERGMAN_STATES, BERGMAN_INPUTS, BERGMAN_THETA,
                   bergman_rhs, _bergman_jac_state, _bergman_jac_theta, time_unit="min")


def bergman_as_library(theta):
    """Express the Bergman model in library form.

    Returns ``(library, coefficients)`` such that ``library_rhs`` reproduces
    ``bergman_rhs`` exactly. Variables are ``di, dis, dG, u1, u2, i_b, G_b``.
    """
    p1, p2, p3, p4, n_coef, inv_voi = _theta_values(theta)
    # exponents over (di, dis, dG, u1, u2, i_b, G_b)
    terms = (
        (0, 0, 0, 0, 0, 0, 0),
        (1, 0, 0, 0, 0, 0, 0),
        (0, 1, 0, 0, 0, 0, 0),
        (0, 0, 1, 0, 0, 0, 0),
        (0, 0, 0, 1, 0, 0, 0),
        (0, 0, 0, 0, 1, 0, 0),
        (0, 0, 0, 0, 0, 1, 0),
        (0, 1, 0, 0, 0, 0, 1),
    )
    lib = TermLibrary(order=2, n=3, m=4, terms=terms,
                      variable_names=BERGMAN_STATES + BERGMAN_INPUTS)
    L = len(lib)
    entries = {
        (0, 1): -n_coef, (0, 4): p4,
        (1, 2): -p1, (1, 1): p2, (1, 6): -p2,
        (2, 7): -1.0, (2, 3): -p3, (2, 5): inv_voi,
    }
    ids = [j * L + k for (j, k) in entries]
    return lib, CoefficientVector(list(entries.values()), ids, "bergman-library")


# ECGSYN --------------------------------------------------------------------

ECG_WAVES = ("P", "Q", "R", "S", "T")
ECGSYN_STATES = ("x", "y", "z")
ECGSYN_INPUTS = ("r", "A_b", "f_resp")
ECGSYN_THETA = (tuple(f"a_{w}" for w in ECG_WAVES) + tuple(f"b_{w}" for w in ECG_WAVES)
                + tuple(f"theta_{w}" for w in ECG_WAVES))

# Standard PQRST morphology; angles in radians.
ECGSYN_DEFAULT_THETA = np.array(
    [1.2, -5.0, 30.0, -7.5, 0.75]
    + [0.25, 0.1, 0.1, 0.1, 0.4]
    + list(np.deg2rad([-70.0, -15.0, 0.0, 15.0, 100.0]))
)


def wrap_phase(angle):
    """Map angles into (-pi, pi]."""
    wrapped = np.mod(angle + np.pi, 2.0 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


def _ecg_parts(x, u, th, t):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    th = np.asarray(th, dtype=float)
    if th.shape[-1] != 15:
        raise StructuralError("ECGSYN takes exactly 15 coefficients")
    r, A_b, f_resp = u[..., 0], u[..., 1], u[..., 2]
    if np.any(r <= 0):
        raise DomainError("r", "RR interval r(t) must be positive")
    a, b, ti = th[:5], th[5:10], th[10:]
    if not np.all(b > 0):
        w = ECG_WAVES[int(np.argmin(b > 0))]
        raise DomainError(f"b_{w}", f"peak width b_{w} must be positive")
    omega = 2.0 * np.pi / r
    phase = np.arctan2(x[..., 1], x[..., 0])
    dtheta = wrap_phase(phase[..., None] - ti)
    gauss = np.exp(-dtheta ** 2 / (2.0 * b ** 2))
    z0 = A_b * np.sin(2.0 * np.pi * f_resp * np.asarray(t, dtype=float))
    return x, omega, dtheta, gauss, z0, a, b


def ecgsyn_rhs(state, inputs, theta, t=0.0):
    """Three-state synthetic ECG vector field.

    ``inputs`` is an InputSignal or values ``[r, A_b, f_resp]``.
    """
    u = _input_values(inputs, t)
    x, omega, dtheta, gauss, z0, a, b = _ecg_parts(state, u, _theta_values(theta), t)
    radial = 1.0 - np.hypot(x[..., 0], x[..., 1])
    out = np.empty(np.broadcast_shapes(x.shape, np.shape(radial) + (3,)))
    out[..., 0] = radial * x[..., 0] - omega * x[..., 1]
    out[..., 1] = radial * x[..., 1] + omega * x[..., 0]
    out[..., 2] = -np.sum(a * dtheta * gauss, axis=-1) - (x[..., 2] - z0)
    return out


def _ecg_jac_state(state, u, th, t=0.0):
    x, omega, dtheta, gauss, z0, a, b = _ecg_parts(state, u, th, t)
    X, Y = x[..., 0], x[..., 1]
    rho = np.hypot(X, Y)
    safe = np.where(rho > 0, rho, 1.0)
    J = np.zeros(np.broadcast_shapes(X.shape, omega.shape) + (3, 3))
    J[..., 0, 0] = (1 - rho) - X ** 2 / safe
    J[..., 0, 1] = -X * Y / safe - omega
    J[..., 1, 0] = -X * Y / safe + omega
    J[..., 1, 1] = (1 - rho) - Y ** 2 / safe
    # d(dtheta)/dx = -y/rho^2, d(dtheta)/dy = x/rho^2
    dz_dphase = -np.sum(a * gauss * (1 - dtheta ** 2 / b ** 2), axis=-1)
    J[..., 2, 0] = dz_dphase * (-Y / safe ** 2)
    J[..., 2, 1] = dz_dphase * (X / safe ** 2)
    J[..., 2, 2] = -1.0
    return J


def _ecg_jac_theta(state, u, th, t=0.0):
    x, omega, dtheta, gauss, z0, a, b = _ecg_parts(state, u, th, t)
    J = np.zeros(x.shape[:-1] + (3, 15))
    J[..., 2, 0:5] = -dtheta * gauss
    J[..., 2, 5:10] = -a * dtheta * gauss * dtheta ** 2 / b ** 3
    J[..., 2, 10:15] = a * gauss * (1 - dtheta ** 2 / b ** 2)
    return J


ECGSYN = OdeModel("ecgsyn", ECGSYN_STATES, ECGSYN_INPUTS, ECGSYN_THETA,
                  ecgsyn_rhs, _ecg_jac_state, _ecg_jac_theta, time_unit="s")


def rr_process(duration, hr_mean=60.0, hr_std=1.0, lf_hf_ratio=0.5, seed=0, fs=4.0,
               f_lo=0.1, f_hi=0.25, std_lo=0.01, std_hi=0.01):
    """RR-interval series whose spectrum is a sum of two Gaussians
    (Mayer waves around ``f_lo``, respiration around ``f_hi``).

    Returns ``(times, rr)`` in seconds, sampled at ``fs`` Hz, usable as a
    sampled InputSignal channel.
    """
    n = int(2 ** math.ceil(math.log2(max(duration * fs, 16))))
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    s_lo = np.exp(-(freqs - f_lo) ** 2 / (2 * std_lo ** 2))
    s_hi = np.exp(-(freqs - f_hi) ** 2 / (2 * std_hi ** 2))
    amplitude = np.sqrt(lf_hf_ratio * s_lo + s_hi)
    phases = 2 * math.pi * rng(seed).random(freqs.size)
    series = np.fft.irfft(amplitude * np.exp(1j * phases), n=n)
    rr_std = 60.0 * hr_std / hr_mean ** 2
    rr = 60.0 / hr_mean + series * (rr_std / np.std(series))
    times = np.arange(n) / fs
    keep = times <= duration + 1.0 / fs
    return times[keep], rr[keep]


# Library models ----------------------------------------------------------------


def library_rhs(state, inputs, theta: CoefficientVector, library: TermLibrary, t=0.0):
    """Sparse library vector field: dx_j/dt = sum_k theta_{j,k} * monomial_k(x, u)."""
    x = np.asarray(state, dtype=float)
    Theta = _coefficient_grid(theta, library)
    u = _input_values(inputs, t) if library.m else None
    return library.features(x, u) @ Theta.T


def _coefficient_grid(theta, library):
    values = _theta_values(theta)
    ids = np.asarray(theta.term_ids)
    L = len(library)
    if ids.size and (ids.min() < 0 or ids.max() >= library.n * L):
        raise IndexError(f"term id out of range for a {library.n}x{L} library")
    grid = np.zeros(library.n * L)
    grid[ids] = values
    return grid.reshape(library.n, L)


def library_model(library: TermLibrary, term_ids=None, name="library") -> OdeModel:
    """Wrap a library (and optional sparsity pattern) as an OdeModel.

    ``term_ids`` defaults to every (equation, term) pair.
    """
    L = len(library)
    ids = np.arange(library.n * L) if term_ids is None else np.asarray(term_ids, dtype=int)
    if ids.size and (ids.min() < 0 or ids.max() >= library.n * L):
        raise IndexError("term id out of range")
    eq, term = np.divmod(ids, L)
    tnames = library.term_names()
    snames = library.variable_names[:library.n]
    theta_names = tuple(f"d{snames[j]}:{tnames[k]}" for j, k in zip(eq, term))

    def grid(th):
        g = np.zeros((library.n, L))
        g[eq, term] = th
        return g

    def rhs(x, u, th, t=0.0):
        x = np.asarray(x, dtype=float)
        return library.features(x, u if library.m else None) @ grid(th).T

    def jac_state(x, u, th, t=0.0):
        dphi = library.features_dx(np.asarray(x, dtype=float), u if library.m else None)
        return np.einsum("jk,...kv->...jv", grid(th), dphi)

    def jac_theta(x, u, th, t=0.0):
        x = np.asarray(x, dtype=float)
        phi = library.features(x, u if library.m else None)
        J = np.zeros(x.shape[:-1] + (library.n, ids.size))
        J[..., eq, np.arange(ids.size)] = phi[..., term]
        return J

    return OdeModel(name, snames, library.variable_names[library.n:], theta_names,
                    rhs, jac_state, jac_theta, library=library, term_ids=ids)


# --------------------------------------------------------------------------
# Integration


def rk4_step(rhs, state, inputs, t, h, step=None):
    """One classical Runge-Kutta step of ``rhs(x, u, t)``.

    ``inputs`` is an InputSignal, pre-evaluated values, or None.
    """
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    x = np.asarray(state, dtype=float)
    if isinstance(inputs, InputSignal):
        u0, u_mid, u1 = inputs.at(t), inputs.at(t + 0.5 * h), inputs.at(t + h)
    else:
        u0 = u_mid = u1 = inputs
    k1 = rhs(x, u0, t)
    k2 = rhs(x + 0.5 * h * k1, u_mid, t + 0.5 * h)
    k3 = rhs(x + 0.5 * h * k2, u_mid, t + 0.5 * h)
    k4 = rhs(x + h * k3, u1, t + h)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        where = f" at step {step}" if step is not None else ""
        raise DomainError("state", f"non-finite state{where} (t={t + h})")
    return out


def simulate(model: OdeModel, theta, inputs: Optional[InputSignal], x0, T, N,
             substeps=10, mask=None) -> Trajectory:
    """Integrate ``model`` over ``[0, T]`` and sample it at ``N`` uniform points."""
    if N < 2:
        raise ValueError("need N >= 2 samples")
    if not T > 0:
        raise ValueError("horizon T must be positive")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    th = _theta_values(theta)
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (model.n,):
        raise StructuralError(f"x0 must have length {model.n}")
    times = np.linspace(0.0, T, N)
    states = np.empty((N, model.n))
    states[0] = x

    def f(xx, uu, tt):
        return model.rhs(xx, uu, th, tt)

    step = 0
    for k in range(N - 1):
        h = (times[k + 1] - times[k]) / substeps
        for s in range(substeps):
            t = times[k] + s * h
            x = rk4_step(f, x, inputs, t, h, step=step)
            step += 1
            if np.any(np.abs(x) > BLOWUP_LIMIT):
                raise DivergenceError(f"state exceeded {BLOWUP_LIMIT:g} at t={t + h:g}", time=t + h)
        states[k + 1] = x
    u = inputs.at(times) if inputs is not None else np.zeros((N, 0))
    return Trajectory(times=times, states=states, inputs=u,
                      mask=np.ones(model.n, bool) if mask is None else mask,
                      state_names=model.state_names,
                      input_names=inputs.names if inputs is not None else (),
                      meta={"model": model.name, "time_unit": model.time_unit})


# --------------------------------------------------------------------------
# Fixtures


def _data_json(name):
    return json.loads(resources.files("dtlearn.data").joinpath(name).read_text())


def bergman_fixture():
    """Fixture coefficients, inputs and initial state for the Bergman model.

    Returns a dict with ``theta`` (CoefficientVector), ``inputs``
    (InputSignal), ``x0``, ``T`` and ``N``.
    """
    doc = _data_json("bergman_fixture.json")
    theta = BERGMAN.coefficients([doc["theta"][k] for k in BERGMAN_THETA])
    return {"theta": theta, "inputs": bergman_inputs(doc["inputs"]),
            "x0": np.array(doc["x0"], dtype=float), "T": float(doc["T"]),
            "N": int(doc["N"]), "doc": doc}


def bergman_inputs(spec: dict) -> InputSignal:
    """Build Bergman inputs from a JSON-able description.

    ``spec`` holds constants ``i_b``, ``G_b``, basal rates ``u1_basal``,
    ``u2_basal``, insulin boluses ``[[start, duration, rate], ...]`` and meals
    ``[[start, amount], ...]`` whose appearance rate follows
    ``amount * t/tau^2 * exp(-t/tau)``.
    """
    boluses = [tuple(b) for b in spec.get("boluses", ())]
    meals = [tuple(m) for m in spec.get("meals", ())]
    tau = float(spec.get("meal_tau", 40.0))
    u1_basal = float(spec.get("u1_basal", 0.0))
    u2_basal = float(spec.get("u2_basal", 0.0))
    ramp = float(spec.get("bolus_ramp", 5.0))

    def u1(t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, u1_basal)
        for start, duration, rate in boluses:
            # trapezoid pulse keeps the input continuous for RK4
            rise = np.clip((t - start) / ramp, 0.0, 1.0)
            fall = np.clip((start + duration - t) / ramp, 0.0, 1.0)
            out = out + rate * np.minimum(rise, fall)
        return out

    def u2(t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, u2_basal)
        for start, amount in meals:
            s = np.maximum(t - start, 0.0)
            out = out + amount * s / tau ** 2 * np.exp(-s / tau)
        return out

    return InputSignal(BERGMAN_INPUTS, (u1, u2, float(spec["i_b"]), float(spec["G_b"])))


def ecgsyn_inputs(r=1.0, A_b=0.0, f_resp=0.25) -> InputSignal:
    """ECGSYN inputs; ``r`` may be a constant, callable or ``(times, rr)`` pair."""
    return InputSignal(ECGSYN_INPUTS, (r, float(A_b), float(f_resp)))


MODELS = {"bergman": BERGMAN, "ecgsyn": ECGSYN}


def get_model(name) -> OdeModel:
    try:
        return MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
