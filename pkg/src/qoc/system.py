"""Controllable quantum systems and pulse parameterizations."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import BadIndex, DimMismatch, OutOfRange
from .linalg import as_matrix, check_hermitian

FOURIER = "fourier"
GAUSSIAN = "gaussian"
ANSATZ_KINDS = (FOURIER, GAUSSIAN)
WINDOWS = ("none", "sine")


@dataclass(frozen=True)
class ControlSystem:
    """``H(t) = drift + sum_i u_i(t) controls[i]`` in angular-frequency units."""

    drift: np.ndarray
    controls: tuple
    labels: tuple = ()
    amplitude_limits: tuple | None = None

    def __post_init__(self):
        drift = as_matrix(self.drift, "drift")
        check_hermitian(drift, "drift")
        d = drift.shape[0]
        if d < 2:
            raise DimMismatch("dimension must be at least 2")
        ctrls = []
        for k, h in enumerate(self.controls):
            h = as_matrix(h, f"control {k}")
            if h.shape != drift.shape:
                raise DimMismatch(f"control {k} has shape {h.shape}, drift is {drift.shape}")
            check_hermitian(h, f"control {k}")
            ctrls.append(h)
        labels = tuple(self.labels) or tuple(f"u{k + 1}" for k in range(len(ctrls)))
        if len(labels) != len(ctrls):
            raise DimMismatch("one label per control required")
        limits = self.amplitude_limits
        if limits is not None:
            limits = tuple(None if lim is None else (float(lim[0]), float(lim[1])) for lim in limits)
            if len(limits) != len(ctrls):
                raise DimMismatch("one amplitude limit per control required")
            for lim in limits:
                if lim is not None and not lim[0] < lim[1]:
                    raise ValueError(f"amplitude limit {lim} is empty")
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "controls", tuple(ctrls))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "amplitude_limits", limits)

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    @property
    def control_stack(self) -> np.ndarray:
        return np.array(self.controls).reshape(self.n_controls, self.dim, self.dim)

    def hamiltonian(self, amplitudes) -> np.ndarray:
        """Hamiltonian for one amplitude vector, or a stack for an ``(N, n)`` array."""
        u = np.asarray(amplitudes, dtype=float)
        if u.shape[-1] != self.n_controls:
            raise DimMismatch(f"expected {self.n_controls} amplitudes, got {u.shape[-1]}")
        return self.drift + np.tensordot(u, self.control_stack, axes=([-1], [0]))

    def clip(self, values: np.ndarray) -> np.ndarray:
        """Project amplitudes onto the amplitude limits."""
        if self.amplitude_limits is None:
            return values
        out = np.array(values, dtype=float, copy=True)
        for i, lim in enumerate(self.amplitude_limits):
            if lim is not None:
                out[..., i] = np.clip(out[..., i], lim[0], lim[1])
        return out

    def with_drift(self, drift) -> "ControlSystem":
        return replace(self, drift=drift)


@dataclass(frozen=True)
class PiecewisePulse:
    """Piecewise-constant amplitudes ``values[j, i]`` held on ``[j dt, (j + 1) dt)``."""

    values: np.ndarray
    dt: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1:
            raise DimMismatch("values must be an (N, n_controls) array")
        if not np.all(np.isfinite(v)):
            raise ValueError("pulse values must be finite")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "dt", float(self.dt))

    @classmethod
    def constant(cls, n_slices: int, duration: float, amplitudes) -> "PiecewisePulse":
        amps = np.atleast_1d(np.asarray(amplitudes, dtype=float))
        return cls(np.tile(amps, (n_slices, 1)), duration / n_slices)

    @property
    def n_slices(self) -> int:
        return self.values.shape[0]

    @property
    def n_controls(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return self.n_slices * self.dt

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.n_slices + 1) * self.dt

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_slices) + 0.5) * self.dt

    def with_values(self, values) -> "PiecewisePulse":
        return PiecewisePulse(values, self.dt)

    def resampled(self, n_slices: int, horizon: float | None = None) -> "PiecewisePulse":
        """Stretch or re-slice onto a new grid by sampling at the new slice midpoints."""
        horizon = self.horizon if horizon is None else horizon
        s = (np.arange(n_slices) + 0.5) / n_slices
        idx = np.minimum((s * self.n_slices).astype(int), self.n_slices - 1)
        return PiecewisePulse(self.values[idx], horizon / n_slices)


@dataclass(frozen=True)
class AnalyticPulse:
    """Sum-of-terms ansatz per control.

    ``params`` has shape ``(n_controls, n_terms, 3)``. For ``fourier`` each
    triple is ``(A, omega, phi)`` giving ``A cos(omega t + phi)``; for
    ``gaussian`` it is ``(A, tau, sigma)`` giving ``A exp(-(t - tau)^2 / sigma^2)``.
    ``window="sine"`` multiplies every control by ``sin(pi t / T)``.
    The flat parameter vector orders controls, then terms, then triple slots.
    """

    kind: str
    params: np.ndarray
    horizon: float
    window: str = "none"

    def __post_init__(self):
        if self.kind not in ANSATZ_KINDS:
            raise ValueError(f"unknown ansatz kind {self.kind!r}")
        if self.window not in WINDOWS:
            raise ValueError(f"unknown window {self.window!r}")
        p = np.asarray(self.params, dtype=float)
        if p.ndim == 2:
            p = p[None]
        if p.ndim != 3 or p.shape[2] != 3:
            raise DimMismatch("params must have shape (n_controls, n_terms, 3)")
        if self.kind == GAUSSIAN and np.any(p[..., 2] <= 0):
            raise ValueError("Gaussian widths must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def n_controls(self) -> int:
        return self.params.shape[0]

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def flat(self) -> np.ndarray:
        return self.params.ravel().copy()

    def with_flat(self, flat) -> "AnalyticPulse":
        return replace(self, params=np.asarray(flat, dtype=float).reshape(self.params.shape))

    def rescaled(self, horizon: float) -> "AnalyticPulse":
        """Stretch onto a new horizon: frequencies scale by ``T/T'``, centers and widths by ``T'/T``."""
        r = horizon / self.horizon
        p = self.params.copy()
        if self.kind == FOURIER:
            p[..., 1] /= r
        else:
            p[..., 1:] *= r
        return replace(self, params=p, horizon=horizon)

    def param_role(self, m: int) -> str:
        names = ("amplitude", "frequency", "phase") if self.kind == FOURIER else ("amplitude", "center", "width")
        return names[m % 3]

    def _window(self, t):
        if self.window == "none":
            return np.ones_like(t)
        return np.sin(np.pi * t / self.horizon)

    def _terms(self, t):
        # returns per-term value and partials, each shaped (n_controls, n_terms, len(t))
        t = np.asarray(t, dtype=float)
        a = self.params[..., 0:1]
        b = self.params[..., 1:2]
        c = self.params[..., 2:3]
        if self.kind == FOURIER:
            arg = b * t + c
            cos, sin = np.cos(arg), np.sin(arg)
            value = a * cos
            partials = (cos, -a * t * sin, -a * sin)
        else:
            r = t - b
            env = np.exp(-(r**2) / c**2)
            value = a * env
            partials = (env, a * 2 * r / c**2 * env, a * 2 * r**2 / c**3 * env)
        return value, partials

    def values(self, t) -> np.ndarray:
        """Control amplitudes at times ``t``; shape ``(len(t), n_controls)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        value, _ = self._terms(t)
        return (value.sum(axis=1) * self._window(t)).T

    def jacobian(self, t) -> np.ndarray:
        """Partials ``d c_k / d alpha_m`` at times ``t``; shape ``(len(t), n_params, n_controls)``.

        Only the owning control of each parameter has a nonzero column.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        _, partials = self._terms(t)
        w = self._window(t)
        n_c, n_t = self.params.shape[:2]
        jac = np.zeros((len(t), n_c, n_t, 3, n_c))
        for slot in range(3):
            for k in range(n_c):
                jac[:, k, :, slot, k] = (partials[slot][k] * w).T
        return jac.reshape(len(t), self.n_params, n_c)


@dataclass(frozen=True)
class BoundingTransform:
    """``alpha -> (v_max - v_min)/2 sin(alpha) + (v_max + v_min)/2``."""

    v_min: float
    v_max: float

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be below v_max")

    def inverse(self, value: float) -> float:
        half = 0.5 * (self.v_max - self.v_min)
        mid = 0.5 * (self.v_max + self.v_min)
        return float(np.arcsin(np.clip((value - mid) / half, -1.0, 1.0)))


def bound_param(bt: BoundingTransform, alpha):
    """Bounded value and its derivative with respect to ``alpha``."""
    half = 0.5 * (bt.v_max - bt.v_min)
    mid = 0.5 * (bt.v_max + bt.v_min)
    value = half * np.sin(alpha) + mid
    # sin can overshoot +-1 by an ulp; keep the contract exact
    value = np.clip(value, bt.v_min, bt.v_max)
    return value, half * np.cos(alpha)


def apply_bounds(alpha, bounds: Sequence[BoundingTransform | None] | None):
    """Map an unconstrained vector to physical parameters; returns ``(values, dvalues/dalpha)``."""
    alpha = np.asarray(alpha, dtype=float)
    if bounds is None:
        return alpha.copy(), np.ones_like(alpha)
    if len(bounds) != alpha.size:
        raise DimMismatch("one bounding entry per parameter required")
    values = alpha.copy()
    slopes = np.ones_like(alpha)
    for m, bt in enumerate(bounds):
        if bt is not None:
            values[m], slopes[m] = bound_param(bt, alpha[m])
    return values, slopes


def unbound_params(values, bounds: Sequence[BoundingTransform | None] | None) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if bounds is None:
        return values.copy()
    return np.array([v if bt is None else bt.inverse(v) for v, bt in zip(values, bounds)])


def sample_pulse(pulse, t: float) -> np.ndarray:
    """Amplitudes at time ``t``; piecewise slices are left-closed, the last also right-closed."""
    horizon = pulse.horizon
    if t < 0 or t > horizon * (1 + 1e-12):
        raise OutOfRange(f"t = {t} outside [0, {horizon}]")
    if isinstance(pulse, PiecewisePulse):
        j = min(int(np.floor(t / pulse.dt)), pulse.n_slices - 1)
        return pulse.values[j].copy()
    return pulse.values([t])[0]


def pulse_param_derivative(pulse: AnalyticPulse, t: float, m: int) -> np.ndarray:
    """``d c_k(t) / d alpha_m`` for every control ``k``."""
    if not 0 <= m < pulse.n_params:
        raise BadIndex(f"parameter index {m} outside [0, {pulse.n_params})")
    return pulse.jacobian([t])[0, m]


def bandwidth_penalty(pulse, weight: float, n_samples: int = 200):
    """Forward-difference estimate of ``weight * int |dc/dt|^2 dt``.

    For piecewise pulses the sum runs over adjacent slices,
    ``sum_j (u(j+1) - u(j))^2 / dt``, and the gradient has the shape of
    ``pulse.values``. Analytic pulses are sampled on ``n_samples`` uniform
    points and the gradient is with respect to the flat parameter vector.
    """
    if weight < 0:
        raise ValueError("penalty weight must be non-negative")
    if isinstance(pulse, PiecewisePulse):
        u, h = pulse.values, pulse.dt
        diff = np.diff(u, axis=0)
        value = weight * np.sum(diff**2) / h
        grad = np.zeros_like(u)
        grad[1:] += 2 * weight * diff / h
        grad[:-1] -= 2 * weight * diff / h
        return float(value), grad
    t = np.linspace(0.0, pulse.horizon, n_samples)
    h = t[1] - t[0]
    c = pulse.values(t)
    jac = pulse.jacobian(t)
    diff = np.diff(c, axis=0)
    value = weight * np.sum(diff**2) / h
    djac = np.diff(jac, axis=0)
    grad = 2 * weight / h * np.einsum("jk,jmk->m", diff, djac)
    return float(value), grad


@dataclass
class Perturbation:
    """Additive drift and multiplicative control-scale change for ensemble averaging."""

    drift_delta: np.ndarray | None = None
    control_scale: Sequence[float] | None = None
    weight: float = 1.0
    label: str = field(default="")

    def apply(self, system: ControlSystem) -> ControlSystem:
        drift = system.drift if self.drift_delta is None else system.drift + self.drift_delta
        controls = system.controls
        if self.control_scale is not None:
            controls = tuple(s * h for s, h in zip(self.control_scale, controls))
        return ControlSystem(drift, controls, system.labels, system.amplitude_limits)
