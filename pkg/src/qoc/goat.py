"""Gradient optimization of analytic pulse ansaetze through the joint propagator ODE.

The optimizer works on unconstrained variables ``alpha``; bounded physical
parameters are obtained through the sine map of :class:`BoundingTransform`,
and the gradient picks up its slope by the chain rule.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimMismatch, OutOfRange
from .objectives import (
    GATE_FIDELITY,
    PROJECTIVE_SU,
    STATE_OVERLAP,
    Objective,
    OptimizationRun,
    composite_value,
)
from .optimizers import lbfgs_minimize, nelder_mead_minimize
from .propagation import GOAT_ATOL, GOAT_RTOL, integrate_goat, propagate_analytic
from .system import AnalyticPulse, BoundingTransform, ControlSystem, apply_bounds, unbound_params

log = logging.getLogger(__name__)

GOAT_KINDS = (PROJECTIVE_SU, STATE_OVERLAP, GATE_FIDELITY)


@dataclass
class GoatProblem:
    """Analytic-pulse optimization problem.

    ``pulse`` carries the starting physical parameters. ``bounds`` has one
    entry per flat parameter (``None`` for unbounded ones). ``free`` lists
    the flat indices being optimized; the rest stay frozen at their
    starting values.
    """

    system: ControlSystem
    pulse: AnalyticPulse
    objective: Objective
    bounds: Sequence[BoundingTransform | None] | None = None
    free: Sequence[int] | None = None
    rtol: float = GOAT_RTOL
    atol: float = GOAT_ATOL
    alpha_full: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.objective.kind not in GOAT_KINDS:
            raise ValueError(f"objective {self.objective.kind!r} is not supported here")
        n = self.pulse.n_params
        if self.bounds is not None and len(self.bounds) != n:
            raise DimMismatch(f"{len(self.bounds)} bounds for {n} parameters")
        self.free = np.arange(n) if self.free is None else np.asarray(sorted(set(self.free)), dtype=int)
        if self.free.size == 0 or self.free.min() < 0 or self.free.max() >= n:
            raise ValueError("free parameter indices must be a non-empty subset of the parameters")
        self.alpha_full = unbound_params(self.pulse.flat, self.bounds)

    def initial_alpha(self) -> np.ndarray:
        return self.alpha_full[self.free].copy()

    def physical(self, alpha) -> tuple[np.ndarray, np.ndarray]:
        """Full physical parameter vector and slopes ``d value / d alpha`` for free ``alpha``."""
        full = self.alpha_full.copy()
        full[self.free] = alpha
        values, slopes = apply_bounds(full, self.bounds)
        if self.bounds is not None:
            for m, bt in enumerate(self.bounds):
                if bt is not None and not bt.v_min <= values[m] <= bt.v_max:
                    raise OutOfRange(f"parameter {m} = {values[m]} left [{bt.v_min}, {bt.v_max}]")
        return values, slopes

    def pulse_at(self, alpha) -> AnalyticPulse:
        return self.pulse.with_flat(self.physical(alpha)[0])


def _value_from_unitary(objective: Objective, u, d):
    o_target = objective.target
    if objective.kind == STATE_OVERLAP:
        o = complex(np.vdot(o_target, u @ objective.initial))
        return 1.0 - abs(o) ** 2, o
    o = complex(np.vdot(o_target, u))
    if objective.kind == GATE_FIDELITY:
        return 1.0 - abs(o) ** 2 / d**2, o
    return 1.0 - abs(o) / d, o


def goat_value_and_gradient(prob: GoatProblem, alpha):
    """Composite value and its gradient with respect to the free ``alpha``.

    For the projective objective ``g = 1 - |o|/d`` with ``o = Tr(U_goal^+ U)``
    the gradient is ``-Re(conj(o)/|o| Tr(U_goal^+ dU)) / d``; at ``o = 0``
    it is defined as zero.
    """
    alpha = np.asarray(alpha, dtype=float)
    values, slopes = prob.physical(alpha)
    pulse = prob.pulse.with_flat(values)
    d = prob.system.dim
    u, du = integrate_goat(prob.system, pulse, prob.free, prob.rtol, prob.atol)
    obj = prob.objective
    base, o = _value_from_unitary(obj, u, d)
    if obj.kind == STATE_OVERLAP:
        do = np.einsum("a,mab,b->m", obj.target.conj(), du, obj.initial)
        grad = -2 * np.real(np.conj(o) * do)
    else:
        do = np.einsum("ab,mab->m", obj.target.conj(), du)
        if obj.kind == GATE_FIDELITY:
            grad = -2 * np.real(np.conj(o) * do) / d**2
        elif o == 0:
            log.warning("overlap vanished; gradient set to zero")
            grad = np.zeros(prob.free.size)
        else:
            grad = -np.real(np.conj(o) / abs(o) * do) / d
    value, pgrad = composite_value(base, pulse, obj.penalties)
    if pgrad is not None:
        grad = grad + pgrad[prob.free]
    return value, grad * slopes[prob.free], 1.0 - base


def goat_value(prob: GoatProblem, alpha) -> float:
    """Composite value without derivative propagation."""
    values, _ = prob.physical(np.asarray(alpha, dtype=float))
    pulse = prob.pulse.with_flat(values)
    u = propagate_analytic(prob.system, pulse, prob.rtol, prob.atol)
    base, _ = _value_from_unitary(prob.objective, u, prob.system.dim)
    value, _ = composite_value(base, pulse, prob.objective.penalties)
    return value


def goat_optimize(
    prob: GoatProblem,
    alpha0=None,
    max_iter: int = 200,
    infidelity_target: float = 1e-10,
    gtol: float = 1e-10,
    ftol: float = 1e-12,
) -> OptimizationRun:
    """L-BFGS on the free parameters; stops at ``infidelity_target`` or when progress stalls."""
    t0 = time.perf_counter()
    alpha0 = prob.initial_alpha() if alpha0 is None else np.asarray(alpha0, dtype=float)
    last = {}

    def fg(alpha):
        value, grad, fid = goat_value_and_gradient(prob, alpha)
        last[alpha.tobytes()] = fid
        return value, grad

    run = OptimizationRun("goat", prob.objective.kind, "lbfgs", prob.pulse_at(alpha0))
    v0, g0 = fg(alpha0)
    run.record(v0, last[alpha0.tobytes()], np.max(np.abs(g0)), t0)

    def callback(x, fx):
        run.record(fx, last[x.tobytes()], np.nan, t0)

    res = lbfgs_minimize(fg, alpha0, True, max_iter=max_iter, gtol=gtol, ftol=ftol,
                         f_target=infidelity_target, callback=callback)
    run.grad_norms[1:] = res.grad_norm_trace[1:]
    run.pulse = prob.pulse_at(res.x)
    run.n_iter, run.converged, run.message = res.n_iter, res.converged, res.message
    run.alpha = res.x
    return run


def crab_optimize(
    prob: GoatProblem,
    alpha0=None,
    max_iter: int = 2000,
    infidelity_target: float | None = None,
    xatol: float = 1e-10,
    fatol: float = 1e-14,
) -> OptimizationRun:
    """Gradient-free Nelder-Mead search over the same ansatz parameters."""
    t0 = time.perf_counter()
    alpha0 = prob.initial_alpha() if alpha0 is None else np.asarray(alpha0, dtype=float)
    run = OptimizationRun("crab", prob.objective.kind, "nelder-mead", prob.pulse_at(alpha0))

    class _Stop(Exception):
        pass

    best = {"x": alpha0, "f": np.inf}

    def f(alpha):
        value = goat_value(prob, alpha)
        if value < best["f"]:
            best["x"], best["f"] = np.array(alpha, dtype=float), value
        return value

    def callback(x, fx):
        run.record(fx, 1.0 - fx, np.nan, t0)
        if infidelity_target is not None and fx <= infidelity_target:
            raise _Stop

    try:
        res = nelder_mead_minimize(f, alpha0, max_iter=max_iter, xatol=xatol, fatol=fatol, callback=callback)
        run.n_iter, run.converged, run.message = res.n_iter, res.converged, res.message
    except _Stop:
        run.n_iter, run.converged, run.message = len(run.values) - 1, True, "target value reached"
    run.record(best["f"], 1.0 - best["f"], np.nan, t0)
    run.pulse = prob.pulse_at(best["x"])
    run.alpha = best["x"]
    return run


def random_fourier_pulse(
    n_controls: int,
    n_terms: int,
    horizon: float,
    rng: np.random.Generator,
    amplitude: float = 1.0,
    window: str = "none",
) -> AnalyticPulse:
    """Fourier ansatz with randomized principal harmonics ``2 pi k (1 + r_k) / T``, ``r_k`` in [-0.5, 0.5]."""
    k = np.arange(1, n_terms + 1)
    params = np.empty((n_controls, n_terms, 3))
    for c in range(n_controls):
        params[c, :, 0] = amplitude * rng.uniform(-1, 1, n_terms) / n_terms
        params[c, :, 1] = 2 * np.pi * k * (1 + rng.uniform(-0.5, 0.5, n_terms)) / horizon
        params[c, :, 2] = rng.uniform(0, 2 * np.pi, n_terms)
    return AnalyticPulse("fourier", params, horizon, window)
