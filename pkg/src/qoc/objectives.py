"""Fidelity indices and the composite value minimized by the optimizers.

Trace-based indices are normalized by ``d`` or ``d^2`` so values lie in
``[0, 1]`` in every dimension; multiply back to recover unnormalized forms.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimMismatch
from .linalg import dag, trace_inner

STATE_OVERLAP = "state_overlap"
GATE_FIDELITY = "gate_fidelity"
PROJECTIVE_SU = "projective_su"
WORST_CASE_Q = "worst_case_q"
OPEN_TRACE = "open_trace"
OBJECTIVE_KINDS = (STATE_OVERLAP, GATE_FIDELITY, PROJECTIVE_SU, WORST_CASE_Q, OPEN_TRACE)

ALPHA_GRID = np.linspace(0.0, 2 * np.pi, 720, endpoint=False)


def _same_shape(a, b):
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise DimMismatch(f"shapes {a.shape} and {b.shape} differ")
    return a, b


def state_overlap(psi1, u, psi0) -> float:
    """``|<psi1| U |psi0>|^2``."""
    psi1 = np.asarray(psi1, dtype=complex)
    psi0 = np.asarray(psi0, dtype=complex)
    u = np.asarray(u, dtype=complex)
    if u.shape != (psi0.size, psi0.size) or psi1.shape != psi0.shape:
        raise DimMismatch("state and operator dimensions differ")
    return float(abs(np.vdot(psi1, u @ psi0)) ** 2)


def gate_fidelity(u_target, u) -> float:
    """Phase-insensitive ``|Tr(U_target^+ U)|^2 / d^2``."""
    u_target, u = _same_shape(u_target, u)
    d = u.shape[0]
    return float(abs(trace_inner(u_target, u)) ** 2 / d**2)


def projective_su_infidelity(u_goal, u) -> float:
    """``1 - |Tr(U_goal^+ U)| / d``."""
    u_goal, u = _same_shape(u_goal, u)
    d = u.shape[0]
    return float(1.0 - abs(trace_inner(u_goal, u)) / d)


def worst_case_index_q(u_target, u, q: int = 1, alphas: np.ndarray = ALPHA_GRID) -> float:
    """``max_alpha Tr[(A^+ A)^q]`` with ``A = U_target - e^{i alpha} U`` over a 720-point grid."""
    if int(q) != q or q < 1:
        raise ValueError("q must be an integer >= 1")
    u_target, u = _same_shape(u_target, u)
    a = u_target[None] - np.exp(1j * alphas)[:, None, None] * u[None]
    ev = np.linalg.eigvalsh(dag(a) @ a)
    return float(np.max(np.sum(np.clip(ev, 0, None) ** int(q), axis=1)))


def open_trace_fidelity(f_target, f) -> float:
    """``Re Tr(F_U^+ F) / d^2`` for maps on ``d^2``-dimensional vectorized states.

    ``Tr(F_U^+ F_U) = d^2`` for a unitary map, so identical unitary maps give 1.
    """
    f_target, f = _same_shape(f_target, f)
    n = f.shape[0]
    return float(np.real(trace_inner(f_target, f)) / n)


@dataclass
class Penalty:
    """Weighted penalty ``weight * fn(pulse)``; ``fn`` returns ``(value, gradient)``."""

    fn: Callable
    weight: float = 1.0
    name: str = "penalty"

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("penalty weights must be non-negative")

    def __call__(self, pulse):
        if self.weight == 0:
            return 0.0, None
        value, grad = self.fn(pulse, self.weight)
        return float(value), grad


@dataclass
class Objective:
    kind: str
    target: np.ndarray
    initial: np.ndarray | None = None
    penalties: Sequence[Penalty] = field(default_factory=list)
    q: int = 1

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        self.target = np.asarray(self.target, dtype=complex)
        if self.kind == STATE_OVERLAP and self.initial is None:
            raise ValueError("state transfer needs an initial state")
        if self.initial is not None:
            self.initial = np.asarray(self.initial, dtype=complex)

    @property
    def is_state(self) -> bool:
        return self.kind == STATE_OVERLAP

    def infidelity(self, u) -> float:
        """Base figure of merit to minimize for a final propagator (or map)."""
        if self.kind == STATE_OVERLAP:
            return 1.0 - state_overlap(self.target, u, self.initial)
        if self.kind == GATE_FIDELITY:
            return 1.0 - gate_fidelity(self.target, u)
        if self.kind == PROJECTIVE_SU:
            return projective_su_infidelity(self.target, u)
        if self.kind == WORST_CASE_Q:
            return worst_case_index_q(self.target, u, self.q)
        return 1.0 - open_trace_fidelity(self.target, u)


def composite_value(base: float, pulse, penalties: Sequence[Penalty] = ()):
    """Base infidelity plus weighted penalties; returns ``(value, penalty_gradient)``.

    ``penalty_gradient`` is ``None`` when no penalty contributes.
    """
    total = float(base)
    grad = None
    for p in penalties:
        value, g = p(pulse)
        total += value
        if g is not None:
            grad = g if grad is None else grad + g
    return total, grad


def ensemble_average(evaluate: Callable, systems: Sequence, weights: Sequence[float] | None = None):
    """Weighted mean of ``evaluate(system)`` over a fixed list of systems.

    ``evaluate`` may return a scalar or a ``(value, gradient)`` pair.
    """
    weights = np.ones(len(systems)) if weights is None else np.asarray(weights, dtype=float)
    if len(weights) != len(systems) or len(systems) == 0:
        raise DimMismatch("one weight per ensemble member required")
    weights = weights / weights.sum()
    outs = [evaluate(s) for s in systems]
    if isinstance(outs[0], tuple):
        value = sum(w * o[0] for w, o in zip(weights, outs))
        grad = sum(w * o[1] for w, o in zip(weights, outs))
        return float(value), grad
    return float(sum(w * o for w, o in zip(weights, outs)))


@dataclass
class OptimizationRun:
    """Outcome and per-iteration trace of a pulse optimization.

    Trace lists start with the initial pulse, so ``len(values) == n_iter + 1``.
    ``fidelities`` holds the base figure of merit without penalties.
    """

    method: str
    objective: str
    optimizer: str
    pulse: object
    values: list = field(default_factory=list)
    fidelities: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    message: str = ""
    alpha: np.ndarray | None = None

    @property
    def final_value(self) -> float:
        return self.values[-1]

    @property
    def final_fidelity(self) -> float:
        return self.fidelities[-1]

    @property
    def final_infidelity(self) -> float:
        return 1.0 - self.fidelities[-1]

    def record(self, value, fidelity, grad_norm, t0):
        self.values.append(float(value))
        self.fidelities.append(float(fidelity))
        self.grad_norms.append(float(grad_norm))
        self.wall_ms.append(1e3 * (time.perf_counter() - t0))
