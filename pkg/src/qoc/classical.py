"""Adjoint (Pontryagin) gradient loop for classical terminal-cost control.

Controls are held constant on each of the ``N`` grid intervals. The state is
integrated forward with RK4, the costate backward from ``lambda(T) = dJ/dx``,
and the control gradient is the interval average of ``lambda^T df/du``, which
makes ``dJ/du_k = dt * gradient[k]``.

Costs are minimized; the descent direction is ``-gradient``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimMismatch, NonFinite


@dataclass(frozen=True)
class ClassicalProblem:
    dynamics: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    jacobian_x: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    jacobian_u: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    terminal_cost: Callable[[np.ndarray], float]
    terminal_cost_grad: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    horizon: float
    n_steps: int
    control_dim: int = 1

    def __post_init__(self):
        if self.n_steps < 2:
            raise ValueError("need at least 2 grid intervals")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))

    @property
    def state_dim(self) -> int:
        return self.x0.shape[0]

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)


@dataclass(frozen=True)
class AdjointTrajectory:
    """Costate samples at the grid points and at interval midpoints."""

    times: np.ndarray
    values: np.ndarray
    midpoints: np.ndarray


@dataclass
class PmpResult:
    controls: np.ndarray
    cost_trace: list = field(default_factory=list)
    grad_norm_trace: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False


def _controls(prob: ClassicalProblem, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape != (prob.n_steps, prob.control_dim):
        raise DimMismatch(f"controls must have shape {(prob.n_steps, prob.control_dim)}, got {u.shape}")
    return u


def integrate_forward(prob: ClassicalProblem, u) -> np.ndarray:
    """RK4 state trajectory of shape ``(N + 1, n)`` under zero-order-hold controls."""
    u = _controls(prob, u)
    f, h = prob.dynamics, prob.dt
    t = prob.times
    x = np.empty((prob.n_steps + 1, prob.state_dim))
    x[0] = prob.x0
    for k in range(prob.n_steps):
        xk, uk, tk = x[k], u[k], t[k]
        k1 = f(xk, uk, tk)
        k2 = f(xk + 0.5 * h * k1, uk, tk + 0.5 * h)
        k3 = f(xk + 0.5 * h * k2, uk, tk + 0.5 * h)
        k4 = f(xk + h * k3, uk, tk + h)
        x[k + 1] = xk + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x[k + 1])):
            raise NonFinite(f"state diverged at t = {t[k + 1]:.6g}")
    return x


def _hermite(x0, x1, f0, f1, h, s):
    # cubic Hermite interpolant on one interval, s in [0, 1]
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * x0 + h10 * h * f0 + h01 * x1 + h11 * h * f1


def integrate_adjoint(prob: ClassicalProblem, x: np.ndarray, u) -> AdjointTrajectory:
    """Integrate ``lambda' = -(df/dx)^T lambda`` backward from ``dJ/dx(T)``.

    Each interval is covered by two RK4 half steps so that midpoint values
    are available for the gradient quadrature. The state between stored
    samples is reconstructed by cubic Hermite interpolation.
    """
    u = _controls(prob, u)
    x = np.asarray(x, dtype=float)
    if x.shape != (prob.n_steps + 1, prob.state_dim):
        raise DimMismatch("state trajectory does not match the problem grid")
    t = prob.times
    h = prob.dt
    lam = np.empty_like(x)
    mid = np.empty((prob.n_steps, prob.state_dim))
    lam[-1] = prob.terminal_cost_grad(x[-1])

    for k in range(prob.n_steps - 1, -1, -1):
        uk = u[k]
        fa = prob.dynamics(x[k], uk, t[k])
        fb = prob.dynamics(x[k + 1], uk, t[k + 1])

        def rhs(lv, s):
            xs = _hermite(x[k], x[k + 1], fa, fb, h, s)
            return -prob.jacobian_x(xs, uk, t[k] + s * h).T @ lv

        # march from s=1 to s=0 in two half steps of -h/2
        lv = lam[k + 1]
        for s0 in (1.0, 0.5):
            hh = -0.5 * h
            ds = -0.5
            k1 = rhs(lv, s0)
            k2 = rhs(lv + 0.5 * hh * k1, s0 + 0.5 * ds)
            k3 = rhs(lv + 0.5 * hh * k2, s0 + 0.5 * ds)
            k4 = rhs(lv + hh * k3, s0 + ds)
            lv = lv + hh / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if s0 == 1.0:
                mid[k] = lv
        lam[k] = lv
        if not np.all(np.isfinite(lv)):
            raise NonFinite(f"costate diverged at t = {t[k]:.6g}")
    return AdjointTrajectory(t, lam, mid)


def control_gradient(prob: ClassicalProblem, x: np.ndarray, adjoint: AdjointTrajectory, u) -> np.ndarray:
    """Interval-averaged ``dH/du = lambda^T df/du`` as an ``(N, p)`` array (Simpson rule)."""
    u = _controls(prob, u)
    x = np.asarray(x, dtype=float)
    lam, mid = adjoint.values, adjoint.midpoints
    if lam.shape != x.shape or mid.shape[0] != prob.n_steps:
        raise DimMismatch("adjoint and state grids differ")
    t = prob.times
    h = prob.dt
    g = np.empty((prob.n_steps, prob.control_dim))
    for k in range(prob.n_steps):
        uk = u[k]
        fa = prob.dynamics(x[k], uk, t[k])
        fb = prob.dynamics(x[k + 1], uk, t[k + 1])
        xm = _hermite(x[k], x[k + 1], fa, fb, h, 0.5)
        ga = prob.jacobian_u(x[k], uk, t[k]).T @ lam[k]
        gm = prob.jacobian_u(xm, uk, t[k] + 0.5 * h).T @ mid[k]
        gb = prob.jacobian_u(x[k + 1], uk, t[k + 1]).T @ lam[k + 1]
        g[k] = (ga + 4 * gm + gb) / 6
    return g


def cost(prob: ClassicalProblem, u) -> float:
    return float(prob.terminal_cost(integrate_forward(prob, u)[-1]))


def pmp_optimize(
    prob: ClassicalProblem,
    u_init,
    step: float = 1.0,
    max_iter: int = 2000,
    gtol: float = 1e-10,
    c1: float = 1e-4,
    shrink: float = 0.5,
    max_backtracks: int = 60,
) -> PmpResult:
    """Forward / backward / update loop with Armijo backtracking on the fixed step.

    ``cost_trace[0]`` is the cost of ``u_init``; one entry is appended per
    accepted step.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    u = _controls(prob, u_init).copy()
    x = integrate_forward(prob, u)
    j = float(prob.terminal_cost(x[-1]))
    result = PmpResult(controls=u, cost_trace=[j])
    dt = prob.dt

    for it in range(max_iter):
        adj = integrate_adjoint(prob, x, u)
        g = control_gradient(prob, x, adj, u)
        gsq = float(np.sum(g * g) * dt)
        result.grad_norm_trace.append(np.sqrt(gsq))
        if np.sqrt(gsq) < gtol:
            result.converged = True
            break
        alpha = step
        for _ in range(max_backtracks):
            u_try = u - alpha * g
            x_try = integrate_forward(prob, u_try)
            j_try = float(prob.terminal_cost(x_try[-1]))
            if j_try <= j - c1 * alpha * gsq:
                break
            alpha *= shrink
        else:
            break
        u, x, j = u_try, x_try, j_try
        result.cost_trace.append(j)
        result.n_iter = it + 1
    result.controls = u
    return result


def sho_problem(omega: float = 1.0, a: float = 1.0, horizon: float = 3 * np.pi, n_steps: int = 400) -> ClassicalProblem:
    """Driven oscillator ``x'' + omega^2 x = u`` with cost ``omega^2 (x - a)^2 + x'^2``."""
    w2 = omega**2
    a_mat = np.array([[0.0, 1.0], [-w2, 0.0]])
    b_mat = np.array([[0.0], [1.0]])

    def dynamics(x, u, t):
        return a_mat @ x + b_mat @ u

    def jac_x(x, u, t):
        return a_mat

    def jac_u(x, u, t):
        return b_mat

    def terminal(x):
        return w2 * (x[0] - a) ** 2 + x[1] ** 2

    def terminal_grad(x):
        return np.array([2 * w2 * (x[0] - a), 2 * x[1]])

    return ClassicalProblem(dynamics, jac_x, jac_u, terminal, terminal_grad, np.zeros(2), horizon, n_steps, 1)
