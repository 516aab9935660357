"""Minimizers shared by the pulse-optimization engines.

Everything here minimizes; callers that maximize a fidelity pass its
negation or the infidelity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import LineSearchFailure, MaxIter, NonFinite, SingularJacobian


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray | None = None
    n_iter: int = 0
    n_eval: int = 0
    converged: bool = False
    message: str = ""
    trace: list = field(default_factory=list)
    grad_norm_trace: list = field(default_factory=list)


def _objective(f, grad):
    """Normalize the ``(f, grad)`` calling conventions to one returning a pair."""
    if grad is True:
        def fg(x):
            v, g = f(x)
            return float(v), np.asarray(g, dtype=float)
    elif callable(grad):
        def fg(x):
            return float(f(x)), np.asarray(grad(x), dtype=float)
    else:
        raise ValueError("grad must be a callable or True")
    return fg


# --- line search -----------------------------------------------------------

def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating two points with slopes; None if ill-posed."""
    if a == b:
        return None
    d1 = da + db - 3 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    if not rad >= 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(rad)
    denom = db - da + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def wolfe_line_search(phi, phi0, dphi0, alpha0=1.0, c1=1e-4, c2=0.9, alpha_max=1e10, max_eval=40):
    """Strong-Wolfe bracketing and zoom.

    ``phi(alpha)`` returns ``(value, slope, payload)``. Returns
    ``(alpha, value, payload, n_eval)`` or ``None`` when no acceptable step
    is found within ``max_eval`` evaluations.
    """
    if dphi0 >= 0:
        return None
    n_eval = 0
    a_prev, f_prev, d_prev = 0.0, phi0, dphi0
    a = alpha0

    def zoom(lo, flo, dlo, hi, fhi, dhi, n_eval):
        while n_eval < max_eval:
            trial = _cubic_min(lo, flo, dlo, hi, fhi, dhi)
            width = abs(hi - lo)
            if trial is None or not (min(lo, hi) + 0.1 * width <= trial <= max(lo, hi) - 0.1 * width):
                trial = 0.5 * (lo + hi)
            ft, dt, pay = phi(trial)
            n_eval += 1
            if ft > phi0 + c1 * trial * dphi0 or ft >= flo:
                hi, fhi, dhi = trial, ft, dt
            else:
                if abs(dt) <= -c2 * dphi0:
                    return trial, ft, pay, n_eval
                if dt * (hi - lo) >= 0:
                    hi, fhi, dhi = lo, flo, dlo
                lo, flo, dlo = trial, ft, dt
            if width < 1e-16 * max(1.0, abs(lo)):
                break
        return None

    for i in range(max_eval):
        fa, da, pay = phi(a)
        n_eval += 1
        if not np.isfinite(fa):
            # stepped into a region where the objective blows up; pull back
            a = 0.5 * (a_prev + a)
            continue
        if fa > phi0 + c1 * a * dphi0 or (i > 0 and fa >= f_prev):
            res = zoom(a_prev, f_prev, d_prev, a, fa, da, n_eval)
            return None if res is None else res
        if abs(da) <= -c2 * dphi0:
            return a, fa, pay, n_eval
        if da >= 0:
            res = zoom(a, fa, da, a_prev, f_prev, d_prev, n_eval)
            return None if res is None else res
        a_prev, f_prev, d_prev = a, fa, da
        a = min(2 * a, alpha_max)
    return None


def armijo_backtrack(f, x, fx, direction, slope, step=1.0, c1=1e-4, shrink=0.5, max_backtracks=60):
    """Backtrack from ``step`` until ``f(x + a d) <= fx + c1 a slope``.

    Returns ``(a, f(x + a d))`` or ``None``.
    """
    a = step
    for _ in range(max_backtracks):
        ft = f(x + a * direction)
        if np.isfinite(ft) and ft <= fx + c1 * a * slope:
            return a, ft
        a *= shrink
    return None


# --- L-BFGS ----------------------------------------------------------------

def two_loop(g, s_list, y_list, gamma):
    """Apply the L-BFGS inverse-Hessian estimate to ``g``."""
    q = g.copy()
    rhos = [1.0 / float(y @ s) for s, y in zip(s_list, y_list)]
    alphas = []
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rhos)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    r = gamma * q
    for s, y, rho, a in zip(s_list, y_list, rhos, reversed(alphas)):
        b = rho * float(y @ r)
        r += (a - b) * s
    return r


def lbfgs_minimize(
    f: Callable,
    x0,
    grad: Callable | bool = True,
    memory: int | None = 10,
    max_iter: int = 500,
    gtol: float = 1e-8,
    ftol: float = 1e-14,
    f_target: float | None = None,
    c1: float = 1e-4,
    c2: float = 0.9,
    callback: Callable | None = None,
) -> OptimizeResult:
    """Limited-memory BFGS with a strong-Wolfe line search.

    ``memory=None`` keeps every curvature pair. Stops when the gradient
    infinity norm drops below ``gtol``, when the value reaches ``f_target``,
    or when an accepted step improves the value by less than
    ``ftol * max(1, |f|)``. A line search that fails after at least one
    accepted step ends the run with ``converged=False``.
    """
    if memory is not None and memory < 1:
        raise ValueError("memory must be at least 1")
    fg = _objective(f, grad)
    x = np.array(x0, dtype=float)
    fx, g = fg(x)
    if not np.isfinite(fx) or not np.all(np.isfinite(g)):
        raise NonFinite("objective is not finite at the starting point")
    res = OptimizeResult(x=x, fun=fx, grad=g, n_eval=1, trace=[fx], grad_norm_trace=[float(np.max(np.abs(g)))])
    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    gamma = 1.0

    def done(fx, g):
        if np.max(np.abs(g)) < gtol:
            return "gradient norm below tolerance"
        if f_target is not None and fx <= f_target:
            return "target value reached"
        return ""

    msg = done(fx, g)
    if msg:
        res.converged, res.message = True, msg
        return res

    for it in range(max_iter):
        d = -two_loop(g, s_list, y_list, gamma) if s_list else -g
        slope = float(g @ d)
        if slope >= 0:
            # lost descent; restart from steepest descent
            s_list.clear()
            y_list.clear()
            d = -g
            slope = float(g @ d)
        alpha0 = 1.0 if s_list else min(1.0, 1.0 / max(np.max(np.abs(g)), 1e-300))

        def phi(a, x=x, d=d):
            xa = x + a * d
            fa, ga = fg(xa)
            return fa, float(ga @ d), (xa, ga)

        found = wolfe_line_search(phi, fx, slope, alpha0, c1, c2)
        if found is None:
            if it == 0:
                raise LineSearchFailure("no step satisfying the Wolfe conditions from the starting point")
            res.message = "line search failed"
            break
        a, f_new, (x_new, g_new), n_eval = found
        res.n_eval += n_eval
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            s_list.append(s)
            y_list.append(y)
            if memory is not None and len(s_list) > memory:
                s_list.pop(0)
                y_list.pop(0)
            gamma = sy / float(y @ y)
        improvement = fx - f_new
        x, fx, g = x_new, f_new, g_new
        res.n_iter = it + 1
        res.trace.append(fx)
        res.grad_norm_trace.append(float(np.max(np.abs(g))))
        if callback is not None:
            callback(x, fx)
        msg = done(fx, g)
        if msg:
            res.converged = True
            res.message = msg
            break
        if improvement <= ftol * max(1.0, abs(fx)):
            res.converged = True
            res.message = "relative improvement below tolerance"
            break
    else:
        res.message = "maximum iterations reached"
    res.x, res.fun, res.grad = x, fx, g
    return res


# --- Nelder-Mead -----------------------------------------------------------

def initial_simplex(x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    simplex = np.tile(x0, (n + 1, 1))
    for k in range(n):
        simplex[k + 1, k] = x0[k] * 1.05 if x0[k] != 0 else 0.00025
    return simplex


def nelder_mead_minimize(
    f: Callable,
    x0,
    max_iter: int = 2000,
    xatol: float = 1e-10,
    fatol: float = 1e-14,
    reflection: float = 1.0,
    expansion: float = 2.0,
    contraction: float = 0.5,
    shrink: float = 0.5,
    simplex: np.ndarray | None = None,
    raise_on_maxiter: bool = False,
    callback: Callable | None = None,
) -> OptimizeResult:
    """Derivative-free simplex search.

    Terminates when the simplex diameter (max distance from the best vertex)
    falls below ``xatol`` or the spread of vertex values falls below
    ``fatol`` and the simplex centroid is no better than the best vertex.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = x0.size
    sim = initial_simplex(x0) if simplex is None else np.array(simplex, dtype=float)
    if sim.shape != (n + 1, n):
        raise ValueError(f"simplex must have shape {(n + 1, n)}")
    fs = np.array([float(f(v)) for v in sim])
    n_eval = n + 1
    res = OptimizeResult(x=sim[0], fun=fs[0])

    converged = False
    it = 0
    for it in range(max_iter + 1):
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        res.trace.append(float(fs[0]))
        diameter = float(np.max(np.linalg.norm(sim[1:] - sim[0], axis=1)))
        if diameter <= xatol:
            converged = True
            break
        if fs[-1] - fs[0] <= fatol:
            # equal vertex values can be a symmetric straddle of a minimum;
            # only a flat centroid confirms the plateau
            xm = sim.mean(axis=0)
            fm = float(f(xm))
            n_eval += 1
            if fm >= fs[0] - fatol:
                converged = True
                break
            sim[-1], fs[-1] = xm, fm
            continue
        if it == max_iter:
            break
        if callback is not None:
            callback(sim[0], fs[0])
        centroid = sim[:-1].mean(axis=0)
        worst = sim[-1]
        xr = centroid + reflection * (centroid - worst)
        fr = float(f(xr))
        n_eval += 1
        if fr < fs[0]:
            xe = centroid + expansion * (xr - centroid)
            fe = float(f(xe))
            n_eval += 1
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = centroid + contraction * (xr - centroid)
            fc = float(f(xc))
            n_eval += 1
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            xc = centroid + contraction * (worst - centroid)
            fc = float(f(xc))
            n_eval += 1
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        sim[1:] = sim[0] + shrink * (sim[1:] - sim[0])
        fs[1:] = [float(f(v)) for v in sim[1:]]
        n_eval += n

    res.x, res.fun = sim[0].copy(), float(fs[0])
    res.n_iter, res.n_eval, res.converged = it, n_eval, converged
    res.message = "simplex collapsed" if converged else "maximum iterations reached"
    if not converged and raise_on_maxiter:
        raise MaxIter(f"Nelder-Mead did not converge in {max_iter} iterations")
    return res


# --- least squares ---------------------------------------------------------

def numerical_jacobian(model, n, theta, h=1e-7):
    theta = np.asarray(theta, dtype=float)
    cols = []
    for k in range(theta.size):
        step = h * max(1.0, abs(theta[k]))
        tp, tm = theta.copy(), theta.copy()
        tp[k] += step
        tm[k] -= step
        cols.append((model(n, tp) - model(n, tm)) / (2 * step))
    return np.stack(cols, axis=1)


def gauss_newton_fit(
    model: Callable,
    n,
    y,
    theta0,
    jacobian: Callable | None = None,
    max_iter: int = 200,
    xtol: float = 1e-14,
    ftol: float = 1e-30,
    rcond: float = 1e-10,
) -> OptimizeResult:
    """Least-squares fit of ``model(n, theta)`` to ``y``.

    Takes a Gauss-Newton step when it lowers the residual and otherwise
    falls back to Levenberg damping. Raises ``SingularJacobian`` when the
    Jacobian at an iterate is numerically rank deficient.
    """
    n = np.asarray(n, dtype=float)
    y = np.asarray(y, dtype=float)
    theta = np.array(theta0, dtype=float)
    if y.size < theta.size:
        raise ValueError("need at least as many data points as parameters")
    jac = jacobian or (lambda nn, th: numerical_jacobian(model, nn, th))

    r = model(n, theta) - y
    cost = float(r @ r)
    res = OptimizeResult(x=theta, fun=cost, trace=[cost])
    mu = 0.0
    for it in range(max_iter):
        j = jac(n, theta)
        sv = np.linalg.svd(j, compute_uv=False)
        if sv[0] == 0 or sv[-1] <= rcond * sv[0]:
            raise SingularJacobian(f"Jacobian is rank deficient (singular values {sv})")
        jtj = j.T @ j
        jtr = j.T @ r
        accepted = False
        for _ in range(60):
            a = jtj + mu * np.diag(np.diag(jtj))
            step = -np.linalg.solve(a, jtr)
            t_new = theta + step
            r_new = model(n, t_new) - y
            c_new = float(r_new @ r_new)
            if np.isfinite(c_new) and c_new <= cost:
                accepted = True
                break
            mu = max(2 * mu, 1e-3) * 5
        if not accepted:
            res.message = "no decreasing step"
            break
        mu = 0.0 if mu < 1e-3 else mu / 10
        small_step = np.linalg.norm(step) <= xtol * (1 + np.linalg.norm(theta))
        small_gain = cost - c_new <= ftol + 1e-15 * cost
        theta, r, cost = t_new, r_new, c_new
        res.trace.append(cost)
        res.n_iter = it + 1
        if small_step or small_gain or cost <= ftol:
            res.converged = True
            res.message = "converged"
            break
    res.x, res.fun = theta, cost
    return res
