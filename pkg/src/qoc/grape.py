"""Gradient optimization of piecewise-constant pulses.

Slice derivatives are exact: ``dU_k/du_i(k)`` is the directional derivative
of ``exp(-i dt H_k)`` along ``H_i``, evaluated in the eigenbasis of ``H_k``.
The first-order shortcut ``-i dt H_i U_k`` is available with ``exact=False``.
"""
from __future__ import annotations

import time

import numpy as np

from .errors import DimMismatch
from .linalg import HermitianDecomposition, dag
from .objectives import GATE_FIDELITY, PROJECTIVE_SU, STATE_OVERLAP, Objective, OptimizationRun, composite_value
from .optimizers import lbfgs_minimize
from .propagation import (
    BackwardCache,
    ForwardCache,
    check_caches,
    evolve_pwc,
    slice_propagator,
)
from .system import BoundingTransform, ControlSystem, PiecewisePulse, apply_bounds, unbound_params

CONCURRENT = "concurrent"
SEQUENTIAL = "sequential"
HYBRID = "hybrid"
SCHEMES = (CONCURRENT, SEQUENTIAL, HYBRID)

DEGENERACY_RTOL = 1e-12


def _sinhc(z):
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 1e-4
    zs = np.where(small, 1.0, z)
    return np.where(small, 1 + z**2 / 6 + z**4 / 120, np.sinh(zs) / zs)


def derivative_kernel(eigenvalues, scale: complex) -> np.ndarray:
    """Divided differences ``(e^{s e_l} - e^{s e_k}) / (e_l - e_k)`` with the diagonal limit.

    Written as ``s e^{s (e_l + e_k)/2} sinhc(s (e_l - e_k)/2)`` to avoid
    cancellation for close eigenvalues; exact ties within
    ``1e-12 max(1, spectral radius)`` take ``s e^{s e_l}``.
    """
    e = np.asarray(eigenvalues, dtype=float)
    el = e[..., :, None]
    ek = e[..., None, :]
    gap = el - ek
    kern = scale * np.exp(0.5 * scale * (el + ek)) * _sinhc(0.5 * scale * gap)
    radius = np.maximum(1.0, np.max(np.abs(e), axis=-1))[..., None, None]
    degenerate = np.abs(gap) <= DEGENERACY_RTOL * radius
    return np.where(degenerate, scale * np.exp(scale * el) * np.ones_like(ek), kern)


def expm_directional_derivative(decomp: HermitianDecomposition, b, scale: complex, basis: str = "original") -> np.ndarray:
    """``d/dh exp(s (X + h B))`` at ``h = 0`` for Hermitian ``X`` with decomposition ``decomp``.

    ``basis="eigen"`` returns the matrix in the eigenbasis of ``X``.
    """
    v = decomp.eigenvectors
    b = np.asarray(b, dtype=complex)
    if b.shape != v.shape:
        raise DimMismatch(f"direction has shape {b.shape}, expected {v.shape}")
    d_eig = (dag(v) @ b @ v) * derivative_kernel(decomp.eigenvalues, scale)
    if basis == "eigen":
        return d_eig
    return v @ d_eig @ dag(v)


# --- overlap derivatives ----------------------------------------------------

def _mode(kind: str) -> str:
    if kind == STATE_OVERLAP:
        return "state"
    if kind in (GATE_FIDELITY, PROJECTIVE_SU):
        return "gate"
    raise ValueError(f"objective {kind!r} has no piecewise-constant gradient")


def _slice_derivatives(controls, evecs, evals, dt, lefts, rights, unitaries, exact):
    """``d o / d u_i(k)`` for the slices given, with ``o = <left_k| U_k |right_k>`` or its trace form.

    ``lefts[k]`` is the costate (or back-propagated target) after slice ``k``
    and ``rights[k]`` the state (or partial product) before it.
    """
    if lefts.ndim == 2:
        if not exact:
            after = np.einsum("kab,kb->ka", unitaries, rights)
            return -1j * dt * np.einsum("ka,iab,kb->ki", lefts.conj(), controls, after)
        bprime = np.einsum("kal,iab,kbm->kilm", evecs.conj(), controls, evecs)
        kern = derivative_kernel(evals, -1j * dt)
        a = np.einsum("kal,ka->kl", evecs.conj(), lefts)
        b = np.einsum("kam,ka->km", evecs.conj(), rights)
        return np.einsum("kl,kilm,klm,km->ki", a.conj(), bprime, kern, b)
    if not exact:
        after = unitaries @ rights
        return -1j * dt * np.einsum("kab,iac,kcb->ki", lefts.conj(), controls, after)
    bprime = np.einsum("kal,iab,kbm->kilm", evecs.conj(), controls, evecs)
    kern = derivative_kernel(evals, -1j * dt)
    m = dag(evecs) @ rights @ dag(lefts) @ evecs
    return np.einsum("kilm,klm,kml->ki", bprime, kern, m)


def overlap_derivatives(fwd: ForwardCache, bwd: BackwardCache, system: ControlSystem, exact: bool = True):
    """Overlap ``o`` and the table ``do/du_i(k)`` of shape ``(N, n_controls)``."""
    check_caches(fwd, bwd)
    if bwd.costates is not None:
        if fwd.states is None:
            raise DimMismatch("state gradient needs a forward cache built from an initial state")
        o = complex(np.vdot(bwd.costates[-1], fwd.states[-1]))
        lefts, rights = bwd.costates[1:], fwd.states[:-1]
    else:
        o = complex(np.vdot(bwd.targets[-1], fwd.products[-1]))
        lefts, rights = bwd.targets[1:], fwd.products[:-1]
    do = _slice_derivatives(system.control_stack, fwd.eigenvectors, fwd.eigenvalues, fwd.dt, lefts, rights, fwd.unitaries, exact)
    return o, do


def _fidelity(kind: str, o: complex, d: int) -> float:
    if kind == STATE_OVERLAP:
        return abs(o) ** 2
    if kind == GATE_FIDELITY:
        return abs(o) ** 2 / d**2
    return abs(o) / d


def _fidelity_gradient(kind: str, o: complex, do: np.ndarray, d: int) -> np.ndarray:
    if kind == STATE_OVERLAP:
        return 2 * np.real(np.conj(o) * do)
    if kind == GATE_FIDELITY:
        return 2 * np.real(np.conj(o) * do) / d**2
    if o == 0:
        return np.zeros(do.shape)
    return np.real(np.conj(o) / abs(o) * do) / d


def grape_state_gradient(fwd: ForwardCache, bwd: BackwardCache, system: ControlSystem, exact: bool = True) -> np.ndarray:
    """``dJ/du_i(k)`` for ``J = |<psi1| U(T) |psi0>|^2``."""
    if bwd.costates is None:
        raise DimMismatch("backward cache holds a target unitary, not a target state")
    o, do = overlap_derivatives(fwd, bwd, system, exact)
    return _fidelity_gradient(STATE_OVERLAP, o, do, system.dim)


def grape_gate_gradient(fwd: ForwardCache, bwd: BackwardCache, system: ControlSystem, exact: bool = True) -> np.ndarray:
    """``dPhi/du_i(k)`` for ``Phi = |Tr(U_target^+ U(T))|^2 / d^2``."""
    if bwd.targets is None:
        raise DimMismatch("backward cache holds a target state, not a target unitary")
    o, do = overlap_derivatives(fwd, bwd, system, exact)
    return _fidelity_gradient(GATE_FIDELITY, o, do, system.dim)


def _caches(system, pulse, objective):
    psi0 = objective.initial if objective.is_state else None
    return evolve_pwc(system, pulse, psi0, objective.target)


def pwc_fidelity(system: ControlSystem, pulse: PiecewisePulse, objective: Objective) -> float:
    fwd, bwd = _caches(system, pulse, objective)
    o, _ = _overlap(fwd, bwd)
    return _fidelity(objective.kind, o, system.dim)


def _overlap(fwd, bwd):
    if bwd.costates is not None:
        return complex(np.vdot(bwd.costates[-1], fwd.states[-1])), None
    return complex(np.vdot(bwd.targets[-1], fwd.products[-1])), None


def pwc_value_and_gradient(system: ControlSystem, pulse: PiecewisePulse, objective: Objective, exact: bool = True):
    """Composite value ``1 - F + penalties``, its gradient wrt ``pulse.values`` and ``F``."""
    _mode(objective.kind)
    fwd, bwd = _caches(system, pulse, objective)
    o, do = overlap_derivatives(fwd, bwd, system, exact)
    fid = _fidelity(objective.kind, o, system.dim)
    grad = -_fidelity_gradient(objective.kind, o, do, system.dim)
    value, pgrad = composite_value(1.0 - fid, pulse, objective.penalties)
    if pgrad is not None:
        grad = grad + pgrad
    return value, grad, fid


def _penalty_gradient(pulse, objective):
    _, g = composite_value(0.0, pulse, objective.penalties)
    return np.zeros_like(pulse.values) if g is None else g


def update_step(
    system: ControlSystem,
    pulse: PiecewisePulse,
    objective: Objective,
    scheme: str = CONCURRENT,
    eps: float = 1.0,
    block: int = 1,
    exact: bool = True,
    grad: np.ndarray | None = None,
) -> PiecewisePulse:
    """One update of the amplitudes along the descent direction of the composite value.

    ``concurrent`` moves every slice with the gradient of the current pulse
    (``grad`` may be supplied to skip its computation). ``sequential``
    updates one slice at a time in time order and recomputes that slice's
    propagator before the next gradient entry is evaluated; ``hybrid``
    does the same for contiguous blocks of ``block`` slices. The backward
    cache of the incoming pulse stays valid during a sweep because only
    slices behind the sweep front have changed. Amplitude limits are
    enforced by clipping.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown update scheme {scheme!r}")
    if scheme == CONCURRENT:
        if grad is None:
            _, grad, _ = pwc_value_and_gradient(system, pulse, objective, exact)
        return pulse.with_values(system.clip(pulse.values - eps * grad))

    block = 1 if scheme == SEQUENTIAL else int(block)
    if block < 1:
        raise ValueError("block size must be positive")
    kind = objective.kind
    mode = _mode(kind)
    d = system.dim
    fwd, bwd = _caches(system, pulse, objective)
    lefts_all = bwd.costates if mode == "state" else bwd.targets
    u = pulse.values.copy()
    unitaries = fwd.unitaries.copy()
    evals = fwd.eigenvalues.copy()
    evecs = fwd.eigenvectors.copy()
    cur = objective.initial.copy() if mode == "state" else np.eye(d, dtype=complex)
    ctrl = system.control_stack
    n = pulse.n_slices
    for start in range(0, n, block):
        idx = np.arange(start, min(start + block, n))
        rights = []
        c = cur
        for k in idx:
            rights.append(c)
            c = unitaries[k] @ c
        rights = np.array(rights)
        o = complex(np.vdot(lefts_all[idx[-1] + 1], c))
        do = _slice_derivatives(ctrl, evecs[idx], evals[idx], pulse.dt, lefts_all[idx + 1], rights, unitaries[idx], exact)
        g = -_fidelity_gradient(kind, o, do, d)
        if objective.penalties:
            g = g + _penalty_gradient(pulse.with_values(u), objective)[idx]
        u[idx] = system.clip(u[idx] - eps * g)
        for k in idx:
            unitaries[k], dec = slice_propagator(system, u[k], pulse.dt)
            evals[k], evecs[k] = dec.eigenvalues, dec.eigenvectors
            cur = unitaries[k] @ cur
    return pulse.with_values(u)


def _projected_gradient_norm(system, u, grad):
    return float(np.max(np.abs(system.clip(u - grad) - u)))


def grape_optimize(
    system: ControlSystem,
    pulse0: PiecewisePulse,
    objective: Objective,
    scheme: str = CONCURRENT,
    block: int = 1,
    algorithm: str = "gradient",
    max_iter: int = 500,
    fidelity_target: float | None = None,
    gtol: float = 1e-10,
    ftol: float = 1e-15,
    exact: bool = True,
    step: float = 1.0,
    c1: float = 1e-4,
    shrink: float = 0.5,
    min_step: float = 1e-14,
) -> OptimizationRun:
    """Optimize a piecewise-constant pulse.

    ``algorithm="gradient"`` runs the chosen update scheme with Armijo
    backtracking; each iteration first tries twice the previously accepted
    step, starting from ``step``. ``algorithm="lbfgs"`` runs L-BFGS on the
    amplitudes, through the sine bounding map when the system has amplitude
    limits. Stops when the fidelity reaches ``fidelity_target``, the
    projected gradient falls below ``gtol``, the step underflows, or after
    ``max_iter`` iterations.
    """
    if pulse0.n_controls != system.n_controls:
        raise DimMismatch("pulse and system control counts differ")
    _mode(objective.kind)
    if algorithm == "lbfgs":
        return _grape_lbfgs(system, pulse0, objective, max_iter, fidelity_target, gtol, exact)
    if algorithm != "gradient":
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown update scheme {scheme!r}")

    t0 = time.perf_counter()
    pulse = pulse0.with_values(system.clip(pulse0.values))
    value, grad, fid = pwc_value_and_gradient(system, pulse, objective, exact)
    run = OptimizationRun(f"grape-{scheme}", objective.kind, "gradient", pulse)
    gnorm = _projected_gradient_norm(system, pulse.values, grad)
    run.record(value, fid, gnorm, t0)
    eps = step

    for it in range(max_iter):
        if fidelity_target is not None and fid >= fidelity_target:
            run.converged, run.message = True, "fidelity target reached"
            break
        if gnorm < gtol:
            run.converged, run.message = True, "gradient norm below tolerance"
            break
        a = 2 * eps if it > 0 else eps
        accepted = False
        while a >= min_step:
            trial = update_step(system, pulse, objective, scheme, a, block, exact, grad)
            t_value, t_grad, t_fid = pwc_value_and_gradient(system, trial, objective, exact)
            if scheme == CONCURRENT:
                decrease = float(np.sum(grad * (pulse.values - trial.values)))
                ok = t_value <= value - c1 * decrease and decrease > 0
            else:
                ok = t_value < value
            if ok:
                accepted = True
                break
            a *= shrink
        if not accepted:
            run.message = "step size underflow"
            break
        gain = value - t_value
        pulse, value, grad, fid, eps = trial, t_value, t_grad, t_fid, a
        gnorm = _projected_gradient_norm(system, pulse.values, grad)
        run.record(value, fid, gnorm, t0)
        run.n_iter = it + 1
        if gain <= ftol * max(1.0, abs(value)):
            run.converged, run.message = True, "relative improvement below tolerance"
            break
    else:
        run.message = "maximum iterations reached"
    run.pulse = pulse
    return run


def amplitude_bounds(system: ControlSystem, n_slices: int):
    """Per-amplitude bounding maps (flattened slice-major) or ``None`` without limits."""
    if system.amplitude_limits is None:
        return None
    per_slice = [None if lim is None else BoundingTransform(*lim) for lim in system.amplitude_limits]
    return per_slice * n_slices


def _grape_lbfgs(system, pulse0, objective, max_iter, fidelity_target, gtol, exact):
    t0 = time.perf_counter()
    bounds = amplitude_bounds(system, pulse0.n_slices)
    start = system.clip(pulse0.values)
    if system.amplitude_limits is not None:
        # keep the start strictly inside the limits, where the sine map has slope
        lo = np.array([-np.inf if lim is None else lim[0] for lim in system.amplitude_limits])
        hi = np.array([np.inf if lim is None else lim[1] for lim in system.amplitude_limits])
        margin = 1e-3 * np.where(np.isfinite(hi - lo), hi - lo, 0.0)
        start = np.clip(start, lo + margin, hi - margin)
    alpha0 = unbound_params(start.ravel(), bounds)
    shape = pulse0.values.shape
    last = {}

    def fg(alpha):
        vals, slope = apply_bounds(alpha, bounds)
        pulse = pulse0.with_values(vals.reshape(shape))
        value, grad, fid = pwc_value_and_gradient(system, pulse, objective, exact)
        last[alpha.tobytes()] = (pulse, fid)
        return value, grad.ravel() * slope

    run = OptimizationRun("grape-lbfgs", objective.kind, "lbfgs", pulse0)
    v0, g0 = fg(alpha0)
    pulse, fid = last[alpha0.tobytes()]
    run.record(v0, fid, np.max(np.abs(g0)), t0)

    def callback(x, fx):
        p, f = last[x.tobytes()]
        run.pulse = p
        run.record(fx, f, np.nan, t0)

    f_target = None if fidelity_target is None else 1.0 - fidelity_target
    res = lbfgs_minimize(fg, alpha0, True, max_iter=max_iter, gtol=gtol, f_target=f_target, callback=callback)
    run.grad_norms[1:] = res.grad_norm_trace[1:]
    run.pulse = last[res.x.tobytes()][0]
    run.n_iter, run.converged, run.message = res.n_iter, res.converged, res.message
    return run
