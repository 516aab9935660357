"""Time-evolution engines.

* piecewise-constant propagator chains with forward and backward caches,
* the joint ODE for an analytic pulse's propagator and parameter derivatives,
* Lindblad maps on column-stacked density matrices,
* Magnus-expansion propagators up to two nested commutators.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.integrate import cumulative_trapezoid, solve_ivp, trapezoid

from .errors import BadGrid, CacheMismatch, DimMismatch, StepUnderflow
from .linalg import HermitianDecomposition, as_matrix, commutator, dag, expm_antihermitian, hermitian_eig
from .system import AnalyticPulse, ControlSystem, PiecewisePulse

GOAT_RTOL = 1e-9
GOAT_ATOL = 1e-11

_tokens = itertools.count(1)


# --- piecewise-constant chains --------------------------------------------

def slice_propagator(system: ControlSystem, amplitudes, dt: float):
    """``exp(-i dt H(u))`` for one slice together with the eigendecomposition of ``H(u)``."""
    decomp = hermitian_eig(system.hamiltonian(amplitudes))
    return expm_antihermitian(None, -1j * dt, decomp), decomp


@dataclass(frozen=True)
class ForwardCache:
    """Slice unitaries ``U_k``, partial products ``X_k = U_{k-1} ... U_0`` and states.

    ``products[0]`` is the identity and ``products[N]`` the full propagator.
    ``states[m] = products[m] @ psi0`` when a start state was given.
    """

    unitaries: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    products: np.ndarray
    states: np.ndarray | None
    dt: float
    token: int

    @property
    def n_slices(self) -> int:
        return self.unitaries.shape[0]

    @property
    def final(self) -> np.ndarray:
        return self.products[-1]

    def decomposition(self, k: int) -> HermitianDecomposition:
        return HermitianDecomposition(self.eigenvalues[k], self.eigenvectors[k])


@dataclass(frozen=True)
class BackwardCache:
    """Back-propagated target ``P_m = U_m^+ ... U_{N-1}^+ U_target`` and co-states.

    Indexing matches :class:`ForwardCache`: ``Tr(P_m^+ X_m)`` and
    ``<lambda_m|rho_m>`` are independent of ``m``.
    """

    targets: np.ndarray | None
    costates: np.ndarray | None
    token: int


def _chain(unitaries: np.ndarray) -> np.ndarray:
    n, d = unitaries.shape[0], unitaries.shape[1]
    products = np.empty((n + 1, d, d), dtype=complex)
    products[0] = np.eye(d)
    for k in range(n):
        products[k + 1] = unitaries[k] @ products[k]
    return products


def pwc_unitaries(system: ControlSystem, pulse: PiecewisePulse):
    if pulse.n_controls != system.n_controls:
        raise DimMismatch(f"pulse has {pulse.n_controls} controls, system has {system.n_controls}")
    decomp = hermitian_eig(system.hamiltonian(pulse.values))
    return expm_antihermitian(None, -1j * pulse.dt, decomp), decomp


def propagate_pwc(system: ControlSystem, pulse: PiecewisePulse) -> np.ndarray:
    """Total propagator ``U_{N-1} ... U_0``."""
    unitaries, _ = pwc_unitaries(system, pulse)
    u = np.eye(system.dim, dtype=complex)
    for uk in unitaries:
        u = uk @ u
    return u


def forward_pass(system: ControlSystem, pulse: PiecewisePulse, psi0=None, token: int | None = None) -> ForwardCache:
    unitaries, decomp = pwc_unitaries(system, pulse)
    products = _chain(unitaries)
    states = None
    if psi0 is not None:
        psi0 = np.asarray(psi0, dtype=complex)
        if psi0.shape != (system.dim,):
            raise DimMismatch(f"initial state has shape {psi0.shape}, expected ({system.dim},)")
        states = products @ psi0
    return ForwardCache(
        unitaries, decomp.eigenvalues, decomp.eigenvectors, products, states, pulse.dt,
        next(_tokens) if token is None else token,
    )


def backward_pass(fwd: ForwardCache, target) -> BackwardCache:
    """Back-propagate a target state (1-D) or target unitary (2-D) through ``fwd``."""
    target = np.asarray(target, dtype=complex)
    d = fwd.unitaries.shape[1]
    n = fwd.n_slices
    if target.shape == (d,):
        lam = np.empty((n + 1, d), dtype=complex)
        lam[n] = target
        for k in range(n - 1, -1, -1):
            lam[k] = dag(fwd.unitaries[k]) @ lam[k + 1]
        return BackwardCache(None, lam, fwd.token)
    if target.shape == (d, d):
        p = np.empty((n + 1, d, d), dtype=complex)
        p[n] = target
        for k in range(n - 1, -1, -1):
            p[k] = dag(fwd.unitaries[k]) @ p[k + 1]
        return BackwardCache(p, None, fwd.token)
    raise DimMismatch(f"target of shape {target.shape} does not fit dimension {d}")


def evolve_pwc(system: ControlSystem, pulse: PiecewisePulse, psi0=None, target=None):
    """Forward and backward caches for a piecewise-constant pulse.

    Pass ``psi0`` and a target ket for state transfer, or a target unitary
    (``psi0`` optional) for gate synthesis.
    """
    fwd = forward_pass(system, pulse, psi0)
    bwd = None if target is None else backward_pass(fwd, target)
    return fwd, bwd


def check_caches(fwd: ForwardCache, bwd: BackwardCache) -> None:
    if bwd is None or fwd.token != bwd.token:
        raise CacheMismatch("forward and backward caches come from different evolutions")


# --- joint ODE for analytic pulses -----------------------------------------

def _solve(rhs, y0, horizon, rtol, atol):
    sol = solve_ivp(rhs, (0.0, horizon), y0, method="RK45", rtol=rtol, atol=atol)
    if sol.status != 0:
        raise StepUnderflow(f"integrator failed: {sol.message}")
    return sol.y[:, -1], sol


def integrate_goat(
    system: ControlSystem,
    pulse: AnalyticPulse,
    subset: Sequence[int] | None = None,
    rtol: float = GOAT_RTOL,
    atol: float = GOAT_ATOL,
):
    """Propagator ``U(T)`` and ``dU(T)/d alpha_m`` for ``m`` in ``subset``.

    Solves ``U' = -i H U`` together with ``(dU)' = -i (dH U + H dU)`` from
    ``U(0) = I``, ``dU(0) = 0`` with one adaptive Dormand-Prince step control
    over the whole stack. ``subset`` defaults to every parameter; derivatives
    are with respect to the pulse's physical parameters.
    """
    if pulse.n_controls != system.n_controls:
        raise DimMismatch(f"pulse has {pulse.n_controls} controls, system has {system.n_controls}")
    subset = np.arange(pulse.n_params) if subset is None else np.asarray(subset, dtype=int)
    if subset.size == 0:
        raise ValueError("parameter subset must not be empty")
    d = system.dim
    s = subset.size
    ctrl = system.control_stack

    def rhs(t, y):
        y = y.reshape(s + 1, d, d)
        h = system.hamiltonian(pulse.values([t])[0])
        dh = np.tensordot(pulse.jacobian([t])[0][subset], ctrl, axes=([1], [0]))
        out = np.empty_like(y)
        out[0] = -1j * (h @ y[0])
        out[1:] = -1j * (dh @ y[0] + h @ y[1:])
        return out.ravel()

    y0 = np.zeros((s + 1, d, d), dtype=complex)
    y0[0] = np.eye(d)
    yt, _ = _solve(rhs, y0.ravel(), pulse.horizon, rtol, atol)
    yt = yt.reshape(s + 1, d, d)
    return yt[0], yt[1:]


def propagate_analytic(system: ControlSystem, pulse: AnalyticPulse, rtol: float = GOAT_RTOL, atol: float = GOAT_ATOL):
    d = system.dim

    def rhs(t, y):
        h = system.hamiltonian(pulse.values([t])[0])
        return (-1j * (h @ y.reshape(d, d))).ravel()

    yt, _ = _solve(rhs, np.eye(d, dtype=complex).ravel(), pulse.horizon, rtol, atol)
    return yt.reshape(d, d)


# --- Lindblad maps -----------------------------------------------------------

def vec(rho) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v, dim: int) -> np.ndarray:
    return np.asarray(v).reshape(dim, dim, order="F")


def unitary_map(u) -> np.ndarray:
    """Superoperator of ``rho -> U rho U^+`` on column-stacked ``rho``."""
    u = np.asarray(u, dtype=complex)
    return np.kron(u.conj(), u)


def hamiltonian_superoperator(h) -> np.ndarray:
    """``rho -> -i [H, rho]``."""
    eye = np.eye(h.shape[0])
    return -1j * (np.kron(eye, h) - np.kron(h.T, eye))


def dissipator(ops, rates) -> np.ndarray:
    """``rho -> sum_k gamma_k (2 L rho L^+ - {L^+ L, rho})``."""
    ops = list(ops)
    if not ops:
        return 0.0
    d = ops[0].shape[0]
    eye = np.eye(d)
    out = np.zeros((d * d, d * d), dtype=complex)
    for op, g in zip(ops, rates):
        ld = dag(op) @ op
        out += g * (2 * np.kron(op.conj(), op) - np.kron(eye, ld) - np.kron(ld.T, eye))
    return out


@dataclass(frozen=True)
class LindbladModel:
    """Controlled Hamiltonian plus collapse operators ``L_k`` with rates ``gamma_k``.

    The dissipator is ``gamma (2 L rho L^+ - {L^+ L, rho})``, so pure
    dephasing with ``L = sigma_z`` damps coherences as ``exp(-4 gamma t)``.
    """

    system: ControlSystem
    collapse_ops: tuple = ()
    rates: tuple = ()

    def __post_init__(self):
        ops = tuple(as_matrix(op, "collapse operator") for op in self.collapse_ops)
        rates = tuple(float(r) for r in self.rates)
        if len(ops) != len(rates):
            raise DimMismatch("one rate per collapse operator required")
        for op in ops:
            if op.shape != (self.system.dim, self.system.dim):
                raise DimMismatch("collapse operator dimension differs from the system")
        if any(r < 0 for r in rates):
            raise ValueError("rates must be non-negative")
        object.__setattr__(self, "collapse_ops", ops)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "_dissipator", dissipator(ops, rates))

    @property
    def dim(self) -> int:
        return self.system.dim

    def generator(self, amplitudes) -> np.ndarray:
        return hamiltonian_superoperator(self.system.hamiltonian(amplitudes)) + self._dissipator

    def control_generators(self) -> np.ndarray:
        """``-i [H_i, .]`` for each control; the generator is affine in the amplitudes."""
        return np.array([hamiltonian_superoperator(h) for h in self.system.controls])


def evolve_lindblad(model: LindbladModel, pulse, rtol: float = GOAT_RTOL, atol: float = GOAT_ATOL) -> np.ndarray:
    """Map ``F(T)`` acting on column-stacked density matrices."""
    if isinstance(pulse, PiecewisePulse):
        f = np.eye(model.dim**2, dtype=complex)
        for u in pulse.values:
            f = scipy.linalg.expm(pulse.dt * model.generator(u)) @ f
        return f
    n = model.dim**2

    def rhs(t, y):
        return (model.generator(pulse.values([t])[0]) @ y.reshape(n, n)).ravel()

    yt, _ = _solve(rhs, np.eye(n, dtype=complex).ravel(), pulse.horizon, rtol, atol)
    return yt.reshape(n, n)


# --- Magnus expansion --------------------------------------------------------

def _check_grid(times, samples):
    times = np.asarray(times, dtype=float)
    samples = np.asarray(samples, dtype=complex)
    if times.ndim != 1 or times.size < 3:
        raise BadGrid("need at least 3 grid points")
    if np.any(np.diff(times) <= 0):
        raise BadGrid("grid must be strictly increasing")
    if samples.shape[0] != times.size or samples.ndim != 3:
        raise DimMismatch("one Hamiltonian sample per grid point required")
    return times, samples


def _hermitize(a):
    return 0.5 * (a + dag(a))


def magnus_terms(times, samples, order: int = 2) -> list:
    """Magnus terms ``H0bar``, ``H1bar``, ``H2bar`` with ``U = exp(-i sum H_nbar)``.

    Nested time-ordered integrals are evaluated by cumulative trapezoidal
    quadrature on the sample grid; ``times`` need not be uniform.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    t, h = _check_grid(times, samples)
    terms = [_hermitize(trapezoid(h, t, axis=0))]
    if order == 0:
        return terms
    k = cumulative_trapezoid(h, t, axis=0, initial=0)  # int_0^t1 H
    hk = commutator(h, k)  # [H(t1), K(t1)]
    terms.append(_hermitize(-0.5j * trapezoid(hk, t, axis=0)))
    if order == 1:
        return terms
    # t1 > t2 > t3: [H1, [H2, H3]]
    inner = cumulative_trapezoid(hk, t, axis=0, initial=0)
    first = trapezoid(commutator(h, inner), t, axis=0)
    # [H3, [H2, H1]] integrated from the far end: R(b) = int_b^T H, S(c) = int_c^T [H_b, R(b)]
    rev = t[-1] - t[::-1]
    r = cumulative_trapezoid(h[::-1], rev, axis=0, initial=0)[::-1]
    s = cumulative_trapezoid(commutator(h, r)[::-1], rev, axis=0, initial=0)[::-1]
    second = trapezoid(commutator(h, s), t, axis=0)
    terms.append(_hermitize(-(first + second) / 6))
    return terms


def magnus_propagator(times, samples, order: int = 2) -> np.ndarray:
    total = sum(magnus_terms(times, samples, order))
    return expm_antihermitian(total, -1j)
